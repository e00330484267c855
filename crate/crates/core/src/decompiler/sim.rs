//! Symbolic pickle machine: stack, mark and memo over a node arena.

use std::collections::HashMap;

use num_bigint::BigInt;

use crate::disasm::{Disassembly, OpArg, OpcodeEvent};
use crate::opcodes::code;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum Const {
    None,
    Bool(bool),
    Int(i64),
    BigInt(BigInt),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    ByteArray(Vec<u8>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CallKind {
    /// `REDUCE`: `callable(*args)`.
    Reduce,
    /// `INST` / `OBJ`: `cls(*args)`.
    Instantiate,
    /// `NEWOBJ`: `cls.__new__(cls, *args)`.
    NewObj,
    /// `NEWOBJ_EX`: `cls.__new__(cls, *args, **kwargs)`.
    NewObjEx,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SymNode {
    Const(Const),
    List(Vec<NodeId>),
    Tuple(Vec<NodeId>),
    Dict(Vec<(NodeId, NodeId)>),
    Set(Vec<NodeId>),
    FrozenSet(Vec<NodeId>),
    ImportRef { module: String, name: String },
    Call { kind: CallKind, callee: NodeId, args: Vec<NodeId>, kwargs: Option<NodeId> },
    /// `getattr(base, 'a')` folded into attribute access.
    GetattrChain { base: NodeId, attrs: Vec<String> },
    /// Value fetched from a memo slot; `target` is what the slot held at fetch time.
    MemoRef { slot: u64, target: NodeId },
    /// Persistent id resolved by the loader (`persistent_load(pid)`).
    Persistent(NodeId),
    Placeholder(String),
}

/// Side effects on an object that cannot be folded into a literal.
#[derive(Debug, Clone, PartialEq)]
pub enum Mutation {
    SetState { target: NodeId, state: NodeId },
    Append { target: NodeId, items: Vec<NodeId> },
    SetItem { target: NodeId, key: NodeId, value: NodeId },
    AddItems { target: NodeId, items: Vec<NodeId> },
}

/// Items evaluated for effect, in stream order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    Call(NodeId),
    Mutation(usize),
}

#[derive(Debug, Clone, Copy)]
enum Item {
    Node(NodeId),
    Mark,
}

#[derive(Debug, Default)]
pub struct Simulation {
    pub nodes: Vec<SymNode>,
    pub mutations: Vec<Mutation>,
    pub effects: Vec<Effect>,
    /// `(module, name)` per import opcode, in stream order.
    pub imports: Vec<(String, String)>,
    pub result: Option<NodeId>,
    pub warnings: Vec<String>,
    stack: Vec<Item>,
    memo: HashMap<u64, NodeId>,
}

const STRING_PUSHERS: [u8; 7] = [
    code::STRING,
    code::BINSTRING,
    code::SHORT_BINSTRING,
    code::UNICODE,
    code::BINUNICODE,
    code::SHORT_BINUNICODE,
    code::BINUNICODE8,
];

impl Simulation {
    pub fn run(d: &Disassembly) -> Simulation {
        let mut sim = Simulation::default();
        for (i, ev) in d.events.iter().enumerate() {
            sim.step(i, ev, &d.events);
        }
        if sim.result.is_none() {
            let reason = d.malform_reason.map(|r| r.to_string()).unwrap_or_else(|| "no STOP".into());
            sim.warn(format!("stream ended without STOP ({reason})"));
            sim.result = sim.stack.iter().rev().find_map(|it| match it {
                Item::Node(n) => Some(*n),
                Item::Mark => None,
            });
        }
        sim
    }

    fn add(&mut self, node: SymNode) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn push(&mut self, node: SymNode) -> NodeId {
        let id = self.add(node);
        self.stack.push(Item::Node(id));
        id
    }

    fn warn(&mut self, w: String) {
        self.warnings.push(w);
    }

    fn placeholder(&mut self, what: &str, ev: &OpcodeEvent) -> NodeId {
        self.warn(format!("{what} at offset {} ({})", ev.offset, ev.mnemonic()));
        self.add(SymNode::Placeholder(what.to_string()))
    }

    fn pop(&mut self, ev: &OpcodeEvent) -> NodeId {
        match self.stack.last() {
            Some(Item::Node(n)) => {
                let n = *n;
                self.stack.pop();
                n
            }
            _ => self.placeholder("stack underflow", ev),
        }
    }

    fn top(&mut self, ev: &OpcodeEvent) -> NodeId {
        match self.stack.last() {
            Some(Item::Node(n)) => *n,
            _ => {
                let p = self.placeholder("stack underflow", ev);
                self.stack.push(Item::Node(p));
                p
            }
        }
    }

    fn pop_mark(&mut self, ev: &OpcodeEvent) -> Vec<NodeId> {
        let start = match self.stack.iter().rposition(|it| matches!(it, Item::Mark)) {
            Some(p) => p,
            None => {
                self.warn(format!("missing MARK at offset {} ({})", ev.offset, ev.mnemonic()));
                let items = self.drain_nodes(0);
                return items;
            }
        };
        let items = self.drain_nodes(start + 1);
        self.stack.pop();
        items
    }

    fn drain_nodes(&mut self, from: usize) -> Vec<NodeId> {
        self.stack
            .drain(from..)
            .filter_map(|it| match it {
                Item::Node(n) => Some(n),
                Item::Mark => None,
            })
            .collect()
    }

    fn deref(&self, mut id: NodeId) -> NodeId {
        while let SymNode::MemoRef { target, .. } = self.nodes[id] {
            id = target;
        }
        id
    }

    fn const_str(&self, id: NodeId) -> Option<String> {
        match &self.nodes[self.deref(id)] {
            SymNode::Const(Const::Str(s)) => Some(s.clone()),
            _ => None,
        }
    }

    fn import(&mut self, module: String, name: String) -> NodeId {
        self.imports.push((module.clone(), name.clone()));
        self.add(SymNode::ImportRef { module, name })
    }

    fn call(&mut self, kind: CallKind, callee: NodeId, args: Vec<NodeId>, kwargs: Option<NodeId>) -> NodeId {
        if kind == CallKind::Reduce && kwargs.is_none() {
            if let Some(folded) = self.fold_getattr(callee, &args) {
                return folded;
            }
        }
        let id = self.add(SymNode::Call { kind, callee, args, kwargs });
        self.effects.push(Effect::Call(id));
        id
    }

    fn fold_getattr(&mut self, callee: NodeId, args: &[NodeId]) -> Option<NodeId> {
        let SymNode::ImportRef { module, name } = &self.nodes[self.deref(callee)] else {
            return None;
        };
        if !matches!(module.as_str(), "builtins" | "__builtin__") || name != "getattr" {
            return None;
        }
        let [tuple] = args else { return None };
        let SymNode::Tuple(items) = &self.nodes[self.deref(*tuple)] else {
            return None;
        };
        let [base, attr] = items[..] else { return None };
        let attr = self.const_str(attr)?;
        if !is_identifier(&attr) {
            return None;
        }
        let node = match &self.nodes[self.deref(base)] {
            SymNode::GetattrChain { base, attrs } => {
                let mut attrs = attrs.clone();
                attrs.push(attr);
                SymNode::GetattrChain { base: *base, attrs }
            }
            _ => SymNode::GetattrChain { base, attrs: vec![attr] },
        };
        Some(self.add(node))
    }

    fn mutate(&mut self, m: Mutation) {
        self.mutations.push(m);
        self.effects.push(Effect::Mutation(self.mutations.len() - 1));
    }

    fn memo_store(&mut self, slot: u64, ev: &OpcodeEvent) {
        let top = self.top(ev);
        self.memo.insert(slot, top);
    }

    fn memo_fetch(&mut self, slot: u64, ev: &OpcodeEvent) {
        match self.memo.get(&slot) {
            Some(&target) => {
                self.push(SymNode::MemoRef { slot, target });
            }
            None => {
                let p = self.placeholder(&format!("memo slot {slot} never stored"), ev);
                self.stack.push(Item::Node(p));
            }
        }
    }

    /// Nearest two preceding string pushes, for `STACK_GLOBAL` operands the
    /// simulation could not resolve.
    fn lexical_global(events: &[OpcodeEvent], at: usize) -> Option<(String, String)> {
        let mut found = events[..at]
            .iter()
            .rev()
            .filter(|e| STRING_PUSHERS.contains(&e.code()))
            .filter_map(|e| e.arg.as_ref().and_then(OpArg::as_text));
        let name = found.next()?.to_string();
        let module = found.next()?.to_string();
        Some((module, name))
    }

    fn step(&mut self, i: usize, ev: &OpcodeEvent, events: &[OpcodeEvent]) {
        let arg = ev.arg.as_ref();
        match ev.code() {
            code::PROTO | code::FRAME => {}
            code::STOP => {
                let r = self.pop(ev);
                self.result = Some(r);
            }
            code::MARK => self.stack.push(Item::Mark),
            code::POP => {
                if matches!(self.stack.last(), Some(Item::Mark)) {
                    self.stack.pop();
                } else {
                    self.pop(ev);
                }
            }
            code::POP_MARK => {
                self.pop_mark(ev);
            }
            code::DUP => {
                let t = self.top(ev);
                self.stack.push(Item::Node(t));
            }
            code::NONE => {
                self.push(SymNode::Const(Const::None));
            }
            code::NEWTRUE => {
                self.push(SymNode::Const(Const::Bool(true)));
            }
            code::NEWFALSE => {
                self.push(SymNode::Const(Const::Bool(false)));
            }
            code::INT | code::BININT | code::BININT1 | code::BININT2 | code::LONG | code::LONG1 | code::LONG4 => {
                let node = match arg {
                    Some(OpArg::Int(v)) => SymNode::Const(Const::Int(*v)),
                    Some(OpArg::BigInt(v)) => SymNode::Const(Const::BigInt(v.clone())),
                    Some(OpArg::Bool(b)) => SymNode::Const(Const::Bool(*b)),
                    _ => SymNode::Placeholder("oversized integer".into()),
                };
                self.push(node);
            }
            code::FLOAT | code::BINFLOAT => {
                let x = match arg {
                    Some(OpArg::Float(x)) => *x,
                    _ => f64::NAN,
                };
                self.push(SymNode::Const(Const::Float(x)));
            }
            code::STRING
            | code::BINSTRING
            | code::SHORT_BINSTRING
            | code::UNICODE
            | code::BINUNICODE
            | code::SHORT_BINUNICODE
            | code::BINUNICODE8 => {
                let node = match arg {
                    Some(OpArg::Text(s)) => SymNode::Const(Const::Str(s.clone())),
                    Some(OpArg::Skipped { len }) => SymNode::Placeholder(format!("<{len}-byte string>")),
                    _ => SymNode::Placeholder("string".into()),
                };
                self.push(node);
            }
            code::BINBYTES | code::SHORT_BINBYTES | code::BINBYTES8 | code::BYTEARRAY8 => {
                let array = ev.code() == code::BYTEARRAY8;
                let node = match arg {
                    Some(OpArg::Bytes(b)) if array => SymNode::Const(Const::ByteArray(b.clone())),
                    Some(OpArg::Bytes(b)) => SymNode::Const(Const::Bytes(b.clone())),
                    Some(OpArg::Skipped { len }) => SymNode::Placeholder(format!("<{len}-byte payload>")),
                    _ => SymNode::Placeholder("bytes".into()),
                };
                self.push(node);
            }
            code::EMPTY_LIST => {
                self.push(SymNode::List(Vec::new()));
            }
            code::EMPTY_TUPLE => {
                self.push(SymNode::Tuple(Vec::new()));
            }
            code::EMPTY_DICT => {
                self.push(SymNode::Dict(Vec::new()));
            }
            code::EMPTY_SET => {
                self.push(SymNode::Set(Vec::new()));
            }
            code::LIST => {
                let items = self.pop_mark(ev);
                self.push(SymNode::List(items));
            }
            code::TUPLE => {
                let items = self.pop_mark(ev);
                self.push(SymNode::Tuple(items));
            }
            code::TUPLE1 | code::TUPLE2 | code::TUPLE3 => {
                let n = (ev.code() - code::TUPLE1 + 1) as usize;
                let mut items: Vec<NodeId> = (0..n).map(|_| self.pop(ev)).collect();
                items.reverse();
                self.push(SymNode::Tuple(items));
            }
            code::DICT => {
                let items = self.pop_mark(ev);
                let pairs = self.pairs(items, ev);
                self.push(SymNode::Dict(pairs));
            }
            code::FROZENSET => {
                let items = self.pop_mark(ev);
                self.push(SymNode::FrozenSet(items));
            }
            code::APPEND => {
                let v = self.pop(ev);
                self.append(vec![v], ev);
            }
            code::APPENDS => {
                let items = self.pop_mark(ev);
                self.append(items, ev);
            }
            code::SETITEM => {
                let v = self.pop(ev);
                let k = self.pop(ev);
                self.set_items(vec![(k, v)], ev);
            }
            code::SETITEMS => {
                let items = self.pop_mark(ev);
                let pairs = self.pairs(items, ev);
                self.set_items(pairs, ev);
            }
            code::ADDITEMS => {
                let items = self.pop_mark(ev);
                let target = self.top(ev);
                let t = self.deref(target);
                if let SymNode::Set(existing) = &mut self.nodes[t] {
                    existing.extend(items);
                } else {
                    self.mutate(Mutation::AddItems { target, items });
                }
            }
            code::GET | code::BINGET | code::LONG_BINGET => match arg.and_then(OpArg::as_int) {
                Some(slot) if slot >= 0 => self.memo_fetch(slot as u64, ev),
                _ => {
                    let p = self.placeholder("bad memo index", ev);
                    self.stack.push(Item::Node(p));
                }
            },
            code::PUT | code::BINPUT | code::LONG_BINPUT => match arg.and_then(OpArg::as_int) {
                Some(slot) if slot >= 0 => self.memo_store(slot as u64, ev),
                _ => self.warn(format!("bad memo index at offset {}", ev.offset)),
            },
            code::MEMOIZE => {
                let slot = self.memo.len() as u64;
                self.memo_store(slot, ev);
            }
            code::GLOBAL => {
                let (module, name) = match arg {
                    Some(OpArg::Global { module, name }) => (module.clone(), name.clone()),
                    _ => (String::from("?"), String::from("?")),
                };
                let id = self.import(module, name);
                self.stack.push(Item::Node(id));
            }
            code::STACK_GLOBAL => {
                let name_node = self.pop(ev);
                let module_node = self.pop(ev);
                let resolved = match (self.const_str(module_node), self.const_str(name_node)) {
                    (Some(m), Some(n)) => Some((m, n)),
                    _ => {
                        let lexical = Self::lexical_global(events, i);
                        if let Some((m, n)) = &lexical {
                            self.warn(format!(
                                "STACK_GLOBAL at offset {} resolved lexically to {m}.{n}",
                                ev.offset
                            ));
                        }
                        lexical
                    }
                };
                let id = match resolved {
                    Some((m, n)) => self.import(m, n),
                    None => self.placeholder("unresolvable STACK_GLOBAL", ev),
                };
                self.stack.push(Item::Node(id));
            }
            code::INST => {
                let items = self.pop_mark(ev);
                let (module, name) = match arg {
                    Some(OpArg::Global { module, name }) => (module.clone(), name.clone()),
                    _ => (String::from("?"), String::from("?")),
                };
                let cls = self.import(module, name);
                let args = self.add(SymNode::Tuple(items));
                let id = self.call(CallKind::Instantiate, cls, vec![args], None);
                self.stack.push(Item::Node(id));
            }
            code::OBJ => {
                let mut items = self.pop_mark(ev);
                let cls = if items.is_empty() {
                    self.placeholder("OBJ without class", ev)
                } else {
                    items.remove(0)
                };
                let args = self.add(SymNode::Tuple(items));
                let id = self.call(CallKind::Instantiate, cls, vec![args], None);
                self.stack.push(Item::Node(id));
            }
            code::REDUCE => {
                let args = self.pop(ev);
                let callee = self.pop(ev);
                let id = self.call(CallKind::Reduce, callee, vec![args], None);
                self.stack.push(Item::Node(id));
            }
            code::NEWOBJ => {
                let args = self.pop(ev);
                let cls = self.pop(ev);
                let id = self.call(CallKind::NewObj, cls, vec![args], None);
                self.stack.push(Item::Node(id));
            }
            code::NEWOBJ_EX => {
                let kwargs = self.pop(ev);
                let args = self.pop(ev);
                let cls = self.pop(ev);
                let id = self.call(CallKind::NewObjEx, cls, vec![args], Some(kwargs));
                self.stack.push(Item::Node(id));
            }
            code::BUILD => {
                let state = self.pop(ev);
                let target = self.top(ev);
                self.mutate(Mutation::SetState { target, state });
            }
            code::PERSID => {
                let pid = match arg {
                    Some(OpArg::Text(s)) => SymNode::Const(Const::Str(s.clone())),
                    _ => SymNode::Placeholder("persistent id".into()),
                };
                let pid = self.add(pid);
                self.push(SymNode::Persistent(pid));
            }
            code::BINPERSID => {
                let pid = self.pop(ev);
                self.push(SymNode::Persistent(pid));
            }
            code::EXT1 | code::EXT2 | code::EXT4 => {
                let n = arg.and_then(OpArg::as_int).unwrap_or(-1);
                let id = self.placeholder(&format!("copyreg_extension({n})"), ev);
                self.stack.push(Item::Node(id));
            }
            code::NEXT_BUFFER => {
                let id = self.placeholder("out_of_band_buffer()", ev);
                self.stack.push(Item::Node(id));
            }
            code::READONLY_BUFFER => {
                self.top(ev);
            }
            other => {
                let id = self.placeholder(&format!("unsupported opcode 0x{other:02x}"), ev);
                self.stack.push(Item::Node(id));
            }
        }
    }

    fn pairs(&mut self, items: Vec<NodeId>, ev: &OpcodeEvent) -> Vec<(NodeId, NodeId)> {
        if items.len() % 2 == 1 {
            self.warn(format!("odd number of dict items at offset {}", ev.offset));
        }
        items.chunks_exact(2).map(|c| (c[0], c[1])).collect()
    }

    fn append(&mut self, items: Vec<NodeId>, ev: &OpcodeEvent) {
        let target = self.top(ev);
        let t = self.deref(target);
        if let SymNode::List(existing) = &mut self.nodes[t] {
            existing.extend(items);
        } else {
            self.mutate(Mutation::Append { target, items });
        }
    }

    fn set_items(&mut self, pairs: Vec<(NodeId, NodeId)>, ev: &OpcodeEvent) {
        let target = self.top(ev);
        let t = self.deref(target);
        if let SymNode::Dict(existing) = &mut self.nodes[t] {
            existing.extend(pairs);
        } else {
            for (key, value) in pairs {
                self.mutate(Mutation::SetItem { target, key, value });
            }
        }
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c == '_' || c.is_alphabetic()) && chars.all(|c| c == '_' || c.is_alphanumeric())
}
