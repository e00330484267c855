//! A small pickler for synthetic samples.
//!
//! [`Obj`] describes what to serialize; [`dump`] emits the opcodes CPython's
//! pickler would choose for the same structure at the given protocol,
//! including memo puts, so opcode frequencies look like real files.

use std::collections::HashMap;
use std::rc::Rc;

use crate::opcodes::code;
use crate::pyrepr::repr_float;

#[derive(Debug, Clone)]
pub enum Obj {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    List(Vec<Obj>),
    Tuple(Vec<Obj>),
    Dict(Vec<(Obj, Obj)>),
    Global(String, String),
    /// `callable(*args)`
    Reduce(Box<Obj>, Vec<Obj>),
    /// `cls.__new__(cls, *args, **kwargs)`
    NewObj { module: String, name: String, args: Vec<Obj>, kwargs: Vec<(String, Obj)> },
    /// `obj[k] = v` for each item after building `obj`, as for dict subclasses.
    DictItems(Box<Obj>, Vec<(Obj, Obj)>),
    /// `obj.__setstate__(state)`
    Build(Box<Obj>, Box<Obj>),
    /// Old-style instance creation (`INST` at protocol 0, `OBJ` above).
    Inst { module: String, name: String, args: Vec<Obj> },
    Persistent(Box<Obj>),
    /// Emitted once, fetched from the memo afterwards.
    Shared(Rc<Obj>),
    /// Every element but the last is popped after being built.
    Sequence(Vec<Obj>),
    Raw(Vec<u8>),
}

impl Obj {
    pub fn str(s: impl Into<String>) -> Obj {
        Obj::Str(s.into())
    }

    pub fn global(m: &str, n: &str) -> Obj {
        Obj::Global(m.into(), n.into())
    }

    pub fn call(m: &str, n: &str, args: Vec<Obj>) -> Obj {
        Obj::Reduce(Box::new(Obj::global(m, n)), args)
    }
}

struct Emitter {
    out: Vec<u8>,
    proto: u8,
    memo_len: u32,
    shared: HashMap<*const Obj, Option<u32>>,
}

/// Serialize `obj` at `proto` (0-5), terminated by STOP.
pub fn dump(obj: &Obj, proto: u8) -> Vec<u8> {
    let proto = proto.min(5);
    let mut e = Emitter { out: Vec::new(), proto, memo_len: 0, shared: HashMap::new() };
    e.emit(obj);
    e.out.push(code::STOP);
    let body = std::mem::take(&mut e.out);
    let mut out = Vec::with_capacity(body.len() + 11);
    if proto >= 2 {
        out.extend_from_slice(&[code::PROTO, proto]);
    }
    if proto >= 4 && body.len() >= 4 {
        out.push(code::FRAME);
        out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    }
    out.extend_from_slice(&body);
    out
}

/// Python's protocol-0 `raw-unicode-escape` argument for UNICODE.
fn raw_unicode_escape(s: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(s.len());
    for c in s.chars() {
        let u = c as u32;
        match c {
            '\\' | '\0' | '\n' | '\r' | '\x1a' => out.extend_from_slice(format!("\\u{u:04x}").as_bytes()),
            _ if u < 0x100 => out.push(u as u8),
            _ if u < 0x10000 => out.extend_from_slice(format!("\\u{u:04x}").as_bytes()),
            _ => out.extend_from_slice(format!("\\U{u:08x}").as_bytes()),
        }
    }
    out
}

impl Emitter {
    fn op(&mut self, c: u8) {
        self.out.push(c);
    }

    fn line(&mut self, c: u8, text: &[u8]) {
        self.out.push(c);
        self.out.extend_from_slice(text);
        self.out.push(b'\n');
    }

    fn memoize(&mut self) -> u32 {
        let idx = self.memo_len;
        self.memo_len += 1;
        if self.proto >= 4 {
            self.op(code::MEMOIZE);
        } else if self.proto >= 1 {
            if idx < 256 {
                self.out.extend_from_slice(&[code::BINPUT, idx as u8]);
            } else {
                self.op(code::LONG_BINPUT);
                self.out.extend_from_slice(&idx.to_le_bytes());
            }
        } else {
            self.line(code::PUT, idx.to_string().as_bytes());
        }
        idx
    }

    fn get(&mut self, idx: u32) {
        if self.proto >= 1 {
            if idx < 256 {
                self.out.extend_from_slice(&[code::BINGET, idx as u8]);
            } else {
                self.op(code::LONG_BINGET);
                self.out.extend_from_slice(&idx.to_le_bytes());
            }
        } else {
            self.line(code::GET, idx.to_string().as_bytes());
        }
    }

    fn int(&mut self, v: i64) {
        if self.proto == 0 {
            self.line(code::INT, v.to_string().as_bytes());
        } else if (0..=0xff).contains(&v) {
            self.out.extend_from_slice(&[code::BININT1, v as u8]);
        } else if (0..=0xffff).contains(&v) {
            self.op(code::BININT2);
            self.out.extend_from_slice(&(v as u16).to_le_bytes());
        } else if i32::try_from(v).is_ok() {
            self.op(code::BININT);
            self.out.extend_from_slice(&(v as i32).to_le_bytes());
        } else if self.proto >= 2 {
            let bytes = v.to_le_bytes();
            let mut n = 8;
            // shortest two's-complement encoding
            while n > 1 && ((bytes[n - 1] == 0 && bytes[n - 2] & 0x80 == 0) || (bytes[n - 1] == 0xff && bytes[n - 2] & 0x80 != 0)) {
                n -= 1;
            }
            self.out.extend_from_slice(&[code::LONG1, n as u8]);
            self.out.extend_from_slice(&bytes[..n]);
        } else {
            self.line(code::LONG, format!("{v}L").as_bytes());
        }
    }

    fn string(&mut self, s: &str) {
        if self.proto == 0 {
            let arg = raw_unicode_escape(s);
            self.line(code::UNICODE, &arg);
        } else if self.proto >= 4 && s.len() < 256 {
            self.out.extend_from_slice(&[code::SHORT_BINUNICODE, s.len() as u8]);
            self.out.extend_from_slice(s.as_bytes());
        } else {
            self.op(code::BINUNICODE);
            self.out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            self.out.extend_from_slice(s.as_bytes());
        }
        self.memoize();
    }

    fn bytes(&mut self, b: &[u8]) {
        if self.proto < 3 {
            let call = if b.is_empty() {
                Obj::call("builtins", "bytes", vec![])
            } else {
                let latin1: String = b.iter().map(|&c| c as char).collect();
                Obj::call("_codecs", "encode", vec![Obj::Str(latin1), Obj::str("latin1")])
            };
            return self.emit(&call);
        }
        if b.len() < 256 {
            self.out.extend_from_slice(&[code::SHORT_BINBYTES, b.len() as u8]);
        } else if u32::try_from(b.len()).is_ok() {
            self.op(code::BINBYTES);
            self.out.extend_from_slice(&(b.len() as u32).to_le_bytes());
        } else {
            self.op(code::BINBYTES8);
            self.out.extend_from_slice(&(b.len() as u64).to_le_bytes());
        }
        self.out.extend_from_slice(b);
        self.memoize();
    }

    fn global(&mut self, module: &str, name: &str) {
        // fix_imports: Python 3 names are mapped back for protocols < 3
        let module = match module {
            "builtins" if self.proto < 3 => "__builtin__",
            "copyreg" if self.proto < 3 => "copy_reg",
            m => m,
        };
        if self.proto >= 4 {
            self.string(module);
            self.string(name);
            self.op(code::STACK_GLOBAL);
        } else {
            self.op(code::GLOBAL);
            self.out.extend_from_slice(module.as_bytes());
            self.out.push(b'\n');
            self.out.extend_from_slice(name.as_bytes());
            self.out.push(b'\n');
        }
        self.memoize();
    }

    fn tuple(&mut self, items: &[Obj]) {
        if items.is_empty() {
            if self.proto >= 1 {
                self.op(code::EMPTY_TUPLE);
            } else {
                self.op(code::MARK);
                self.op(code::TUPLE);
            }
            return;
        }
        if self.proto >= 2 && items.len() <= 3 {
            for it in items {
                self.emit(it);
            }
            self.op([code::TUPLE1, code::TUPLE2, code::TUPLE3][items.len() - 1]);
        } else {
            self.op(code::MARK);
            for it in items {
                self.emit(it);
            }
            self.op(code::TUPLE);
        }
        self.memoize();
    }

    fn list(&mut self, items: &[Obj]) {
        if self.proto == 0 {
            self.op(code::MARK);
            self.op(code::LIST);
            self.memoize();
            for it in items {
                self.emit(it);
                self.op(code::APPEND);
            }
            return;
        }
        self.op(code::EMPTY_LIST);
        self.memoize();
        for chunk in items.chunks(1000) {
            if chunk.len() == 1 {
                self.emit(&chunk[0]);
                self.op(code::APPEND);
            } else {
                self.op(code::MARK);
                for it in chunk {
                    self.emit(it);
                }
                self.op(code::APPENDS);
            }
        }
    }

    fn setitems(&mut self, items: &[(Obj, Obj)]) {
        for chunk in items.chunks(1000) {
            if chunk.len() == 1 {
                self.emit(&chunk[0].0);
                self.emit(&chunk[0].1);
                self.op(code::SETITEM);
            } else {
                self.op(code::MARK);
                for (k, v) in chunk {
                    self.emit(k);
                    self.emit(v);
                }
                self.op(code::SETITEMS);
            }
        }
    }

    fn dict(&mut self, items: &[(Obj, Obj)]) {
        if self.proto == 0 {
            self.op(code::MARK);
            self.op(code::DICT);
            self.memoize();
            for (k, v) in items {
                self.emit(k);
                self.emit(v);
                self.op(code::SETITEM);
            }
            return;
        }
        self.op(code::EMPTY_DICT);
        self.memoize();
        self.setitems(items);
    }

    fn emit(&mut self, obj: &Obj) {
        match obj {
            Obj::None => self.op(code::NONE),
            Obj::Bool(b) => {
                if self.proto >= 2 {
                    self.op(if *b { code::NEWTRUE } else { code::NEWFALSE });
                } else {
                    self.line(code::INT, if *b { b"01" } else { b"00" });
                }
            }
            Obj::Int(v) => self.int(*v),
            Obj::Float(f) => {
                if self.proto >= 1 {
                    self.op(code::BINFLOAT);
                    self.out.extend_from_slice(&f.to_be_bytes());
                } else {
                    self.line(code::FLOAT, repr_float(*f).as_bytes());
                }
            }
            Obj::Str(s) => self.string(s),
            Obj::Bytes(b) => self.bytes(b),
            Obj::List(items) => self.list(items),
            Obj::Tuple(items) => self.tuple(items),
            Obj::Dict(items) => self.dict(items),
            Obj::Global(m, n) => self.global(m, n),
            Obj::Reduce(callable, args) => {
                self.emit(callable);
                self.tuple(args);
                self.op(code::REDUCE);
                self.memoize();
            }
            Obj::NewObj { module, name, args, kwargs } => {
                if self.proto < 2 {
                    let call = Obj::call(
                        "copyreg",
                        "_reconstructor",
                        vec![Obj::global(module, name), Obj::global("builtins", "object"), Obj::None],
                    );
                    return self.emit(&call);
                }
                self.global(module, name);
                self.tuple(args);
                if !kwargs.is_empty() && self.proto >= 4 {
                    let kw: Vec<(Obj, Obj)> = kwargs.iter().map(|(k, v)| (Obj::str(k.as_str()), v.clone())).collect();
                    self.dict(&kw);
                    self.op(code::NEWOBJ_EX);
                } else {
                    self.op(code::NEWOBJ);
                }
                self.memoize();
            }
            Obj::DictItems(target, items) => {
                self.emit(target);
                if self.proto == 0 {
                    for (k, v) in items {
                        self.emit(k);
                        self.emit(v);
                        self.op(code::SETITEM);
                    }
                } else {
                    self.setitems(items);
                }
            }
            Obj::Build(target, state) => {
                self.emit(target);
                self.emit(state);
                self.op(code::BUILD);
            }
            Obj::Inst { module, name, args } => {
                self.op(code::MARK);
                if self.proto == 0 {
                    for a in args {
                        self.emit(a);
                    }
                    self.op(code::INST);
                    self.out.extend_from_slice(format!("{module}\n{name}\n").as_bytes());
                } else {
                    self.global(module, name);
                    for a in args {
                        self.emit(a);
                    }
                    self.op(code::OBJ);
                }
                self.memoize();
            }
            Obj::Persistent(pid) => match (self.proto, pid.as_ref()) {
                (0, Obj::Str(s)) => self.line(code::PERSID, s.as_bytes()),
                _ => {
                    self.emit(pid);
                    self.op(code::BINPERSID);
                }
            },
            Obj::Shared(rc) => {
                let key = Rc::as_ptr(rc);
                if let Some(Some(idx)) = self.shared.get(&key) {
                    let idx = *idx;
                    return self.get(idx);
                }
                let before = self.memo_len;
                self.emit(rc);
                // the object's own memo slot is the last one it allocated
                let slot = (self.memo_len > before).then(|| self.memo_len - 1);
                self.shared.insert(key, slot);
            }
            Obj::Sequence(items) => {
                for (i, it) in items.iter().enumerate() {
                    self.emit(it);
                    if i + 1 < items.len() {
                        self.op(code::POP);
                    }
                }
            }
            Obj::Raw(b) => self.out.extend_from_slice(b),
        }
    }
}
