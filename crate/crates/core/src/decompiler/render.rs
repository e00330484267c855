//! Pseudo-source rendering of a finished [`Simulation`].

use std::collections::{HashMap, HashSet};

use super::sim::{is_identifier, CallKind, Const, Effect, Mutation, NodeId, Simulation, SymNode};
use crate::pyrepr;

/// Upper bound on rendered program size; adversarial memo graphs can expand
/// exponentially when inlined.
const MAX_OUTPUT: usize = 8 << 20;

pub(super) struct Rendered {
    pub imports: Vec<String>,
    pub import_refs: Vec<(String, String)>,
    pub statements: Vec<String>,
    pub result: String,
    pub warnings: Vec<String>,
}

struct Renderer<'a> {
    sim: &'a Simulation,
    refcount: Vec<u32>,
    hoisted: Vec<bool>,
    names: HashMap<NodeId, String>,
    emitted: HashSet<NodeId>,
    /// (node, statement index) for hoisted assignments.
    assignment_of: HashMap<NodeId, usize>,
    import_names: HashMap<(String, String), String>,
    statements: Vec<String>,
    budget: usize,
    truncated: bool,
}

pub(super) fn render(sim: &Simulation) -> Rendered {
    let mut warnings = sim.warnings.clone();
    let (imports, import_refs, import_names) = import_lines(sim);
    let mut r = Renderer {
        sim,
        refcount: vec![0; sim.nodes.len()],
        hoisted: vec![false; sim.nodes.len()],
        names: HashMap::new(),
        emitted: HashSet::new(),
        assignment_of: HashMap::new(),
        import_names,
        statements: Vec::new(),
        budget: MAX_OUTPUT,
        truncated: false,
    };
    r.analyse();

    for effect in &sim.effects {
        match *effect {
            Effect::Call(id) => r.ensure(id),
            Effect::Mutation(m) => r.emit_mutation(&sim.mutations[m]),
        }
    }

    let result = match sim.result {
        Some(id) => {
            let id = r.deref(id);
            r.ensure_deps(id);
            let inline_last = r.refcount[id] == 1
                && matches!(sim.nodes[id], SymNode::Call { .. })
                && r.assignment_of.get(&id) == Some(&(r.statements.len().saturating_sub(1)));
            if inline_last {
                r.statements.pop();
                r.hoisted[id] = false;
                let mut s = String::new();
                r.body(id, &mut s);
                s
            } else {
                r.expr(id)
            }
        }
        None => {
            warnings.push("stack empty at end of stream".into());
            "placeholder('empty stack')".to_string()
        }
    };
    if r.truncated {
        warnings.push(format!("output truncated at {MAX_OUTPUT} bytes"));
    }
    Rendered { imports, import_refs, statements: r.statements, result: format!("result = {result}"), warnings }
}

/// Import statements, the `(module, name)` pairs they cover, and the local
/// name bound for each pair.
type ImportTable = (Vec<String>, Vec<(String, String)>, HashMap<(String, String), String>);

fn import_lines(sim: &Simulation) -> ImportTable {
    let mut lines = Vec::new();
    let mut refs = Vec::new();
    let mut names = HashMap::new();
    let mut taken: HashSet<String> = HashSet::new();
    for (module, name) in &sim.imports {
        let key = (module.clone(), name.clone());
        if names.contains_key(&key) {
            continue;
        }
        let (root, rest) = match name.split_once('.') {
            Some((root, rest)) => (root, Some(rest)),
            None => (name.as_str(), None),
        };
        let clean = is_dotted_identifier(module) && is_identifier(root) && rest.is_none_or(is_dotted_identifier);
        let base = if is_identifier(root) { root.to_string() } else { "imported".to_string() };
        let mut local = base.clone();
        let mut n = 1;
        while taken.contains(&local) || local == "result" {
            local = format!("{base}_{n}");
            n += 1;
        }
        taken.insert(local.clone());
        let line = if !clean {
            format!("{local} = import_ref({}, {})", pyrepr::repr_str(module), pyrepr::repr_str(name))
        } else if local == root {
            format!("from {module} import {root}")
        } else {
            format!("from {module} import {root} as {local}")
        };
        let reference = match (clean, rest) {
            (true, Some(rest)) => format!("{local}.{rest}"),
            _ => local,
        };
        lines.push(line);
        refs.push(key.clone());
        names.insert(key, reference);
    }
    (lines, refs, names)
}

fn is_dotted_identifier(s: &str) -> bool {
    !s.is_empty() && s.split('.').all(is_identifier)
}

impl<'a> Renderer<'a> {
    fn deref(&self, mut id: NodeId) -> NodeId {
        while let SymNode::MemoRef { target, .. } = self.sim.nodes[id] {
            id = target;
        }
        id
    }

    fn children(&self, id: NodeId) -> Vec<NodeId> {
        match &self.sim.nodes[id] {
            SymNode::List(v) | SymNode::Tuple(v) | SymNode::Set(v) | SymNode::FrozenSet(v) => v.clone(),
            SymNode::Dict(pairs) => pairs.iter().flat_map(|&(k, v)| [k, v]).collect(),
            SymNode::Call { callee, args, kwargs, .. } => {
                let mut c = vec![*callee];
                c.extend(args);
                c.extend(kwargs);
                c
            }
            SymNode::GetattrChain { base, .. } => vec![*base],
            SymNode::MemoRef { target, .. } => vec![*target],
            SymNode::Persistent(pid) => vec![*pid],
            SymNode::Const(_) | SymNode::ImportRef { .. } | SymNode::Placeholder(_) => Vec::new(),
        }
    }

    fn mutation_operands(m: &Mutation) -> Vec<NodeId> {
        match m {
            Mutation::SetState { target, state } => vec![*target, *state],
            Mutation::Append { target, items } | Mutation::AddItems { target, items } => {
                let mut v = vec![*target];
                v.extend(items);
                v
            }
            Mutation::SetItem { target, key, value } => vec![*target, *key, *value],
        }
    }

    /// Reference counts over everything reachable from effects and the result,
    /// and the set of nodes that get their own assignment.
    fn analyse(&mut self) {
        let sim = self.sim;
        let mut roots: Vec<NodeId> = Vec::new();
        for e in &sim.effects {
            match *e {
                Effect::Call(id) => roots.push(id),
                Effect::Mutation(m) => {
                    let ops = Self::mutation_operands(&sim.mutations[m]);
                    for &op in &ops {
                        let t = self.deref(op);
                        self.refcount[t] += 1;
                    }
                    let target = self.deref(ops[0]);
                    self.hoisted[target] = true;
                    roots.extend(ops);
                }
            }
        }
        if let Some(r) = sim.result {
            let r = self.deref(r);
            self.refcount[r] += 1;
            roots.push(r);
        }
        let mut seen = vec![false; sim.nodes.len()];
        let mut stack = roots;
        while let Some(id) = stack.pop() {
            let id = self.deref(id);
            if std::mem::replace(&mut seen[id], true) {
                continue;
            }
            for c in self.children(id) {
                let c = self.deref(c);
                self.refcount[c] += 1;
                stack.push(c);
            }
        }
        for (id, node) in sim.nodes.iter().enumerate() {
            let shareable = matches!(
                node,
                SymNode::List(_)
                    | SymNode::Tuple(_)
                    | SymNode::Dict(_)
                    | SymNode::Set(_)
                    | SymNode::FrozenSet(_)
                    | SymNode::GetattrChain { .. }
                    | SymNode::Persistent(_)
            );
            if matches!(node, SymNode::Call { .. }) || (shareable && self.refcount[id] >= 2) {
                self.hoisted[id] = true;
            }
        }
    }

    fn name_of(&mut self, id: NodeId) -> String {
        let next = self.names.len();
        self.names.entry(id).or_insert_with(|| format!("_var{next}")).clone()
    }

    /// Emit assignments for `id` (if hoisted) and every hoisted node it reaches.
    fn ensure(&mut self, id: NodeId) {
        let id = self.deref(id);
        if !self.hoisted[id] {
            self.ensure_deps(id);
            return;
        }
        if self.emitted.contains(&id) || self.names.contains_key(&id) {
            return;
        }
        let name = self.name_of(id);
        self.ensure_deps(id);
        let mut body = String::new();
        self.body(id, &mut body);
        self.emitted.insert(id);
        self.push_statement(format!("{name} = {body}"));
        self.assignment_of.insert(id, self.statements.len() - 1);
    }

    fn ensure_deps(&mut self, id: NodeId) {
        let mut stack = self.children(id);
        let mut seen = HashSet::new();
        while let Some(c) = stack.pop() {
            let c = self.deref(c);
            if !seen.insert(c) {
                continue;
            }
            if self.hoisted[c] {
                self.ensure(c);
            } else {
                stack.extend(self.children(c));
            }
        }
    }

    fn push_statement(&mut self, s: String) {
        if self.budget < s.len() {
            self.truncated = true;
            self.budget = 0;
            return;
        }
        self.budget -= s.len();
        self.statements.push(s);
    }

    fn emit_mutation(&mut self, m: &Mutation) {
        for op in Self::mutation_operands(m) {
            self.ensure(op);
        }
        let line = match m {
            Mutation::SetState { target, state } => format!("{}.__setstate__({})", self.expr(*target), self.expr(*state)),
            Mutation::Append { target, items } if items.len() == 1 => {
                format!("{}.append({})", self.expr(*target), self.expr(items[0]))
            }
            Mutation::Append { target, items } => format!("{}.extend([{}])", self.expr(*target), self.join(items)),
            Mutation::SetItem { target, key, value } => {
                format!("{}[{}] = {}", self.expr(*target), self.expr(*key), self.expr(*value))
            }
            Mutation::AddItems { target, items } => format!("{}.update({{{}}})", self.expr(*target), self.join(items)),
        };
        self.push_statement(line);
    }

    fn expr(&mut self, id: NodeId) -> String {
        let mut s = String::new();
        self.write(id, &mut s);
        s
    }

    fn join(&mut self, items: &[NodeId]) -> String {
        let mut s = String::new();
        self.write_list(items, &mut s);
        s
    }

    fn write_list(&mut self, items: &[NodeId], out: &mut String) {
        for (i, &c) in items.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            self.write(c, out);
        }
    }

    /// Reference to `id`: its variable when hoisted, its body otherwise.
    fn write(&mut self, id: NodeId, out: &mut String) {
        if out.len() > self.budget {
            self.truncated = true;
            out.push_str("...");
            return;
        }
        let id = self.deref(id);
        if self.hoisted[id] {
            let name = self.name_of(id);
            out.push_str(&name);
        } else {
            self.body(id, out);
        }
    }

    fn write_callee(&mut self, callee: NodeId, out: &mut String) {
        let c = self.deref(callee);
        let simple = self.hoisted[c] || matches!(self.sim.nodes[c], SymNode::ImportRef { .. } | SymNode::GetattrChain { .. });
        if simple {
            self.write(c, out);
        } else {
            out.push('(');
            self.write(c, out);
            out.push(')');
        }
    }

    /// Positional arguments: expanded when the node is an inline tuple.
    fn write_args(&mut self, args: NodeId, out: &mut String) -> bool {
        let a = self.deref(args);
        match &self.sim.nodes[a] {
            SymNode::Tuple(items) if !self.hoisted[a] => {
                let items = items.clone();
                self.write_list(&items, out);
                !items.is_empty()
            }
            _ => {
                out.push('*');
                self.write(a, out);
                true
            }
        }
    }

    fn write_kwargs(&mut self, kwargs: NodeId, out: &mut String) {
        let k = self.deref(kwargs);
        if let SymNode::Dict(pairs) = &self.sim.nodes[k] {
            if !self.hoisted[k] {
                let named: Option<Vec<(String, NodeId)>> = pairs
                    .iter()
                    .map(|&(key, v)| match &self.sim.nodes[self.deref(key)] {
                        SymNode::Const(Const::Str(s)) if is_identifier(s) => Some((s.clone(), v)),
                        _ => None,
                    })
                    .collect();
                if let Some(named) = named {
                    for (i, (name, v)) in named.into_iter().enumerate() {
                        if i > 0 {
                            out.push_str(", ");
                        }
                        out.push_str(&name);
                        out.push('=');
                        self.write(v, out);
                    }
                    return;
                }
            }
        }
        out.push_str("**");
        self.write(k, out);
    }

    fn body(&mut self, id: NodeId, out: &mut String) {
        let sim = self.sim;
        match &sim.nodes[id] {
            SymNode::Const(c) => write_const(c, out),
            SymNode::List(items) => {
                out.push('[');
                self.write_list(items, out);
                out.push(']');
            }
            SymNode::Tuple(items) => {
                out.push('(');
                self.write_list(items, out);
                if items.len() == 1 {
                    out.push(',');
                }
                out.push(')');
            }
            SymNode::Dict(pairs) => {
                out.push('{');
                for (i, &(k, v)) in pairs.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    self.write(k, out);
                    out.push_str(": ");
                    self.write(v, out);
                }
                out.push('}');
            }
            SymNode::Set(items) if items.is_empty() => out.push_str("set()"),
            SymNode::Set(items) => {
                out.push('{');
                self.write_list(items, out);
                out.push('}');
            }
            SymNode::FrozenSet(items) if items.is_empty() => out.push_str("frozenset()"),
            SymNode::FrozenSet(items) => {
                out.push_str("frozenset({");
                self.write_list(items, out);
                out.push_str("})");
            }
            SymNode::ImportRef { module, name } => {
                let key = (module.clone(), name.clone());
                out.push_str(self.import_names.get(&key).map(String::as_str).unwrap_or("imported"));
            }
            SymNode::Call { kind, callee, args, kwargs } => {
                self.write_callee(*callee, out);
                match kind {
                    CallKind::Reduce | CallKind::Instantiate => {
                        out.push('(');
                        if let Some(&a) = args.first() {
                            self.write_args(a, out);
                        }
                        out.push(')');
                    }
                    CallKind::NewObj | CallKind::NewObjEx => {
                        out.push_str(".__new__(");
                        self.write_callee(*callee, out);
                        if let Some(&a) = args.first() {
                            let mut rest = String::new();
                            if self.write_args(a, &mut rest) {
                                out.push_str(", ");
                                out.push_str(&rest);
                            }
                        }
                        if let Some(k) = kwargs {
                            let mut rest = String::new();
                            self.write_kwargs(*k, &mut rest);
                            if !rest.is_empty() {
                                out.push_str(", ");
                                out.push_str(&rest);
                            }
                        }
                        out.push(')');
                    }
                }
            }
            SymNode::GetattrChain { base, attrs } => {
                self.write_callee(*base, out);
                for a in attrs {
                    out.push('.');
                    out.push_str(a);
                }
            }
            SymNode::MemoRef { target, .. } => self.write(*target, out),
            SymNode::Persistent(pid) => {
                out.push_str("persistent_load(");
                self.write(*pid, out);
                out.push(')');
            }
            SymNode::Placeholder(what) => {
                out.push_str("placeholder(");
                out.push_str(&pyrepr::repr_str(what));
                out.push(')');
            }
        }
    }
}

fn write_const(c: &Const, out: &mut String) {
    match c {
        Const::None => out.push_str("None"),
        Const::Bool(true) => out.push_str("True"),
        Const::Bool(false) => out.push_str("False"),
        Const::Int(v) => out.push_str(&v.to_string()),
        Const::BigInt(v) => out.push_str(&v.to_string()),
        Const::Float(x) if x.is_finite() => out.push_str(&pyrepr::repr_float(*x)),
        Const::Float(x) => {
            out.push_str("float('");
            out.push_str(&pyrepr::repr_float(*x));
            out.push_str("')");
        }
        Const::Str(s) => out.push_str(&pyrepr::repr_str(s)),
        Const::Bytes(b) => out.push_str(&pyrepr::repr_bytes(b)),
        Const::ByteArray(b) => {
            out.push_str("bytearray(");
            out.push_str(&pyrepr::repr_bytes(b));
            out.push(')');
        }
    }
}
