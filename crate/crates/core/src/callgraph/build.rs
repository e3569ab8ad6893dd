//! Import-aware lexical call resolution.

use std::collections::{BTreeMap, BTreeSet};

use tree_sitter::Node;

use super::{CallGraph, CallSite, Edge};
use crate::index::syntax::{self, named_children, text};
use crate::index::{CodeUnit, ImportTarget, ProjectIndex, UnitKind};

/// Edge `(f, g)` for every direct call in `f` that resolves to an indexed unit.
/// Calls to classes resolve to their constructor. Unresolvable calls are dropped.
pub fn build_call_graph(index: &ProjectIndex) -> CallGraph {
    let nodes: BTreeSet<String> = index.callables().map(|u| u.qualified_name.clone()).collect();
    let mut edges = BTreeSet::new();
    let mut unresolved = 0usize;

    let mut by_file: BTreeMap<&str, Vec<&CodeUnit>> = BTreeMap::new();
    for u in index.callables() {
        by_file.entry(u.file.as_str()).or_default().push(u);
    }
    for (file, units) in by_file {
        let Some(text) = index.file_text(file) else { continue };
        let Some(tree) = syntax::parse(&text) else { continue };
        for unit in units {
            let Some(def) = syntax::find_definition_at(tree.root_node(), unit.span.start_line) else { continue };
            let Some(body) = def.child_by_field_name("body") else { continue };
            let resolver = Resolver { index, unit };
            let mut calls = Vec::new();
            collect_calls(body, &mut calls);
            for call in calls {
                let Some(func) = call.child_by_field_name("function") else { continue };
                match resolver.resolve(func, &text) {
                    Some(callee) => {
                        edges.insert(Edge {
                            caller: unit.qualified_name.clone(),
                            callee,
                            call_site: CallSite { file: unit.file.clone(), line: syntax::line(call), column: call.start_position().column as u32 },
                            statement_end_line: statement_end(call),
                            argument_texts: argument_texts(call, &text),
                        });
                    }
                    None => unresolved += 1,
                }
            }
        }
    }
    let mut graph = CallGraph::new(nodes, edges);
    if unresolved > 0 {
        graph.diagnostics.push(format!("{unresolved} call sites did not resolve to indexed units"));
    }
    graph
}

/// Calls in a body, not descending into nested definitions.
fn collect_calls<'t>(node: Node<'t>, out: &mut Vec<Node<'t>>) {
    for child in named_children(node) {
        if syntax::is_definition(child) {
            continue;
        }
        if child.kind() == "call" {
            out.push(child);
        }
        collect_calls(child, out);
    }
}

const SIMPLE_STATEMENTS: &[&str] = &[
    "expression_statement",
    "return_statement",
    "assert_statement",
    "delete_statement",
    "raise_statement",
    "global_statement",
    "nonlocal_statement",
    "print_statement",
    "exec_statement",
    "type_alias_statement",
];

fn statement_end(call: Node<'_>) -> u32 {
    let mut node = call;
    while let Some(parent) = node.parent() {
        if SIMPLE_STATEMENTS.contains(&parent.kind()) {
            return syntax::end_line(parent);
        }
        if matches!(parent.kind(), "block" | "module") || syntax::is_definition(parent) {
            break;
        }
        node = parent;
    }
    syntax::end_line(call)
}

fn argument_texts(call: Node<'_>, source: &str) -> Vec<String> {
    match call.child_by_field_name("arguments") {
        Some(args) if args.kind() == "argument_list" => {
            named_children(args).into_iter().filter(|c| c.kind() != "comment").map(|c| text(c, source).to_string()).collect()
        }
        Some(args) => vec![text(args, source).to_string()],
        None => Vec::new(),
    }
}

struct Resolver<'a> {
    index: &'a ProjectIndex,
    unit: &'a CodeUnit,
}

enum Target<'a> {
    Unit(&'a CodeUnit),
    Module(String),
}

impl<'a> Resolver<'a> {
    fn resolve(&self, func: Node<'_>, source: &str) -> Option<String> {
        let target = match func.kind() {
            "identifier" => self.lookup_name(text(func, source)),
            "attribute" => {
                let object = func.child_by_field_name("object")?;
                let attr = text(func.child_by_field_name("attribute")?, source);
                self.lookup_attribute(object, attr, source)
            }
            _ => None,
        }?;
        match target {
            Target::Unit(u) if u.kind == UnitKind::SubjectClass => self.index.constructor_of(u).map(|c| c.qualified_name.clone()),
            Target::Unit(u) => Some(u.qualified_name.clone()),
            Target::Module(_) => None,
        }
    }

    /// Enclosing function scopes, then the module, then imports.
    fn lookup_name(&self, name: &str) -> Option<Target<'a>> {
        let module = &self.unit.module_path;
        let mut scope = Some(self.unit);
        while let Some(s) = scope {
            if s.kind.is_callable() {
                if let Some(u) = self.index.find_local(module, &format!("{}.{}", s.local_name, name)) {
                    return Some(Target::Unit(u));
                }
            }
            scope = s.parent.as_deref().and_then(|p| self.index.units.get(p));
        }
        if let Some(u) = self.index.find_local(module, name) {
            return Some(Target::Unit(u));
        }
        for b in self.index.imports.get(module).into_iter().flatten() {
            if b.alias != name {
                continue;
            }
            match &b.target {
                ImportTarget::Symbol { module, name } => {
                    if let Some(u) = self.index.find_local(module, name) {
                        return Some(Target::Unit(u));
                    }
                    return Some(Target::Module(format!("{module}.{name}")));
                }
                ImportTarget::Module { module } => return Some(Target::Module(module.clone())),
            }
        }
        None
    }

    fn lookup_attribute(&self, object: Node<'_>, attr: &str, source: &str) -> Option<Target<'a>> {
        // self.method(...)
        if object.kind() == "identifier" {
            let name = text(object, source);
            if let Some(class) = self.receiver_class(name) {
                return self.class_member(class, attr).map(Target::Unit);
            }
        }
        // super().method(...)
        if object.kind() == "call" {
            let callee = object.child_by_field_name("function").map(|f| text(f, source));
            if callee == Some("super") {
                let class = self.enclosing_class()?;
                return class
                    .bases
                    .iter()
                    .filter_map(|b| self.index.resolve_class_ref(&class.module_path, b))
                    .find_map(|b| self.class_member(b, attr))
                    .map(Target::Unit);
            }
            return None;
        }
        // module.func(...) or Class.method(...), possibly dotted
        if matches!(object.kind(), "identifier" | "attribute") {
            let dotted = text(object, source);
            if let Some(target) = self.lookup_dotted(dotted) {
                return match target {
                    Target::Module(m) => self.index.find_local(&m, attr).map(Target::Unit),
                    Target::Unit(u) if u.kind == UnitKind::SubjectClass => self.class_member(u, attr).map(Target::Unit),
                    Target::Unit(_) => None,
                };
            }
        }
        None
    }

    fn lookup_dotted(&self, dotted: &str) -> Option<Target<'a>> {
        let mut parts = dotted.split('.');
        let head = parts.next()?;
        let rest: Vec<&str> = parts.collect();
        // `import a.b` binds the full dotted path as well
        if !rest.is_empty() {
            for b in self.index.imports.get(&self.unit.module_path).into_iter().flatten() {
                if b.alias == dotted {
                    if let ImportTarget::Module { module } = &b.target {
                        return Some(Target::Module(module.clone()));
                    }
                }
            }
        }
        let mut target = self.lookup_name(head)?;
        for part in rest {
            target = match target {
                Target::Module(m) => match self.index.find_local(&m, part) {
                    Some(u) => Target::Unit(u),
                    None => Target::Module(format!("{m}.{part}")),
                },
                Target::Unit(u) if u.kind == UnitKind::SubjectClass => {
                    Target::Unit(self.index.find_local(&u.module_path, &format!("{}.{}", u.local_name, part))?)
                }
                Target::Unit(_) => return None,
            };
        }
        Some(target)
    }

    fn enclosing_class(&self) -> Option<&'a CodeUnit> {
        let parent = self.index.units.get(self.unit.parent.as_deref()?)?;
        (parent.kind == UnitKind::SubjectClass).then_some(parent)
    }

    fn receiver_class(&self, name: &str) -> Option<&'a CodeUnit> {
        let receiver = self.unit.parameters.first().filter(|p| p.receiver)?;
        if receiver.name != name {
            return None;
        }
        self.enclosing_class()
    }

    /// Method `attr` on `class` or its indexed bases.
    fn class_member(&self, class: &'a CodeUnit, attr: &str) -> Option<&'a CodeUnit> {
        let mut seen = BTreeSet::new();
        let mut queue = vec![class];
        while let Some(c) = queue.pop() {
            if !seen.insert(c.qualified_name.clone()) {
                continue;
            }
            if let Some(u) = self.index.find_local(&c.module_path, &format!("{}.{}", c.local_name, attr)) {
                if u.kind.is_callable() {
                    return Some(u);
                }
            }
            // depth-first in declaration order
            for b in c.bases.iter().rev() {
                if let Some(base) = self.index.resolve_class_ref(&c.module_path, b) {
                    queue.push(base);
                }
            }
        }
        None
    }
}
