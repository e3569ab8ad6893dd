//! Duck-typing features of a parameter: what the function does with it.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use tree_sitter::Node;

use super::ResolveError;
use crate::index::syntax::{self, children, named_children, text};
use crate::index::ProjectIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OpTag {
    Arithmetic,
    Bitwise,
    StringConcat,
    Subscript,
    Iteration,
    Comparison,
    Membership,
    BooleanContext,
    Call,
}

impl fmt::Display for OpTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OpTag::Arithmetic => "arithmetic",
            OpTag::Bitwise => "bitwise",
            OpTag::StringConcat => "string-concat",
            OpTag::Subscript => "subscript",
            OpTag::Iteration => "iteration",
            OpTag::Comparison => "comparison",
            OpTag::Membership => "membership",
            OpTag::BooleanContext => "boolean-context",
            OpTag::Call => "call",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamFeature {
    pub param: String,
    pub operations: BTreeSet<OpTag>,
    pub field_accesses: BTreeSet<String>,
    pub method_invocations: BTreeSet<String>,
    /// Fields in order of first appearance.
    #[serde(default)]
    pub field_order: Vec<String>,
    /// Methods in order of first appearance.
    #[serde(default)]
    pub method_order: Vec<String>,
}

impl ParamFeature {
    pub fn new(param: impl Into<String>) -> Self {
        Self { param: param.into(), ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.operations.is_empty() && self.field_accesses.is_empty() && self.method_invocations.is_empty()
    }

    pub fn add_field(&mut self, name: &str) {
        if self.field_accesses.insert(name.to_string()) {
            self.field_order.push(name.to_string());
        }
    }

    pub fn add_method(&mut self, name: &str) {
        if self.method_invocations.insert(name.to_string()) {
            self.method_order.push(name.to_string());
        }
    }

    /// Natural-language retrieval query naming the accessed members.
    pub fn query(&self) -> String {
        let mut parts = Vec::new();
        match self.method_order.as_slice() {
            [] => {}
            [m] => parts.push(format!("a {m} method")),
            ms => parts.push(format!("methods {}", english_list(ms))),
        }
        match self.field_order.as_slice() {
            [] => {}
            [f] => parts.push(format!("an attribute {f}")),
            fs => parts.push(format!("attributes {}", english_list(fs))),
        }
        if parts.is_empty() {
            if self.operations.is_empty() {
                return format!("What is the type of {}?", self.param);
            }
            let ops: Vec<String> = self.operations.iter().map(ToString::to_string).collect();
            return format!("What is the type of {}, which is used in {} operations?", self.param, english_list(&ops));
        }
        format!("What is the type of {}, which has {}?", self.param, parts.join(" and "))
    }
}

fn english_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Features of `param` in `f`, including closures that capture it.
pub fn extract_features(index: &ProjectIndex, f: &str, param: &str) -> Result<ParamFeature, ResolveError> {
    let unit = index.unit(f).map_err(|_| ResolveError::UnknownUnit(f.to_string()))?;
    if !unit.non_receiver_params().any(|p| p.name == param) {
        return Err(ResolveError::UnknownParameter { function: f.to_string(), param: param.to_string() });
    }
    let mut feature = ParamFeature::new(param);
    let source = index.file_text(&unit.file).ok_or_else(|| ResolveError::UnknownUnit(f.to_string()))?;
    let tree = syntax::parse(&source).ok_or_else(|| ResolveError::UnknownUnit(f.to_string()))?;
    let def = syntax::find_definition_at(tree.root_node(), unit.span.start_line).ok_or_else(|| ResolveError::UnknownUnit(f.to_string()))?;
    if let Some(body) = def.child_by_field_name("body") {
        walk(body, param, &source, &mut feature);
    }
    Ok(feature)
}

fn walk(node: Node<'_>, param: &str, src: &str, out: &mut ParamFeature) {
    for child in named_children(node) {
        let def = syntax::definition_of(child);
        if matches!(def.kind(), "function_definition" | "lambda") && shadows(def, param, src) {
            continue;
        }
        if child.kind() == "identifier" && text(child, src) == param && is_reference(child) {
            classify(child, src, out);
        }
        walk(child, param, src, out);
    }
}

/// Whether a nested function or lambda rebinds the name locally.
fn shadows(def: Node<'_>, param: &str, src: &str) -> bool {
    if let Some(params) = def.child_by_field_name("parameters") {
        if bound_names(params, src).iter().any(|n| n == param) {
            return true;
        }
    }
    let Some(body) = def.child_by_field_name("body") else { return false };
    if body.kind() != "block" {
        return false;
    }
    named_children(body).into_iter().any(|stmt| {
        let expr = if stmt.kind() == "expression_statement" { stmt.named_child(0) } else { None };
        expr.filter(|e| e.kind() == "assignment").and_then(|a| a.child_by_field_name("left")).is_some_and(|l| l.kind() == "identifier" && text(l, src) == param)
    })
}

fn bound_names(params: Node<'_>, src: &str) -> Vec<String> {
    named_children(params)
        .into_iter()
        .filter_map(|p| match p.kind() {
            "identifier" => Some(text(p, src).to_string()),
            "typed_parameter" | "list_splat_pattern" | "dictionary_splat_pattern" => {
                named_children(p).into_iter().find(|c| c.kind() == "identifier").map(|c| text(c, src).to_string())
            }
            _ => p.child_by_field_name("name").map(|n| text(n, src).to_string()),
        })
        .collect()
}

fn is_field(parent: Node<'_>, field: &str, node: Node<'_>) -> bool {
    parent.child_by_field_name(field).is_some_and(|c| c.id() == node.id())
}

/// Excludes attribute names and keyword-argument names.
fn is_reference(node: Node<'_>) -> bool {
    match node.parent() {
        Some(p) if p.kind() == "attribute" => !is_field(p, "attribute", node),
        Some(p) if p.kind() == "keyword_argument" => !is_field(p, "name", node),
        _ => true,
    }
}

fn is_stringish(node: Option<Node<'_>>) -> bool {
    node.is_some_and(|n| matches!(n.kind(), "string" | "concatenated_string"))
}

fn classify(ident: Node<'_>, src: &str, out: &mut ParamFeature) {
    let mut node = ident;
    while let Some(p) = node.parent().filter(|p| p.kind() == "parenthesized_expression") {
        node = p;
    }
    let Some(parent) = node.parent() else { return };
    match parent.kind() {
        "attribute" if is_field(parent, "object", node) => {
            let Some(attr) = parent.child_by_field_name("attribute") else { return };
            let name = text(attr, src);
            let invoked = parent.parent().is_some_and(|gp| gp.kind() == "call" && is_field(gp, "function", parent));
            if invoked {
                out.add_method(name);
            } else {
                out.add_field(name);
            }
        }
        "call" if is_field(parent, "function", node) => {
            out.operations.insert(OpTag::Call);
        }
        "binary_operator" => {
            let op = parent.child_by_field_name("operator").map(|o| text(o, src)).unwrap_or("");
            let other = if is_field(parent, "left", node) { parent.child_by_field_name("right") } else { parent.child_by_field_name("left") };
            let tag = match op {
                "+" | "%" if is_stringish(other) => OpTag::StringConcat,
                "&" | "|" | "^" | "<<" | ">>" => OpTag::Bitwise,
                _ => OpTag::Arithmetic,
            };
            out.operations.insert(tag);
        }
        "augmented_assignment" => {
            let op = parent.child_by_field_name("operator").map(|o| text(o, src)).unwrap_or("");
            let tag = match op {
                "+=" if is_stringish(parent.child_by_field_name("right")) => OpTag::StringConcat,
                "&=" | "|=" | "^=" | "<<=" | ">>=" => OpTag::Bitwise,
                _ => OpTag::Arithmetic,
            };
            out.operations.insert(tag);
        }
        "unary_operator" => {
            let op = parent.child_by_field_name("operator").map(|o| text(o, src)).unwrap_or("");
            out.operations.insert(if op == "~" { OpTag::Bitwise } else { OpTag::Arithmetic });
        }
        "comparison_operator" => {
            let membership = children(parent).iter().any(|c| !c.is_named() && text(*c, src) == "in");
            let first = parent.named_child(0).is_some_and(|c| c.id() == node.id());
            out.operations.insert(if membership && !first { OpTag::Membership } else { OpTag::Comparison });
        }
        "subscript" if is_field(parent, "value", node) => {
            out.operations.insert(OpTag::Subscript);
        }
        "for_statement" | "for_in_clause" if is_field(parent, "right", node) => {
            out.operations.insert(OpTag::Iteration);
        }
        "list_splat" => {
            out.operations.insert(OpTag::Iteration);
        }
        "dictionary_splat" => {
            out.operations.insert(OpTag::Subscript);
        }
        "if_statement" | "while_statement" | "elif_clause" if is_field(parent, "condition", node) => {
            out.operations.insert(OpTag::BooleanContext);
        }
        "not_operator" | "boolean_operator" => {
            out.operations.insert(OpTag::BooleanContext);
        }
        "conditional_expression" if parent.named_child(1).is_some_and(|c| c.id() == node.id()) => {
            out.operations.insert(OpTag::BooleanContext);
        }
        "assert_statement" if parent.named_child(0).is_some_and(|c| c.id() == node.id()) => {
            out.operations.insert(OpTag::BooleanContext);
        }
        _ => {}
    }
}
