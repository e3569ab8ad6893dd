//! Thin helpers over the tree-sitter Python grammar.

use tree_sitter::{Node, Parser, Tree};

pub fn parse(source: &str) -> Option<Tree> {
    let mut parser = Parser::new();
    parser.set_language(&tree_sitter_python::LANGUAGE.into()).expect("python grammar is ABI compatible");
    parser.parse(source, None)
}

pub fn text<'a>(node: Node<'_>, source: &'a str) -> &'a str {
    &source[node.byte_range()]
}

/// 1-based line of the node start.
pub fn line(node: Node<'_>) -> u32 {
    node.start_position().row as u32 + 1
}

/// 1-based line of the node end. A node ending at column 0 ends on the previous line.
pub fn end_line(node: Node<'_>) -> u32 {
    let end = node.end_position();
    if end.column == 0 && end.row > node.start_position().row {
        end.row as u32
    } else {
        end.row as u32 + 1
    }
}

pub fn named_children(node: Node<'_>) -> Vec<Node<'_>> {
    let mut cursor = node.walk();
    node.named_children(&mut cursor).collect()
}

pub fn children(node: Node<'_>) -> Vec<Node<'_>> {
    let mut cursor = node.walk();
    node.children(&mut cursor).collect()
}

/// First syntax error location, if any.
pub fn first_error(node: Node<'_>) -> Option<u32> {
    if !node.has_error() {
        return None;
    }
    if node.is_error() || node.is_missing() {
        return Some(line(node));
    }
    for child in children(node) {
        if let Some(l) = first_error(child) {
            return Some(l);
        }
    }
    Some(line(node))
}

/// Unwraps a `decorated_definition` to the inner definition.
pub fn definition_of(node: Node<'_>) -> Node<'_> {
    if node.kind() == "decorated_definition" {
        node.child_by_field_name("definition").unwrap_or(node)
    } else {
        node
    }
}

pub fn is_definition(node: Node<'_>) -> bool {
    matches!(node.kind(), "function_definition" | "class_definition" | "decorated_definition")
}

/// Text of a string literal without prefix and quotes.
pub fn string_value(node: Node<'_>, source: &str) -> String {
    let mut out = String::new();
    let mut saw_content = false;
    for child in children(node) {
        match child.kind() {
            "string_content" | "escape_sequence" => {
                out.push_str(text(child, source));
                saw_content = true;
            }
            "interpolation" => out.push_str(text(child, source)),
            _ => {}
        }
    }
    if !saw_content && node.kind() == "concatenated_string" {
        for child in named_children(node) {
            out.push_str(&string_value(child, source));
        }
    }
    out
}

/// Docstring of a module/class/function body block, cleaned like `inspect.cleandoc`.
pub fn docstring(body: Node<'_>, source: &str) -> Option<String> {
    let first = named_children(body).into_iter().find(|n| n.kind() != "comment")?;
    if first.kind() != "expression_statement" {
        return None;
    }
    let expr = first.named_child(0)?;
    if expr.kind() != "string" && expr.kind() != "concatenated_string" {
        return None;
    }
    Some(cleandoc(&string_value(expr, source)))
}

pub fn cleandoc(raw: &str) -> String {
    let lines: Vec<&str> = raw.lines().collect();
    if lines.is_empty() {
        return String::new();
    }
    let indent = lines.iter().skip(1).filter(|l| !l.trim().is_empty()).map(|l| l.len() - l.trim_start().len()).min().unwrap_or(0);
    let mut out: Vec<String> = Vec::with_capacity(lines.len());
    out.push(lines[0].trim().to_string());
    for l in lines.iter().skip(1) {
        let cut = indent.min(l.len() - l.trim_start().len());
        out.push(l[cut..].trim_end().to_string());
    }
    while out.first().is_some_and(|l| l.is_empty()) {
        out.remove(0);
    }
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    out.join("\n")
}

/// Finds the definition node (function or class) whose definition keyword sits on `line`.
pub fn find_definition_at(root: Node<'_>, line_no: u32) -> Option<Node<'_>> {
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        if line(node) > line_no || end_line(node) < line_no {
            continue;
        }
        if matches!(node.kind(), "function_definition" | "class_definition") && line(node) == line_no {
            return Some(node);
        }
        stack.extend(named_children(node));
    }
    None
}
