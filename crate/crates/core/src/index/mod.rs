//! Project inventory: every function, method, constructor and class of a
//! Python project, addressable by qualified name.

pub mod syntax;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tree_sitter::Node;

use self::syntax::{children, definition_of, named_children, text};

pub const DEFAULT_MAX_FILE_BYTES: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("project root not found: {0}")]
    RootNotFound(PathBuf),
    #[error("permission denied: {0}")]
    PermissionDenied(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("module `{module}` maps to more than one file: {files:?}")]
    AmbiguousModule { module: String, files: Vec<String> },
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Function,
    Method,
    Constructor,
    SubjectClass,
}

impl UnitKind {
    pub fn is_callable(self) -> bool {
        !matches!(self, UnitKind::SubjectClass)
    }
}

/// Inclusive 1-based line range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start_line: u32,
    pub end_line: u32,
}

impl Span {
    pub fn contains(&self, line: u32) -> bool {
        self.start_line <= line && line <= self.end_line
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub position: usize,
    pub annotation: Option<String>,
    pub default: Option<String>,
    /// `self`/`cls` of a method; never a type-resolution target.
    pub receiver: bool,
    /// `*args` / `**kwargs` marker, if any.
    pub variadic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeUnit {
    pub qualified_name: String,
    /// Dotted name inside its module (`Call.matches_variable`).
    pub local_name: String,
    pub kind: UnitKind,
    pub module_path: String,
    /// File path relative to the project root, `/`-separated.
    pub file: String,
    pub source: String,
    pub docstring: Option<String>,
    pub span: Span,
    pub parameters: Vec<ParameterSpec>,
    pub defined_fields: BTreeSet<String>,
    pub defined_methods: BTreeSet<String>,
    pub decorators: Vec<String>,
    pub is_async: bool,
    /// Base-class expressions, subject classes only.
    pub bases: Vec<String>,
    /// Qualified name of the enclosing unit.
    pub parent: Option<String>,
}

impl CodeUnit {
    /// Bare name (last dotted segment).
    pub fn name(&self) -> &str {
        self.local_name.rsplit('.').next().unwrap_or(&self.local_name)
    }

    pub fn non_receiver_params(&self) -> impl Iterator<Item = &ParameterSpec> {
        self.parameters.iter().filter(|p| !p.receiver)
    }

    /// `def name(params)` header line, used as a fallback description.
    pub fn signature(&self) -> String {
        let params: Vec<String> = self
            .parameters
            .iter()
            .map(|p| {
                let mut s = format!("{}{}", p.variadic.as_deref().unwrap_or(""), p.name);
                if let Some(a) = &p.annotation {
                    s.push_str(": ");
                    s.push_str(a);
                }
                if let Some(d) = &p.default {
                    s.push_str(" = ");
                    s.push_str(d);
                }
                s
            })
            .collect();
        match self.kind {
            UnitKind::SubjectClass => format!("class {}", self.name()),
            _ => format!("def {}({})", self.name(), params.join(", ")),
        }
    }

    /// Whether this unit is nested inside a function body (not importable).
    pub fn is_nested(&self, index: &ProjectIndex) -> bool {
        let mut parent = self.parent.as_deref();
        while let Some(p) = parent {
            match index.units.get(p) {
                Some(u) if u.kind.is_callable() => return true,
                Some(u) => parent = u.parent.as_deref(),
                None => return false,
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub content_hash: String,
    pub module_path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImportTarget {
    Module { module: String },
    Symbol { module: String, name: String },
}

/// A name bound in a module by an import statement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportBinding {
    pub alias: String,
    pub target: ImportTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExistingTest {
    pub path: String,
    pub module_path: String,
    pub name: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexOptions {
    pub max_file_bytes: u64,
    /// Paths (relative to root) that are never indexed.
    pub exclude: Vec<String>,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self { max_file_bytes: DEFAULT_MAX_FILE_BYTES, exclude: vec![".typeforge".to_string()] }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectIndex {
    pub root: PathBuf,
    pub units: BTreeMap<String, CodeUnit>,
    pub files: Vec<FileRecord>,
    pub imports: BTreeMap<String, Vec<ImportBinding>>,
    pub existing_tests: Vec<ExistingTest>,
    pub diagnostics: Vec<Diagnostic>,
    #[serde(skip)]
    texts: BTreeMap<String, Arc<str>>,
}

impl ProjectIndex {
    pub fn unit(&self, name: &str) -> Result<&CodeUnit, IndexError> {
        self.units.get(name).ok_or_else(|| IndexError::UnknownUnit(name.to_string()))
    }

    pub fn subject_classes(&self) -> impl Iterator<Item = &CodeUnit> {
        self.units.values().filter(|u| u.kind == UnitKind::SubjectClass)
    }

    pub fn callables(&self) -> impl Iterator<Item = &CodeUnit> {
        self.units.values().filter(|u| u.kind.is_callable())
    }

    /// Text of an indexed file; falls back to reading from disk for deserialized indices.
    pub fn file_text(&self, path: &str) -> Option<Arc<str>> {
        if let Some(t) = self.texts.get(path) {
            return Some(t.clone());
        }
        let bytes = fs::read(self.root.join(path)).ok()?;
        Some(Arc::from(String::from_utf8_lossy(&bytes).as_ref()))
    }

    pub fn file_for_module(&self, module: &str) -> Option<&FileRecord> {
        self.files.iter().find(|f| f.module_path == module)
    }

    pub fn module_of_file(&self, path: &str) -> Option<&str> {
        self.files.iter().find(|f| f.path == path).map(|f| f.module_path.as_str())
    }

    /// Looks up a unit by module and module-local dotted name.
    pub fn find_local(&self, module: &str, local: &str) -> Option<&CodeUnit> {
        if let Some(u) = self.units.get(local) {
            if u.module_path == module {
                return Some(u);
            }
        }
        self.units.get(&format!("{module}.{local}")).filter(|u| u.local_name == local)
    }

    /// Constructor unit of a subject class, if defined.
    pub fn constructor_of(&self, class: &CodeUnit) -> Option<&CodeUnit> {
        self.find_local(&class.module_path, &format!("{}.__init__", class.local_name))
    }

    /// Resolves a base-class expression written in `module` to an indexed class.
    pub fn resolve_class_ref(&self, module: &str, expr: &str) -> Option<&CodeUnit> {
        let expr = expr.trim();
        if let Some(u) = self.find_local(module, expr).filter(|u| u.kind == UnitKind::SubjectClass) {
            return Some(u);
        }
        let (head, rest) = match expr.split_once('.') {
            Some((h, r)) => (h, Some(r)),
            None => (expr, None),
        };
        for binding in self.imports.get(module).into_iter().flatten() {
            if binding.alias != head {
                continue;
            }
            let (target_module, local) = match (&binding.target, rest) {
                (ImportTarget::Symbol { module, name }, None) => (module.clone(), name.clone()),
                (ImportTarget::Symbol { module, name }, Some(r)) => (format!("{module}.{name}"), r.to_string()),
                (ImportTarget::Module { module }, Some(r)) => match r.rsplit_once('.') {
                    Some((m, l)) => (format!("{module}.{m}"), l.to_string()),
                    None => (module.clone(), r.to_string()),
                },
                (ImportTarget::Module { .. }, None) => continue,
            };
            if let Some(u) = self.find_local(&target_module, &local) {
                if u.kind == UnitKind::SubjectClass {
                    return Some(u);
                }
            }
        }
        None
    }

    /// Methods defined on a class or any indexed base class.
    pub fn class_methods(&self, class: &CodeUnit) -> BTreeSet<String> {
        self.class_members(class, |c| &c.defined_methods)
    }

    pub fn class_fields(&self, class: &CodeUnit) -> BTreeSet<String> {
        self.class_members(class, |c| &c.defined_fields)
    }

    fn class_members(&self, class: &CodeUnit, pick: fn(&CodeUnit) -> &BTreeSet<String>) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut seen = BTreeSet::new();
        let mut stack = vec![class];
        while let Some(c) = stack.pop() {
            if !seen.insert(c.qualified_name.clone()) {
                continue;
            }
            out.extend(pick(c).iter().cloned());
            for base in &c.bases {
                if let Some(b) = self.resolve_class_ref(&c.module_path, base) {
                    stack.push(b);
                }
            }
        }
        out
    }
}

/// Import statement that binds `unit`'s top-level name in a test module.
pub fn resolve_module_path(unit: &CodeUnit, index: &ProjectIndex) -> Result<String, IndexError> {
    if !index.units.contains_key(&unit.qualified_name) {
        return Err(IndexError::UnknownUnit(unit.qualified_name.clone()));
    }
    let files: Vec<String> = index.files.iter().filter(|f| f.module_path == unit.module_path).map(|f| f.path.clone()).collect();
    if files.len() > 1 {
        return Err(IndexError::AmbiguousModule { module: unit.module_path.clone(), files });
    }
    let top = unit.local_name.split('.').next().unwrap_or(&unit.local_name);
    Ok(format!("from {} import {}", unit.module_path, top))
}

/// Maps `a/b/c.py` to `a.b.c` and `a/b/__init__.py` to `a.b`.
pub fn module_path_for(relative: &str) -> Option<String> {
    let stem = relative.strip_suffix(".py")?;
    let mut parts: Vec<&str> = stem.split('/').collect();
    if parts.last() == Some(&"__init__") {
        parts.pop();
    }
    if parts.is_empty() || parts.iter().any(|p| p.is_empty() || p.contains('.') || p.contains('-')) {
        return None;
    }
    Some(parts.join("."))
}

fn is_test_file(relative: &str) -> bool {
    let name = relative.rsplit('/').next().unwrap_or(relative);
    name.starts_with("test_") || name.ends_with("_test.py") || name == "conftest.py" || relative.split('/').any(|seg| seg == "tests")
}

fn skip_dir(name: &str) -> bool {
    name.starts_with('.') || matches!(name, "__pycache__" | "venv" | "node_modules" | "site-packages" | "build" | "dist")
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn index_project(root: &Path) -> Result<ProjectIndex, IndexError> {
    index_project_with(root, &IndexOptions::default())
}

pub fn index_project_with(root: &Path, options: &IndexOptions) -> Result<ProjectIndex, IndexError> {
    let meta = fs::metadata(root).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IndexError::RootNotFound(root.to_path_buf()),
        io::ErrorKind::PermissionDenied => IndexError::PermissionDenied(root.to_path_buf()),
        _ => IndexError::Io { path: root.to_path_buf(), source: e },
    })?;
    if !meta.is_dir() {
        return Err(IndexError::RootNotFound(root.to_path_buf()));
    }
    fs::read_dir(root).map_err(|e| match e.kind() {
        io::ErrorKind::PermissionDenied => IndexError::PermissionDenied(root.to_path_buf()),
        _ => IndexError::Io { path: root.to_path_buf(), source: e },
    })?;

    let mut diagnostics = Vec::new();
    let mut paths = Vec::new();
    let walker = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !(e.file_type().is_dir() && skip_dir(&e.file_name().to_string_lossy())));
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e.path().map(|p| p.display().to_string()).unwrap_or_default();
                diagnostics.push(Diagnostic { path, message: format!("walk error: {e}") });
                continue;
            }
        };
        if !entry.file_type().is_file() || entry.path().extension().is_none_or(|x| x != "py") {
            continue;
        }
        let rel = relative_path(root, entry.path());
        if options.exclude.iter().any(|ex| rel == *ex || rel.starts_with(&format!("{ex}/"))) {
            continue;
        }
        paths.push((entry.path().to_path_buf(), rel));
    }

    let parsed: Vec<FileOutcome> = paths.par_iter().map(|(abs, rel)| parse_file(abs, rel, options)).collect();

    let mut files = Vec::new();
    let mut raw_units = Vec::new();
    let mut imports = BTreeMap::new();
    let mut existing_tests = Vec::new();
    let mut texts = BTreeMap::new();
    for outcome in parsed {
        diagnostics.extend(outcome.diagnostics);
        if let Some(parsed) = outcome.parsed {
            files.push(parsed.record.clone());
            if parsed.is_test {
                existing_tests.extend(parsed.tests);
            } else {
                raw_units.extend(parsed.units);
                imports.insert(parsed.record.module_path.clone(), parsed.imports);
            }
            texts.insert(parsed.record.path.clone(), parsed.text);
        }
    }

    // Local names are qualified names unless two modules share one.
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for u in &raw_units {
        *counts.entry(u.local_name.clone()).or_default() += 1;
    }
    let qualify = |module: &str, local: &str| -> String {
        if counts.get(local).copied().unwrap_or(0) > 1 {
            format!("{module}.{local}")
        } else {
            local.to_string()
        }
    };
    let mut units = BTreeMap::new();
    for mut u in raw_units {
        u.qualified_name = qualify(&u.module_path, &u.local_name);
        u.parent = u.parent.map(|p| qualify(&u.module_path, &p));
        units.insert(u.qualified_name.clone(), u);
    }

    Ok(ProjectIndex { root: root.to_path_buf(), units, files, imports, existing_tests, diagnostics, texts })
}

fn relative_path(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

struct ParsedFile {
    record: FileRecord,
    text: Arc<str>,
    is_test: bool,
    units: Vec<CodeUnit>,
    imports: Vec<ImportBinding>,
    tests: Vec<ExistingTest>,
}

struct FileOutcome {
    parsed: Option<ParsedFile>,
    diagnostics: Vec<Diagnostic>,
}

fn parse_file(abs: &Path, rel: &str, options: &IndexOptions) -> FileOutcome {
    let mut diagnostics = Vec::new();
    let diag = |message: String| Diagnostic { path: rel.to_string(), message };
    let skipped = |diagnostics: Vec<Diagnostic>| FileOutcome { parsed: None, diagnostics };

    let size = match fs::metadata(abs) {
        Ok(m) => m.len(),
        Err(e) => return skipped(vec![diag(format!("unreadable: {e}"))]),
    };
    if size > options.max_file_bytes {
        return skipped(vec![diag(format!("skipped: {size} bytes exceeds cap of {} bytes", options.max_file_bytes))]);
    }
    let bytes = match fs::read(abs) {
        Ok(b) => b,
        Err(e) => return skipped(vec![diag(format!("unreadable: {e}"))]),
    };
    let text: String = match String::from_utf8(bytes.clone()) {
        Ok(s) => s,
        Err(_) => {
            diagnostics.push(diag("invalid UTF-8 replaced".to_string()));
            String::from_utf8_lossy(&bytes).into_owned()
        }
    };
    let Some(module_path) = module_path_for(rel) else {
        diagnostics.push(diag("skipped: path does not map to an importable module".to_string()));
        return skipped(diagnostics);
    };
    let Some(tree) = syntax::parse(&text) else {
        diagnostics.push(diag("skipped: parser produced no tree".to_string()));
        return skipped(diagnostics);
    };
    if let Some(line) = syntax::first_error(tree.root_node()) {
        diagnostics.push(diag(format!("skipped: syntax error near line {line}")));
        return skipped(diagnostics);
    }

    let record = FileRecord { path: rel.to_string(), content_hash: content_hash(&bytes), module_path: module_path.clone() };
    let is_test = is_test_file(rel);
    let mut extractor = Extractor { source: &text, lines: text.split('\n').collect(), file: rel, module: &module_path, units: Vec::new() };
    extractor.walk_block(tree.root_node(), &mut Vec::new());
    let imports = collect_imports(tree.root_node(), &text, &module_path, rel.ends_with("__init__.py"));

    let tests = if is_test {
        extractor
            .units
            .iter()
            .filter(|u| u.kind.is_callable() && u.name().starts_with("test"))
            .map(|u| ExistingTest { path: rel.to_string(), module_path: module_path.clone(), name: u.local_name.clone(), source: u.source.clone() })
            .collect()
    } else {
        Vec::new()
    };
    let units = std::mem::take(&mut extractor.units);
    FileOutcome { parsed: Some(ParsedFile { record, text: Arc::from(text.as_str()), is_test, units, imports, tests }), diagnostics }
}

#[derive(Clone)]
struct Scope {
    local_name: String,
    is_class: bool,
}

struct Extractor<'a> {
    source: &'a str,
    lines: Vec<&'a str>,
    file: &'a str,
    module: &'a str,
    units: Vec<CodeUnit>,
}

impl<'a> Extractor<'a> {
    /// Visits definitions reachable from `node` without entering other definitions' bodies.
    fn walk_block(&mut self, node: Node<'_>, scopes: &mut Vec<Scope>) {
        for child in named_children(node) {
            if syntax::is_definition(child) {
                self.visit_definition(child, scopes);
            } else {
                self.walk_block(child, scopes);
            }
        }
    }

    fn slice(&self, start: u32, end: u32) -> String {
        self.lines[(start - 1) as usize..end as usize].join("\n")
    }

    fn visit_definition(&mut self, node: Node<'_>, scopes: &mut Vec<Scope>) {
        let decorators: Vec<String> = if node.kind() == "decorated_definition" {
            named_children(node)
                .into_iter()
                .filter(|c| c.kind() == "decorator")
                .map(|c| text(c, self.source).trim_start_matches('@').trim().to_string())
                .collect()
        } else {
            Vec::new()
        };
        let def = definition_of(node);
        let Some(name_node) = def.child_by_field_name("name") else { return };
        let name = text(name_node, self.source).to_string();
        let local_name = match scopes.last() {
            Some(s) => format!("{}.{}", s.local_name, name),
            None => name.clone(),
        };
        let parent = scopes.last().map(|s| s.local_name.clone());
        let in_class = scopes.last().is_some_and(|s| s.is_class);
        let span = Span { start_line: syntax::line(def), end_line: syntax::end_line(def) };
        let body = def.child_by_field_name("body");
        let docstring = body.and_then(|b| syntax::docstring(b, self.source));

        let mut unit = CodeUnit {
            qualified_name: local_name.clone(),
            local_name: local_name.clone(),
            kind: UnitKind::Function,
            module_path: self.module.to_string(),
            file: self.file.to_string(),
            source: self.slice(span.start_line, span.end_line),
            docstring,
            span,
            parameters: Vec::new(),
            defined_fields: BTreeSet::new(),
            defined_methods: BTreeSet::new(),
            decorators,
            is_async: false,
            bases: Vec::new(),
            parent,
        };

        if def.kind() == "function_definition" {
            unit.is_async = children(def).iter().any(|c| c.kind() == "async");
            let is_static = unit.decorators.iter().any(|d| d == "staticmethod");
            unit.kind = match (in_class, name.as_str()) {
                (true, "__init__") => UnitKind::Constructor,
                (true, _) => UnitKind::Method,
                (false, _) => UnitKind::Function,
            };
            if let Some(params) = def.child_by_field_name("parameters") {
                unit.parameters = self.parameters(params, in_class && !is_static);
            }
            self.units.push(unit);
            if let Some(body) = body {
                scopes.push(Scope { local_name, is_class: false });
                self.walk_block(body, scopes);
                scopes.pop();
            }
        } else {
            unit.kind = UnitKind::SubjectClass;
            if let Some(supers) = def.child_by_field_name("superclasses") {
                unit.bases = named_children(supers).into_iter().filter(|c| c.kind() != "keyword_argument").map(|c| text(c, self.source).to_string()).collect();
            }
            if let Some(body) = body {
                let (fields, methods) = self.class_members(body);
                unit.defined_fields = fields;
                unit.defined_methods = methods;
            }
            self.units.push(unit);
            if let Some(body) = body {
                scopes.push(Scope { local_name, is_class: true });
                self.walk_block(body, scopes);
                scopes.pop();
            }
        }
    }

    fn parameters(&self, params: Node<'_>, method: bool) -> Vec<ParameterSpec> {
        let mut out = Vec::new();
        for p in named_children(params) {
            let (name, annotation, default, variadic) = match p.kind() {
                "identifier" => (text(p, self.source).to_string(), None, None, None),
                "typed_parameter" => {
                    let inner = p.named_child(0);
                    let (name, variadic) = match inner {
                        Some(n) if n.kind() == "list_splat_pattern" => (splat_name(n, self.source), Some("*")),
                        Some(n) if n.kind() == "dictionary_splat_pattern" => (splat_name(n, self.source), Some("**")),
                        Some(n) => (text(n, self.source).to_string(), None),
                        None => continue,
                    };
                    let ann = p.child_by_field_name("type").map(|t| text(t, self.source).to_string());
                    (name, ann, None, variadic.map(str::to_string))
                }
                "default_parameter" | "typed_default_parameter" => {
                    let Some(n) = p.child_by_field_name("name") else { continue };
                    let ann = p.child_by_field_name("type").map(|t| text(t, self.source).to_string());
                    let def = p.child_by_field_name("value").map(|v| text(v, self.source).to_string());
                    (text(n, self.source).to_string(), ann, def, None)
                }
                "list_splat_pattern" => (splat_name(p, self.source), None, None, Some("*".to_string())),
                "dictionary_splat_pattern" => (splat_name(p, self.source), None, None, Some("**".to_string())),
                _ => continue,
            };
            let position = out.len();
            out.push(ParameterSpec { name, position, annotation, default, receiver: method && position == 0, variadic });
        }
        out
    }

    /// Fields (class-body assignments and receiver assignments in any method) and methods.
    fn class_members(&self, body: Node<'_>) -> (BTreeSet<String>, BTreeSet<String>) {
        let mut fields = BTreeSet::new();
        let mut methods = BTreeSet::new();
        for stmt in named_children(body) {
            let def = definition_of(stmt);
            match def.kind() {
                "function_definition" => {
                    let Some(n) = def.child_by_field_name("name") else { continue };
                    methods.insert(text(n, self.source).to_string());
                    let receiver = def.child_by_field_name("parameters").map(|p| self.parameters(p, true)).and_then(|ps| ps.into_iter().next()).map(|p| p.name);
                    if let (Some(receiver), Some(fbody)) = (receiver, def.child_by_field_name("body")) {
                        collect_receiver_fields(fbody, self.source, &receiver, &mut fields);
                    }
                }
                "expression_statement" => {
                    for expr in named_children(def) {
                        if expr.kind() == "assignment" {
                            if let Some(left) = expr.child_by_field_name("left") {
                                collect_target_names(left, self.source, &mut fields);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        (fields, methods)
    }
}

fn splat_name(node: Node<'_>, source: &str) -> String {
    node.named_child(0).map(|n| text(n, source).to_string()).unwrap_or_default()
}

fn collect_target_names(target: Node<'_>, source: &str, out: &mut BTreeSet<String>) {
    match target.kind() {
        "identifier" => {
            out.insert(text(target, source).to_string());
        }
        "pattern_list" | "tuple_pattern" | "list_pattern" => {
            for c in named_children(target) {
                collect_target_names(c, source, out);
            }
        }
        _ => {}
    }
}

/// `receiver.x = ...` anywhere inside a method body, including nested blocks.
fn collect_receiver_fields(node: Node<'_>, source: &str, receiver: &str, out: &mut BTreeSet<String>) {
    for child in named_children(node) {
        match child.kind() {
            "function_definition" | "class_definition" | "decorated_definition" | "lambda" => continue,
            "assignment" | "augmented_assignment" => {
                if let Some(left) = child.child_by_field_name("left") {
                    receiver_targets(left, source, receiver, out);
                }
                if let Some(right) = child.child_by_field_name("right") {
                    collect_receiver_fields(right, source, receiver, out);
                }
            }
            _ => collect_receiver_fields(child, source, receiver, out),
        }
    }
}

fn receiver_targets(target: Node<'_>, source: &str, receiver: &str, out: &mut BTreeSet<String>) {
    match target.kind() {
        "attribute" => {
            let obj = target.child_by_field_name("object");
            let attr = target.child_by_field_name("attribute");
            if let (Some(obj), Some(attr)) = (obj, attr) {
                if obj.kind() == "identifier" && text(obj, source) == receiver {
                    out.insert(text(attr, source).to_string());
                }
            }
        }
        "pattern_list" | "tuple_pattern" | "list_pattern" => {
            for c in named_children(target) {
                receiver_targets(c, source, receiver, out);
            }
        }
        _ => {}
    }
}

fn collect_imports(root: Node<'_>, source: &str, module: &str, is_package: bool) -> Vec<ImportBinding> {
    let mut out = Vec::new();
    let mut stack = vec![root];
    while let Some(node) = stack.pop() {
        match node.kind() {
            "import_statement" => {
                for name in named_children(node) {
                    match name.kind() {
                        "dotted_name" => {
                            let full = text(name, source).to_string();
                            let head = full.split('.').next().unwrap_or(&full).to_string();
                            out.push(ImportBinding { alias: head.clone(), target: ImportTarget::Module { module: head } });
                            if full.contains('.') {
                                // `import a.b` also makes `a.b.f` reachable through the `a` binding.
                                out.push(ImportBinding { alias: full.clone(), target: ImportTarget::Module { module: full } });
                            }
                        }
                        "aliased_import" => {
                            let target = name.child_by_field_name("name").map(|n| text(n, source).to_string());
                            let alias = name.child_by_field_name("alias").map(|n| text(n, source).to_string());
                            if let (Some(target), Some(alias)) = (target, alias) {
                                out.push(ImportBinding { alias, target: ImportTarget::Module { module: target } });
                            }
                        }
                        _ => {}
                    }
                }
            }
            "import_from_statement" => {
                let Some(module_node) = node.child_by_field_name("module_name") else { continue };
                let from = if module_node.kind() == "relative_import" {
                    resolve_relative(text(module_node, source), module, is_package)
                } else {
                    Some(text(module_node, source).to_string())
                };
                let Some(from) = from else { continue };
                let mut cursor = node.walk();
                for name in node.children_by_field_name("name", &mut cursor) {
                    let (target, alias) = match name.kind() {
                        "aliased_import" => (
                            name.child_by_field_name("name").map(|n| text(n, source).to_string()),
                            name.child_by_field_name("alias").map(|n| text(n, source).to_string()),
                        ),
                        _ => {
                            let t = text(name, source).to_string();
                            (Some(t.clone()), Some(t))
                        }
                    };
                    if let (Some(target), Some(alias)) = (target, alias) {
                        out.push(ImportBinding { alias, target: ImportTarget::Symbol { module: from.clone(), name: target } });
                    }
                }
            }
            "function_definition" | "class_definition" => {
                // imports local to a function still bind names the call resolver can use
                stack.extend(named_children(node));
            }
            _ => stack.extend(named_children(node)),
        }
    }
    out.sort_by(|a, b| a.alias.cmp(&b.alias).then_with(|| format!("{:?}", a.target).cmp(&format!("{:?}", b.target))));
    out.dedup();
    out
}

fn resolve_relative(spec: &str, module: &str, is_package: bool) -> Option<String> {
    let dots = spec.chars().take_while(|c| *c == '.').count();
    let rest = spec[dots..].trim();
    let mut parts: Vec<&str> = module.split('.').collect();
    if !is_package {
        parts.pop();
    }
    for _ in 1..dots {
        parts.pop()?;
    }
    if !rest.is_empty() {
        parts.push(rest);
    }
    if parts.is_empty() {
        None
    } else {
        Some(parts.join("."))
    }
}
