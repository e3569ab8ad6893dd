//! Parameter type resolution: call instances first, then annotations, then
//! duck-typed retrieval over the knowledge base.

mod features;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::callgraph::{pre_existing_instances, CallGraph, CallInstance, DEFAULT_INSTANCE_CAP};
use crate::index::{resolve_module_path, CodeUnit, ParameterSpec, ProjectIndex, UnitKind};
use crate::kb::{consolidate, DocKind, KBDocument, KnowledgeBase, DEFAULT_CONTEXT_CAP};
use crate::llm::Llm;
use crate::prompts;

pub use self::features::{extract_features, OpTag, ParamFeature};

/// Builtin types a test can write as literals.
pub const PRIMITIVES: &[&str] = &["int", "float", "bool", "str", "bytes", "list", "dict", "set", "tuple", "None"];
/// How many constructors deep a plan follows annotated constructor parameters.
pub const MAX_CONSTRUCTOR_DEPTH: usize = 3;

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("`{function}` has no non-receiver parameter `{param}`")]
    UnknownParameter { function: String, param: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeKind {
    Primitive,
    Annotated,
    UserDefined,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    InstanceBacked,
    AnnotationBacked,
    FeatureBacked,
    Guessed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeHypothesis {
    pub kind: TypeKind,
    pub name: String,
    pub confidence: Confidence,
    pub evidence: Vec<String>,
}

impl TypeHypothesis {
    fn unknown(confidence: Confidence, evidence: Vec<String>) -> Self {
        Self { kind: TypeKind::Unknown, name: String::new(), confidence, evidence }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    CallInstance,
    Annotation,
    FeatureRetrieval,
    Primitive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentPlan {
    pub param: String,
    pub hypothesis: TypeHypothesis,
    pub construction_context: String,
    pub source: PlanSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl ArgumentPlan {
    /// Prompt-ready text for this parameter.
    pub fn render(&self) -> String {
        let ty = match self.hypothesis.kind {
            TypeKind::Unknown => "unknown type".to_string(),
            _ => format!("`{}`", self.hypothesis.name),
        };
        let mut out = format!("Parameter `{}`: {ty}", self.param);
        if !self.construction_context.is_empty() {
            out.push('\n');
            out.push_str(&self.construction_context);
        }
        out
    }
}

/// `list[int]` → `list`, `typing.Dict` → `dict`, `NoneType` → `None`.
pub fn primitive_name(type_text: &str) -> Option<&'static str> {
    let base = type_text.trim().trim_matches('`').trim();
    let base = base.split(['[', '(']).next().unwrap_or(base).trim();
    let base = base.rsplit('.').next().unwrap_or(base);
    let lowered = match base {
        "NoneType" | "None" => "None",
        other => return PRIMITIVES.iter().find(|p| p.eq_ignore_ascii_case(other)).copied(),
    };
    Some(lowered)
}

fn find_class<'a>(index: &'a ProjectIndex, module: &str, name: &str) -> Option<&'a CodeUnit> {
    let name = name.trim().trim_matches('`').trim_matches('"').trim_matches('\'');
    if let Some(c) = index.resolve_class_ref(module, name) {
        return Some(c);
    }
    let bare = name.rsplit('.').next().unwrap_or(name);
    let mut hits = index.subject_classes().filter(|c| c.name() == bare);
    let first = hits.next()?;
    hits.next().is_none().then_some(first)
}

fn hypothesis_for_name(index: &ProjectIndex, module: &str, name: &str, confidence: Confidence, evidence: Vec<String>) -> TypeHypothesis {
    if let Some(p) = primitive_name(name) {
        return TypeHypothesis { kind: TypeKind::Primitive, name: p.to_string(), confidence, evidence };
    }
    if let Some(c) = find_class(index, module, name) {
        let mut evidence = evidence;
        evidence.push(format!("indexed class {}", c.qualified_name));
        return TypeHypothesis { kind: TypeKind::UserDefined, name: c.name().to_string(), confidence, evidence };
    }
    let kind = if confidence == Confidence::AnnotationBacked { TypeKind::Annotated } else { TypeKind::Unknown };
    TypeHypothesis { kind, name: name.trim().to_string(), confidence, evidence }
}

fn render_instances(instances: &[CallInstance]) -> String {
    instances.iter().map(|i| format!("# in {} (line {})\n```python\n{}\n```", i.caller, i.call_site.line, i.context)).collect::<Vec<_>>().join("\n\n")
}

/// Annotation first (no model call), then the shortest call instances.
pub fn infer_type(llm: &Llm, index: &ProjectIndex, f: &CodeUnit, param: &ParameterSpec, instances: &[CallInstance]) -> TypeHypothesis {
    if let Some(annotation) = &param.annotation {
        return hypothesis_for_name(index, &f.module_path, annotation, Confidence::AnnotationBacked, vec![format!("{}: {annotation}", param.name)]);
    }
    if instances.is_empty() {
        return TypeHypothesis::unknown(Confidence::Guessed, vec!["no call instances".into()]);
    }
    let user = prompts::render(prompts::INFER_TYPE, &[("name", &f.qualified_name), ("param", &param.name), ("instances", &render_instances(instances))]);
    let evidence: Vec<String> = instances.iter().map(|i| i.context.clone()).collect();
    match llm.ask(prompts::SYSTEM_ANALYST, &user) {
        Ok(reply) => match tagged_line(&reply, "TYPE:") {
            Some(name) if !name.is_empty() => hypothesis_for_name(index, &f.module_path, &name, Confidence::InstanceBacked, evidence),
            _ => TypeHypothesis::unknown(Confidence::Guessed, vec![format!("unparseable type reply: {}", reply.trim())]),
        },
        Err(e) => TypeHypothesis::unknown(Confidence::Guessed, vec![format!("type inference failed: {e}")]),
    }
}

fn tagged_line(reply: &str, tag: &str) -> Option<String> {
    reply.lines().find_map(|l| {
        let l = l.trim().trim_start_matches(['*', '-', ' ']);
        l.strip_prefix(tag).map(|rest| rest.trim().trim_end_matches('.').trim_matches(['`', '*']).trim().to_string())
    })
}

/// Subject classes whose fields and methods (own or inherited) cover the feature,
/// smallest member surface first.
pub fn candidate_classes(index: &ProjectIndex, feature: &ParamFeature) -> Vec<String> {
    let mut out: Vec<(usize, String)> = index
        .subject_classes()
        .filter_map(|c| {
            let fields = index.class_fields(c);
            let methods = index.class_methods(c);
            let fits = feature.field_accesses.is_subset(&fields) && feature.method_invocations.is_subset(&methods);
            fits.then(|| (fields.len() + methods.len(), c.qualified_name.clone()))
        })
        .collect();
    out.sort();
    out.into_iter().map(|(_, name)| name).collect()
}

/// Import line, constructor and one example instantiation of a class.
pub fn class_context(index: &ProjectIndex, cg: Option<&CallGraph>, class: &CodeUnit) -> String {
    construction_context(index, cg, class, 1, &mut BTreeSet::new())
}

/// Like [`class_context`], following annotated constructor parameters up to a fixed depth.
fn construction_context(index: &ProjectIndex, cg: Option<&CallGraph>, class: &CodeUnit, depth: usize, seen: &mut BTreeSet<String>) -> String {
    if !seen.insert(class.qualified_name.clone()) {
        return String::new();
    }
    let mut out = Vec::new();
    if !class.is_nested(index) {
        match resolve_module_path(class, index) {
            Ok(import) => out.push(format!("Import: {import}")),
            Err(e) => out.push(format!("Import unavailable: {e}")),
        }
    } else {
        out.push(format!("`{}` is defined inside a function and cannot be imported directly.", class.local_name));
    }
    let ctor = index.constructor_of(class);
    match ctor {
        Some(c) => out.push(format!("Constructor of `{}`:\n```python\n{}\n```", class.name(), c.source)),
        None => out.push(format!("Class `{}` (no explicit constructor):\n```python\n{}\n```", class.name(), class.source)),
    }
    if let (Some(cg), Some(c)) = (cg, ctor) {
        if let Ok(instances) = pre_existing_instances(cg, index, &c.qualified_name, 1) {
            if let Some(i) = instances.first() {
                out.push(format!("Example instantiation in {}:\n```python\n{}\n```", i.caller, i.context));
            }
        }
    }
    if depth < MAX_CONSTRUCTOR_DEPTH {
        for p in ctor.into_iter().flat_map(|c| c.non_receiver_params()) {
            let Some(annotation) = &p.annotation else { continue };
            if primitive_name(annotation).is_some() {
                continue;
            }
            if let Some(dep) = find_class(index, &class.module_path, annotation) {
                let nested = construction_context(index, cg, dep, depth + 1, seen);
                if !nested.is_empty() {
                    out.push(format!("Constructor argument `{}` is a `{}`:\n{nested}", p.name, dep.name()));
                }
            }
        }
    }
    out.join("\n")
}

enum BehaviorKind {
    Primitive(&'static str),
    Object,
}

fn parse_behavior(reply: &str) -> (Option<BehaviorKind>, Option<String>) {
    let kind = tagged_line(reply, "KIND:").and_then(|k| {
        let mut words = k.split_whitespace();
        match words.next().map(str::to_ascii_lowercase).as_deref() {
            Some("primitive") => words.next().and_then(primitive_name).map(BehaviorKind::Primitive),
            Some("object") => Some(BehaviorKind::Object),
            _ => None,
        }
    });
    (kind, tagged_line(reply, "BEHAVIOR:"))
}

/// Duck-test path: behavior summary, member query, filtered retrieval, consolidation.
pub fn retrieve_by_feature(
    llm: &Llm,
    kb: &KnowledgeBase,
    index: &ProjectIndex,
    cg: Option<&CallGraph>,
    f: &CodeUnit,
    param: &str,
    feature: &ParamFeature,
) -> ArgumentPlan {
    let mut evidence = Vec::new();
    let mut diagnostics = Vec::new();
    let join = |s: &BTreeSet<String>| if s.is_empty() { "none".to_string() } else { s.iter().cloned().collect::<Vec<_>>().join(", ") };
    let ops: BTreeSet<String> = feature.operations.iter().map(ToString::to_string).collect();
    let user = prompts::render(
        prompts::PARAM_BEHAVIOR,
        &[
            ("name", &f.qualified_name),
            ("param", param),
            ("source", &f.source),
            ("operations", &join(&ops)),
            ("fields", &join(&feature.field_accesses)),
            ("methods", &join(&feature.method_invocations)),
        ],
    );
    match llm.ask(prompts::SYSTEM_ANALYST, &user) {
        Ok(reply) => {
            let (kind, behavior) = parse_behavior(&reply);
            if let Some(b) = behavior {
                evidence.push(format!("behavior: {b}"));
            }
            if let Some(BehaviorKind::Primitive(p)) = kind {
                return ArgumentPlan {
                    param: param.to_string(),
                    hypothesis: TypeHypothesis { kind: TypeKind::Primitive, name: p.to_string(), confidence: Confidence::FeatureBacked, evidence },
                    construction_context: String::new(),
                    source: PlanSource::Primitive,
                    diagnostics,
                };
            }
        }
        Err(e) => diagnostics.push(format!("parameter behavior summary failed: {e}")),
    }

    let query = feature.query();
    let candidates: BTreeSet<String> = candidate_classes(index, feature).into_iter().collect();
    let hits = if candidates.is_empty() {
        Vec::new()
    } else {
        let filter = |d: &KBDocument| d.doc_kind == DocKind::SubjectClass && candidates.contains(&d.unit);
        kb.retrieve(&query, crate::kb::DEFAULT_K, crate::kb::DEFAULT_LAMBDA, Some(&filter))
    };
    let Some(top) = hits.first() else {
        diagnostics.push(format!("NoCandidates: no indexed class provides the members used on `{param}`"));
        return ArgumentPlan {
            param: param.to_string(),
            hypothesis: TypeHypothesis::unknown(Confidence::Guessed, evidence),
            construction_context: format!(
                "No project class matches the usage of `{param}` ({query}). Build a minimal stand-in object that provides exactly these members; this is a low-confidence guess."
            ),
            source: PlanSource::FeatureRetrieval,
            diagnostics,
        };
    };
    if hits.len() > 1 && (hits[0].score - hits[1].score).abs() < 1e-12 {
        evidence.push(format!("tie between {} and {}", hits[0].doc_id, hits[1].doc_id));
    }
    let docs: Vec<&KBDocument> = hits.iter().filter_map(|h| kb.get(&h.doc_id)).take(DEFAULT_CONTEXT_CAP).collect();
    let class = kb.get(&top.doc_id).and_then(|d| index.units.get(&d.unit)).filter(|u| u.kind == UnitKind::SubjectClass);
    let Some(class) = class else {
        diagnostics.push(format!("retrieved document {} does not map to an indexed class", top.doc_id));
        return ArgumentPlan {
            param: param.to_string(),
            hypothesis: TypeHypothesis::unknown(Confidence::Guessed, evidence),
            construction_context: String::new(),
            source: PlanSource::FeatureRetrieval,
            diagnostics,
        };
    };
    evidence.push(format!("query: {query}"));
    evidence.push(format!("retrieved {} ({})", class.qualified_name, top.doc_id));
    let mut context = construction_context(index, cg, class, 1, &mut BTreeSet::new());
    match consolidate(llm, &query, &docs, DEFAULT_CONTEXT_CAP) {
        Ok(bundle) if !bundle.consolidated.is_empty() => {
            context.push_str("\nRetrieved information:\n");
            context.push_str(&bundle.consolidated);
        }
        Ok(_) => {}
        Err(e) => diagnostics.push(format!("consolidation failed: {e}")),
    }
    ArgumentPlan {
        param: param.to_string(),
        hypothesis: TypeHypothesis { kind: TypeKind::UserDefined, name: class.name().to_string(), confidence: Confidence::FeatureBacked, evidence },
        construction_context: context,
        source: PlanSource::FeatureRetrieval,
        diagnostics,
    }
}

/// One plan per non-receiver parameter, in positional order.
pub fn resolve_parameters(llm: &Llm, kb: &KnowledgeBase, index: &ProjectIndex, cg: &CallGraph, f: &str) -> Result<Vec<ArgumentPlan>, ResolveError> {
    let unit = index.unit(f).map_err(|_| ResolveError::UnknownUnit(f.to_string()))?;
    let instances = if cg.nodes.contains(f) { pre_existing_instances(cg, index, f, DEFAULT_INSTANCE_CAP).unwrap_or_default() } else { Vec::new() };
    let mut plans = Vec::new();
    for param in unit.non_receiver_params() {
        if let Some(v) = &param.variadic {
            let name = if v == "**" { "dict" } else { "tuple" };
            plans.push(ArgumentPlan {
                param: param.name.clone(),
                hypothesis: TypeHypothesis {
                    kind: TypeKind::Primitive,
                    name: name.into(),
                    confidence: Confidence::AnnotationBacked,
                    evidence: vec![format!("{v}{}", param.name)],
                },
                construction_context: String::new(),
                source: PlanSource::Primitive,
                diagnostics: Vec::new(),
            });
            continue;
        }
        plans.push(resolve_one(llm, kb, index, cg, unit, param, &instances));
    }
    Ok(plans)
}

fn resolve_one(
    llm: &Llm,
    kb: &KnowledgeBase,
    index: &ProjectIndex,
    cg: &CallGraph,
    unit: &CodeUnit,
    param: &ParameterSpec,
    instances: &[CallInstance],
) -> ArgumentPlan {
    let hypothesis = infer_type(llm, index, unit, param, instances);
    let mut diagnostics = Vec::new();
    let source = match hypothesis.confidence {
        Confidence::AnnotationBacked => PlanSource::Annotation,
        Confidence::InstanceBacked => PlanSource::CallInstance,
        _ => PlanSource::FeatureRetrieval,
    };
    match hypothesis.kind {
        TypeKind::Primitive => {
            let context = match source {
                PlanSource::CallInstance => instances.first().map(|i| format!("Existing call:\n```python\n{}\n```", i.context)).unwrap_or_default(),
                _ => String::new(),
            };
            return ArgumentPlan { param: param.name.clone(), hypothesis, construction_context: context, source, diagnostics };
        }
        TypeKind::UserDefined => {
            if let Some(class) = find_class(index, &unit.module_path, &hypothesis.name) {
                let mut context = construction_context(index, Some(cg), class, 1, &mut BTreeSet::new());
                if source == PlanSource::CallInstance {
                    if let Some(i) = instances.first() {
                        context = format!("Existing call:\n```python\n{}\n```\n{context}", i.context);
                    }
                }
                return ArgumentPlan { param: param.name.clone(), hypothesis, construction_context: context, source, diagnostics };
            }
        }
        TypeKind::Annotated => {
            let context = format!("`{}` is annotated as `{}`.", param.name, hypothesis.name);
            return ArgumentPlan { param: param.name.clone(), hypothesis, construction_context: context, source, diagnostics };
        }
        TypeKind::Unknown => diagnostics.extend(hypothesis.evidence.iter().cloned()),
    }
    match extract_features(index, &unit.qualified_name, &param.name) {
        Ok(feature) => {
            let mut plan = retrieve_by_feature(llm, kb, index, Some(cg), unit, &param.name, &feature);
            diagnostics.append(&mut plan.diagnostics);
            plan.diagnostics = diagnostics;
            plan
        }
        Err(e) => {
            diagnostics.push(e.to_string());
            ArgumentPlan {
                param: param.name.clone(),
                hypothesis: TypeHypothesis::unknown(Confidence::Guessed, Vec::new()),
                construction_context: String::new(),
                source: PlanSource::FeatureRetrieval,
                diagnostics,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_names() {
        assert_eq!(primitive_name("int"), Some("int"));
        assert_eq!(primitive_name("List[int]"), Some("list"));
        assert_eq!(primitive_name("typing.Dict"), Some("dict"));
        assert_eq!(primitive_name("`str`"), Some("str"));
        assert_eq!(primitive_name("NoneType"), Some("None"));
        assert_eq!(primitive_name("ImportManager"), None);
    }

    #[test]
    fn behavior_reply_parsing() {
        let (k, b) = parse_behavior("KIND: primitive int\nBEHAVIOR: added to a counter");
        assert!(matches!(k, Some(BehaviorKind::Primitive("int"))));
        assert_eq!(b.as_deref(), Some("added to a counter"));
        let (k, _) = parse_behavior("KIND: object\nBEHAVIOR: graph");
        assert!(matches!(k, Some(BehaviorKind::Object)));
        assert!(parse_behavior("no idea").0.is_none());
    }

    #[test]
    fn type_line_parsing() {
        assert_eq!(tagged_line("TYPE: `int`.\nbecause", "TYPE:").as_deref(), Some("int"));
        assert_eq!(tagged_line("**TYPE: str", "TYPE:").as_deref(), Some("str"));
    }
}
