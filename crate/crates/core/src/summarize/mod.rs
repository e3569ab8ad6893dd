//! Bottom-up behavior digests and top-down semantics over the call graph.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::callgraph::CallGraph;
use crate::index::{CodeUnit, ProjectIndex};
use crate::llm::Llm;
use crate::prompts;

pub const DEFAULT_WORD_CAP: usize = 120;
pub const DEFAULT_CALLER_CAP: usize = 3;
const DOC_WORD_CAP: usize = 400;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FunctionSummary {
    pub name: String,
    pub behavior: String,
    pub semantics: String,
    pub index_summary: String,
    pub sources: Vec<String>,
    /// Set when any step fell back to non-model text.
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pass {
    Behavior,
    Semantics,
    Class,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Submit,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub pass: Pass,
    pub phase: Phase,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummarizeOptions {
    pub word_cap: usize,
    pub caller_cap: usize,
    pub parallelism: usize,
}

impl Default for SummarizeOptions {
    fn default() -> Self {
        Self { word_cap: DEFAULT_WORD_CAP, caller_cap: DEFAULT_CALLER_CAP, parallelism: 1 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SummaryRun {
    pub summaries: BTreeMap<String, FunctionSummary>,
    pub trace: Vec<TraceEvent>,
}

impl SummaryRun {
    /// KB index text per unit.
    pub fn index_texts(&self) -> BTreeMap<String, String> {
        self.summaries.iter().map(|(k, s)| (k.clone(), s.index_summary.clone())).collect()
    }
}

/// Model output or fallback text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digest {
    pub text: String,
    pub failure: Option<String>,
}

/// Keeps at most `cap` whitespace-separated words, preserving inner spacing.
pub fn cap_words(text: &str, cap: usize) -> String {
    let text = text.trim();
    let mut count = 0;
    let mut in_word = false;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            in_word = false;
        } else if !in_word {
            in_word = true;
            count += 1;
            if count > cap {
                return text[..i].trim_end().to_string();
            }
        }
    }
    text.to_string()
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn fallback_text(f: &CodeUnit) -> String {
    f.docstring.as_deref().and_then(|d| d.lines().map(str::trim).find(|l| !l.is_empty())).map(str::to_string).unwrap_or_else(|| f.signature())
}

/// Digest of `f` given its callees' digests.
pub fn analyze_behavior(llm: &Llm, f: &CodeUnit, callee_behaviors: &[(String, String)], word_cap: usize) -> Digest {
    let callees = if callee_behaviors.is_empty() {
        "none".to_string()
    } else {
        callee_behaviors.iter().map(|(n, b)| format!("- {n}: {b}")).collect::<Vec<_>>().join("\n")
    };
    let words = word_cap.to_string();
    let user = prompts::render(prompts::ANALYZE_BEHAVIOR, &[("name", &f.qualified_name), ("source", &f.source), ("callees", &callees), ("words", &words)]);
    match llm.ask(prompts::SYSTEM_ANALYST, &user) {
        Ok(reply) if !reply.trim().is_empty() => Digest { text: cap_words(&reply, word_cap), failure: None },
        Ok(_) => Digest { text: cap_words(&fallback_text(f), word_cap), failure: Some("empty behavior reply".into()) },
        Err(e) => Digest { text: cap_words(&fallback_text(f), word_cap), failure: Some(format!("behavior analysis failed: {e}")) },
    }
}

/// Purpose of `f` from its callers, or from project documentation at roots.
pub fn infer_semantics(
    llm: &Llm,
    f: &CodeUnit,
    caller_sources: &[String],
    caller_semantics: &[String],
    doc_proxy: Option<&str>,
    behavior: &str,
    word_cap: usize,
) -> Digest {
    if caller_sources.is_empty() && doc_proxy.is_none() {
        return Digest { text: behavior.to_string(), failure: None };
    }
    let list = |items: &[String]| {
        if items.is_empty() {
            "none".to_string()
        } else {
            items.iter().map(|s| format!("```python\n{s}\n```")).collect::<Vec<_>>().join("\n")
        }
    };
    let semantics =
        if caller_semantics.is_empty() { "none".to_string() } else { caller_semantics.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n") };
    let words = word_cap.to_string();
    let user = prompts::render(
        prompts::INFER_SEMANTICS,
        &[
            ("name", &f.qualified_name),
            ("source", &f.source),
            ("callers", &list(caller_sources)),
            ("caller_semantics", &semantics),
            ("documentation", doc_proxy.unwrap_or("none found")),
            ("words", &words),
        ],
    );
    match llm.ask(prompts::SYSTEM_ANALYST, &user) {
        Ok(reply) if !reply.trim().is_empty() => Digest { text: cap_words(&reply, word_cap), failure: None },
        Ok(_) => Digest { text: behavior.to_string(), failure: Some("empty semantics reply".into()) },
        Err(e) => Digest { text: behavior.to_string(), failure: Some(format!("semantics inference failed: {e}")) },
    }
}

fn is_doc_file(name: &str) -> bool {
    name.to_ascii_lowercase().starts_with("readme")
}

/// Nearest `README*` or `docs/index*` walking up from `file`'s directory to `root`.
pub fn find_doc_proxy(root: &Path, file: &Path) -> Option<PathBuf> {
    let mut dir = root.join(file).parent().map(Path::to_path_buf);
    while let Some(d) = dir {
        if !d.starts_with(root) {
            break;
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(&d).ok()?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
        entries.sort();
        if let Some(p) = entries.iter().find(|p| p.file_name().is_some_and(|n| is_doc_file(&n.to_string_lossy()))) {
            return Some(p.clone());
        }
        let docs = d.join("docs");
        if docs.is_dir() {
            let mut idx: Vec<PathBuf> = fs::read_dir(&docs)
                .ok()?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n.to_string_lossy().to_ascii_lowercase().starts_with("index")))
                .collect();
            idx.sort();
            if let Some(p) = idx.into_iter().next() {
                return Some(p);
            }
        }
        if d == root {
            break;
        }
        dir = d.parent().map(Path::to_path_buf);
    }
    None
}

fn relative(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned()
}

fn pool(parallelism: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build().expect("thread pool builds")
}

/// Behavior wavefront, then semantics wavefront, then class summaries.
pub fn summarize_project(llm: &Llm, index: &ProjectIndex, cg: &CallGraph, options: &SummarizeOptions) -> SummaryRun {
    let trace = Mutex::new(Vec::new());
    let record = |pass, phase, name: &str| trace.lock().push(TraceEvent { pass, phase, name: name.to_string() });
    let pool = pool(options.parallelism);
    let units: BTreeMap<&str, &CodeUnit> = cg.nodes.iter().filter_map(|n| index.units.get(n).map(|u| (n.as_str(), u))).collect();
    let retained = cg.retained();

    // Behavior: level = 1 + max level over retained callees.
    let mut level: BTreeMap<&str, usize> = BTreeMap::new();
    for n in cg.behavior_order() {
        let l = retained.iter().filter(|k| k.caller == n).map(|k| level.get(k.callee.as_str()).copied().unwrap_or(0) + 1).max().unwrap_or(0);
        if let Some((k, _)) = units.get_key_value(n.as_str()) {
            level.insert(k, l);
        }
    }
    let waves = group_levels(&level);

    let behaviors: Mutex<BTreeMap<String, (Digest, Vec<String>)>> = Mutex::new(BTreeMap::new());
    for wave in &waves {
        for n in wave {
            record(Pass::Behavior, Phase::Submit, n);
        }
        let done: Vec<(String, Digest, Vec<String>)> = pool.install(|| {
            wave.par_iter()
                .map(|n| {
                    let unit = units[n.as_str()];
                    let mut sources = Vec::new();
                    let mut callee_digests = Vec::new();
                    let known = behaviors.lock();
                    for callee in cg.callees(n) {
                        let Some(cu) = index.units.get(&callee) else { continue };
                        match known.get(&callee).filter(|_| !cg.is_broken(n, &callee)) {
                            Some((d, _)) => {
                                sources.push(format!("callee behavior: {callee}"));
                                callee_digests.push((callee.clone(), d.text.clone()));
                            }
                            None => {
                                sources.push(format!("callee signature (cycle edge): {callee}"));
                                callee_digests.push((callee.clone(), cu.signature()));
                            }
                        }
                    }
                    drop(known);
                    let digest = analyze_behavior(llm, unit, &callee_digests, options.word_cap);
                    (n.to_string(), digest, sources)
                })
                .collect()
        });
        let mut guard = behaviors.lock();
        for (n, d, s) in done {
            record(Pass::Behavior, Phase::Complete, &n);
            guard.insert(n, (d, s));
        }
    }
    let behaviors = behaviors.into_inner();

    // Semantics: callers before callees.
    let sem = cg.semantics_order();
    let mut depth: BTreeMap<&str, usize> = BTreeMap::new();
    for n in &sem.order {
        let d = retained.iter().filter(|k| &k.callee == n).map(|k| depth.get(k.caller.as_str()).copied().unwrap_or(0) + 1).max().unwrap_or(0);
        if let Some((k, _)) = units.get_key_value(n.as_str()) {
            depth.insert(k, d);
        }
    }
    let waves = group_levels(&depth);
    let semantics: Mutex<BTreeMap<String, Digest>> = Mutex::new(BTreeMap::new());
    let mut doc_sources: BTreeMap<String, String> = BTreeMap::new();
    for wave in &waves {
        for n in wave {
            record(Pass::Semantics, Phase::Submit, n);
        }
        let done: Vec<(String, Digest, Vec<String>)> = pool.install(|| {
            wave.par_iter()
                .map(|n| {
                    let unit = units[n.as_str()];
                    let behavior = &behaviors[n].0.text;
                    let mut sources = Vec::new();
                    let mut callers: Vec<&CodeUnit> = cg.callers(n).iter().filter_map(|c| index.units.get(c)).collect();
                    callers.sort_by(|a, b| a.source.len().cmp(&b.source.len()).then_with(|| a.qualified_name.cmp(&b.qualified_name)));
                    callers.truncate(options.caller_cap);
                    let known = semantics.lock();
                    let mut caller_sources = Vec::new();
                    let mut caller_semantics = Vec::new();
                    for c in &callers {
                        caller_sources.push(c.source.clone());
                        match known.get(&c.qualified_name).filter(|_| !cg.is_broken(&c.qualified_name, n)) {
                            Some(d) => {
                                sources.push(format!("caller semantics: {}", c.qualified_name));
                                caller_semantics.push(format!("{}: {}", c.qualified_name, d.text));
                            }
                            None => {
                                sources.push(format!("caller behavior (cycle edge): {}", c.qualified_name));
                                caller_semantics.push(format!("{}: {}", c.qualified_name, behaviors[&c.qualified_name].0.text));
                            }
                        }
                    }
                    drop(known);
                    let mut doc_text = None;
                    if sem.roots.contains(n) {
                        match find_doc_proxy(&index.root, Path::new(&unit.file)) {
                            Some(p) => match fs::read_to_string(&p) {
                                Ok(t) => {
                                    sources.push(format!("documentation: {}", relative(&index.root, &p)));
                                    doc_text = Some(cap_words(&t, DOC_WORD_CAP));
                                }
                                Err(_) => sources.push("documentation: none found".into()),
                            },
                            None => sources.push("documentation: none found".into()),
                        }
                    }
                    let digest = infer_semantics(llm, unit, &caller_sources, &caller_semantics, doc_text.as_deref(), behavior, options.word_cap);
                    (n.to_string(), digest, sources)
                })
                .collect()
        });
        let mut guard = semantics.lock();
        for (n, d, s) in done {
            record(Pass::Semantics, Phase::Complete, &n);
            doc_sources.insert(n.clone(), s.join("\n"));
            guard.insert(n, d);
        }
    }
    let semantics = semantics.into_inner();

    let mut summaries = BTreeMap::new();
    for (n, (b, bsrc)) in &behaviors {
        let s = &semantics[n];
        let mut sources = bsrc.clone();
        sources.extend(doc_sources.get(n).into_iter().flat_map(|s| s.lines().map(str::to_string)));
        let mut failed = false;
        for failure in [&b.failure, &s.failure].into_iter().flatten() {
            sources.push(format!("fallback: {failure}"));
            failed = true;
        }
        summaries.insert(
            n.clone(),
            FunctionSummary {
                name: n.clone(),
                behavior: b.text.clone(),
                semantics: s.text.clone(),
                index_summary: index_summary(&s.text, &b.text),
                sources,
                failed,
            },
        );
    }

    // Subject classes are summarized on their own; their digests feed the KB only.
    let classes: Vec<&CodeUnit> = index.subject_classes().collect();
    for c in &classes {
        record(Pass::Class, Phase::Submit, &c.qualified_name);
    }
    let class_summaries: Vec<FunctionSummary> = pool.install(|| classes.par_iter().map(|c| summarize_class(llm, c, options.word_cap)).collect());
    for s in class_summaries {
        record(Pass::Class, Phase::Complete, &s.name);
        summaries.insert(s.name.clone(), s);
    }
    SummaryRun { summaries, trace: trace.into_inner() }
}

fn index_summary(semantics: &str, behavior: &str) -> String {
    if semantics == behavior {
        behavior.to_string()
    } else {
        format!("{semantics}\n{behavior}")
    }
}

fn summarize_class(llm: &Llm, class: &CodeUnit, word_cap: usize) -> FunctionSummary {
    let words = word_cap.to_string();
    let user = prompts::render(prompts::CLASS_SUMMARY, &[("name", &class.qualified_name), ("source", &class.source), ("words", &words)]);
    let (text, failure) = match llm.ask(prompts::SYSTEM_ANALYST, &user) {
        Ok(reply) if !reply.trim().is_empty() => (cap_words(&reply, word_cap), None),
        Ok(_) => (cap_words(&fallback_text(class), word_cap), Some("empty class summary".to_string())),
        Err(e) => (cap_words(&fallback_text(class), word_cap), Some(format!("class summary failed: {e}"))),
    };
    let mut sources = vec!["class source".to_string()];
    if let Some(f) = &failure {
        sources.push(format!("fallback: {f}"));
    }
    FunctionSummary {
        name: class.qualified_name.clone(),
        behavior: text.clone(),
        semantics: text.clone(),
        index_summary: text,
        sources,
        failed: failure.is_some(),
    }
}

fn group_levels(levels: &BTreeMap<&str, usize>) -> Vec<Vec<String>> {
    let max = levels.values().copied().max();
    let Some(max) = max else { return Vec::new() };
    (0..=max).map(|l| levels.iter().filter(|(_, v)| **v == l).map(|(k, _)| k.to_string()).collect()).filter(|w: &Vec<String>| !w.is_empty()).collect()
}
