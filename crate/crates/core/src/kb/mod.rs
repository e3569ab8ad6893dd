//! Summary-indexed knowledge base over source units and test cases, with
//! MMR-ranked retrieval and LLM consolidation of the hits.

pub mod embed;
pub mod mmr;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generate::{GeneratedTest, TestStatus};
use crate::index::{CodeUnit, ExistingTest, ProjectIndex, UnitKind};
use crate::llm::{Llm, LlmError};
use crate::{prompts, Embedding, Similarity};

pub use self::embed::{Embedder, HashedEmbedder, HttpEmbedder};

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_CONTEXT_CAP: usize = 8;
const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("embedding dimension {found} does not match store dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("summary given for unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{count} documents exceed the consolidation cap of {cap}")]
    TooManyDocs { count: usize, cap: usize },
    #[error("store was built with embedder `{stored}`, not `{current}`")]
    EmbedderMismatch { stored: String, current: String },
    #[error("embedding backend: {0}")]
    Embedder(String),
    #[error("malformed store: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("consolidation failed after retries: {0}")]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    Function,
    SubjectClass,
    TestCase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub module_path: String,
    pub name: String,
    pub source_code: String,
    pub docstring: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCaseRecord {
    pub label: String,
    pub unit_path: String,
    pub unit_name: String,
    pub source_code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KBDocument {
    pub doc_id: String,
    pub summary: String,
    pub source_code: SourceRecord,
    pub test_cases: Option<TestCaseRecord>,
    pub doc_kind: DocKind,
    /// Qualified name of the unit the document describes (the focal unit for tests).
    pub unit: String,
    /// Summary came from a docstring or signature instead of the summarizer.
    pub summary_fallback: bool,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StoreHeader {
    version: u32,
    dimension: usize,
    embedder: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub doc_id: String,
    /// MMR objective at the time of selection.
    pub score: Similarity,
    /// Cosine similarity to the query.
    pub relevance: Similarity,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContextBundle {
    pub query: String,
    pub selected: Vec<String>,
    pub consolidated: String,
    pub provenance: BTreeMap<String, String>,
}

pub struct KnowledgeBase {
    embedder: Arc<dyn Embedder>,
    docs: Vec<KBDocument>,
    queries: AtomicUsize,
}

impl std::fmt::Debug for KnowledgeBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KnowledgeBase").field("embedder", &self.embedder.id()).field("docs", &self.docs.len()).finish()
    }
}

fn doc_id(kind: DocKind, key: &str, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("{kind:?}\n{key}\n").as_bytes());
    h.update(body.as_bytes());
    hex::encode(&h.finalize()[..8])
}

fn first_paragraph(doc: &str) -> &str {
    doc.split("\n\n").next().unwrap_or(doc).trim()
}

impl KnowledgeBase {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self { embedder, docs: Vec::new(), queries: AtomicUsize::new(0) }
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn docs(&self) -> &[KBDocument] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&KBDocument> {
        self.docs.iter().find(|d| d.doc_id == doc_id)
    }

    /// Retrieval calls served so far.
    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::SeqCst)
    }

    /// Adds a prebuilt document; returns false when its id is already stored.
    pub fn insert(&mut self, doc: KBDocument) -> Result<bool, KbError> {
        if doc.embedding.len() != self.embedder.dimension() {
            return Err(KbError::DimensionMismatch { expected: self.embedder.dimension(), found: doc.embedding.len() });
        }
        if self.get(&doc.doc_id).is_some() {
            return Ok(false);
        }
        self.docs.push(doc);
        Ok(true)
    }

    fn unit_document(&self, index: &ProjectIndex, unit: &CodeUnit, summary: Option<&str>) -> Result<KBDocument, KbError> {
        let (summary, fallback) = match summary.map(str::trim).filter(|s| !s.is_empty()) {
            Some(s) => (s.to_string(), false),
            None => match unit.docstring.as_deref().map(first_paragraph).filter(|d| !d.is_empty()) {
                Some(d) => (d.to_string(), true),
                None => (unit.signature(), true),
            },
        };
        let kind = if unit.kind == UnitKind::SubjectClass { DocKind::SubjectClass } else { DocKind::Function };
        let mut key_text = format!("{summary}\n{}", unit.local_name.replace('.', " "));
        if kind == DocKind::SubjectClass {
            let fields: Vec<String> = index.class_fields(unit).into_iter().collect();
            let methods: Vec<String> = index.class_methods(unit).into_iter().collect();
            key_text.push_str(&format!("\nattributes: {}\nmethods: {}", fields.join(" "), methods.join(" ")));
        }
        Ok(KBDocument {
            doc_id: doc_id(kind, &unit.qualified_name, &unit.source),
            summary,
            source_code: SourceRecord {
                module_path: unit.module_path.clone(),
                name: unit.local_name.clone(),
                source_code: unit.source.clone(),
                docstring: unit.docstring.clone().unwrap_or_default(),
            },
            test_cases: None,
            doc_kind: kind,
            unit: unit.qualified_name.clone(),
            summary_fallback: fallback,
            embedding: self.embedder.embed(&key_text)?,
        })
    }

    /// Adds a passing generated test. Returns `false` when it was already stored.
    pub fn add_test_case(&mut self, test: &GeneratedTest, focal: &CodeUnit) -> Result<bool, KbError> {
        if test.status != TestStatus::Passing {
            return Err(KbError::Precondition(format!("test {} is {:?}, not passing", test.test_id, test.status)));
        }
        self.add_test_document("generated", &test.source, focal)
    }

    /// Adds a test that already existed in the project.
    pub fn add_existing_test(&mut self, test: &ExistingTest, index: &ProjectIndex) -> Result<bool, KbError> {
        let focal = index
            .callables()
            .filter(|u| !u.is_nested(index))
            .filter(|u| test.name.contains(u.name()) && u.name().len() > 2)
            .max_by_key(|u| (u.name().len(), std::cmp::Reverse(u.qualified_name.clone())));
        let (unit_path, unit_name) = match focal {
            Some(f) => (f.module_path.clone(), f.qualified_name.clone()),
            None => (test.module_path.clone(), test.name.clone()),
        };
        let summary = format!("Existing tests for {unit_name}: {}", test.name);
        let doc = KBDocument {
            doc_id: doc_id(DocKind::TestCase, &format!("{}::{}", test.path, test.name), &test.source),
            embedding: self.embedder.embed(&format!("{summary}\n{}", unit_name.replace('.', " ")))?,
            summary,
            source_code: SourceRecord {
                module_path: test.module_path.clone(),
                name: test.name.clone(),
                source_code: test.source.clone(),
                docstring: String::new(),
            },
            test_cases: Some(TestCaseRecord { label: "existing".into(), unit_path, unit_name: unit_name.clone(), source_code: test.source.clone() }),
            doc_kind: DocKind::TestCase,
            unit: unit_name,
            summary_fallback: false,
        };
        self.insert(doc)
    }

    fn add_test_document(&mut self, label: &str, source: &str, focal: &CodeUnit) -> Result<bool, KbError> {
        let names: Vec<&str> =
            source.lines().filter_map(|l| l.trim_start().strip_prefix("def ")).filter_map(|l| l.split('(').next()).filter(|n| n.starts_with("test")).collect();
        let summary = format!("Existing tests for {}: {}", focal.qualified_name, names.join(", "));
        let doc = KBDocument {
            doc_id: doc_id(DocKind::TestCase, &focal.qualified_name, source),
            embedding: self.embedder.embed(&format!("{summary}\n{}", focal.local_name.replace('.', " ")))?,
            summary,
            source_code: SourceRecord {
                module_path: focal.module_path.clone(),
                name: focal.local_name.clone(),
                source_code: focal.source.clone(),
                docstring: focal.docstring.clone().unwrap_or_default(),
            },
            test_cases: Some(TestCaseRecord {
                label: label.to_string(),
                unit_path: focal.module_path.clone(),
                unit_name: focal.qualified_name.clone(),
                source_code: source.to_string(),
            }),
            doc_kind: DocKind::TestCase,
            unit: focal.qualified_name.clone(),
            summary_fallback: false,
        };
        self.insert(doc)
    }

    /// Greedy MMR over documents passing `filter`; at most `k` results.
    pub fn retrieve(&self, query: &str, k: usize, lambda: f64, filter: Option<&dyn Fn(&KBDocument) -> bool>) -> Vec<Retrieved> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        if k == 0 {
            return Vec::new();
        }
        let Ok(q) = self.embedder.embed(query) else { return Vec::new() };
        let mut candidates: Vec<&KBDocument> = self.docs.iter().filter(|d| filter.is_none_or(|f| f(d))).collect();
        candidates.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let widen = |v: &[f32]| v.iter().map(|x| f64::from(*x)).collect::<Vec<f64>>();
        let q = widen(&q);
        let vecs: Vec<Vec<f64>> = candidates.iter().map(|d| widen(&d.embedding)).collect();
        let relevance: Vec<f64> = vecs.iter().map(|v| mmr::cosine(&q, v)).collect();
        mmr::select(&relevance, |a, b| mmr::cosine(&vecs[a], &vecs[b]), k, lambda)
            .into_iter()
            .map(|(i, score)| Retrieved { doc_id: candidates[i].doc_id.clone(), score, relevance: relevance[i] })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = io::BufWriter::new(fs::File::create(&tmp)?);
            let header = StoreHeader { version: STORE_VERSION, dimension: self.embedder.dimension(), embedder: self.embedder.id() };
            writeln!(out, "{}", serde_json::to_string(&header).map_err(io::Error::other)?)?;
            for d in &self.docs {
                writeln!(out, "{}", serde_json::to_string(d).map_err(io::Error::other)?)?;
            }
            out.flush()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path, embedder: Arc<dyn Embedder>) -> Result<Self, KbError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header: StoreHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?).map_err(|e| KbError::Malformed(e.to_string()))?,
            None => return Err(KbError::Malformed("missing header".into())),
        };
        if header.embedder != embedder.id() {
            return Err(KbError::EmbedderMismatch { stored: header.embedder, current: embedder.id() });
        }
        let mut kb = Self::new(embedder);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: KBDocument = serde_json::from_str(&line).map_err(|e| KbError::Malformed(e.to_string()))?;
            if doc.embedding.len() != header.dimension {
                return Err(KbError::DimensionMismatch { expected: header.dimension, found: doc.embedding.len() });
            }
            kb.insert(doc)?;
        }
        Ok(kb)
    }
}

/// Units that could not be summarized and were indexed under fallback text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BuildReport {
    pub missing_summaries: Vec<String>,
}

/// One document per function, method, constructor and subject class.
pub fn build_kb(index: &ProjectIndex, summaries: &BTreeMap<String, String>, embedder: Arc<dyn Embedder>) -> Result<(KnowledgeBase, BuildReport), KbError> {
    if let Some(unknown) = summaries.keys().find(|k| !index.units.contains_key(*k)) {
        return Err(KbError::UnknownUnit(unknown.clone()));
    }
    let mut kb = KnowledgeBase::new(embedder);
    let mut report = BuildReport::default();
    for unit in index.units.values() {
        let summary = summaries.get(&unit.qualified_name).map(String::as_str);
        let doc = kb.unit_document(index, unit, summary)?;
        if doc.summary_fallback {
            report.missing_summaries.push(unit.qualified_name.clone());
        }
        kb.insert(doc)?;
    }
    Ok((kb, report))
}

fn describe(doc: &KBDocument) -> String {
    let mut out = format!(
        "[{}] {:?} `{}` (module path: {})\nSummary: {}\n```python\n{}\n```",
        doc.doc_id, doc.doc_kind, doc.source_code.name, doc.source_code.module_path, doc.summary, doc.source_code.source_code
    );
    if let Some(t) = &doc.test_cases {
        out.push_str(&format!("\nTest ({}) for `{}`:\n```python\n{}\n```", t.label, t.unit_name, t.source_code));
    }
    out
}

/// Filters, deduplicates and integrates retrieved documents through the LLM.
pub fn consolidate(llm: &Llm, query: &str, docs: &[&KBDocument], cap: usize) -> Result<ContextBundle, KbError> {
    if docs.len() > cap {
        return Err(KbError::TooManyDocs { count: docs.len(), cap });
    }
    if docs.is_empty() {
        return Ok(ContextBundle { query: query.to_string(), ..Default::default() });
    }
    let documents = docs.iter().map(|d| describe(d)).collect::<Vec<_>>().join("\n\n");
    let user = prompts::render(prompts::CONSOLIDATE, &[("query", query), ("documents", &documents)]);
    let consolidated = llm.ask(prompts::SYSTEM_ANALYST, &user)?.trim().to_string();
    let mut provenance = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for d in docs {
        if !seen.insert(d.doc_id.clone()) {
            continue;
        }
        let cited = consolidated.contains(&d.doc_id) || mentions(&consolidated, d.source_code.name.rsplit('.').next().unwrap_or(""));
        let note = if cited {
            format!("cited: {:?} {} from {}", d.doc_kind, d.source_code.name, d.source_code.module_path)
        } else {
            format!("retrieved, not cited: {:?} {}", d.doc_kind, d.source_code.name)
        };
        provenance.insert(d.doc_id.clone(), note);
    }
    Ok(ContextBundle { query: query.to_string(), selected: docs.iter().map(|d| d.doc_id.clone()).collect(), consolidated, provenance })
}

fn mentions(text: &str, name: &str) -> bool {
    if name.is_empty() {
        return false;
    }
    text.match_indices(name).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + name.len()..].chars().next();
        let ident = |c: Option<char>| c.is_some_and(|c| c.is_alphanumeric() || c == '_');
        !ident(before) && !ident(after)
    })
}

/// Retrieval followed by consolidation: the RAG round trip used by every stage.
pub fn rag_query(
    llm: &Llm,
    kb: &KnowledgeBase,
    query: &str,
    k: usize,
    lambda: f64,
    filter: Option<&dyn Fn(&KBDocument) -> bool>,
) -> Result<ContextBundle, KbError> {
    let hits = kb.retrieve(query, k, lambda, filter);
    let docs: Vec<&KBDocument> = hits.iter().filter_map(|h| kb.get(&h.doc_id)).collect();
    consolidate(llm, query, &docs, docs.len().max(DEFAULT_CONTEXT_CAP))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, v: &[f32]) -> KBDocument {
        KBDocument {
            doc_id: id.into(),
            summary: format!("doc {id}"),
            source_code: SourceRecord { module_path: "m".into(), name: id.into(), source_code: String::new(), docstring: String::new() },
            test_cases: None,
            doc_kind: DocKind::Function,
            unit: id.into(),
            summary_fallback: false,
            embedding: embed::normalize(v.to_vec()).unwrap(),
        }
    }

    struct Fixed;
    impl Embedder for Fixed {
        fn id(&self) -> String {
            "fixed-3".into()
        }
        fn dimension(&self) -> usize {
            3
        }
        fn embed_raw(&self, text: &str) -> Result<Vec<f32>, KbError> {
            Ok(match text {
                "x" => vec![1.0, 0.0, 0.0],
                "y" => vec![0.0, 1.0, 0.0],
                _ => vec![1.0, 1.0, 1.0],
            })
        }
    }

    fn kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new(Arc::new(Fixed));
        kb.insert(doc("a", &[1.0, 0.1, 0.0])).unwrap();
        kb.insert(doc("b", &[1.0, 0.12, 0.0])).unwrap();
        kb.insert(doc("c", &[0.2, 0.0, 1.0])).unwrap();
        kb
    }

    #[test]
    fn k1_is_most_similar_regardless_of_lambda() {
        let kb = kb();
        for lambda in [0.0, 0.5, 1.0] {
            let hits = kb.retrieve("x", 1, lambda, None);
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].doc_id, "a");
        }
    }

    #[test]
    fn diversity_skips_near_duplicate() {
        let hits: Vec<String> = kb().retrieve("x", 2, 0.3, None).into_iter().map(|h| h.doc_id).collect();
        assert_eq!(hits, ["a", "c"]);
        let hits: Vec<String> = kb().retrieve("x", 2, 1.0, None).into_iter().map(|h| h.doc_id).collect();
        assert_eq!(hits, ["a", "b"]);
    }

    #[test]
    fn filter_excluding_all_returns_nothing() {
        let none = |_: &KBDocument| false;
        assert!(kb().retrieve("x", 3, 0.5, Some(&none)).is_empty());
        assert!(KnowledgeBase::new(Arc::new(Fixed)).retrieve("x", 3, 0.5, None).is_empty());
    }

    #[test]
    fn duplicate_insert_is_idempotent() {
        let mut kb = kb();
        assert!(!kb.insert(doc("a", &[1.0, 0.0, 0.0])).unwrap());
        assert_eq!(kb.len(), 3);
        assert!(matches!(kb.insert(doc("z", &[1.0, 0.0])), Err(KbError::DimensionMismatch { .. })));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.jsonl");
        let kb = kb();
        kb.save(&path).unwrap();
        let back = KnowledgeBase::load(&path, Arc::new(Fixed)).unwrap();
        assert_eq!(back.docs(), kb.docs());
        for (a, b) in back.docs().iter().zip(kb.docs()) {
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.embedding), bits(&b.embedding));
        }
        assert!(matches!(KnowledgeBase::load(&path, Arc::new(HashedEmbedder::default())), Err(KbError::EmbedderMismatch { .. })));
    }

    #[test]
    fn name_mentions_respect_identifier_boundaries() {
        assert!(mentions("use Variable(token, points_to)", "Variable"));
        assert!(!mentions("use MockVariable here", "Variable"));
    }
}
