//! End-to-end orchestration: index, graph, summaries, knowledge base,
//! generation rounds and the final report, with artifacts on disk.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::callgraph::{build_call_graph, CallGraph};
use crate::config::{Mode, RunConfig, API_KEY_ENV};
use crate::coverage::{CannedExecutor, Executor, RecordingExecutor, SandboxExecutor};
use crate::generate::{IterationReport, ManifestEntry, Session, TestStatus};
use crate::index::{index_project, ProjectIndex};
use crate::kb::embed::HashedEmbedder;
use crate::kb::{build_kb, BuildReport, KnowledgeBase};
use crate::llm::{Cassette, ChatBackend, ChatSettings, HttpBackend, HttpConfig, Llm, RecordingBackend, ReplayBackend};
use crate::resolve::{resolve_parameters, ArgumentPlan};
use crate::summarize::{summarize_project, SummarizeOptions, SummaryRun};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Setup,
    Index,
    Graph,
    Summarize,
    KnowledgeBase,
    Resolve,
    Generate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Setup => "setup",
            Stage::Index => "index",
            Stage::Graph => "graph",
            Stage::Summarize => "summarize",
            Stage::KnowledgeBase => "knowledge-base",
            Stage::Resolve => "resolve",
            Stage::Generate => "generate",
            Stage::Report => "report",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, message: impl fmt::Display) -> Self {
        Self { stage, message: message.to_string() }
    }
}

fn at<E: fmt::Display>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::new(stage, e)
}

/// File layout of the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub root: PathBuf,
}

impl Artifacts {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn index(&self) -> PathBuf {
        self.root.join("index.json")
    }
    pub fn callgraph(&self) -> PathBuf {
        self.root.join("callgraph.dot")
    }
    pub fn summaries(&self) -> PathBuf {
        self.root.join("summaries.json")
    }
    pub fn kb(&self) -> PathBuf {
        self.root.join("kb.jsonl")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn prompts(&self) -> PathBuf {
        self.root.join("prompts.json")
    }
    pub fn executions(&self) -> PathBuf {
        self.root.join("executions.json")
    }
}

/// Pretty JSON with a trailing newline; failures are attributed to `stage`.
pub fn write_json<T: Serialize>(path: &Path, value: &T, stage: Stage) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(at(stage))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(at(stage))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| PipelineError::new(stage, format!("{}: {e}", path.display())))
}

/// Chat model and test executor for one run, plus their recorders.
pub struct Backends {
    pub llm: Llm,
    pub executor: Arc<dyn Executor>,
    chat_recorder: Option<Arc<RecordingBackend>>,
    exec_recorder: Option<Arc<RecordingExecutor>>,
}

impl Backends {
    pub fn new(llm: Llm, executor: Arc<dyn Executor>) -> Self {
        Self { llm, executor, chat_recorder: None, exec_recorder: None }
    }

    /// Live HTTP, cassette replay, or live HTTP recorded into the cassette.
    pub fn from_config(config: &RunConfig) -> Result<Self, PipelineError> {
        let settings = ChatSettings { model: config.llm.model.clone(), temperature: config.llm.temperature, max_output_tokens: config.llm.max_output_tokens };
        let http = || {
            let mut http = HttpConfig::new(config.llm.endpoint.clone());
            http.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
            http.max_in_flight = config.sandbox.parallelism.max(1);
            Arc::new(HttpBackend::new(http))
        };
        let mut chat_recorder = None;
        let backend: Arc<dyn ChatBackend> = match config.mode {
            Mode::Live => http(),
            Mode::Replay => {
                let path = config.cassette_path.as_deref().ok_or_else(|| PipelineError::new(Stage::Setup, "replay needs a cassette"))?;
                Arc::new(ReplayBackend::from_file(path).map_err(|e| PipelineError::new(Stage::Setup, format!("{}: {e}", path.display())))?)
            }
            Mode::Record => {
                let path = config.cassette_path.clone().ok_or_else(|| PipelineError::new(Stage::Setup, "record needs a cassette path"))?;
                let cassette = if path.is_file() {
                    Cassette::load(&path).map_err(|e| PipelineError::new(Stage::Setup, format!("{}: {e}", path.display())))?
                } else {
                    Cassette::new(&config.llm.model)
                };
                let rec = Arc::new(RecordingBackend::new(http(), cassette, path));
                chat_recorder = Some(rec.clone());
                rec
            }
        };
        let base: Box<dyn Executor> = match &config.sandbox.canned {
            Some(path) => Box::new(CannedExecutor::load(path).map_err(|e| PipelineError::new(Stage::Setup, format!("{}: {e}", path.display())))?),
            None => Box::new(SandboxExecutor::new(config.sandbox.runner.clone(), config.sandbox.timeout_s)),
        };
        let mut exec_recorder = None;
        let executor: Arc<dyn Executor> = if config.mode == Mode::Record {
            let rec = Arc::new(RecordingExecutor::new(base));
            exec_recorder = Some(rec.clone());
            rec
        } else {
            Arc::from(base)
        };
        Ok(Self { llm: Llm::new(backend, settings), executor, chat_recorder, exec_recorder })
    }

    /// Saves whatever was recorded during the run.
    pub fn flush(&self, artifacts: &Artifacts) -> Result<(), PipelineError> {
        if let Some(rec) = &self.chat_recorder {
            rec.flush().map_err(at(Stage::Report))?;
        }
        if let Some(rec) = &self.exec_recorder {
            fs::create_dir_all(&artifacts.root).map_err(at(Stage::Report))?;
            rec.canned().save(&artifacts.executions()).map_err(at(Stage::Report))?;
        }
        Ok(())
    }
}

/// Everything computed before generation starts.
pub struct Prepared {
    pub index: ProjectIndex,
    pub cg: CallGraph,
    pub summaries: SummaryRun,
    pub kb: KnowledgeBase,
    pub kb_report: BuildReport,
}

pub fn run_index(config: &RunConfig) -> Result<ProjectIndex, PipelineError> {
    index_project(&config.project_root).map_err(at(Stage::Index))
}

pub fn run_graph(index: &ProjectIndex) -> CallGraph {
    build_call_graph(index)
}

pub fn run_summarize(config: &RunConfig, llm: &Llm, index: &ProjectIndex, cg: &CallGraph) -> SummaryRun {
    let options = SummarizeOptions { parallelism: config.sandbox.parallelism.max(1), ..SummarizeOptions::default() };
    summarize_project(llm, index, cg, &options)
}

/// Index, graph, summaries and the knowledge base (existing tests included).
pub fn prepare(config: &RunConfig, llm: &Llm) -> Result<Prepared, PipelineError> {
    let index = run_index(config)?;
    if index.callables().next().is_none() {
        return Err(PipelineError::new(Stage::Index, format!("no functions found under {}", config.project_root.display())));
    }
    let cg = run_graph(&index);
    let summaries = run_summarize(config, llm, &index, &cg);
    let (mut kb, kb_report) = build_kb(&index, &summaries.index_texts(), Arc::new(HashedEmbedder::default())).map_err(at(Stage::KnowledgeBase))?;
    for test in &index.existing_tests {
        kb.add_existing_test(test, &index).map_err(at(Stage::KnowledgeBase))?;
    }
    Ok(Prepared { index, cg, summaries, kb, kb_report })
}

/// Argument plans for one function, for inspection.
pub fn run_resolve(config: &RunConfig, llm: &Llm, function: &str) -> Result<Vec<ArgumentPlan>, PipelineError> {
    let p = prepare(config, llm)?;
    resolve_parameters(llm, &p.kb, &p.index, &p.cg, function).map_err(at(Stage::Resolve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleRow {
    pub statement_pct: f64,
    pub branch_pct: f64,
    pub tests_kept: usize,
    pub tests_discarded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub modules: BTreeMap<String, ModuleRow>,
    pub rounds: Vec<IterationReport>,
    pub manifest: Vec<ManifestEntry>,
    pub manifest_sha256: String,
    pub llm_calls: usize,
    pub missing_summaries: Vec<String>,
}

impl RunReport {
    /// Module, statement %, branch %, tests kept and discarded.
    pub fn table(&self) -> String {
        let width = self.modules.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  {:>7}  {:>7}  {:>5}  {:>9}\n", "module", "stmt %", "branch %", "kept", "discarded");
        for (module, row) in &self.modules {
            out.push_str(&format!(
                "{:<width$}  {:>7.1}  {:>7.1}  {:>5}  {:>9}\n",
                module, row.statement_pct, row.branch_pct, row.tests_kept, row.tests_discarded
            ));
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::new(Stage::Report, format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(at(Stage::Report))
    }
}

fn module_rows(session: &Session<'_>, index: &ProjectIndex) -> BTreeMap<String, ModuleRow> {
    let mut rows = BTreeMap::new();
    for file in session.focal_files() {
        let Some(module) = index.module_of_file(&file) else { continue };
        let cov = session.coverage.restrict([file.as_str()]);
        rows.insert(module.to_string(), ModuleRow { statement_pct: cov.statement_pct, branch_pct: cov.branch_pct, tests_kept: 0, tests_discarded: 0 });
    }
    for entry in &session.manifest {
        let Some(unit) = index.units.get(&entry.focal) else { continue };
        let Some(row) = rows.get_mut(&unit.module_path) else { continue };
        match entry.status {
            TestStatus::Passing => row.tests_kept += 1,
            _ => row.tests_discarded += 1,
        }
    }
    rows
}

/// The full loop, persisting every artifact under the output directory.
pub fn run_generate(config: &RunConfig, backends: &Backends) -> Result<RunReport, PipelineError> {
    let artifacts = Artifacts::new(config.out_dir());
    let prepared = prepare(config, &backends.llm)?;
    let Prepared { index, cg, summaries, kb, kb_report } = prepared;
    write_json(&artifacts.index(), &index, Stage::Index)?;
    fs::write(artifacts.callgraph(), cg.to_dot()).map_err(at(Stage::Graph))?;
    write_json(&artifacts.summaries(), &summaries, Stage::Summarize)?;

    let mut session = Session::new(&index, &cg, &summaries.summaries, kb, &backends.llm, backends.executor.as_ref(), config.generation());
    session.run_all();
    let modules = module_rows(&session, &index);
    session.persist_suite(&config.test_root(), &artifacts.manifest()).map_err(at(Stage::Generate))?;
    write_json(&artifacts.prompts(), &session.prompts, Stage::Generate)?;
    let manifest_sha256 = hex::encode(Sha256::digest(session.manifest_json().as_bytes()));
    let mut manifest = session.manifest.clone();
    manifest.sort();
    let report = RunReport {
        modules,
        rounds: session.reports.clone(),
        manifest,
        manifest_sha256,
        llm_calls: backends.llm.calls(),
        missing_summaries: kb_report.missing_summaries,
    };
    session.into_kb().save(&artifacts.kb()).map_err(at(Stage::KnowledgeBase))?;
    write_json(&artifacts.report(), &report, Stage::Report)?;
    backends.flush(&artifacts)?;
    Ok(report)
}
