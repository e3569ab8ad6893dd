//! Coverage-guided rounds over the focal functions of a project.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::prompt::{assemble, Prompt, Section, SectionTag, DEFAULT_BUDGET};
use super::{generate_test, repair_test, GeneratedTest, RepairContext, TestStatus};
use crate::callgraph::CallGraph;
use crate::coverage::{annotate_uncovered, merge_coverage, CoverageReport, ExecStatus, ExecutionResult, Executor};
use crate::index::{resolve_module_path, CodeUnit, ProjectIndex, UnitKind};
use crate::kb::{DocKind, KBDocument, KnowledgeBase, DEFAULT_K, DEFAULT_LAMBDA};
use crate::llm::tokens::{SegmentCounter, TokenCounter};
use crate::llm::Llm;
use crate::prompts;
use crate::resolve::{class_context, resolve_parameters, ArgumentPlan};
use crate::summarize::FunctionSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub rounds: u32,
    pub budget: usize,
    pub k: usize,
    pub lambda: f64,
    /// Test examples retrieved per focal function.
    pub example_k: usize,
    pub parallelism: usize,
    /// Modules whose functions are targeted; empty means all.
    pub focal_modules: Vec<String>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { rounds: 3, budget: DEFAULT_BUDGET, k: DEFAULT_K, lambda: DEFAULT_LAMBDA, example_k: 2, parallelism: 1, focal_modules: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub round: u32,
    pub focal: String,
    pub system: String,
    pub user: String,
    pub dropped: Vec<SectionTag>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub round: u32,
    pub focal: String,
    pub test_id: String,
    pub status: TestStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl PartialOrd for TestStatus {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TestStatus {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocalOutcome {
    pub focal: String,
    pub test: Option<GeneratedTest>,
    pub result: Option<ExecutionResult>,
    pub prompt: Option<PromptRecord>,
    pub queries: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct IterationReport {
    pub round: u32,
    /// Cumulative coverage per focal module after this round.
    pub per_module: BTreeMap<String, CoverageReport>,
    pub tests_added: usize,
    pub tests_discarded: usize,
    pub newly_covered_lines: BTreeMap<String, BTreeSet<u32>>,
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<String, String>,
}

/// Builds the generation prompt for one focal function.
#[allow(clippy::too_many_arguments)]
pub fn build_prompt(
    index: &ProjectIndex,
    cg: Option<&CallGraph>,
    unit: &CodeUnit,
    plans: &[ArgumentPlan],
    summary: Option<&FunctionSummary>,
    examples: &[String],
    annotated: Option<&str>,
    budget: usize,
    counter: &dyn TokenCounter,
) -> Result<Prompt, super::GenerateError> {
    let mut focal =
        format!("Focal function `{}` in module `{}`:\n```python\n{}\n```", unit.local_name, unit.module_path, annotated.unwrap_or(&unit.source).trim_end());
    if annotated.is_some() {
        focal.push('\n');
        focal.push_str(prompts::UNCOVERED.trim_end());
    }
    let mut sections = vec![Section::new(SectionTag::FocalSource, focal)];
    match resolve_module_path(unit, index) {
        Ok(import) => sections.push(Section::new(SectionTag::ImportPath, format!("Import statement:\n{import}"))),
        Err(e) => sections.push(Section::new(SectionTag::ImportPath, format!("Import statement unavailable: {e}"))),
    }
    let mut construction = Vec::new();
    if matches!(unit.kind, UnitKind::Method | UnitKind::Constructor) {
        if let Some(class) = unit.parent.as_deref().and_then(|p| index.units.get(p)).filter(|c| c.kind == UnitKind::SubjectClass) {
            construction.push(format!(
                "The focal function is a method of `{}`. Construct an instance first.\n{}",
                class.name(),
                class_context(index, cg, class)
            ));
        }
    }
    construction.extend(plans.iter().map(ArgumentPlan::render));
    if !construction.is_empty() {
        sections.push(Section::new(SectionTag::ArgumentPlans, format!("How to construct the arguments:\n{}", construction.join("\n\n"))));
    }
    if let Some(s) = summary {
        sections.push(Section::new(SectionTag::BehaviorDigest, format!("Behavior of the focal function:\n{}", s.behavior)));
        if s.semantics != s.behavior {
            sections.push(Section::new(SectionTag::SemanticsDigest, format!("Purpose within the project:\n{}", s.semantics)));
        }
    }
    if !examples.is_empty() {
        let body = examples.iter().map(|e| format!("```python\n{}\n```", e.trim_end())).collect::<Vec<_>>().join("\n");
        sections.push(Section::new(SectionTag::TestExamples, format!("Existing tests for this function:\n{body}")));
    }
    assemble(prompts::SYSTEM_GENERATE.trim_end(), sections, budget, counter)
}

/// Mutable state across rounds: knowledge base, suite, cumulative coverage.
pub struct Session<'a> {
    pub index: &'a ProjectIndex,
    pub cg: &'a CallGraph,
    pub summaries: &'a BTreeMap<String, FunctionSummary>,
    pub llm: &'a Llm,
    pub executor: &'a dyn Executor,
    pub config: GenerationConfig,
    kb: RwLock<KnowledgeBase>,
    plans: Mutex<BTreeMap<String, Vec<ArgumentPlan>>>,
    counter: SegmentCounter,
    pub suite: Vec<GeneratedTest>,
    /// Tests that ended discarded; kept in memory only.
    pub discarded: Vec<GeneratedTest>,
    pub coverage: CoverageReport,
    pub manifest: Vec<ManifestEntry>,
    pub prompts: Vec<PromptRecord>,
    pub reports: Vec<IterationReport>,
    round: u32,
}

impl<'a> Session<'a> {
    pub fn new(
        index: &'a ProjectIndex,
        cg: &'a CallGraph,
        summaries: &'a BTreeMap<String, FunctionSummary>,
        kb: KnowledgeBase,
        llm: &'a Llm,
        executor: &'a dyn Executor,
        config: GenerationConfig,
    ) -> Self {
        Self {
            index,
            cg,
            summaries,
            llm,
            executor,
            config,
            kb: RwLock::new(kb),
            plans: Mutex::new(BTreeMap::new()),
            counter: SegmentCounter::default(),
            suite: Vec::new(),
            discarded: Vec::new(),
            coverage: CoverageReport::default(),
            manifest: Vec::new(),
            prompts: Vec::new(),
            reports: Vec::new(),
            round: 0,
        }
    }

    pub fn kb(&self) -> RwLockReadGuard<'_, KnowledgeBase> {
        self.kb.read()
    }

    pub fn into_kb(self) -> KnowledgeBase {
        self.kb.into_inner()
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    fn in_scope(&self, u: &CodeUnit) -> bool {
        u.kind.is_callable() && !u.is_nested(self.index) && (self.config.focal_modules.is_empty() || self.config.focal_modules.contains(&u.module_path))
    }

    /// Files containing focal functions.
    pub fn focal_files(&self) -> BTreeSet<String> {
        self.index.callables().filter(|u| self.in_scope(u)).map(|u| u.file.clone()).collect()
    }

    fn missing_in_span(&self, u: &CodeUnit) -> BTreeSet<u32> {
        self.coverage.missing_lines(&u.file).into_iter().filter(|l| u.span.contains(*l)).collect()
    }

    /// Round 1: every focal function except constructors. Later rounds:
    /// functions with uncovered lines in their span, or in files never executed.
    pub fn targets(&self, round: u32) -> Vec<&'a CodeUnit> {
        let index = self.index;
        index
            .callables()
            .filter(|u| self.in_scope(u))
            .filter(|u| {
                let fresh = !self.coverage.per_file.contains_key(&u.file);
                if round == 1 || fresh {
                    u.kind != UnitKind::Constructor
                } else {
                    !self.missing_in_span(u).is_empty()
                }
            })
            .collect()
    }

    fn plans_for(&self, unit: &CodeUnit) -> Vec<ArgumentPlan> {
        if let Some(p) = self.plans.lock().get(&unit.qualified_name) {
            return p.clone();
        }
        let plans = {
            let kb = self.kb.read();
            resolve_parameters(self.llm, &kb, self.index, self.cg, &unit.qualified_name).unwrap_or_default()
        };
        self.plans.lock().insert(unit.qualified_name.clone(), plans.clone());
        plans
    }

    fn examples_for(&self, unit: &CodeUnit) -> Vec<String> {
        if self.config.example_k == 0 {
            return Vec::new();
        }
        let kb = self.kb.read();
        let focal = unit.qualified_name.as_str();
        let filter = |d: &KBDocument| d.doc_kind == DocKind::TestCase && d.unit == focal;
        kb.retrieve(&format!("Existing tests for {focal}"), self.config.example_k, self.config.lambda, Some(&filter))
            .into_iter()
            .filter_map(|h| kb.get(&h.doc_id).and_then(|d| d.test_cases.as_ref()).map(|t| t.source_code.clone()))
            .collect()
    }

    fn process(&self, unit: &CodeUnit, round: u32) -> FocalOutcome {
        let mut outcome = FocalOutcome { focal: unit.qualified_name.clone(), test: None, result: None, prompt: None, queries: Vec::new(), error: None };
        let plans = self.plans_for(unit);
        let examples = self.examples_for(unit);
        let annotated = (round > 1 && self.coverage.per_file.contains_key(&unit.file)).then(|| annotate_uncovered(unit, &self.coverage));
        let prompt = match build_prompt(
            self.index,
            Some(self.cg),
            unit,
            &plans,
            self.summaries.get(&unit.qualified_name),
            &examples,
            annotated.as_deref(),
            self.config.budget,
            &self.counter,
        ) {
            Ok(p) => p,
            Err(e) => {
                outcome.error = Some(e.to_string());
                return outcome;
            }
        };
        outcome.prompt = Some(PromptRecord {
            round,
            focal: unit.qualified_name.clone(),
            system: prompt.system.clone(),
            user: prompt.user_text(),
            dropped: prompt.dropped.clone(),
        });
        let mut test = match generate_test(self.llm, &prompt, &unit.qualified_name, round) {
            Ok(t) => t,
            Err(e) => {
                outcome.error = Some(e.to_string());
                return outcome;
            }
        };
        let result = self.executor.execute(&self.index.root, &test.run()).unwrap_or_else(|e| ExecutionResult {
            status: ExecStatus::Error,
            error_report: format!("execution failed: {e}"),
            coverage: None,
            duration_s: 0.0,
        });
        if result.status == ExecStatus::Pass {
            test.status = TestStatus::Passing;
            outcome.test = Some(test);
            outcome.result = Some(result);
            return outcome;
        }
        test.status = TestStatus::Failing;
        let kb = self.kb.read();
        let ctx =
            RepairContext { llm: self.llm, kb: &kb, executor: self.executor, project_root: &self.index.root, k: self.config.k, lambda: self.config.lambda };
        let repaired = repair_test(&ctx, test, &result);
        outcome.queries = repaired.queries;
        outcome.result = repaired.result;
        outcome.test = Some(repaired.test);
        outcome
    }

    fn indexed_coverage(&self, result: &ExecutionResult) -> CoverageReport {
        let files: BTreeSet<&str> = self.index.files.iter().map(|f| f.path.as_str()).collect();
        let per_file = result.coverage.iter().flatten().filter(|(k, _)| files.contains(k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect();
        CoverageReport::from_files(per_file)
    }

    /// One round: generate, execute, repair, then fold passing tests into
    /// the KB, the suite and the cumulative coverage in focal order.
    pub fn run_iteration(&mut self) -> IterationReport {
        let round = self.round + 1;
        let targets = self.targets(round);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.config.parallelism.max(1)).build().expect("thread pool builds");
        let this = &*self;
        let outcomes: Vec<FocalOutcome> = pool.install(|| targets.par_iter().map(|u| this.process(u, round)).collect());

        let before = self.coverage.clone();
        let mut report = IterationReport { round, targets: targets.iter().map(|u| u.qualified_name.clone()).collect(), ..Default::default() };
        let mut gained = Vec::new();
        for outcome in outcomes {
            if let Some(p) = outcome.prompt {
                self.prompts.push(p);
            }
            let Some(test) = outcome.test else {
                report.tests_discarded += 1;
                report.failures.insert(outcome.focal.clone(), outcome.error.unwrap_or_default());
                self.manifest.push(ManifestEntry {
                    round,
                    focal: outcome.focal.clone(),
                    test_id: super::test_id(&outcome.focal, round),
                    status: TestStatus::Discarded,
                    file: None,
                });
                continue;
            };
            if test.status == TestStatus::Passing {
                let unit = &self.index.units[&test.focal];
                if let Err(e) = self.kb.write().add_test_case(&test, unit) {
                    log::warn!("could not store test {} in the knowledge base: {e}", test.test_id);
                }
                if let Some(r) = &outcome.result {
                    gained.push(self.indexed_coverage(r));
                }
                self.manifest.push(ManifestEntry {
                    round,
                    focal: test.focal.clone(),
                    test_id: test.test_id.clone(),
                    status: TestStatus::Passing,
                    file: Some(test.file_name()),
                });
                report.tests_added += 1;
                self.suite.push(test);
            } else {
                report.tests_discarded += 1;
                report.failures.insert(test.focal.clone(), test.history.last().map(|h| h.error_report.clone()).unwrap_or_default());
                self.manifest.push(ManifestEntry {
                    round,
                    focal: test.focal.clone(),
                    test_id: test.test_id.clone(),
                    status: TestStatus::Discarded,
                    file: None,
                });
                self.discarded.push(test);
            }
        }
        let mut all = vec![&before];
        all.extend(gained.iter());
        match merge_coverage(all) {
            Ok(merged) => self.coverage = merged,
            Err(e) => {
                report.failures.insert("<coverage>".into(), e.to_string());
            }
        }
        for file in self.focal_files() {
            let Some(module) = self.index.module_of_file(&file) else { continue };
            report.per_module.insert(module.to_string(), self.coverage.restrict([file.as_str()]));
            let new: BTreeSet<u32> = self.coverage.covered_lines(&file).difference(&before.covered_lines(&file)).copied().collect();
            report.newly_covered_lines.insert(module.to_string(), new);
        }
        self.round = round;
        self.reports.push(report.clone());
        report
    }

    pub fn run_all(&mut self) -> Vec<IterationReport> {
        while self.round < self.config.rounds {
            self.run_iteration();
        }
        self.reports.clone()
    }

    pub fn manifest_json(&self) -> String {
        let mut entries = self.manifest.clone();
        entries.sort();
        let mut s = serde_json::to_string_pretty(&entries).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Writes passing tests and the manifest; discarded sources never touch disk.
    pub fn persist_suite(&self, test_root: &Path, manifest_path: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(test_root)?;
        let mut written = Vec::new();
        for t in self.suite.iter().filter(|t| t.status == TestStatus::Passing) {
            let path = test_root.join(t.file_name());
            fs::write(&path, &t.source)?;
            written.push(path);
        }
        if let Some(parent) = manifest_path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(manifest_path, self.manifest_json())?;
        Ok(written)
    }
}
