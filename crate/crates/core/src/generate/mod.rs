//! Test generation, the two-stage repair ladder and coverage-guided rounds.

mod prompt;
mod session;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coverage::{ExecStatus, ExecutionResult, Executor, TestRun};
use crate::kb::{rag_query, KnowledgeBase};
use crate::llm::{Llm, LlmError, Message};
use crate::prompts;

pub use self::prompt::{assemble, Prompt, Section, SectionTag, DEFAULT_BUDGET};
pub use self::session::{build_prompt, FocalOutcome, GenerationConfig, IterationReport, ManifestEntry, PromptRecord, Session};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("budget of {budget} tokens is below the {needed} needed for the system message and focal source")]
    BudgetTooSmall { needed: usize, budget: usize },
    #[error("model reply contained no code block, even after re-asking")]
    NoCodeInResponse,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Fresh,
    Passing,
    Failing,
    Repairing,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairAttempt {
    /// 1 = error report only, 2 = with retrieved context.
    pub attempt: u32,
    /// The failure the attempt tried to fix.
    pub error_report: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedTest {
    pub test_id: String,
    pub focal: String,
    pub source: String,
    pub round: u32,
    pub status: TestStatus,
    pub history: Vec<RepairAttempt>,
}

impl GeneratedTest {
    pub fn file_name(&self) -> String {
        format!("test_{}.py", self.test_id)
    }

    pub fn run(&self) -> TestRun {
        TestRun { name: self.file_name(), source: self.source.clone() }
    }
}

/// `pkg.mod.Class.method` round 2 → `class_method_1a2b3c_r2`.
pub fn test_id(focal: &str, round: u32) -> String {
    let local: String = focal
        .split('.')
        .rev()
        .take(2)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect::<Vec<_>>()
        .join("_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    let local = local.trim_matches('_');
    let hash = hex::encode(Sha256::digest(focal.as_bytes()));
    format!("{local}_{}_r{round}", &hash[..6])
}

/// First fenced code block, preferring one tagged `python`.
pub fn extract_code(reply: &str) -> Option<String> {
    let mut blocks: Vec<(bool, String)> = Vec::new();
    let mut lines = reply.lines();
    while let Some(line) = lines.next() {
        let trimmed = line.trim_start();
        let Some(info) = trimmed.strip_prefix("```") else { continue };
        let is_python = matches!(info.trim().to_ascii_lowercase().as_str(), "python" | "py" | "python3");
        let mut body = Vec::new();
        let mut closed = false;
        for l in lines.by_ref() {
            if l.trim_start().starts_with("```") {
                closed = true;
                break;
            }
            body.push(l);
        }
        let code = body.join("\n");
        if closed && !code.trim().is_empty() {
            blocks.push((is_python, code));
        }
    }
    blocks.iter().find(|(py, _)| *py).or_else(|| blocks.first()).map(|(_, c)| format!("{}\n", c.trim_end()))
}

fn with_header(focal: &str, round: u32, code: &str) -> String {
    let header = format!("# Generated test for {focal} (round {round})\n");
    if code.starts_with(&header) {
        code.to_string()
    } else {
        format!("{header}{code}")
    }
}

/// Asks for a test; re-asks once when the reply has no code block.
pub fn generate_test(llm: &Llm, prompt: &Prompt, focal: &str, round: u32) -> Result<GeneratedTest, GenerateError> {
    let mut messages = vec![Message::system(&prompt.system), Message::user(prompt.user_text())];
    let reply = llm.chat(messages.clone())?;
    let code = match extract_code(&reply) {
        Some(c) => c,
        None => {
            messages.push(Message::assistant(reply));
            messages.push(Message::user(prompts::REASK.trim_end()));
            let again = llm.chat(messages)?;
            extract_code(&again).ok_or(GenerateError::NoCodeInResponse)?
        }
    };
    Ok(GeneratedTest {
        test_id: test_id(focal, round),
        focal: focal.to_string(),
        source: with_header(focal, round, &code),
        round,
        status: TestStatus::Fresh,
        history: Vec::new(),
    })
}

/// Everything the repair ladder needs besides the test itself.
pub struct RepairContext<'a> {
    pub llm: &'a Llm,
    pub kb: &'a KnowledgeBase,
    pub executor: &'a dyn Executor,
    pub project_root: &'a Path,
    pub k: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairOutcome {
    pub test: GeneratedTest,
    /// Result of the last execution when the test ended up passing.
    pub result: Option<ExecutionResult>,
    /// Retrieval queries issued during stage 2.
    pub queries: Vec<String>,
}

pub fn is_assertion_failure(result: &ExecutionResult) -> bool {
    result.status == ExecStatus::Fail && result.error_report.contains("AssertionError")
}

fn execute(ctx: &RepairContext<'_>, test: &GeneratedTest) -> ExecutionResult {
    ctx.executor.execute(ctx.project_root, &test.run()).unwrap_or_else(|e| ExecutionResult {
        status: ExecStatus::Error,
        error_report: format!("execution failed: {e}"),
        coverage: None,
        duration_s: 0.0,
    })
}

fn ask_for_code(llm: &Llm, user: &str) -> Option<String> {
    llm.ask(prompts::SYSTEM_GENERATE, user).ok().and_then(|r| extract_code(&r))
}

/// Stage 1 re-prompts with the error report; stage 2 analyzes the cause,
/// retrieves context and tries once more. Still failing means discarded.
pub fn repair_test(ctx: &RepairContext<'_>, mut test: GeneratedTest, failure: &ExecutionResult) -> RepairOutcome {
    let mut queries = Vec::new();
    let assertion = is_assertion_failure(failure);
    test.status = TestStatus::Repairing;
    test.history.push(RepairAttempt { attempt: 1, error_report: failure.error_report.clone() });
    let user = prompts::render(prompts::REPAIR, &[("focal", &test.focal), ("source", &test.source), ("error", &failure.error_report)]);
    let mut last_error = match ask_for_code(ctx.llm, &user) {
        Some(code) => {
            let candidate = GeneratedTest { source: with_header(&test.focal, test.round, &code), ..test.clone() };
            let result = execute(ctx, &candidate);
            if result.status == ExecStatus::Pass {
                test.source = candidate.source;
                test.status = TestStatus::Passing;
                return RepairOutcome { test, result: Some(result), queries };
            }
            test.source = candidate.source;
            result.error_report
        }
        None => "repair reply contained no code block".to_string(),
    };
    if assertion {
        test.status = TestStatus::Discarded;
        return RepairOutcome { test, result: None, queries };
    }

    test.history.push(RepairAttempt { attempt: 2, error_report: last_error.clone() });
    let cause_prompt = prompts::render(prompts::REPAIR_CAUSE, &[("focal", &test.focal), ("source", &test.source), ("error", &last_error)]);
    let cause = ctx.llm.ask(prompts::SYSTEM_ANALYST, &cause_prompt).unwrap_or_default();
    let query_prompt = prompts::render(prompts::REPAIR_QUERY, &[("focal", &test.focal), ("cause", cause.trim())]);
    let query = ctx
        .llm
        .ask(prompts::SYSTEM_ANALYST, &query_prompt)
        .ok()
        .and_then(|r| parse_query(&r))
        .unwrap_or_else(|| format!("{} {}", test.focal, first_line(&last_error)));
    queries.push(query.clone());
    let context = match rag_query(ctx.llm, ctx.kb, &query, ctx.k, ctx.lambda, None) {
        Ok(bundle) => {
            let mut text = bundle.consolidated.clone();
            let sources: Vec<String> = bundle
                .selected
                .iter()
                .filter_map(|id| ctx.kb.get(id))
                .map(|d| format!("- {} (module path: {})", d.source_code.name, d.source_code.module_path))
                .collect();
            if !sources.is_empty() {
                text.push_str("\nSources:\n");
                text.push_str(&sources.join("\n"));
            }
            text
        }
        Err(e) => format!("retrieval failed: {e}"),
    };
    let user =
        prompts::render(prompts::REPAIR_CONTEXT, &[("focal", &test.focal), ("source", &test.source), ("error", &last_error), ("context", context.trim())]);
    match ask_for_code(ctx.llm, &user) {
        Some(code) => {
            let candidate = GeneratedTest { source: with_header(&test.focal, test.round, &code), ..test.clone() };
            let result = execute(ctx, &candidate);
            if result.status == ExecStatus::Pass {
                test.source = candidate.source;
                test.status = TestStatus::Passing;
                return RepairOutcome { test, result: Some(result), queries };
            }
            last_error = result.error_report;
        }
        None => last_error = "repair reply contained no code block".to_string(),
    }
    log::debug!("discarding {} after two repairs: {}", test.test_id, first_line(&last_error));
    test.status = TestStatus::Discarded;
    RepairOutcome { test, result: None, queries }
}

fn first_line(s: &str) -> &str {
    s.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("")
}

fn parse_query(reply: &str) -> Option<String> {
    reply.lines().find_map(|l| l.trim().strip_prefix("QUERY:").map(|q| q.trim().to_string())).filter(|q| !q.is_empty())
}
