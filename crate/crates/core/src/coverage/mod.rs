//! Execution results, coverage sets and the uncovered-line annotation used
//! to steer later rounds.

mod exec;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::index::CodeUnit;

pub use self::exec::{CannedExecutor, Executor, RecordingExecutor, SandboxExecutor, TestRun, DEFAULT_TIMEOUT_S};

pub const UNCOVERED_MARKER: &str = "# NOT COVERED";

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("sandbox runner unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("malformed runner output: {0}")]
    MalformedRunnerOutput(String),
    #[error("coverage for `{path}` comes from different snapshots")]
    SnapshotMismatch { path: String },
    #[error("no canned result for test content {0}")]
    NoCannedResult(String),
    #[error("sandbox i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Pass,
    Fail,
    Error,
    Timeout,
}

/// Branch arc `(source line, target line)`; negative targets denote exits.
pub type Arc = (i64, i64);

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FileCoverage {
    pub covered_lines: BTreeSet<u32>,
    pub missing_lines: BTreeSet<u32>,
    pub covered_branches: BTreeSet<Arc>,
    pub missing_branches: BTreeSet<Arc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_hash: Option<String>,
}

impl FileCoverage {
    pub fn statement_pct(&self) -> f64 {
        pct(self.covered_lines.len(), self.missing_lines.len())
    }

    pub fn branch_pct(&self) -> f64 {
        pct(self.covered_branches.len(), self.missing_branches.len())
    }
}

fn pct(hit: usize, miss: usize) -> f64 {
    if hit + miss == 0 {
        100.0
    } else {
        100.0 * hit as f64 / (hit + miss) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecStatus,
    #[serde(default)]
    pub error_report: String,
    /// Per-file coverage keyed by project-relative path.
    #[serde(default)]
    pub coverage: Option<BTreeMap<String, FileCoverage>>,
    #[serde(default)]
    pub duration_s: f64,
}

impl ExecutionResult {
    pub fn timeout(after_s: f64) -> Self {
        Self {
            status: ExecStatus::Timeout,
            error_report: format!("test run exceeded the {after_s:.0} s time limit and was killed"),
            coverage: None,
            duration_s: after_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoverageReport {
    pub per_file: BTreeMap<String, FileCoverage>,
    pub statement_pct: f64,
    pub branch_pct: f64,
}

impl CoverageReport {
    pub fn from_files(per_file: BTreeMap<String, FileCoverage>) -> Self {
        let (mut hit, mut miss, mut bhit, mut bmiss) = (0, 0, 0, 0);
        for f in per_file.values() {
            hit += f.covered_lines.len();
            miss += f.missing_lines.len();
            bhit += f.covered_branches.len();
            bmiss += f.missing_branches.len();
        }
        Self { per_file, statement_pct: pct(hit, miss), branch_pct: pct(bhit, bmiss) }
    }

    /// Restricts the report to the given files.
    pub fn restrict<'a>(&self, files: impl IntoIterator<Item = &'a str>) -> Self {
        let keep: BTreeSet<&str> = files.into_iter().collect();
        Self::from_files(self.per_file.iter().filter(|(k, _)| keep.contains(k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect())
    }

    pub fn missing_lines(&self, file: &str) -> BTreeSet<u32> {
        self.per_file.get(file).map(|f| f.missing_lines.clone()).unwrap_or_default()
    }

    pub fn covered_lines(&self, file: &str) -> BTreeSet<u32> {
        self.per_file.get(file).map(|f| f.covered_lines.clone()).unwrap_or_default()
    }
}

/// Unions covered sets per file; missing = executable − covered.
pub fn merge_coverage<'a>(reports: impl IntoIterator<Item = &'a CoverageReport>) -> Result<CoverageReport, CoverageError> {
    let mut merged: BTreeMap<String, FileCoverage> = BTreeMap::new();
    for report in reports {
        for (path, fc) in &report.per_file {
            let entry = merged.entry(path.clone()).or_default();
            match (&entry.content_hash, &fc.content_hash) {
                (Some(a), Some(b)) if a != b => return Err(CoverageError::SnapshotMismatch { path: path.clone() }),
                (None, Some(b)) => entry.content_hash = Some(b.clone()),
                _ => {}
            }
            entry.covered_lines.extend(&fc.covered_lines);
            entry.missing_lines.extend(&fc.missing_lines);
            entry.covered_branches.extend(&fc.covered_branches);
            entry.missing_branches.extend(&fc.missing_branches);
        }
    }
    for fc in merged.values_mut() {
        let covered = fc.covered_lines.clone();
        fc.missing_lines.retain(|l| !covered.contains(l));
        let covered = fc.covered_branches.clone();
        fc.missing_branches.retain(|b| !covered.contains(b));
    }
    Ok(CoverageReport::from_files(merged))
}

fn line_set(v: Option<&Value>, what: &str) -> Result<BTreeSet<u32>, CoverageError> {
    let Some(v) = v else { return Ok(BTreeSet::new()) };
    let arr = v.as_array().ok_or_else(|| CoverageError::MalformedRunnerOutput(format!("`{what}` is not an array")))?;
    arr.iter()
        .map(|x| x.as_u64().and_then(|n| u32::try_from(n).ok()).ok_or_else(|| CoverageError::MalformedRunnerOutput(format!("bad line number in `{what}`"))))
        .collect()
}

fn arc_set(v: Option<&Value>, what: &str) -> Result<BTreeSet<Arc>, CoverageError> {
    let Some(v) = v else { return Ok(BTreeSet::new()) };
    let bad = || CoverageError::MalformedRunnerOutput(format!("bad branch in `{what}`"));
    let arr = v.as_array().ok_or_else(bad)?;
    arr.iter()
        .map(|pair| match pair.as_array().map(Vec::as_slice) {
            Some([a, b]) => Ok((a.as_i64().ok_or_else(bad)?, b.as_i64().ok_or_else(bad)?)),
            _ => Err(bad()),
        })
        .collect()
}

/// Parses the coverage tool's JSON (`{"files": {path: {executed_lines, ...}}}`).
pub fn parse_coverage_json(value: &Value) -> Result<BTreeMap<String, FileCoverage>, CoverageError> {
    let files =
        value.get("files").unwrap_or(value).as_object().ok_or_else(|| CoverageError::MalformedRunnerOutput("coverage `files` is not an object".into()))?;
    let mut out = BTreeMap::new();
    for (path, entry) in files {
        let covered = line_set(entry.get("executed_lines"), "executed_lines")?;
        let mut missing = line_set(entry.get("missing_lines"), "missing_lines")?;
        missing.retain(|l| !covered.contains(l));
        let covered_branches = arc_set(entry.get("executed_branches"), "executed_branches")?;
        let mut missing_branches = arc_set(entry.get("missing_branches"), "missing_branches")?;
        missing_branches.retain(|b| !covered_branches.contains(b));
        out.insert(
            path.trim_start_matches("./").to_string(),
            FileCoverage {
                covered_lines: covered,
                missing_lines: missing,
                covered_branches,
                missing_branches,
                content_hash: entry.get("content_hash").and_then(Value::as_str).map(str::to_string),
            },
        );
    }
    Ok(out)
}

/// Parses the runner's single JSON object from stdout.
pub fn parse_runner_output(stdout: &str) -> Result<ExecutionResult, CoverageError> {
    let value: Value = serde_json::from_str(stdout.trim()).map_err(|e| CoverageError::MalformedRunnerOutput(e.to_string()))?;
    let status: ExecStatus = serde_json::from_value(value.get("status").cloned().unwrap_or(Value::Null))
        .map_err(|e| CoverageError::MalformedRunnerOutput(format!("status: {e}")))?;
    let error_report = value.get("error_report").and_then(Value::as_str).unwrap_or_default().to_string();
    let coverage = match value.get("coverage") {
        None | Some(Value::Null) => None,
        Some(c) => Some(parse_coverage_json(c)?),
    };
    let duration_s = value.get("duration_s").and_then(Value::as_f64).unwrap_or(0.0);
    let error_report = if status == ExecStatus::Pass { String::new() } else { error_report };
    Ok(ExecutionResult { status, error_report, coverage, duration_s })
}

/// Appends the marker to every missing line inside the unit's span.
pub fn annotate_uncovered(unit: &CodeUnit, report: &CoverageReport) -> String {
    let missing = report.missing_lines(&unit.file);
    let mut out = String::with_capacity(unit.source.len() + 32);
    for (i, line) in unit.source.split_inclusive('\n').enumerate() {
        let lineno = unit.span.start_line + i as u32;
        if missing.contains(&lineno) && unit.span.contains(lineno) {
            let (body, eol) = match line.strip_suffix('\n') {
                Some(b) => (b, "\n"),
                None => (line, ""),
            };
            let (body, cr) = match body.strip_suffix('\r') {
                Some(b) => (b, "\r"),
                None => (body, ""),
            };
            out.push_str(body);
            out.push_str("  ");
            out.push_str(UNCOVERED_MARKER);
            out.push_str(cr);
            out.push_str(eol);
        } else {
            out.push_str(line);
        }
    }
    out
}

/// Inverse of [`annotate_uncovered`].
pub fn strip_markers(annotated: &str) -> String {
    let suffix = format!("  {UNCOVERED_MARKER}");
    annotated
        .split_inclusive('\n')
        .map(|line| {
            let (body, eol) = match line.strip_suffix("\r\n") {
                Some(b) => (b, "\r\n"),
                None => match line.strip_suffix('\n') {
                    Some(b) => (b, "\n"),
                    None => (line, ""),
                },
            };
            format!("{}{eol}", body.strip_suffix(&suffix).unwrap_or(body))
        })
        .collect()
}

/// Line numbers (absolute) carrying the marker in an annotated unit source.
pub fn marked_lines(annotated: &str, start_line: u32) -> BTreeSet<u32> {
    annotated.lines().enumerate().filter(|(_, l)| l.trim_end().ends_with(UNCOVERED_MARKER)).map(|(i, _)| start_line + i as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{Span, UnitKind};
    use proptest::prelude::*;
    use serde_json::json;

    fn unit(source: &str, start: u32) -> CodeUnit {
        let lines = source.lines().count() as u32;
        CodeUnit {
            qualified_name: "f".into(),
            local_name: "f".into(),
            kind: UnitKind::Function,
            module_path: "m".into(),
            file: "m.py".into(),
            source: source.into(),
            docstring: None,
            span: Span { start_line: start, end_line: start + lines - 1 },
            parameters: vec![],
            defined_fields: Default::default(),
            defined_methods: Default::default(),
            decorators: vec![],
            is_async: false,
            bases: vec![],
            parent: None,
        }
    }

    fn report(covered: &[u32], missing: &[u32]) -> CoverageReport {
        let fc = FileCoverage { covered_lines: covered.iter().copied().collect(), missing_lines: missing.iter().copied().collect(), ..Default::default() };
        CoverageReport::from_files([("m.py".to_string(), fc)].into())
    }

    #[test]
    fn annotates_only_missing_lines_in_span() {
        let u = unit("def f(x):\n    y = x\n    return y\n", 3);
        let out = annotate_uncovered(&u, &report(&[3, 5], &[1, 4, 9]));
        assert_eq!(out, "def f(x):\n    y = x  # NOT COVERED\n    return y\n");
        assert_eq!(marked_lines(&out, 3), [4].into());
        assert_eq!(strip_markers(&out), u.source);
        assert_eq!(annotate_uncovered(&u, &report(&[3, 4, 5], &[])), u.source);
    }

    #[test]
    fn merge_unions_and_recomputes() {
        let a = report(&[1, 2], &[3, 4]);
        let b = report(&[2, 3], &[1, 4]);
        let m = merge_coverage([&a, &b]).unwrap();
        assert_eq!(m.per_file["m.py"].covered_lines, [1, 2, 3].into());
        assert_eq!(m.per_file["m.py"].missing_lines, [4].into());
        assert!((m.statement_pct - 75.0).abs() < 1e-9);
        assert_eq!(merge_coverage([&a, &a]).unwrap(), merge_coverage([&a]).unwrap());
    }

    #[test]
    fn snapshot_mismatch_detected() {
        let mut a = report(&[1], &[]);
        let mut b = report(&[1], &[]);
        a.per_file.get_mut("m.py").unwrap().content_hash = Some("x".into());
        b.per_file.get_mut("m.py").unwrap().content_hash = Some("y".into());
        assert!(matches!(merge_coverage([&a, &b]), Err(CoverageError::SnapshotMismatch { .. })));
    }

    #[test]
    fn empty_denominator_is_full() {
        let r = CoverageReport::from_files(BTreeMap::new());
        assert_eq!(r.statement_pct, 100.0);
        assert_eq!(r.branch_pct, 100.0);
    }

    #[test]
    fn parses_runner_json() {
        let out = json!({
            "status": "pass",
            "error_report": "",
            "duration_s": 0.5,
            "coverage": {"files": {"pkg/m.py": {
                "executed_lines": [1, 2, 4],
                "missing_lines": [5],
                "executed_branches": [[2, 4]],
                "missing_branches": [[2, -1]]
            }}}
        });
        let r = parse_runner_output(&out.to_string()).unwrap();
        assert_eq!(r.status, ExecStatus::Pass);
        let fc = &r.coverage.unwrap()["pkg/m.py"];
        assert_eq!(fc.covered_lines, [1, 2, 4].into());
        assert_eq!(fc.missing_lines, [5].into());
        assert_eq!(fc.missing_branches, [(2, -1)].into());
        assert!(parse_runner_output("not json").is_err());
        assert!(parse_runner_output(r#"{"status": "weird"}"#).is_err());
    }

    fn arb_report() -> impl Strategy<Value = CoverageReport> {
        (prop::collection::btree_set(1u32..30, 0..20), prop::collection::btree_set(1u32..30, 0..20)).prop_map(|(c, m)| {
            let m: BTreeSet<u32> = m.difference(&c).copied().collect();
            CoverageReport::from_files([("m.py".to_string(), FileCoverage { covered_lines: c, missing_lines: m, ..Default::default() })].into())
        })
    }

    proptest! {
        #[test]
        fn merge_is_commutative_associative_idempotent(a in arb_report(), b in arb_report(), c in arb_report()) {
            let cov = |r: &CoverageReport| r.per_file.get("m.py").map(|f| f.covered_lines.clone()).unwrap_or_default();
            let ab = merge_coverage([&a, &b]).unwrap();
            let ba = merge_coverage([&b, &a]).unwrap();
            prop_assert_eq!(&ab, &ba);
            let ab_c = merge_coverage([&ab, &c]).unwrap();
            let bc = merge_coverage([&b, &c]).unwrap();
            let a_bc = merge_coverage([&a, &bc]).unwrap();
            prop_assert_eq!(cov(&ab_c), cov(&a_bc));
            prop_assert_eq!(cov(&merge_coverage([&a, &a]).unwrap()), cov(&a));
            let f = &ab.per_file["m.py"];
            let expect = pct(f.covered_lines.len(), f.missing_lines.len());
            prop_assert!((ab.statement_pct - expect).abs() < 0.1);
            prop_assert!(f.covered_lines.is_disjoint(&f.missing_lines));
        }

        #[test]
        fn annotation_is_reversible(lines in prop::collection::vec("[ a-z=():]{0,20}", 1..8), missing in prop::collection::btree_set(1u32..10, 0..5)) {
            let src = lines.join("\n") + "\n";
            let u = unit(&src, 1);
            let out = annotate_uncovered(&u, &report(&[], &missing.iter().copied().collect::<Vec<_>>()));
            prop_assert_eq!(strip_markers(&out), src.clone());
            prop_assert_eq!(out.lines().count(), src.lines().count());
        }
    }
}
