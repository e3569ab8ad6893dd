//! Subprocess contract of the sandbox executor, exercised with shell scripts
//! standing in for the Python runner.

use std::fs;
use std::time::Instant;

use typeforge::coverage::{CoverageError, ExecStatus, Executor, SandboxExecutor, TestRun};

fn project() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir_all(dir.path().join("pkg")).unwrap();
    fs::write(dir.path().join("pkg/mod.py"), "def f():\n    return 1\n").unwrap();
    fs::create_dir_all(dir.path().join(".git")).unwrap();
    fs::write(dir.path().join(".git/HEAD"), "ref").unwrap();
    dir
}

fn shell(script: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), script.into(), "runner".into()]
}

fn run() -> TestRun {
    TestRun { name: "test_f_r1.py".into(), source: "def test_f():\n    assert True\n".into() }
}

#[test]
fn passes_arguments_and_relativizes_coverage() {
    // $1 test file, $2 snapshot root, $3 timeout
    let script = r#"
test -f "$1" || exit 3
test -d "$2/.git" && exit 4
grep -q test_f "$1" || exit 5
[ "$3" = "7" ] || exit 6
printf '{"status":"pass","error_report":"ignored","duration_s":0.5,"coverage":{"files":{"%s/pkg/mod.py":{"executed_lines":[1,2],"missing_lines":[],"executed_branches":[],"missing_branches":[]},"%s/generated_tests/test_f_r1.py":{"executed_lines":[1],"missing_lines":[]}}}}' "$2" "$2"
"#;
    let src = project();
    let exec = SandboxExecutor::new(shell(script), 7.0);
    let result = exec.execute(src.path(), &run()).unwrap();
    assert_eq!(result.status, ExecStatus::Pass);
    assert_eq!(result.error_report, "");
    let cov = result.coverage.unwrap();
    assert_eq!(cov.keys().collect::<Vec<_>>(), ["pkg/mod.py"]);
    assert_eq!(cov["pkg/mod.py"].statement_pct(), 100.0);
    // the project itself is never written to
    assert!(!src.path().join("generated_tests").exists());
}

#[test]
fn failing_status_keeps_the_error_report() {
    let script = r#"echo '{"status":"fail","error_report":"AssertionError: 1 != 2","coverage":null}'"#;
    let src = project();
    let result = SandboxExecutor::new(shell(script), 5.0).execute(src.path(), &run()).unwrap();
    assert_eq!(result.status, ExecStatus::Fail);
    assert_eq!(result.error_report, "AssertionError: 1 != 2");
    assert!(result.coverage.is_none());
}

#[test]
fn runaway_runner_is_killed_at_the_deadline() {
    let src = project();
    let exec = SandboxExecutor::new(shell("sleep 30 & sleep 30"), 0.3);
    let started = Instant::now();
    let result = exec.execute(src.path(), &run()).unwrap();
    assert_eq!(result.status, ExecStatus::Timeout);
    assert!(started.elapsed().as_secs_f64() < 5.0, "took {:?}", started.elapsed());
    assert!(result.error_report.contains("time limit"));
}

#[test]
fn garbage_output_is_a_malformed_result() {
    let src = project();
    let err = SandboxExecutor::new(shell("echo 'Traceback: boom' >&2; echo not-json"), 5.0).execute(src.path(), &run()).unwrap_err();
    match err {
        CoverageError::MalformedRunnerOutput(m) => assert!(m.contains("boom"), "{m}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_program_is_reported_as_unavailable() {
    let src = project();
    let exec = SandboxExecutor::new(vec!["/nonexistent/runner".into()], 5.0);
    assert!(matches!(exec.execute(src.path(), &run()), Err(CoverageError::SandboxUnavailable(_))));
}
