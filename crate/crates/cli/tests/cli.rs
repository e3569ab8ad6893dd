use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn typeforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_typeforge")).args(args).env_remove("TYPEFORGE_ENDPOINT").env_remove("TYPEFORGE_MODEL").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Config file pointing the executor at the recorded pycg runs.
fn replay_config(dir: &Path) -> PathBuf {
    let recorded = fixtures().join("recorded");
    let path = dir.join("run.toml");
    fs::write(
        &path,
        format!(
            "project_root = {:?}\nrounds = 3\n\n[sandbox]\ncanned = {:?}\n",
            fixtures().join("pycg_project"),
            recorded.join("pycg_project.executions.json")
        ),
    )
    .unwrap();
    path
}

#[test]
fn missing_project_root_exits_1_naming_the_field() {
    let o = typeforge(&["generate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("project_root"), "{}", stderr(&o));
}

#[test]
fn bad_flag_values_are_configuration_errors() {
    let project = fixtures().join("pycg_project");
    let o = typeforge(&["index", "--project", project.to_str().unwrap(), "--mode", "sometimes"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mode"));
    let o = typeforge(&["index", "--rounds", "many"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn replay_generate_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = replay_config(dir.path());
    let out = dir.path().join("out");
    let cassette = fixtures().join("recorded/pycg_project.cassette.json");
    let o = typeforge(&[
        "generate",
        "--config",
        config.to_str().unwrap(),
        "--mode",
        "replay",
        "--cassette",
        cassette.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    let row = table.lines().find(|l| l.starts_with("pycg.machinery.imports")).expect("module row");
    assert_eq!(row.split_whitespace().nth(1), Some("100.0"));
    // the resolved configuration is echoed before the run
    assert!(stderr(&o).contains("mode = \"replay\""));
    assert!(out.join("tests").read_dir().unwrap().next().is_some());

    let o = typeforge(&["report", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let row = &report["modules"]["pycg.machinery.imports"];
    assert_eq!(row["statement_pct"], 100.0);
    assert!(row["branch_pct"].is_number());
}

#[test]
fn report_without_a_run_is_a_pipeline_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = typeforge(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("setup stage failed"), "{}", stderr(&o));
}

#[test]
fn index_and_graph_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let project = fixtures().join("code2flow_project");
    for cmd in ["index", "graph"] {
        let o = typeforge(&[cmd, "--project", project.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let index: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("index.json")).unwrap()).unwrap();
    assert!(index["units"]["Call.matches_variable"].is_object());
    assert!(fs::read_to_string(dir.path().join("callgraph.dot")).unwrap().contains("\"Variable.point_to_node\""));
}

#[test]
fn resolve_prints_plans_and_summarize_writes_the_requested_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = replay_config(dir.path());
    let cassette = fixtures().join("recorded/pycg_project.cassette.json");
    let common = ["--config", config.to_str().unwrap(), "--mode", "replay", "--cassette", cassette.to_str().unwrap()];

    let mut args = vec!["resolve", "--function", "get_custom_loader", "--out", dir.path().to_str().unwrap()];
    args.extend(common);
    let o = typeforge(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let plans: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(plans[0]["param"], "ig_obj");
    assert_eq!(plans[0]["hypothesis"]["name"], "ImportManager");

    let file = dir.path().join("sums.json");
    let mut args = vec!["summarize", "--out", file.to_str().unwrap()];
    args.extend(common);
    let o = typeforge(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sums: serde_json::Value = serde_json::from_slice(&fs::read(&file).unwrap()).unwrap();
    assert!(sums["summaries"]["get_custom_loader"].is_object());

    let mut args = vec!["resolve", "--function", "missing"];
    args.extend(common);
    let o = typeforge(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("resolve stage failed"));
}
