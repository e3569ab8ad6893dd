//! Full pipeline runs driven by recorded replies and executions.

mod support;

use std::collections::BTreeSet;
use std::fs;
use std::sync::Arc;

use typeforge::generate::TestStatus;
use typeforge::kb::{HashedEmbedder, KnowledgeBase};
use typeforge::llm::{ChatSettings, ReplayBackend};
use typeforge::pipeline::{run_generate, run_resolve, Artifacts, Backends, RunReport};
use typeforge::resolve::TypeKind;
use typeforge::Llm;

use support::{CODE2FLOW, PYCG};

#[test]
fn writes_every_artifact() {
    let out = tempfile::tempdir().unwrap();
    let config = PYCG.replay_config(out.path());
    let backends = Backends::from_config(&config).unwrap();
    let report = run_generate(&config, &backends).unwrap();
    let artifacts = Artifacts::new(out.path());

    assert_eq!(RunReport::load(&artifacts.report()).unwrap(), report);
    assert!(fs::read_to_string(artifacts.callgraph()).unwrap().starts_with("digraph"));
    let index: serde_json::Value = serde_json::from_slice(&fs::read(artifacts.index()).unwrap()).unwrap();
    assert!(index["units"].as_object().is_some_and(|u| u.contains_key("ImportManager.create_node")));

    let kb = KnowledgeBase::load(&artifacts.kb(), Arc::new(HashedEmbedder::default())).unwrap();
    let kept = report.manifest.iter().filter(|e| e.status == TestStatus::Passing).count();
    assert_eq!(kb.docs().iter().filter(|d| d.test_cases.is_some()).count(), kept);

    let on_disk: BTreeSet<String> = fs::read_dir(config.test_root()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    let listed: BTreeSet<String> = report.manifest.iter().filter_map(|e| e.file.clone()).collect();
    assert_eq!(on_disk, listed);
    assert_eq!(on_disk.len(), kept);
    assert_eq!(report.modules[PYCG.focal_module].tests_kept, kept);
    assert!(report.missing_summaries.is_empty());
    assert!(report.llm_calls > 0);
}

#[test]
fn report_rounds_are_numbered_and_bounded() {
    let out = tempfile::tempdir().unwrap();
    let config = CODE2FLOW.replay_config(out.path());
    let report = run_generate(&config, &Backends::from_config(&config).unwrap()).unwrap();
    let rounds: Vec<u32> = report.rounds.iter().map(|r| r.round).collect();
    assert!(!rounds.is_empty() && rounds.len() <= CODE2FLOW.rounds as usize);
    assert_eq!(rounds, (1..=rounds.len() as u32).collect::<Vec<_>>());
    assert!(report.table().contains(CODE2FLOW.focal_module));
}

#[test]
fn resolve_stage_alone_names_the_receiver_class() {
    let out = tempfile::tempdir().unwrap();
    let config = PYCG.replay_config(out.path());
    let llm = Llm::new(Arc::new(ReplayBackend::from_file(&PYCG.cassette()).unwrap()), ChatSettings::default());
    let plans = run_resolve(&config, &llm, "get_custom_loader").unwrap();
    assert_eq!(plans.len(), 1);
    assert_eq!(plans[0].param, "ig_obj");
    assert_eq!(plans[0].hypothesis.kind, TypeKind::UserDefined);
    assert_eq!(plans[0].hypothesis.name, "ImportManager");
}

#[test]
fn unknown_function_fails_in_the_resolve_stage() {
    let out = tempfile::tempdir().unwrap();
    let config = PYCG.replay_config(out.path());
    let llm = Llm::new(Arc::new(ReplayBackend::from_file(&PYCG.cassette()).unwrap()), ChatSettings::default());
    let err = run_resolve(&config, &llm, "no_such_function").unwrap_err();
    assert!(err.to_string().starts_with("resolve stage failed"), "{err}");
}
