//! Regenerates the recorded fixtures: a scripted chat responder stands in for
//! the model and a pytest + coverage.py runner executes every generated test.
//!
//! Run with `cargo test -p typeforge --test record_fixtures -- --ignored`.
//! Needs `python3` with `pytest` and `coverage` installed.

mod support;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use typeforge::config::{Mode, RunConfig};
use typeforge::coverage::{Executor, RecordingExecutor, SandboxExecutor};
use typeforge::llm::{Cassette, ChatBackend, ChatRequest, ChatSettings, LlmError, RecordingBackend};
use typeforge::pipeline::{run_generate, Backends};
use typeforge::{prompts, Llm};

use support::{Fixture, CODE2FLOW, PYCG, REPAIR};

/// Second-stage repair reply: uses the first `module path: ...` in the
/// retrieved context that ends with `module_suffix`.
struct ContextFix {
    module_suffix: &'static str,
    template: &'static str,
}

#[derive(Default)]
struct Script {
    /// Generated test per focal, one entry per round.
    generate: BTreeMap<&'static str, Vec<&'static str>>,
    repair: BTreeMap<&'static str, &'static str>,
    cause: BTreeMap<&'static str, &'static str>,
    query: BTreeMap<&'static str, &'static str>,
    repair_with_context: BTreeMap<&'static str, ContextFix>,
    types: BTreeMap<(&'static str, &'static str), &'static str>,
}

struct Scripted {
    script: Script,
    served: Mutex<BTreeMap<String, usize>>,
}

fn field<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(label)).map(str::trim)
}

/// Script keys are module-qualified; indexed names may be local.
fn lookup<'a, V>(map: &'a BTreeMap<&'static str, V>, focal: &str) -> Option<&'a V> {
    map.iter().find(|(k, _)| **k == focal || k.ends_with(&format!(".{focal}"))).map(|(_, v)| v)
}

fn fenced(code: &str) -> String {
    format!("```python\n{}\n```", code.trim_end())
}

fn short(name: &str) -> &str {
    name.rsplit('.').next().unwrap_or(name)
}

fn describe_source(name: &str, text: &str) -> String {
    let source = text.split("```python").nth(1).and_then(|s| s.split("```").next()).unwrap_or("");
    let mut parts = Vec::new();
    if source.contains("raise ") {
        parts.push("raises an error when its input is invalid");
    }
    if source.contains("self.") && source.contains(" = ") {
        parts.push("updates the instance state");
    }
    if source.contains("if ") {
        parts.push("branches on its arguments");
    }
    if source.contains("return") {
        parts.push("returns a value derived from its inputs");
    }
    if parts.is_empty() {
        parts.push("runs without returning a value");
    }
    format!("`{}` {}.", short(name), parts.join(", "))
}

impl Scripted {
    fn new(script: Script) -> Self {
        Self { script, served: Mutex::new(BTreeMap::new()) }
    }

    fn generate(&self, user: &str) -> String {
        let first = user.lines().next().unwrap_or("");
        let mut ticks = first.split('`');
        let (_, local, _, module) = (ticks.next(), ticks.next().unwrap_or(""), ticks.next(), ticks.next().unwrap_or(""));
        let focal = format!("{module}.{local}");
        let replies = lookup(&self.script.generate, &focal).unwrap_or_else(|| panic!("no generation script for {focal}"));
        let mut served = self.served.lock();
        let n = served.entry(focal.clone()).or_insert(0);
        let reply = replies.get(*n).or_else(|| replies.last()).expect("script has a reply");
        *n += 1;
        format!("Here is the test.\n\n{}", fenced(reply))
    }

    fn reply(&self, system: &str, user: &str) -> String {
        if system == prompts::SYSTEM_GENERATE.trim_end() && user.starts_with("Focal function `") {
            return self.generate(user);
        }
        let task = field(user, "Task:").unwrap_or("");
        match task {
            "analyze-behavior" => describe_source(field(user, "Function:").unwrap_or("?"), user),
            "infer-semantics" => {
                let name = field(user, "Function:").unwrap_or("?");
                let doc = user.split("Project documentation:").nth(1).unwrap_or("").lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
                match doc {
                    Some(d) if d != "none found" => format!("`{}` supports the project goal: {d}", short(name)),
                    _ => format!("`{}` is used by its callers to manage project state.", short(name)),
                }
            }
            "summarize-class" => {
                let name = field(user, "Class:").unwrap_or("?");
                format!("`{}` holds related state and exposes methods that operate on it. {}", short(name), describe_source(name, user))
            }
            "infer-type" => {
                let f = field(user, "Function:").unwrap_or("");
                let p = field(user, "Parameter:").unwrap_or("");
                let ty =
                    self.script.types.iter().find(|((sf, sp), _)| (*sf == f || sf.ends_with(&format!(".{f}"))) && *sp == p).map(|(_, t)| *t).unwrap_or("str");
                format!("TYPE: {ty}\nEvery call passes a value of this type.")
            }
            "param-behavior" => {
                let p = field(user, "Parameter:").unwrap_or("");
                let fields = field(user, "- attributes read or written:").unwrap_or("none");
                let methods = field(user, "- methods invoked:").unwrap_or("none");
                if fields == "none" && methods == "none" {
                    let ty = match p {
                        "values" | "items" => "list",
                        "factor" | "value" | "low" | "high" | "line_number" => "int",
                        _ => "str",
                    };
                    format!("KIND: primitive {ty}\nBEHAVIOR: `{p}` is used as a plain {ty} value.")
                } else {
                    format!("KIND: object\nBEHAVIOR: reads {fields} and calls {methods} on `{p}`.")
                }
            }
            "consolidate" => {
                let mut lines = Vec::new();
                for l in user.lines().filter(|l| l.starts_with('[')) {
                    let name = l.split('`').nth(1).unwrap_or("");
                    if let Some(path) = l.split("(module path: ").nth(1).map(|r| r.trim_end_matches(')')) {
                        lines.push(format!("- `{name}` is defined in module path: {path}"));
                    }
                }
                lines.dedup();
                lines.join("\n")
            }
            "repair-test" => {
                let focal = field(user, "Focal function:").unwrap_or("");
                fenced(lookup(&self.script.repair, focal).unwrap_or_else(|| panic!("no repair script for {focal}")))
            }
            "analyze-error" => {
                let focal = field(user, "Focal function:").unwrap_or("");
                lookup(&self.script.cause, focal).copied().unwrap_or("The test does not match the function's interface.").to_string()
            }
            "error-query" => {
                let focal = field(user, "Focal function:").unwrap_or("");
                format!("QUERY: {}", lookup(&self.script.query, focal).copied().unwrap_or(focal))
            }
            "repair-test-with-context" => {
                let focal = field(user, "Focal function:").unwrap_or("");
                let fix = lookup(&self.script.repair_with_context, focal).unwrap_or_else(|| panic!("no context repair for {focal}"));
                let context = user.split("Relevant project information:").nth(1).unwrap_or("");
                let module = context
                    .split("module path: ")
                    .skip(1)
                    .map(|rest| rest.split(|c: char| c.is_whitespace() || c == ')').next().unwrap_or(""))
                    .find(|m| m.ends_with(fix.module_suffix));
                // Without the retrieved path the model repeats the broken import.
                fenced(&fix.template.replace("{module}", module.unwrap_or(fix.module_suffix)))
            }
            other => panic!("unscripted task {other:?}"),
        }
    }
}

impl ChatBackend for Scripted {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let system = request.messages.first().map(|m| m.content.as_str()).unwrap_or("");
        let user = request.messages.last().map(|m| m.content.as_str()).unwrap_or("");
        Ok(self.reply(system, user))
    }
}

fn code2flow_script() -> Script {
    let mut s = Script::default();
    s.generate.insert(
        "code2flow.model.Node.name",
        vec![
            r#"from code2flow.model import Node


def test_name_returns_token():
    node = Node("main", 3, None)
    assert node.name() == "main"
"#,
        ],
    );
    s.generate.insert(
        "code2flow.model.Variable.point_to_node",
        vec![
            r#"from code2flow.model import Node, Variable


def test_points_to_node():
    node = Node("helper", 10, None)
    assert Variable("helper", node).point_to_node() is True


def test_points_to_module_name():
    assert Variable("os", "os").point_to_node() is False
"#,
        ],
    );
    s.generate.insert(
        "code2flow.model.Call.is_attr",
        vec![
            r#"from code2flow.model import Call


def test_attribute_call():
    assert Call("append", owner_token="items").is_attr() is True


def test_plain_call():
    assert Call("print").is_attr() is False
"#,
        ],
    );
    s.generate.insert(
        "code2flow.model.Call.matches_variable",
        vec![
            r#"from code2flow.model import Call, Node, Variable


def test_matches_owner_token():
    node = Node("Parser", 5, None)
    variable = Variable("parser", node, line_number=7)
    call = Call("parse", owner_token="parser")
    assert call.matches_variable(variable) is node


def test_non_node_variable_never_matches():
    call = Call("parse", owner_token="parser")
    assert call.matches_variable(Variable("parser", "module")) is None
"#,
            r#"from code2flow.model import Call, Node, Variable


def test_matches_plain_call_token():
    node = Node("build", 12, None)
    call = Call("build")
    assert call.matches_variable(Variable("build", node)) is node


def test_node_variable_with_unrelated_token():
    variable = Variable("other", Node("other", 1, None))
    assert Call("build", owner_token="x").matches_variable(variable) is None
"#,
        ],
    );
    s
}

fn pycg_script() -> Script {
    let mut s = Script::default();
    s.types.insert(("pycg.machinery.imports.ImportManager.get_node", "name"), "str");
    s.generate.insert(
        "pycg.machinery.imports.get_custom_loader",
        vec![
            r#"from pycg.machinery.imports import ImportManager, get_custom_loader


def test_loader_registers_new_module():
    manager = ImportManager()
    manager.create_node("pkg")
    manager.set_current_mod("pkg", "pkg/__init__.py")
    loader_cls = get_custom_loader(manager)
    loader = loader_cls("pkg.mod", "pkg/mod.py")
    assert "pkg.mod" in manager.get_node("pkg")["imports"]
    assert manager.get_node("pkg.mod")["filename"] == "pkg/mod.py"
    assert loader.get_filename("pkg.mod") == "pkg/mod.py"
    assert loader.get_data("pkg/mod.py") == ""
"#,
        ],
    );
    s.generate.insert(
        "pycg.machinery.imports.ImportManager.set_current_mod",
        vec![
            r#"from pycg.machinery.imports import ImportManager


def test_set_current_mod():
    manager = ImportManager()
    manager.set_current_mod("pkg.mod", "pkg/mod.py")
    assert manager.current_module == "pkg.mod"
    assert manager.input_file == "pkg/mod.py"
"#,
        ],
    );
    s.generate.insert(
        "pycg.machinery.imports.ImportManager.get_node",
        vec![
            r#"from pycg.machinery.imports import ImportManager


def test_get_existing_node():
    manager = ImportManager()
    node = manager.create_node("mod")
    assert manager.get_node("mod") is node


def test_get_missing_node():
    assert ImportManager().get_node("missing") is None
"#,
        ],
    );
    // The first attempt expects the wrong exception type; the stage-one repair fixes it.
    s.generate.insert(
        "pycg.machinery.imports.ImportManager.create_node",
        vec![
            r#"import pytest

from pycg.machinery.imports import ImportManager


def test_create_node_rejects_bad_names():
    manager = ImportManager()
    with pytest.raises(ValueError):
        manager.create_node("")
"#,
        ],
    );
    s.repair.insert(
        "pycg.machinery.imports.ImportManager.create_node",
        r#"import pytest

from pycg.machinery.imports import ImportManager, ImportManagerError


def test_create_node_rejects_bad_names():
    manager = ImportManager()
    with pytest.raises(ImportManagerError):
        manager.create_node("")
    with pytest.raises(ImportManagerError):
        manager.create_node(42)


def test_create_node_twice_fails():
    manager = ImportManager()
    node = manager.create_node("mod")
    assert node == {"filename": "", "imports": set()}
    with pytest.raises(ImportManagerError):
        manager.create_node("mod")
"#,
    );
    s.generate.insert(
        "pycg.machinery.imports.ImportManager.create_edge",
        vec![
            r#"import pytest

from pycg.machinery.imports import ImportManager, ImportManagerError


def test_create_edge_adds_import():
    manager = ImportManager()
    manager.create_node("pkg")
    manager.set_current_mod("pkg", "pkg/__init__.py")
    manager.create_edge("os")
    assert manager.get_node("pkg")["imports"] == {"os"}


def test_create_edge_rejects_bad_destination():
    with pytest.raises(ImportManagerError):
        ImportManager().create_edge("")
"#,
            r#"import pytest

from pycg.machinery.imports import ImportManager, ImportManagerError


def test_create_edge_without_current_node():
    manager = ImportManager()
    manager.set_current_mod("ghost", "ghost.py")
    with pytest.raises(ImportManagerError, match="non existing node"):
        manager.create_edge("os")
"#,
        ],
    );
    s.generate.insert(
        "pycg.machinery.imports.ImportManager.set_filepath",
        vec![
            r#"import pytest

from pycg.machinery.imports import ImportManager, ImportManagerError


def test_set_filepath_on_existing_node():
    manager = ImportManager()
    manager.create_node("mod")
    manager.set_filepath("mod", "mod.py")
    assert manager.get_node("mod")["filename"] == "mod.py"


def test_set_filepath_rejects_bad_input():
    manager = ImportManager()
    with pytest.raises(ImportManagerError):
        manager.set_filepath("mod", "")
    with pytest.raises(ImportManagerError):
        manager.set_filepath("missing", "missing.py")
"#,
        ],
    );
    s
}

fn repair_script() -> Script {
    let mut s = Script::default();
    s.generate.insert(
        "example.target_module.scale",
        vec![
            r#"from target_module import scale


def test_scale_multiplies_each_value():
    assert scale([1, 2, 3], 2) == [2, 4, 6]
"#,
        ],
    );
    s.repair.insert(
        "example.target_module.scale",
        r#"import target_module


def test_scale_multiplies_each_value():
    assert target_module.scale([1, 2, 3], 2) == [2, 4, 6]


def test_scale_empty():
    assert target_module.scale([], 5) == []
"#,
    );
    s.cause.insert(
        "example.target_module.scale",
        "The test imports `target_module` as a top-level module. Unable to find module path: target_module. The package that contains it is unknown.",
    );
    s.query.insert("example.target_module.scale", "module path of target_module scale");
    s.repair_with_context.insert(
        "example.target_module.scale",
        ContextFix {
            module_suffix: "target_module",
            template: r#"from {module} import scale


def test_scale_multiplies_each_value():
    assert scale([1, 2, 3], 2) == [2, 4, 6]


def test_scale_empty():
    assert scale([], 5) == []
"#,
        },
    );

    s.generate.insert(
        "example.target_module.clamp",
        vec![
            r#"from example.target_module import clamp


def test_clamp_inside_range():
    assert clamp(5, 0) == 5
"#,
        ],
    );
    s.repair.insert(
        "example.target_module.clamp",
        r#"from example.target_module import clamp


def test_clamp_inside_range():
    assert clamp(value=5, bounds=(0, 10)) == 5
"#,
    );
    s.cause.insert("example.target_module.clamp", "The test passes arguments that `clamp` does not accept.");
    s.query.insert("example.target_module.clamp", "clamp parameters");
    s.repair_with_context.insert(
        "example.target_module.clamp",
        ContextFix {
            module_suffix: "target_module",
            template: r#"from {module} import clamp


def test_clamp_inside_range():
    assert clamp(5, (0, 10)) == 5
"#,
        },
    );
    s
}

fn record(fixture: Fixture, script: Script) {
    let runner = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/support/record_runner.py");
    let cassette_path = fixture.cassette();
    fs::create_dir_all(cassette_path.parent().unwrap()).unwrap();
    let settings = ChatSettings::default();
    let chat = Arc::new(RecordingBackend::new(Arc::new(Scripted::new(script)), Cassette::new(&settings.model), &cassette_path));
    let sandbox = SandboxExecutor::new(vec!["python3".into(), runner.to_string_lossy().into_owned()], 60.0);
    let executor = Arc::new(RecordingExecutor::new(Box::new(sandbox)));
    let backends = Backends::new(Llm::new(chat.clone(), settings), executor.clone() as Arc<dyn Executor>);

    let out = tempfile::tempdir().unwrap();
    let config = RunConfig {
        project_root: fixture.project(),
        rounds: fixture.rounds,
        mode: Mode::Live,
        out_dir: Some(out.path().to_path_buf()),
        ..RunConfig::default()
    };
    let report = run_generate(&config, &backends).unwrap();
    print!("{}", report.table());
    chat.flush().unwrap();
    executor.canned().save(&fixture.executions()).unwrap();
}

#[test]
#[ignore = "needs python3 with pytest and coverage; rewrites fixtures/recorded"]
fn record_all_fixtures() {
    record(PYCG, pycg_script());
    record(CODE2FLOW, code2flow_script());
    record(REPAIR, repair_script());
}
