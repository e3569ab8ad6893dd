#![allow(dead_code)]

use std::path::{Path, PathBuf};

use typeforge::config::{Mode, RunConfig};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// A bundled project with its recorded model replies and test executions.
#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub focal_module: &'static str,
    pub rounds: u32,
}

pub const PYCG: Fixture = Fixture { name: "pycg_project", focal_module: "pycg.machinery.imports", rounds: 3 };
pub const CODE2FLOW: Fixture = Fixture { name: "code2flow_project", focal_module: "code2flow.model", rounds: 3 };
pub const REPAIR: Fixture = Fixture { name: "repair_project", focal_module: "example.target_module", rounds: 1 };

impl Fixture {
    pub fn project(&self) -> PathBuf {
        fixtures_dir().join(self.name)
    }
    pub fn cassette(&self) -> PathBuf {
        fixtures_dir().join("recorded").join(format!("{}.cassette.json", self.name))
    }
    pub fn executions(&self) -> PathBuf {
        fixtures_dir().join("recorded").join(format!("{}.executions.json", self.name))
    }

    /// Replay configuration writing artifacts under `out`.
    pub fn replay_config(&self, out: &Path) -> RunConfig {
        let mut config = RunConfig {
            project_root: self.project(),
            rounds: self.rounds,
            mode: Mode::Replay,
            cassette_path: Some(self.cassette()),
            out_dir: Some(out.to_path_buf()),
            ..RunConfig::default()
        };
        config.sandbox.canned = Some(self.executions());
        config.validate().expect("fixture config is valid");
        config
    }
}
