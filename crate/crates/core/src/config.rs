//! Run configuration: one TOML or JSON file, then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generate::{GenerationConfig, DEFAULT_BUDGET};
use crate::kb::{DEFAULT_K, DEFAULT_LAMBDA};

pub const DEFAULT_OUT_DIR: &str = ".typeforge";
pub const API_KEY_ENV: &str = "TYPEFORGE_API_KEY";
pub const ENDPOINT_ENV: &str = "TYPEFORGE_ENDPOINT";
pub const MODEL_ENV: &str = "TYPEFORGE_MODEL";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Live,
    Replay,
    Record,
}

impl std::str::FromStr for Mode {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(Mode::Live),
            "replay" => Ok(Mode::Replay),
            "record" => Ok(Mode::Record),
            other => Err(ConfigError::Invalid { field: "mode", reason: format!("`{other}` is not live, replay or record") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub budget_tokens: usize,
    pub max_output_tokens: u32,
}

impl Default for LlmSection {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            model: "gpt-4o-2024-05-13".to_string(),
            temperature: 0.0,
            budget_tokens: DEFAULT_BUDGET,
            max_output_tokens: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub k: usize,
    pub lambda: f64,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self { k: DEFAULT_K, lambda: DEFAULT_LAMBDA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SandboxSection {
    pub timeout_s: f64,
    pub parallelism: usize,
    /// Runner command; the test path, project root and timeout are appended.
    pub runner: Vec<String>,
    /// Recorded execution results to replay instead of running the sandbox.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub canned: Option<PathBuf>,
}

impl Default for SandboxSection {
    fn default() -> Self {
        Self {
            timeout_s: crate::coverage::DEFAULT_TIMEOUT_S,
            parallelism: 1,
            runner: vec!["python3".to_string(), "-m".to_string(), "typeforge_runner".to_string()],
            canned: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub project_root: PathBuf,
    /// Where generated tests are written; defaults to `<out_dir>/tests`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_root: Option<PathBuf>,
    pub rounds: u32,
    pub llm: LlmSection,
    pub retrieval: RetrievalSection,
    pub sandbox: SandboxSection,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cassette_path: Option<PathBuf>,
    /// Artifact directory; defaults to `<project_root>/.typeforge`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Modules to target; empty targets every module.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub focal_modules: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            project_root: PathBuf::new(),
            test_root: None,
            rounds: 3,
            llm: LlmSection::default(),
            retrieval: RetrievalSection::default(),
            sandbox: SandboxSection::default(),
            mode: Mode::default(),
            cassette_path: None,
            out_dir: None,
            focal_modules: Vec::new(),
        }
    }
}

/// Command-line values; each one set here replaces the file's value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub project_root: Option<PathBuf>,
    pub rounds: Option<u32>,
    pub mode: Option<Mode>,
    pub cassette_path: Option<PathBuf>,
    pub budget_tokens: Option<usize>,
    pub parallelism: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

fn anchor(base: &Path, p: &mut PathBuf) {
    if p.is_relative() && !p.as_os_str().is_empty() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Parses by extension: `.json` as JSON, anything else as TOML. Relative
    /// paths are anchored at the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let mut config: RunConfig = if is_json {
            serde_json::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), reason: e.to_string() })?
        } else {
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), reason: e.to_string() })?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        anchor(base, &mut config.project_root);
        for p in [&mut config.test_root, &mut config.cassette_path, &mut config.out_dir, &mut config.sandbox.canned].into_iter().flatten() {
            anchor(base, p);
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.project_root {
            self.project_root = v.clone();
        }
        if let Some(v) = o.rounds {
            self.rounds = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = &o.cassette_path {
            self.cassette_path = Some(v.clone());
        }
        if let Some(v) = o.budget_tokens {
            self.llm.budget_tokens = v;
        }
        if let Some(v) = o.parallelism {
            self.sandbox.parallelism = v;
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = Some(v.clone());
        }
    }

    /// Endpoint and model from the environment; blank values are ignored.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let get = |k: &str| lookup(k).filter(|v| !v.trim().is_empty());
        if let Some(v) = get(ENDPOINT_ENV) {
            self.llm.endpoint = v;
        }
        if let Some(v) = get(MODEL_ENV) {
            self.llm.model = v;
        }
    }

    /// File (if any), then environment, then overrides, then validation.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok());
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.project_root.as_os_str().is_empty() {
            return Err(ConfigError::Missing("project_root"));
        }
        if !self.project_root.is_dir() {
            return Err(ConfigError::Invalid { field: "project_root", reason: format!("{} is not a directory", self.project_root.display()) });
        }
        if self.rounds < 1 {
            return Err(ConfigError::Invalid { field: "rounds", reason: "must be at least 1".into() });
        }
        if !(0.0..=2.0).contains(&self.llm.temperature) {
            return Err(ConfigError::Invalid { field: "llm.temperature", reason: "must lie in [0, 2]".into() });
        }
        if !(0.0..=1.0).contains(&self.retrieval.lambda) {
            return Err(ConfigError::Invalid { field: "retrieval.lambda", reason: "must lie in [0, 1]".into() });
        }
        if self.retrieval.k == 0 {
            return Err(ConfigError::Invalid { field: "retrieval.k", reason: "must be at least 1".into() });
        }
        if self.sandbox.timeout_s <= 0.0 {
            return Err(ConfigError::Invalid { field: "sandbox.timeout_s", reason: "must be positive".into() });
        }
        match (self.mode, &self.cassette_path) {
            (Mode::Replay, None) => return Err(ConfigError::Missing("cassette_path")),
            (Mode::Replay, Some(p)) if !p.is_file() => {
                return Err(ConfigError::Invalid { field: "cassette_path", reason: format!("{} does not exist", p.display()) })
            }
            (Mode::Record, None) => return Err(ConfigError::Missing("cassette_path")),
            _ => {}
        }
        if self.mode == Mode::Live && self.sandbox.runner.is_empty() && self.sandbox.canned.is_none() {
            return Err(ConfigError::Invalid { field: "sandbox.runner", reason: "empty command".into() });
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| self.project_root.join(DEFAULT_OUT_DIR))
    }

    pub fn test_root(&self) -> PathBuf {
        self.test_root.clone().unwrap_or_else(|| self.out_dir().join("tests"))
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            rounds: self.rounds,
            budget: self.llm.budget_tokens,
            k: self.retrieval.k,
            lambda: self.retrieval.lambda,
            parallelism: self.sandbox.parallelism.max(1),
            focal_modules: self.focal_modules.clone(),
            ..GenerationConfig::default()
        }
    }

    /// Fully resolved configuration, as echoed at the start of a run.
    pub fn echo(&self) -> String {
        let mut resolved = self.clone();
        resolved.out_dir = Some(self.out_dir());
        resolved.test_root = Some(self.test_root());
        toml::to_string(&resolved).expect("config serializes")
    }
}
