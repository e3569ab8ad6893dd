//! `typeforge` command-line driver.
//!
//! Exit codes: 0 on success, 1 on configuration or usage errors, 2 when a
//! pipeline stage fails.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use typeforge::config::{ConfigError, Mode, Overrides, RunConfig};
use typeforge::pipeline::{self, Artifacts, Backends, PipelineError, RunReport, Stage};

#[derive(Debug, Parser)]
#[command(name = "typeforge", version, about = "Coverage-guided unit test generation for Python projects")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Run settings shared by every subcommand; each flag replaces the config file's value.
#[derive(Debug, Args)]
struct RunArgs {
    /// TOML or JSON configuration file (chosen by extension).
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Root of the Python project under test.
    #[arg(long)]
    project: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<u32>,
    /// live, replay or record.
    #[arg(long)]
    mode: Option<String>,
    /// Shorthand for `--mode record`.
    #[arg(long, conflicts_with = "mode")]
    record: bool,
    /// Recorded model replies, read in replay mode and written in record mode.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Prompt budget in tokens.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Debug, Args)]
struct OutDir {
    /// Artifact directory (default `<project>/.typeforge`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse the project and write the code index.
    Index {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutDir,
    },
    /// Build the call graph and write it as Graphviz.
    Graph {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutDir,
    },
    /// Summarize every function and write the summaries as JSON.
    Summarize {
        #[command(flatten)]
        run: RunArgs,
        /// Summaries file (default `<project>/.typeforge/summaries.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the argument plans for one function as JSON.
    Resolve {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutDir,
        /// Qualified name of the function.
        #[arg(long)]
        function: String,
    },
    /// Run the full generation loop and print the coverage table.
    Generate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutDir,
    },
    /// Print the report of the last run.
    Report {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        out: OutDir,
        /// Print the coverage table instead of JSON.
        #[arg(long)]
        table: bool,
    },
}

enum Failure {
    Config(String),
    Pipeline(PipelineError),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(format!("configuration error: {e}"))
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => f.write_str(m),
            Failure::Pipeline(e) => write!(f, "{e}"),
        }
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Pipeline(_) => 2,
        }
    }
}

fn resolve_config(run: &RunArgs, out: Option<&Path>) -> Result<RunConfig, Failure> {
    let mode = match (&run.mode, run.record) {
        (_, true) => Some(Mode::Record),
        (Some(m), false) => Some(Mode::from_str(m)?),
        (None, false) => None,
    };
    let overrides = Overrides {
        project_root: run.project.clone(),
        rounds: run.rounds,
        mode,
        cassette_path: run.cassette.clone(),
        budget_tokens: run.budget,
        parallelism: run.parallelism,
        out_dir: out.map(Path::to_path_buf),
    };
    let config = RunConfig::resolve(run.config.as_deref(), &overrides)?;
    eprintln!("# resolved configuration\n{}", config.echo());
    Ok(config)
}

fn setup_error(e: impl fmt::Display) -> PipelineError {
    PipelineError::new(Stage::Setup, e)
}

/// Writes to stdout; a reader that hung up early is not an error.
fn emit(text: &str) {
    let mut stdout = io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush());
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::new(Stage::Report, e))?;
    emit(&format!("{text}\n"));
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Index { run, out } => {
            let config = resolve_config(&run, out.out.as_deref())?;
            let index = pipeline::run_index(&config)?;
            let path = Artifacts::new(config.out_dir()).index();
            pipeline::write_json(&path, &index, Stage::Index)?;
            emit(&format!(
                "{} units in {} files, {} diagnostics; written to {}\n",
                index.units.len(),
                index.files.len(),
                index.diagnostics.len(),
                path.display()
            ));
        }
        Command::Graph { run, out } => {
            let config = resolve_config(&run, out.out.as_deref())?;
            let index = pipeline::run_index(&config)?;
            let cg = pipeline::run_graph(&index);
            let path = Artifacts::new(config.out_dir()).callgraph();
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| PipelineError::new(Stage::Graph, e))?;
            }
            std::fs::write(&path, cg.to_dot()).map_err(|e| PipelineError::new(Stage::Graph, e))?;
            emit(&format!(
                "{} nodes, {} edges, {} broken to remove cycles; written to {}\n",
                cg.nodes.len(),
                cg.edges.len(),
                cg.broken_edges.len(),
                path.display()
            ));
        }
        Command::Summarize { run, out } => {
            let config = resolve_config(&run, None)?;
            let backends = Backends::from_config(&config)?;
            let index = pipeline::run_index(&config)?;
            let cg = pipeline::run_graph(&index);
            let summaries = pipeline::run_summarize(&config, &backends.llm, &index, &cg);
            let artifacts = Artifacts::new(config.out_dir());
            let path = out.unwrap_or_else(|| artifacts.summaries());
            pipeline::write_json(&path, &summaries, Stage::Summarize)?;
            backends.flush(&artifacts)?;
            emit(&format!("{} summaries written to {}\n", summaries.summaries.len(), path.display()));
        }
        Command::Resolve { run, out, function } => {
            let config = resolve_config(&run, out.out.as_deref())?;
            let backends = Backends::from_config(&config)?;
            let plans = pipeline::run_resolve(&config, &backends.llm, &function)?;
            backends.flush(&Artifacts::new(config.out_dir()))?;
            print_json(&plans)?;
        }
        Command::Generate { run, out } => {
            let config = resolve_config(&run, out.out.as_deref())?;
            let backends = Backends::from_config(&config)?;
            let report = pipeline::run_generate(&config, &backends)?;
            emit(&report.table());
            emit(&format!("report written to {}\n", Artifacts::new(config.out_dir()).report().display()));
        }
        Command::Report { run, out, table } => {
            let dir = match out.out {
                Some(dir) => dir,
                None => resolve_config(&run, None)?.out_dir(),
            };
            let path = Artifacts::new(&dir).report();
            if !path.is_file() {
                return Err(setup_error(format!("no report at {}; run `typeforge generate` first", path.display())).into());
            }
            let report = RunReport::load(&path)?;
            if table {
                emit(&report.table());
            } else {
                print_json(&report)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
