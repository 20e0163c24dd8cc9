//! Experiment orchestration for the `gentest` command.

pub mod config;
pub mod grid;
pub mod pipeline;

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

pub use config::{ConfigError, RunConfig};
pub use grid::{emit_image_grid, image_grid};
pub use pipeline::{Context, Stage, FAILED_MARKER, RESOLVED_CONFIG_FILE, SUMMARY_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Stage(Stage),
    FullExperiment,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Stage(s) => s.name(),
            Command::FullExperiment => "full-experiment",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "full-experiment" {
            Ok(Command::FullExperiment)
        } else {
            s.parse().map(Command::Stage)
        }
    }
}

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Stage { stage: Stage, source: gentest_core::Error },
    /// Failure outside any stage, e.g. writing the summary.
    Output(gentest_core::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Stage { .. } | RunError::Output(_) => 2,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "config error: {e}"),
            RunError::Stage { stage, source } => write!(f, "stage {stage} failed: {source}"),
            RunError::Output(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

fn io_err(path: &Path, e: std::io::Error) -> RunError {
    RunError::Output(gentest_core::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Stages `command` runs, honouring `resume_from` for `full-experiment`.
pub fn plan(command: Command, resume_from: Option<Stage>) -> Result<Vec<Stage>, ConfigError> {
    match (command, resume_from) {
        (Command::Stage(s), None) => Ok(vec![s]),
        (Command::Stage(_), Some(s)) => Err(ConfigError::InvalidValue {
            key: "--stage".into(),
            value: s.name().into(),
            reason: "only full-experiment can resume from a stage".into(),
        }),
        (Command::FullExperiment, None) => Ok(Stage::EXPERIMENT.to_vec()),
        (Command::FullExperiment, Some(s)) => {
            let start = Stage::EXPERIMENT.iter().position(|&x| x == s).ok_or_else(|| {
                ConfigError::InvalidValue {
                    key: "--stage".into(),
                    value: s.name().into(),
                    reason: "not part of full-experiment".into(),
                }
            })?;
            Ok(Stage::EXPERIMENT[start..].to_vec())
        }
    }
}

/// Loads the config, runs the planned stages and writes the summary. A
/// failing stage leaves a `FAILED` marker naming it.
pub fn run(command: Command, config: &Path, resume_from: Option<Stage>, jobs: usize) -> Result<Context, RunError> {
    let cfg = RunConfig::load(config).map_err(RunError::Config)?;
    let stages = plan(command, resume_from).map_err(RunError::Config)?;
    let out = cfg.output.clone();
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| io_err(&marker, e))?;
    }
    let resolved = out.join(RESOLVED_CONFIG_FILE);
    fs::write(&resolved, cfg.to_text(".")).map_err(|e| io_err(&resolved, e))?;

    let mut ctx = Context::new(cfg, jobs).map_err(RunError::Output)?;
    let mut failure = None;
    for stage in stages {
        if let Err(source) = ctx.run_stage(stage) {
            let text = format!("stage = {stage}\nerror = {source}\n");
            fs::write(&marker, text).map_err(|e| io_err(&marker, e))?;
            failure = Some(RunError::Stage { stage, source });
            break;
        }
    }
    write_summary(&ctx, command, failure.as_ref())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(ctx),
    }
}

fn write_summary(ctx: &Context, command: Command, failure: Option<&RunError>) -> Result<(), RunError> {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut s = format!(
        "timestamp = {stamp}\ncommand = {}\nstatus = {}\nconfig = {RESOLVED_CONFIG_FILE}\n",
        command.name(),
        if failure.is_some() { "failed" } else { "ok" }
    );
    for (k, v) in ctx.cfg.entries() {
        let v = if k == "io.output" { ".".to_string() } else { v };
        s.push_str(&format!("config.{k} = {v}\n"));
    }
    for (k, v) in &ctx.results {
        s.push_str(&format!("result.{k} = {v}\n"));
    }
    if let Some(e) = failure {
        s.push_str(&format!("error = {e}\n"));
    }
    let path = ctx.cfg.output.join(SUMMARY_FILE);
    fs::write(&path, s).map_err(|e| io_err(&path, e))
}
