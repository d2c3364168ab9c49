//! Configuration-driven front end for `qfilter`.

pub mod config;
pub mod experiment;
pub mod output;

use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

use config::{ConfigError, RunConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INVALID_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid model: {0}")]
    Model(qfilter_core::Error),
    #[error("numerical failure: {0}")]
    Numerical(qfilter_core::Error),
    #[error("{0}")]
    Io(String),
}

impl From<qfilter_core::Error> for RunError {
    fn from(e: qfilter_core::Error) -> Self {
        if is_numerical(&e) {
            Self::Numerical(e)
        } else {
            Self::Model(e)
        }
    }
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Model(_) => EXIT_INVALID_CONFIG,
            Self::Numerical(_) => EXIT_NUMERICAL,
            Self::Io(_) => EXIT_FAILURE,
        }
    }
}

fn is_numerical(e: &qfilter_core::Error) -> bool {
    use qfilter_core::Error::*;
    matches!(
        e,
        BlowUp { .. } | DegenerateTrajectory { .. } | NonPositiveWeight { .. } | NonConvergence { .. } | ZeroProbabilityBranch { .. }
    )
}

/// What a finished run wrote.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Assembles the model, writes `manifest.json`, runs the mode and writes the
/// time series and `summary.json`. Trajectories that fail numerically are
/// listed in the summary and turn the result into [`RunError::Numerical`].
pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let assembly = experiment::assemble(cfg)?;
    let dir = cfg.out_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
    let manifest = json!({
        "config": cfg.to_map(),
        "derived": experiment::derived(cfg, &assembly),
        "seed": cfg.seed,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let mut files = vec![dir.join("manifest.json")];
    output::write_json(&files[0], &manifest)?;
    let out = experiment::run_mode(cfg, &assembly)?;
    if let Some(table) = &out.table {
        files.push(output::write_table(&dir, "trajectories", table, cfg.format)?);
    }
    let status = if out.failures.is_empty() { "ok" } else { "partial" };
    let failed: Vec<_> = out
        .failures
        .iter()
        .map(|(k, e)| json!({ "trajectory": k, "error": e.to_string() }))
        .collect();
    let summary = json!({
        "mode": cfg.mode.to_string(),
        "status": status,
        "trajectories": cfg.trajectories,
        "failed": failed,
        "results": out.summary,
    });
    let path = dir.join("summary.json");
    output::write_json(&path, &summary)?;
    files.push(path);
    if let Some((_, e)) = out.failures.into_iter().next() {
        return Err(RunError::from(e));
    }
    Ok(RunReport { out_dir: dir, files })
}
