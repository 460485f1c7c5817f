use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// Record written next to every run's outputs. The embedded config, also
/// written as `run_config.toml`, reproduces the run when passed back with
/// `--config`.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
    pub config: &'a RunConfig,
}

pub struct RunClock {
    start: Instant,
    started_unix_s: u64,
}

impl RunClock {
    pub fn start() -> Self {
        Self {
            start: Instant::now(),
            started_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_manifest(
    dir: &Path,
    command: &'static str,
    cfg: &RunConfig,
    clock: RunClock,
    mut outputs: Vec<PathBuf>,
) -> Result<PathBuf, CliError> {
    let config_path = dir.join("run_config.toml");
    write_text(&config_path, &cfg.to_toml()?)?;
    outputs.push(config_path);
    let manifest = Manifest {
        tool: "stcar",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        started_unix_s: clock.started_unix_s,
        wall_time_s: clock.start.elapsed().as_secs_f64(),
        outputs,
        config: cfg,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Usage(format!("cannot serialize manifest: {e}")))?;
    write_text(&path, &(text + "\n"))?;
    Ok(path)
}
