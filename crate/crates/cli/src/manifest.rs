use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use cnf_core::io::{atomic_write, sha256_file};

use crate::config::{ExperimentConfig, Override};
use crate::error::CliResult;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// Record of one command invocation: what went in, what came out.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub args: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub overrides: Vec<Override>,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub status: RunStatus,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub error: Option<String>,
    /// Command-specific details.
    pub extra: serde_json::Value,
    #[serde(skip)]
    path: PathBuf,
    #[serde(skip)]
    clock: Option<Instant>,
}

impl RunManifest {
    /// Starts a manifest and writes it to `path` with status `running`.
    pub fn begin(command: &str, path: &Path, cfg: &ExperimentConfig, seed: u64) -> CliResult<Self> {
        let m = Self {
            command: command.into(),
            version: VERSION.into(),
            args: BTreeMap::new(),
            config: cfg.resolved(),
            overrides: cfg.overrides(),
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            status: RunStatus::Running,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            wall_clock_secs: 0.0,
            error: None,
            extra: serde_json::Value::Null,
            path: path.to_path_buf(),
            clock: Some(Instant::now()),
        };
        m.write()?;
        Ok(m)
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) {
        self.args.insert(key.into(), value.to_string());
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> CliResult<()> {
        self.outputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn write(&self) -> CliResult<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        atomic_write(&self.path, json.as_bytes())?;
        Ok(())
    }

    fn close(mut self, status: RunStatus, error: Option<String>) -> CliResult<()> {
        self.status = status;
        self.error = error;
        self.wall_clock_secs = self.clock.map(|c| c.elapsed().as_secs_f64()).unwrap_or(0.0);
        self.write()
    }

    pub fn finish(self) -> CliResult<()> {
        self.close(RunStatus::Complete, None)
    }

    pub fn fail(self, msg: &str) -> CliResult<()> {
        self.close(RunStatus::Failed, Some(msg.into()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m: Self = serde_json::from_str(&text)
            .map_err(|e| crate::error::CliError::Runtime(format!("bad manifest {}: {e}", path.display())))?;
        m.path = path.to_path_buf();
        Ok(m)
    }
}

/// `<out>.manifest.json` next to the primary output.
pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

/// `<out>.<suffix>`.
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}
