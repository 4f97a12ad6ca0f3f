use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use contestable::jointnet::Task;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{GatewayError, GatewayResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: PathBuf,
    pub target: String,
    pub task: Task,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categories: Option<PathBuf>,
    pub standardized: bool,
    pub rows: usize,
    pub columns: usize,
    pub dropped_rows: usize,
}

/// Record of one command invocation, written next to its artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSource>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl RunManifest {
    pub fn start(command: &str, argv: Vec<String>, config: &RunConfig) -> Self {
        let now = Utc::now();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            argv,
            seed: config.train.seed,
            config: config.clone(),
            data: None,
            extra: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            started_at: now,
            finished_at: now,
        }
    }

    pub fn artifact(&mut self, name: &str, path: impl Into<PathBuf>) {
        self.artifacts.insert(name.to_string(), path.into());
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> GatewayResult<PathBuf> {
        self.finished_at = Utc::now();
        let path = dir.join("manifest.json");
        write_json(&path, &self)?;
        log::info!("manifest written to {}", path.display());
        Ok(path)
    }

    pub fn read(path: &Path) -> GatewayResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::file(path, e))?;
        serde_json::from_str(&text).map_err(|e| contestable::Error::Json(e).into())
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> GatewayResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| GatewayError::file(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(contestable::Error::Json)?;
    std::fs::write(path, text + "\n").map_err(|e| GatewayError::file(path, e))
}
