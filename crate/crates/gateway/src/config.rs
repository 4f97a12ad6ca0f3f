//! Run configuration: built-in defaults, overridden by a TOML or JSON file,
//! overridden by command-line flags.

use std::path::Path;

use contestable::discovery::{ExtractionConfig, SweepOptions};
use contestable::experiment::NetworkOptions;
use contestable::injector::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{GatewayError, GatewayResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub network: NetworkOptions,
    pub extraction: ExtractionConfig,
    pub sweep: SweepOptions,
}

impl RunConfig {
    /// Reads a TOML (`.toml`) or JSON file. A run manifest is accepted too,
    /// in which case its resolved configuration is used.
    pub fn from_file(path: &Path) -> GatewayResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::file(path, e))?;
        let bad = |message: String| GatewayError::ConfigFile {
            path: path.display().to_string(),
            message,
        };
        let value: Value = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
        };
        let value = match value {
            Value::Object(mut map) if map.contains_key("command") && map.contains_key("config") => map.remove("config").expect("checked"),
            other => other,
        };
        serde_json::from_value(value).map_err(|e| bad(e.to_string()))
    }

    /// Overlays a partial JSON object (as sent by HTTP clients) on `self`.
    pub fn merged(&self, overlay: &Value) -> Result<Self, serde_json::Error> {
        let mut base = serde_json::to_value(self)?;
        merge(&mut base, overlay);
        serde_json::from_value(base)
    }

    pub fn validate(&self) -> GatewayResult<()> {
        self.train.validate()?;
        if !(self.network.input_scale.is_finite() && self.network.input_scale > 0.0) {
            return Err(GatewayError::Usage("network.input_scale must be positive".into()));
        }
        if !(self.extraction.tau.is_finite() && self.extraction.tau >= 0.0) {
            return Err(GatewayError::Usage("extraction.tau must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::io::Write;

    #[test]
    fn toml_file_overrides_defaults() {
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        writeln!(f, "[train]\nmax_steps = 77\n[extraction]\ntau = 0.08").unwrap();
        let cfg = RunConfig::from_file(f.path()).unwrap();
        assert_eq!(cfg.train.max_steps, 77);
        assert_eq!(cfg.train.patience, TrainConfig::default().patience);
        assert_eq!(cfg.extraction.tau, 0.08);
    }

    #[test]
    fn manifest_file_yields_its_config() {
        let mut f = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        write!(f, "{}", json!({"command": "train", "config": {"train": {"seed": 5}}})).unwrap();
        assert_eq!(RunConfig::from_file(f.path()).unwrap().train.seed, 5);
    }

    #[test]
    fn unknown_sections_are_rejected() {
        let mut f = tempfile::Builder::new().suffix(".json").tempfile().unwrap();
        write!(f, "{}", json!({"trian": {}})).unwrap();
        assert!(matches!(RunConfig::from_file(f.path()), Err(GatewayError::ConfigFile { .. })));
    }

    #[test]
    fn overlay_keeps_unmentioned_fields() {
        let base = RunConfig {
            train: TrainConfig {
                max_steps: 300,
                ..TrainConfig::default()
            },
            ..RunConfig::default()
        };
        let merged = base.merged(&json!({"train": {"patience": 7}})).unwrap();
        assert_eq!(merged.train.max_steps, 300);
        assert_eq!(merged.train.patience, 7);
    }
}
