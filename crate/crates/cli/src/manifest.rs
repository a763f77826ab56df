use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use semiflow::config::{ConfigError, FlatMap, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub manifest: PathBuf,
    pub metrics: PathBuf,
    pub best: PathBuf,
    pub morphisms: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Artifacts {
            manifest: dir.join("manifest.json"),
            metrics: dir.join("metrics.csv"),
            best: dir.join("best.json"),
            morphisms: dir.join("morphisms.jsonl"),
        }
    }
}

/// Written before a run starts; `config` alone reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: FlatMap,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
    pub outputs: Artifacts,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: &str, cfg: &RunConfig, outputs: Artifacts) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.to_flat(),
            started_unix: now(),
            finished_unix: None,
            outputs,
        }
    }

    pub fn finish(&mut self) {
        self.finished_unix = Some(now());
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("manifest serializes"))
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default().set("dynamics.kappa", serde_json::json!(0.1)).unwrap();
        let mut m = RunManifest::start("search", &cfg, Artifacts::in_dir(dir.path()));
        m.finish();
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        let back = RunManifest::read(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(RunConfig::from_flat(&back.config).unwrap(), cfg);
    }
}
