//! Run configuration with flat dotted keys.
//!
//! A configuration file is a JSON object such as
//! `{"dynamics.kappa": 4.0, "data.source": "two_spirals"}`. Keys that the
//! defaults do not define are rejected. Layers are applied in order with
//! [`RunConfig::overlay`], so callers decide precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::data::{self, DataError, Dataset};
use crate::dynamics::{DynamicsParams, TrainRule};
use crate::morphisms::{Constraints, MorphKind, MorphMix};
use crate::search::{FinalConfig, Mode, PretrainConfig, SearchConfig};
use crate::semigraph::Topology;

pub type FlatMap = BTreeMap<String, Value>;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value for {key:?}: {msg}")]
    BadValue { key: String, msg: String },
    #[error("missing config key {0:?}")]
    Missing(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Blobs,
    TwoSpirals,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub source: Option<DataSource>,
    pub n: usize,
    /// Feature dimension of blobs.
    pub dim: usize,
    pub classes: usize,
    pub spread: f64,
    pub noise: f64,
    /// Dataset seed; the run seed when absent.
    pub seed: Option<u64>,
    pub path: Option<PathBuf>,
    pub label_column: usize,
    pub has_header: bool,
    pub standardize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: None,
            n: 2000,
            dim: 2,
            classes: 3,
            spread: 0.5,
            noise: 0.1,
            seed: None,
            path: None,
            label_column: 0,
            has_header: false,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSection {
    pub particles: usize,
    pub n_neigh: usize,
    pub epochs_neigh: usize,
    /// Cycle budget; the mode's default when absent.
    pub n_steps: Option<f64>,
    pub n_nm: usize,
    pub lam_start: f64,
    pub lam_final: f64,
    pub batch_train: usize,
    pub batch_val: usize,
    pub val_decay: f64,
    pub topology: Topology,
    pub size_threshold: usize,
    pub timeout_cycles: usize,
    pub init_widths: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub deepen: f64,
    pub widen: f64,
    pub add_skip: f64,
    pub narrow: f64,
    pub remove_layer: f64,
    pub remove_skip: f64,
}

impl MixWeights {
    fn from_mix(mix: &MorphMix) -> Self {
        let w = |k: MorphKind| mix.weights.iter().filter(|(m, _)| *m == k).map(|(_, w)| w).sum();
        MixWeights {
            deepen: w(MorphKind::Deepen),
            widen: w(MorphKind::Widen),
            add_skip: w(MorphKind::AddSkip),
            narrow: w(MorphKind::Narrow),
            remove_layer: w(MorphKind::RemoveLayer),
            remove_skip: w(MorphKind::RemoveSkip),
        }
    }

    pub fn to_mix(self) -> MorphMix {
        let all = [
            (MorphKind::Deepen, self.deepen),
            (MorphKind::Widen, self.widen),
            (MorphKind::AddSkip, self.add_skip),
            (MorphKind::Narrow, self.narrow),
            (MorphKind::RemoveLayer, self.remove_layer),
            (MorphKind::RemoveSkip, self.remove_skip),
        ];
        MorphMix { weights: all.into_iter().filter(|(_, w)| *w != 0.0).collect() }
    }
}

/// Sweep for the frozen-value dynamics bench.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Node values; node 0 is the center.
    pub values: Vec<f64>,
    pub topology: Topology,
    pub kappa: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub particles: usize,
    pub steps: usize,
    pub tau: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            values: vec![0.3, 0.1],
            topology: Topology::Complete,
            kappa: vec![1.0],
            beta: vec![1.0],
            gamma: vec![0.0],
            particles: 10_000,
            steps: 2000,
            tau: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub workers: usize,
    pub strict: bool,
    pub data: DataConfig,
    pub search: SearchSection,
    /// `dynamics.order` only affects the bench; search modes fix the order.
    pub dynamics: DynamicsParams,
    pub train: TrainRule,
    pub constraints: Constraints,
    pub morph: MixWeights,
    pub pretrain: PretrainConfig,
    #[serde(rename = "final")]
    pub final_train: FinalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SearchConfig::default();
        RunConfig {
            seed: s.seed,
            mode: s.mode,
            workers: s.workers,
            strict: s.strict,
            data: DataConfig::default(),
            search: SearchSection {
                particles: s.particles,
                n_neigh: s.n_neigh,
                epochs_neigh: s.epochs_neigh,
                n_steps: None,
                n_nm: s.n_nm,
                lam_start: s.lam_start,
                lam_final: s.lam_final,
                batch_train: s.batch_train,
                batch_val: s.batch_val,
                val_decay: s.val_decay,
                topology: s.topology,
                size_threshold: s.size_threshold,
                timeout_cycles: s.timeout_cycles,
                init_widths: s.init_widths.clone(),
            },
            dynamics: s.dynamics.clone(),
            train: s.rule,
            constraints: s.constraints,
            morph: MixWeights::from_mix(&s.mix),
            pretrain: s.pretrain,
            final_train: s.final_train,
            bench: BenchConfig::default(),
        }
    }
}

/// Dotted-key view of a JSON value; arrays and scalars are leaves.
pub fn flatten(v: &Value) -> FlatMap {
    fn walk(prefix: &str, v: &Value, out: &mut FlatMap) {
        match v {
            Value::Object(m) if !m.is_empty() || prefix.is_empty() => {
                for (k, child) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, child, out);
                }
            }
            leaf => {
                out.insert(prefix.to_string(), leaf.clone());
            }
        }
    }
    let mut out = FlatMap::new();
    walk("", v, &mut out);
    out
}

pub fn unflatten(flat: &FlatMap) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let mut parts = key.split('.').peekable();
        while let Some(p) = parts.next() {
            if parts.peek().is_none() {
                node.insert(p.to_string(), v.clone());
            } else {
                let entry = node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
                if !entry.is_object() {
                    *entry = Value::Object(Map::new());
                }
                node = entry.as_object_mut().expect("object");
            }
        }
    }
    Value::Object(root)
}

/// Parses a config file body. Nested objects are accepted and flattened.
pub fn parse_flat(text: &str) -> Result<FlatMap, ConfigError> {
    let v: Value = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if !v.is_object() {
        return Err(ConfigError::Parse("top level must be a JSON object".into()));
    }
    Ok(flatten(&v))
}

pub fn read_flat(path: &Path) -> Result<FlatMap, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_flat(&text)
}

/// `key=value`; the value is read as JSON and falls back to a plain string.
pub fn parse_assignment(s: &str) -> Result<(String, Value), ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Parse(format!("expected key=value, got {s:?}")))?;
    let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), v))
}

impl RunConfig {
    pub fn to_flat(&self) -> FlatMap {
        flatten(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn from_flat(flat: &FlatMap) -> Result<Self, ConfigError> {
        RunConfig::default().overlay(flat)
    }

    /// Applies `layer` on top of `self`.
    pub fn overlay(&self, layer: &FlatMap) -> Result<Self, ConfigError> {
        let base = self.to_flat();
        let mut merged = base.clone();
        for (k, v) in layer {
            if !base.contains_key(k) {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
            merged.insert(k.clone(), v.clone());
        }
        match serde_json::from_value(unflatten(&merged)) {
            Ok(cfg) => Ok(cfg),
            Err(e) => {
                for (k, v) in layer {
                    let mut one = base.clone();
                    one.insert(k.clone(), v.clone());
                    if let Err(err) = serde_json::from_value::<RunConfig>(unflatten(&one)) {
                        return Err(ConfigError::BadValue { key: k.clone(), msg: err.to_string() });
                    }
                }
                Err(ConfigError::Parse(e.to_string()))
            }
        }
    }

    pub fn set(&self, key: &str, v: Value) -> Result<Self, ConfigError> {
        self.overlay(&FlatMap::from([(key.to_string(), v)]))
    }

    pub fn search_config(&self) -> SearchConfig {
        let s = &self.search;
        SearchConfig {
            mode: self.mode,
            particles: s.particles,
            n_neigh: s.n_neigh,
            epochs_neigh: s.epochs_neigh,
            n_steps: s.n_steps.unwrap_or_else(|| self.mode.default_n_steps()),
            n_nm: s.n_nm,
            lam_start: s.lam_start,
            lam_final: s.lam_final,
            dynamics: self.dynamics.clone(),
            rule: self.train,
            batch_train: s.batch_train,
            batch_val: s.batch_val,
            val_decay: s.val_decay,
            constraints: self.constraints,
            mix: self.morph.to_mix(),
            topology: s.topology,
            size_threshold: s.size_threshold,
            timeout_cycles: s.timeout_cycles,
            init_widths: s.init_widths.clone(),
            pretrain: self.pretrain,
            final_train: self.final_train,
            seed: self.seed,
            workers: self.workers,
            strict: self.strict,
        }
    }

    /// Builds the configured dataset with its splits.
    pub fn dataset(&self) -> Result<Dataset, ConfigError> {
        let d = &self.data;
        let seed = d.seed.unwrap_or(self.seed);
        let mut ds = match d.source.ok_or_else(|| ConfigError::Missing("data.source".into()))? {
            DataSource::Blobs => data::make_blobs(d.n, d.dim, d.classes, d.spread, seed)?,
            DataSource::TwoSpirals => data::two_spirals(d.n, d.noise, seed)?,
            DataSource::Csv => {
                let path = d.path.as_ref().ok_or_else(|| ConfigError::Missing("data.path".into()))?;
                data::load_csv(path, d.label_column, d.has_header)?.with_default_splits(seed)
            }
        };
        if d.standardize {
            ds.standardize();
        }
        Ok(ds)
    }
}
