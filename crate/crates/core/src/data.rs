//! Datasets, deterministic splits and mini-batch streams.
//!
//! The training stream and the validation stream are always built over
//! disjoint index sets; validation batches only ever feed the mutation step.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_for, tag, Rng as StreamRng};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad dataset parameters: {0}")]
    BadParams(String),
    #[error("parse error at line {line}, column {column}: {msg}")]
    ParseError { line: usize, column: usize, msg: String },
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("non-integer label {value:?} at line {line}")]
    NonIntegerLabel { line: usize, value: String },
    #[error("split {split} has {have} rows, need at least {need}")]
    SplitTooSmall { split: &'static str, have: usize, need: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Shuffled 70/15/15-style partition of `0..n`.
    pub fn random(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Splits {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_for(seed, &[tag::SPLIT]));
        let n_train = (n as f64 * train_frac).round() as usize;
        let n_val = ((n as f64 * val_frac).round() as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Splits { train: idx, val, test }
    }

    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn is_disjoint(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.train.iter().chain(&self.val).chain(&self.test).all(|i| seen.insert(*i))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Row-major `n x dim`.
    pub features: Vec<f64>,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub splits: Splits,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<usize>, n_classes: usize) -> Result<Self, DataError> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(DataError::BadParams(format!(
                "{} feature values do not form rows of width {dim} for {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(DataError::BadParams(format!("label {bad} >= n_classes {n_classes}")));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(DataError::BadParams("non-finite feature".into()));
        }
        Ok(Dataset { features, dim, labels, n_classes, splits: Splits::default() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Assigns the default 70/15/15 split.
    pub fn with_default_splits(mut self, seed: u64) -> Self {
        self.splits = Splits::random(self.len(), 0.70, 0.15, seed);
        self
    }

    /// Copies rows into contiguous buffers.
    pub fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(idx.len() * self.dim);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    /// Standardizes every feature with the mean and deviation of the training split.
    pub fn standardize(&mut self) {
        let rows: &[usize] = if self.splits.train.is_empty() { &[] } else { &self.splits.train };
        let all: Vec<usize>;
        let rows = if rows.is_empty() {
            all = (0..self.len()).collect();
            &all[..]
        } else {
            rows
        };
        let m = rows.len().max(1) as f64;
        for j in 0..self.dim {
            let mean = rows.iter().map(|&i| self.features[i * self.dim + j]).sum::<f64>() / m;
            let var = rows.iter().map(|&i| (self.features[i * self.dim + j] - mean).powi(2)).sum::<f64>() / m;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for i in 0..self.len() {
                let x = &mut self.features[i * self.dim + j];
                *x = (*x - mean) / sd;
            }
        }
    }
}

/// Isotropic Gaussian clusters with centers drawn uniformly in `[-4, 4]^d`.
/// Labels cycle through the classes, so class sizes differ by at most one.
pub fn make_blobs(n: usize, d: usize, n_classes: usize, spread: f64, seed: u64) -> Result<Dataset, DataError> {
    if n_classes == 0 || n < n_classes || d == 0 || !(spread >= 0.0) {
        return Err(DataError::BadParams(format!(
            "make_blobs needs n >= n_classes > 0, d > 0, spread >= 0 (n={n}, classes={n_classes}, d={d}, spread={spread})"
        )));
    }
    let mut rng = rng_for(seed, &[tag::DATA]);
    let centers: Vec<f64> = (0..n_classes * d).map(|_| rng.random_range(-4.0..4.0)).collect();
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % n_classes;
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(centers[c * d + j] + spread * z);
        }
        labels.push(c);
    }
    Ok(Dataset::new(features, d, labels, n_classes)?.with_default_splits(seed))
}

/// Number of turns of each spiral arm.
pub const SPIRAL_TURNS: f64 = 1.5;

/// Noise-free point of arm `class` (0 or 1) at curve parameter `t` in `[0, 1]`.
///
/// The angle runs over `[pi/2, pi/2 + 2 pi SPIRAL_TURNS]` and the radius is
/// `angle / pi`, so adjacent arms are one unit apart. Arm 1 is arm 0 rotated
/// by `pi`.
pub fn spiral_point(t: f64, class: usize) -> [f64; 2] {
    let angle = 0.5 * PI + t * 2.0 * PI * SPIRAL_TURNS;
    let r = angle / PI;
    let phase = if class == 0 { 0.0 } else { PI };
    [r * (angle + phase).cos(), r * (angle + phase).sin()]
}

/// Two interleaved spirals with isotropic Gaussian noise of deviation `noise`.
pub fn two_spirals(n: usize, noise: f64, seed: u64) -> Result<Dataset, DataError> {
    if n == 0 || n % 2 != 0 || !(noise >= 0.0) {
        return Err(DataError::BadParams(format!("two_spirals needs even n > 0 and noise >= 0 (n={n})")));
    }
    let mut rng = rng_for(seed, &[tag::DATA]);
    let mut features = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        // sqrt keeps point density roughly uniform along the arm
        let t: f64 = rng.random::<f64>().sqrt();
        let [x, y] = spiral_point(t, class);
        let (zx, zy): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        features.push(x + noise * zx);
        features.push(y + noise * zy);
        labels.push(class);
    }
    Ok(Dataset::new(features, 2, labels, 2)?.with_default_splits(seed))
}

/// Reads a comma-separated numeric file. `label_column` selects the integer
/// label; every other column is a feature. Row order is preserved; splits are
/// left empty.
pub fn load_csv(path: &Path, label_column: usize, has_header: bool) -> Result<Dataset, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::ParseError { line: 0, column: 0, msg: e.to_string() })?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (k, rec) in reader.records().enumerate() {
        let line = k + 1 + usize::from(has_header);
        let rec = rec.map_err(|e| DataError::ParseError { line, column: 0, msg: e.to_string() })?;
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(DataError::ParseError {
                    line,
                    column: rec.len().min(w) + 1,
                    msg: format!("expected {w} columns, found {}", rec.len()),
                })
            }
            _ => {}
        }
        if label_column >= rec.len() {
            return Err(DataError::ParseError {
                line,
                column: label_column + 1,
                msg: format!("label column {label_column} out of range"),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            if c == label_column {
                let label = cell
                    .parse::<usize>()
                    .map_err(|_| DataError::NonIntegerLabel { line, value: cell.to_string() })?;
                labels.push(label);
            } else {
                let x = cell.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                    DataError::ParseError { line, column: c + 1, msg: format!("not a number: {cell:?}") }
                })?;
                features.push(x);
            }
        }
    }
    let width = width.ok_or(DataError::ParseError { line: 1, column: 0, msg: "empty file".into() })?;
    if width < 2 {
        return Err(DataError::ParseError { line: 1, column: 1, msg: "need a label and at least one feature".into() });
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, width - 1, labels, n_classes)
}

/// Endless shuffled mini-batches over one split. Each epoch is a fresh
/// permutation; the trailing partial batch is dropped.
#[derive(Debug, Clone)]
pub struct BatchStream {
    source: Vec<usize>,
    batch_size: usize,
    rng: StreamRng,
    perm: Vec<usize>,
    cursor: usize,
    epoch: usize,
}

impl BatchStream {
    pub fn new(source: Vec<usize>, batch_size: usize, seed: u64) -> Result<Self, DataError> {
        if batch_size == 0 || source.len() < batch_size {
            return Err(DataError::SplitTooSmall { split: "stream", have: source.len(), need: batch_size.max(1) });
        }
        let mut s = BatchStream {
            perm: source.clone(),
            source,
            batch_size,
            rng: rng_for(seed, &[]),
            cursor: 0,
            epoch: 0,
        };
        s.perm.shuffle(&mut s.rng);
        Ok(s)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.source.len() / self.batch_size
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn source(&self) -> &[usize] {
        &self.source
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor + self.batch_size > self.perm.len() {
            self.perm.copy_from_slice(&self.source);
            self.perm.shuffle(&mut self.rng);
            self.cursor = 0;
            self.epoch += 1;
        }
        let b = self.perm[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        b
    }
}

pub const DEFAULT_TRAIN_BATCH: usize = 64;
pub const DEFAULT_VAL_BATCH: usize = 32;

/// Training stream (batch `s_x`) over the train split and validation stream
/// (batch `s_y`) over the val split.
pub fn streams(dataset: &Dataset, s_x: usize, s_y: usize, seed: u64) -> Result<(BatchStream, BatchStream), DataError> {
    let sp = &dataset.splits;
    if !sp.is_disjoint() {
        return Err(DataError::BadParams("train/val/test splits overlap".into()));
    }
    if sp.train.len() < s_x.max(1) {
        return Err(DataError::SplitTooSmall { split: "train", have: sp.train.len(), need: s_x.max(1) });
    }
    if sp.val.len() < s_y.max(1) {
        return Err(DataError::SplitTooSmall { split: "val", have: sp.val.len(), need: s_y.max(1) });
    }
    let train = BatchStream::new(sp.train.clone(), s_x, crate::rng::derive_seed(seed, &[tag::TRAIN_STREAM]))?;
    let val = BatchStream::new(sp.val.clone(), s_y, crate::rng::derive_seed(seed, &[tag::VAL_STREAM]))?;
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn blobs_balanced_and_deterministic() {
        let a = make_blobs(1000, 3, 4, 0.5, 9).unwrap();
        let b = make_blobs(1000, 3, 4, 0.5, 9).unwrap();
        assert_eq!(a, b);
        for c in 0..4 {
            let k = a.labels.iter().filter(|&&l| l == c).count();
            assert!((249..=251).contains(&k));
        }
        assert!(a.splits.is_disjoint());
        assert_eq!(a.splits.train.len() + a.splits.val.len() + a.splits.test.len(), 1000);
        assert!(make_blobs(3, 2, 4, 1.0, 0).is_err());
    }

    #[test]
    fn noiseless_spirals_lie_on_the_curve() {
        let d = two_spirals(200, 0.0, 4).unwrap();
        for i in 0..d.len() {
            let [x, y] = [d.row(i)[0], d.row(i)[1]];
            let class = d.labels[i];
            // invert: radius gives the angle, then check the direction
            let r = (x * x + y * y).sqrt();
            let angle = r * PI;
            let t = (angle - 0.5 * PI) / (2.0 * PI * SPIRAL_TURNS);
            let p = spiral_point(t, class);
            assert!((p[0] - x).abs() < 1e-9 && (p[1] - y).abs() < 1e-9);
        }
        assert_eq!(two_spirals(200, 0.1, 4).unwrap(), two_spirals(200, 0.1, 4).unwrap());
        assert!(two_spirals(201, 0.1, 4).is_err());
    }

    #[test]
    fn streams_are_disjoint_and_default_sized() {
        let d = make_blobs(1000, 2, 2, 1.0, 1).unwrap();
        let (mut tr, mut va) = streams(&d, DEFAULT_TRAIN_BATCH, DEFAULT_VAL_BATCH, 3).unwrap();
        assert_eq!(tr.batch_size(), 64);
        assert_eq!(va.batch_size(), 32);
        let a: BTreeSet<usize> = tr.source().iter().copied().collect();
        let b: BTreeSet<usize> = va.source().iter().copied().collect();
        assert!(a.is_disjoint(&b));
        for _ in 0..50 {
            assert!(tr.next_batch().iter().all(|i| a.contains(i)));
            assert!(va.next_batch().iter().all(|i| b.contains(i)));
        }
    }

    #[test]
    fn epoch_is_a_permutation() {
        let mut s = BatchStream::new((0..96).collect(), 32, 5).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..96).collect::<Vec<_>>());
        let again: Vec<usize> = s.next_batch();
        assert_eq!(s.epoch(), 1);
        assert_eq!(again.len(), 32);
    }

    #[test]
    fn stream_determinism() {
        let mut a = BatchStream::new((0..100).collect(), 16, 77).unwrap();
        let mut b = BatchStream::new((0..100).collect(), 16, 77).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }

    #[test]
    fn too_small_split() {
        let d = make_blobs(40, 2, 2, 1.0, 1).unwrap();
        assert!(matches!(streams(&d, 64, 32, 0), Err(DataError::SplitTooSmall { split: "train", .. })));
    }

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_well_formed() {
        let f = write("0.5,1.5,0\n-1,2,1\n3,4,1\n");
        let d = load_csv(f.path(), 2, false).unwrap();
        assert_eq!(d.dim, 2);
        assert_eq!(d.labels, vec![0, 1, 1]);
        assert_eq!(d.row(1), &[-1.0, 2.0]);
        let h = write("a,b,y\n1,2,0\n");
        assert_eq!(load_csv(h.path(), 2, true).unwrap().len(), 1);
    }

    #[test]
    fn csv_errors() {
        let bad = write("1,2,0\n1,x,1\n");
        match load_csv(bad.path(), 2, false) {
            Err(DataError::ParseError { line, column, .. }) => assert_eq!((line, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let empty = write("");
        assert!(matches!(load_csv(empty.path(), 0, false), Err(DataError::ParseError { .. })));
        let lab = write("1,2,0.5\n");
        assert!(matches!(load_csv(lab.path(), 2, false), Err(DataError::NonIntegerLabel { line: 1, .. })));
        assert!(matches!(load_csv(Path::new("/nonexistent/x.csv"), 0, false), Err(DataError::MissingFile(_))));
    }

    #[test]
    fn standardize_uses_train_stats() {
        let mut d = make_blobs(300, 2, 3, 1.0, 2).unwrap();
        d.standardize();
        let m: f64 = d.splits.train.iter().map(|&i| d.row(i)[0]).sum::<f64>() / d.splits.train.len() as f64;
        assert!(m.abs() < 1e-12);
    }
}
