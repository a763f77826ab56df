//! Dense ReLU networks with additive skip connections.
//!
//! Layer `0` is the input, layers `1..=L` are hidden ReLU layers, and the
//! output layer produces logits followed by a softmax. A skip from layer `a`
//! into hidden layer `b > a` adds `alpha * act_a` to the pre-activation of
//! `b`; widths must match and `alpha` is a learnable scalar. Because skips
//! enter before the ReLU, every hidden activation is nonnegative.
//!
//! Parameter layout of the flat vector: for each dense layer (hidden layers
//! then output) the row-major weight matrix followed by its bias, then one
//! scale per skip in declaration order.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Skip {
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub skips: Vec<Skip>,
}

impl NetSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        NetSpec { input_dim, output_dim, hidden, skips: Vec::new() }
    }

    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    /// Width of layer `i` (0 = input, `depth() + 1` = output).
    pub fn width(&self, i: usize) -> usize {
        if i == 0 {
            self.input_dim
        } else if i <= self.hidden.len() {
            self.hidden[i - 1]
        } else {
            self.output_dim
        }
    }

    /// Number of skips entering hidden layer `to`.
    pub fn incoming(&self, to: usize) -> usize {
        self.skips.iter().filter(|s| s.to == to).count()
    }

    /// Whether hidden layer `l` is the source or target of any skip.
    pub fn is_skip_endpoint(&self, l: usize) -> bool {
        self.skips.iter().any(|s| s.from == l || s.to == l)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(NnError::InvalidSpec("input and output dims must be positive".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(NnError::InvalidSpec("hidden widths must be positive".into()));
        }
        for (k, s) in self.skips.iter().enumerate() {
            if s.to == 0 || s.to > self.depth() || s.from >= s.to {
                return Err(NnError::InvalidSpec(format!("skip {k} {:?} out of range", s)));
            }
            if self.width(s.from) != self.width(s.to) {
                return Err(NnError::InvalidSpec(format!("skip {k} joins widths {} and {}", self.width(s.from), self.width(s.to))));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::of(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// Layer-descriptor sequence used in checkpoints.
    pub fn descriptors(&self) -> Vec<LayerDesc> {
        let layout = self.layout();
        let mut out = vec![LayerDesc::Input { dim: self.input_dim }];
        for l in 1..=self.depth() {
            out.push(LayerDesc::Dense { width: self.width(l) });
            for (k, s) in self.skips.iter().enumerate() {
                if s.to == l {
                    out.push(LayerDesc::Skip { from: s.from, scale_param: layout.skip_offset + k });
                }
            }
            out.push(LayerDesc::Relu);
        }
        out.push(LayerDesc::Dense { width: self.output_dim });
        out.push(LayerDesc::Softmax);
        out
    }

    pub fn from_descriptors(desc: &[LayerDesc]) -> Result<NetSpec, NnError> {
        let bad = |m: &str| NnError::InvalidSpec(format!("descriptor sequence: {m}"));
        let mut it = desc.iter().peekable();
        let input_dim = match it.next() {
            Some(LayerDesc::Input { dim }) => *dim,
            _ => return Err(bad("must start with input")),
        };
        let mut widths = Vec::new();
        let mut skips: Vec<(usize, Skip)> = Vec::new();
        loop {
            let width = match it.next() {
                Some(LayerDesc::Dense { width }) => *width,
                _ => return Err(bad("expected dense layer")),
            };
            match it.peek() {
                Some(LayerDesc::Softmax) => {
                    it.next();
                    if it.next().is_some() {
                        return Err(bad("trailing layers after softmax"));
                    }
                    let mut spec = NetSpec { input_dim, output_dim: width, hidden: widths, skips: Vec::new() };
                    skips.sort_by_key(|(p, _)| *p);
                    spec.skips = skips.iter().map(|(_, s)| *s).collect();
                    spec.validate()?;
                    let layout = spec.layout();
                    for (k, (p, _)) in skips.iter().enumerate() {
                        if *p != layout.skip_offset + k {
                            return Err(bad("skip scale_param does not match the layout"));
                        }
                    }
                    return Ok(spec);
                }
                _ => {
                    widths.push(width);
                    let to = widths.len();
                    while let Some(LayerDesc::Skip { from, scale_param }) = it.peek() {
                        skips.push((*scale_param, Skip { from: *from, to }));
                        it.next();
                    }
                    match it.next() {
                        Some(LayerDesc::Relu) => {}
                        _ => return Err(bad("hidden dense layer must be followed by relu")),
                    }
                }
            }
        }
    }

    /// Hex SHA-256 of the canonical descriptor list.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.descriptors()).expect("descriptors serialize");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl std::fmt::Display for NetSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.input_dim)?;
        for w in &self.hidden {
            write!(f, "-{w}")?;
        }
        write!(f, "-{}", self.output_dim)?;
        if !self.skips.is_empty() {
            let s: Vec<String> = self.skips.iter().map(|s| format!("{}>{}", s.from, s.to)).collect();
            write!(f, " skips[{}]", s.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerDesc {
    Input { dim: usize },
    Dense { width: usize },
    Relu,
    Skip { from: usize, scale_param: usize },
    Softmax,
}

/// Offsets of every block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// One entry per dense layer (hidden layers then output): (weight offset, bias offset, rows, cols).
    pub dense: Vec<DenseBlock>,
    pub skip_offset: usize,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseBlock {
    pub w: usize,
    pub b: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Layout {
    pub fn of(spec: &NetSpec) -> Layout {
        let mut off = 0;
        let mut dense = Vec::with_capacity(spec.depth() + 1);
        for l in 1..=spec.depth() + 1 {
            let rows = spec.width(l);
            let cols = spec.width(l - 1);
            dense.push(DenseBlock { w: off, b: off + rows * cols, rows, cols });
            off += rows * cols + rows;
        }
        Layout { dense, skip_offset: off, total: off + spec.skips.len() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub flat: Vec<f64>,
}

impl NetParams {
    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseWeights {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseWeights { rows, cols, w: vec![0.0; rows * cols], b: vec![0.0; rows] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.w[i * self.cols + j]
    }
}

/// Structured view of a parameter vector, used by morphisms.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// Hidden layers then output.
    pub dense: Vec<DenseWeights>,
    pub skip_scales: Vec<f64>,
}

impl Weights {
    pub fn unflatten(spec: &NetSpec, params: &NetParams) -> Result<Weights, NnError> {
        let layout = spec.layout();
        check_len(&layout, params)?;
        let p = &params.flat;
        let dense = layout
            .dense
            .iter()
            .map(|d| DenseWeights {
                rows: d.rows,
                cols: d.cols,
                w: p[d.w..d.w + d.rows * d.cols].to_vec(),
                b: p[d.b..d.b + d.rows].to_vec(),
            })
            .collect();
        Ok(Weights { dense, skip_scales: p[layout.skip_offset..layout.total].to_vec() })
    }

    pub fn flatten(&self) -> NetParams {
        let mut flat = Vec::new();
        for d in &self.dense {
            flat.extend_from_slice(&d.w);
            flat.extend_from_slice(&d.b);
        }
        flat.extend_from_slice(&self.skip_scales);
        NetParams { flat }
    }

    /// Checks block shapes against `spec`.
    pub fn conforms(&self, spec: &NetSpec) -> bool {
        let layout = spec.layout();
        self.dense.len() == layout.dense.len()
            && self.dense.iter().zip(&layout.dense).all(|(d, l)| {
                d.rows == l.rows && d.cols == l.cols && d.w.len() == l.rows * l.cols && d.b.len() == l.rows
            })
            && self.skip_scales.len() == spec.skips.len()
    }
}

fn check_len(layout: &Layout, params: &NetParams) -> Result<(), NnError> {
    if params.flat.len() != layout.total {
        return Err(NnError::ShapeMismatch(format!(
            "parameter vector has {} entries, spec needs {}",
            params.flat.len(),
            layout.total
        )));
    }
    Ok(())
}

/// He-normal weights (variance `2 / fan_in`), zero biases, zero skip scales.
pub fn init_params<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> NetParams {
    let layout = spec.layout();
    let mut flat = vec![0.0; layout.total];
    for d in &layout.dense {
        let normal = Normal::new(0.0, (2.0 / d.cols as f64).sqrt()).expect("positive sd");
        for v in &mut flat[d.w..d.w + d.rows * d.cols] {
            *v = normal.sample(rng);
        }
    }
    NetParams { flat }
}

/// A mini-batch of `labels.len()` rows.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a [f64],
    pub labels: &'a [usize],
}

struct Cache {
    /// Activations of layers 0..=L, each `batch x width`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers 1..=L (index l-1).
    pre: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn affine(block: &DenseBlock, flat: &[f64], input: &[f64], rows_in: usize, out: &mut [f64]) {
    let (r, c) = (block.rows, block.cols);
    let w = &flat[block.w..block.w + r * c];
    let b = &flat[block.b..block.b + r];
    for n in 0..rows_in {
        let a = &input[n * c..(n + 1) * c];
        let o = &mut out[n * r..(n + 1) * r];
        for i in 0..r {
            let wi = &w[i * c..(i + 1) * c];
            let mut s = b[i];
            for j in 0..c {
                s += wi[j] * a[j];
            }
            o[i] = s;
        }
    }
}

fn run_forward(spec: &NetSpec, layout: &Layout, flat: &[f64], inputs: &[f64], batch: usize) -> Cache {
    let depth = spec.depth();
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(depth + 1);
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(depth);
    acts.push(inputs.to_vec());
    for l in 1..=depth {
        let block = &layout.dense[l - 1];
        let mut z = vec![0.0; batch * block.rows];
        affine(block, flat, &acts[l - 1], batch, &mut z);
        for (k, s) in spec.skips.iter().enumerate() {
            if s.to == l {
                let alpha = flat[layout.skip_offset + k];
                if alpha != 0.0 {
                    for (zi, ai) in z.iter_mut().zip(&acts[s.from]) {
                        *zi += alpha * ai;
                    }
                }
            }
        }
        let a: Vec<f64> = z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        pre.push(z);
        acts.push(a);
    }
    let block = &layout.dense[depth];
    let mut logits = vec![0.0; batch * block.rows];
    affine(block, flat, &acts[depth], batch, &mut logits);
    Cache { acts, pre, logits }
}

fn batch_rows(spec: &NetSpec, inputs: &[f64]) -> Result<usize, NnError> {
    if inputs.len() % spec.input_dim != 0 {
        return Err(NnError::ShapeMismatch(format!(
            "{} input values are not rows of width {}",
            inputs.len(),
            spec.input_dim
        )));
    }
    Ok(inputs.len() / spec.input_dim)
}

fn softmax_row(logits: &[f64], out: &mut [f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
    m + s.ln()
}

/// Raw logits, `batch x output_dim`.
pub fn logits(spec: &NetSpec, params: &NetParams, inputs: &[f64]) -> Result<Vec<f64>, NnError> {
    let layout = spec.layout();
    check_len(&layout, params)?;
    let b = batch_rows(spec, inputs)?;
    Ok(run_forward(spec, &layout, &params.flat, inputs, b).logits)
}

/// Class probabilities, `batch x output_dim`.
pub fn forward(spec: &NetSpec, params: &NetParams, inputs: &[f64]) -> Result<Vec<f64>, NnError> {
    let z = logits(spec, params, inputs)?;
    let k = spec.output_dim;
    let mut p = vec![0.0; z.len()];
    for (zr, pr) in z.chunks(k).zip(p.chunks_mut(k)) {
        softmax_row(zr, pr);
    }
    Ok(p)
}

fn check_labels(spec: &NetSpec, batch: &Batch<'_>, rows: usize) -> Result<(), NnError> {
    if batch.labels.len() != rows {
        return Err(NnError::ShapeMismatch(format!("{} labels for {} rows", batch.labels.len(), rows)));
    }
    if rows == 0 {
        return Err(NnError::ShapeMismatch("empty batch".into()));
    }
    if let Some(&label) = batch.labels.iter().find(|&&y| y >= spec.output_dim) {
        return Err(NnError::BadLabel { label, classes: spec.output_dim });
    }
    Ok(())
}

/// Mean cross-entropy over the batch.
pub fn loss(spec: &NetSpec, params: &NetParams, batch: &Batch<'_>) -> Result<f64, NnError> {
    let z = logits(spec, params, batch.inputs)?;
    let rows = z.len() / spec.output_dim;
    check_labels(spec, batch, rows)?;
    let k = spec.output_dim;
    let mut buf = vec![0.0; k];
    let total: f64 = z
        .chunks(k)
        .zip(batch.labels)
        .map(|(zr, &y)| softmax_row(zr, &mut buf) - zr[y])
        .sum();
    Ok(total / rows as f64)
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(spec: &NetSpec, params: &NetParams, batch: &Batch<'_>) -> Result<f64, NnError> {
    let z = logits(spec, params, batch.inputs)?;
    let k = spec.output_dim;
    let rows = z.len() / k;
    check_labels(spec, batch, rows)?;
    let hits = z
        .chunks(k)
        .zip(batch.labels)
        .filter(|(zr, &y)| {
            let best = zr
                .iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > zr[b] { i } else { b });
            best == y
        })
        .count();
    Ok(hits as f64 / rows as f64)
}

/// Mean cross-entropy and its gradient with respect to the flat parameters.
pub fn loss_and_grad(spec: &NetSpec, params: &NetParams, batch: &Batch<'_>) -> Result<(f64, Vec<f64>), NnError> {
    let layout = spec.layout();
    check_len(&layout, params)?;
    let rows = batch_rows(spec, batch.inputs)?;
    check_labels(spec, batch, rows)?;
    let flat = &params.flat;
    let cache = run_forward(spec, &layout, flat, batch.inputs, rows);
    let depth = spec.depth();
    let k = spec.output_dim;
    let inv = 1.0 / rows as f64;

    let mut loss = 0.0;
    let mut dz = vec![0.0; rows * k];
    for n in 0..rows {
        let zr = &cache.logits[n * k..(n + 1) * k];
        let dr = &mut dz[n * k..(n + 1) * k];
        let lse = softmax_row(zr, dr);
        let y = batch.labels[n];
        loss += lse - zr[y];
        dr[y] -= 1.0;
        for d in dr.iter_mut() {
            *d *= inv;
        }
    }
    loss *= inv;

    let mut grad = vec![0.0; layout.total];
    // upstream gradients w.r.t. activations of layers 0..=depth
    let mut dact: Vec<Vec<f64>> = (0..=depth).map(|l| vec![0.0; rows * spec.width(l)]).collect();

    let backprop_dense = |block: &DenseBlock, dz: &[f64], input: &[f64], dinput: Option<&mut Vec<f64>>, grad: &mut [f64]| {
        let (r, c) = (block.rows, block.cols);
        for n in 0..rows {
            let a = &input[n * c..(n + 1) * c];
            let d = &dz[n * r..(n + 1) * r];
            for i in 0..r {
                let di = d[i];
                if di == 0.0 {
                    continue;
                }
                grad[block.b + i] += di;
                let gw = &mut grad[block.w + i * c..block.w + (i + 1) * c];
                for j in 0..c {
                    gw[j] += di * a[j];
                }
            }
        }
        if let Some(dinput) = dinput {
            let w = &flat[block.w..block.w + r * c];
            for n in 0..rows {
                let d = &dz[n * r..(n + 1) * r];
                let da = &mut dinput[n * c..(n + 1) * c];
                for i in 0..r {
                    let di = d[i];
                    if di == 0.0 {
                        continue;
                    }
                    let wi = &w[i * c..(i + 1) * c];
                    for j in 0..c {
                        da[j] += di * wi[j];
                    }
                }
            }
        }
    };

    {
        let block = &layout.dense[depth];
        let needs_input_grad = depth > 0;
        let (lower, _) = dact.split_at_mut(depth + 1);
        backprop_dense(
            block,
            &dz,
            &cache.acts[depth],
            if needs_input_grad { Some(&mut lower[depth]) } else { None },
            &mut grad,
        );
    }
    for l in (1..=depth).rev() {
        let z = &cache.pre[l - 1];
        let dzl: Vec<f64> = dact[l].iter().zip(z).map(|(&d, &zv)| if zv > 0.0 { d } else { 0.0 }).collect();
        for (s_idx, s) in spec.skips.iter().enumerate() {
            if s.to != l {
                continue;
            }
            let src = &cache.acts[s.from];
            let off = layout.skip_offset + s_idx;
            grad[off] += dzl.iter().zip(src).map(|(d, a)| d * a).sum::<f64>();
            if s.from >= 1 {
                let alpha = flat[off];
                if alpha != 0.0 {
                    for (da, d) in dact[s.from].iter_mut().zip(&dzl) {
                        *da += alpha * d;
                    }
                }
            }
        }
        let block = &layout.dense[l - 1];
        let need = l > 1;
        let (lower, _) = dact.split_at_mut(l);
        backprop_dense(
            block,
            &dzl,
            &cache.acts[l - 1],
            if need { Some(&mut lower[l - 1]) } else { None },
            &mut grad,
        );
    }
    Ok((loss, grad))
}

/// On-disk checkpoint: `{spec: [...], flat: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: Vec<LayerDesc>,
    pub flat: Vec<f64>,
}

impl Checkpoint {
    pub fn new(spec: &NetSpec, params: &NetParams) -> Self {
        Checkpoint { spec: spec.descriptors(), flat: params.flat.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<(NetSpec, NetParams), CheckpointError> {
        let ck: Checkpoint = serde_json::from_str(s).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let spec = NetSpec::from_descriptors(&ck.spec).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        if ck.flat.len() != spec.param_count() {
            return Err(CheckpointError::Malformed(format!(
                "flat has {} values, spec needs {}",
                ck.flat.len(),
                spec.param_count()
            )));
        }
        if ck.flat.iter().any(|x| !x.is_finite()) {
            return Err(CheckpointError::Malformed("non-finite parameter".into()));
        }
        Ok((spec, NetParams { flat: ck.flat }))
    }

    pub fn save(path: &Path, spec: &NetSpec, params: &NetParams) -> Result<(), CheckpointError> {
        std::fs::write(path, Checkpoint::new(spec, params).to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(NetSpec, NetParams), CheckpointError> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}
