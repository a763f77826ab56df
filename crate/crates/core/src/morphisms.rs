//! Architecture edits on dense networks and local-graph construction.
//!
//! Positive edits (`deepen`, `widen`, `add_skip`) leave the network function
//! unchanged at the moment they are applied. Negative edits (`remove_layer`,
//! `narrow`, `remove_skip`) shrink the network by plain truncation and are in
//! general not function preserving; removing a skip whose scale is zero is
//! the exception.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{forward, DenseWeights, NetParams, NetSpec, NnError, Skip, Weights};
use crate::semigraph::{ArchGraph, Topology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MorphError {
    #[error("constraint violated: {0}")]
    ConstraintViolated(String),
    #[error("bad position: {0}")]
    BadPosition(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error(transparent)]
    Net(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    pub max_layers: usize,
    pub max_width: usize,
    pub max_incoming: usize,
    pub max_params: usize,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints { max_layers: 8, max_width: 128, max_incoming: 2, max_params: 100_000 }
    }
}

impl Constraints {
    pub fn check(&self, spec: &NetSpec) -> Result<(), MorphError> {
        let fail = |m: String| Err(MorphError::ConstraintViolated(m));
        if spec.depth() > self.max_layers {
            return fail(format!("{} hidden layers > max_layers {}", spec.depth(), self.max_layers));
        }
        if let Some(w) = spec.hidden.iter().find(|&&w| w > self.max_width) {
            return fail(format!("width {w} > max_width {}", self.max_width));
        }
        for l in 1..=spec.depth() {
            if spec.incoming(l) > self.max_incoming {
                return fail(format!("layer {l} has {} incoming skips > {}", spec.incoming(l), self.max_incoming));
            }
        }
        if spec.param_count() > self.max_params {
            return fail(format!("{} parameters > max_params {}", spec.param_count(), self.max_params));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphKind {
    Deepen,
    Widen,
    AddSkip,
    Narrow,
    RemoveLayer,
    RemoveSkip,
}

impl MorphKind {
    pub const ALL: [MorphKind; 6] = [
        MorphKind::Deepen,
        MorphKind::Widen,
        MorphKind::AddSkip,
        MorphKind::Narrow,
        MorphKind::RemoveLayer,
        MorphKind::RemoveSkip,
    ];

    pub fn is_positive(self) -> bool {
        matches!(self, MorphKind::Deepen | MorphKind::Widen | MorphKind::AddSkip)
    }

    pub fn name(self) -> &'static str {
        match self {
            MorphKind::Deepen => "deepen",
            MorphKind::Widen => "widen",
            MorphKind::AddSkip => "add_skip",
            MorphKind::Narrow => "narrow",
            MorphKind::RemoveLayer => "remove_layer",
            MorphKind::RemoveSkip => "remove_skip",
        }
    }

    pub fn from_name(s: &str) -> Option<MorphKind> {
        MorphKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A single concrete edit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Morphism {
    /// New identity layer directly after hidden layer `position`.
    Deepen { position: usize },
    Widen { layer: usize, delta: usize },
    AddSkip { from: usize, to: usize },
    RemoveLayer { position: usize },
    /// Drops the last `delta` units of `layer`.
    Narrow { layer: usize, delta: usize },
    RemoveSkip { index: usize },
}

impl Morphism {
    pub fn kind(&self) -> MorphKind {
        match self {
            Morphism::Deepen { .. } => MorphKind::Deepen,
            Morphism::Widen { .. } => MorphKind::Widen,
            Morphism::AddSkip { .. } => MorphKind::AddSkip,
            Morphism::RemoveLayer { .. } => MorphKind::RemoveLayer,
            Morphism::Narrow { .. } => MorphKind::Narrow,
            Morphism::RemoveSkip { .. } => MorphKind::RemoveSkip,
        }
    }

    /// Arguments as a JSON object (without the kind tag).
    pub fn args(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("morphism serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("kind");
        }
        v
    }
}

/// Probability weights over morphism kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphMix {
    pub weights: Vec<(MorphKind, f64)>,
}

impl Default for MorphMix {
    fn default() -> Self {
        MorphMix {
            weights: vec![
                (MorphKind::Deepen, 0.25),
                (MorphKind::Widen, 0.25),
                (MorphKind::AddSkip, 0.2),
                (MorphKind::Narrow, 0.1),
                (MorphKind::RemoveLayer, 0.1),
                (MorphKind::RemoveSkip, 0.1),
            ],
        }
    }
}

impl MorphMix {
    pub fn only(kind: MorphKind) -> Self {
        MorphMix { weights: vec![(kind, 1.0)] }
    }

    /// The default mix restricted to positive kinds.
    pub fn positive() -> Self {
        MorphMix { weights: MorphMix::default().weights.into_iter().filter(|(k, _)| k.is_positive()).collect() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.weights.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) {
            return Err("morphism weights must be finite and nonnegative".into());
        }
        if !(self.weights.iter().map(|(_, w)| w).sum::<f64>() > 0.0) {
            return Err("morphism weights sum to zero".into());
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MorphKind {
        let total: f64 = self.weights.iter().map(|(_, w)| w).sum();
        let mut u = rng.random::<f64>() * total;
        for &(k, w) in &self.weights {
            if u < w {
                return k;
            }
            u -= w;
        }
        self.weights.iter().rev().find(|(_, w)| *w > 0.0).expect("positive total").0
    }
}

fn unpack(spec: &NetSpec, params: &NetParams) -> Result<Weights, MorphError> {
    spec.validate()?;
    Ok(Weights::unflatten(spec, params)?)
}

fn finish(spec: NetSpec, w: Weights, c: &Constraints) -> Result<(NetSpec, NetParams), MorphError> {
    spec.validate()?;
    c.check(&spec)?;
    debug_assert!(w.conforms(&spec));
    Ok((spec, w.flatten()))
}

fn check_hidden(spec: &NetSpec, l: usize, what: &str) -> Result<(), MorphError> {
    if l == 0 || l > spec.depth() {
        return Err(MorphError::BadPosition(format!("{what} {l} is not a hidden layer (depth {})", spec.depth())));
    }
    Ok(())
}

/// Inserts an identity layer after hidden layer `position`, whose outputs
/// are already nonnegative.
pub fn deepen(spec: &NetSpec, params: &NetParams, position: usize, c: &Constraints) -> Result<(NetSpec, NetParams), MorphError> {
    let mut w = unpack(spec, params)?;
    check_hidden(spec, position, "deepen position")?;
    if spec.depth() >= c.max_layers {
        return Err(MorphError::ConstraintViolated(format!("already at max_layers {}", c.max_layers)));
    }
    let width = spec.width(position);
    let mut id = DenseWeights::zeros(width, width);
    for i in 0..width {
        *id.at_mut(i, i) = 1.0;
    }
    w.dense.insert(position, id);
    let mut out = spec.clone();
    out.hidden.insert(position, width);
    for s in &mut out.skips {
        if s.from > position {
            s.from += 1;
        }
        if s.to > position {
            s.to += 1;
        }
    }
    finish(out, w, c)
}

/// Net2Wider: `delta` new units copy randomly chosen existing units, and the
/// outgoing weights of every replicated unit are split evenly across copies.
pub fn widen<R: Rng + ?Sized>(
    spec: &NetSpec,
    params: &NetParams,
    layer: usize,
    delta: usize,
    c: &Constraints,
    rng: &mut R,
) -> Result<(NetSpec, NetParams), MorphError> {
    let mut w = unpack(spec, params)?;
    check_hidden(spec, layer, "widen layer")?;
    if delta == 0 {
        return Err(MorphError::BadPosition("widen by zero units".into()));
    }
    if spec.is_skip_endpoint(layer) {
        return Err(MorphError::DimMismatch(format!("layer {layer} is joined by a skip")));
    }
    let old = spec.width(layer);
    if old + delta > c.max_width {
        return Err(MorphError::ConstraintViolated(format!("width {} > max_width {}", old + delta, c.max_width)));
    }
    let sources: Vec<usize> = (0..delta).map(|_| rng.random_range(0..old)).collect();
    let mut replicas = vec![1usize; old];
    for &u in &sources {
        replicas[u] += 1;
    }
    let new = old + delta;
    let src_of = |j: usize| if j < old { j } else { sources[j - old] };

    let cur = &w.dense[layer - 1];
    let mut grown = DenseWeights::zeros(new, cur.cols);
    for j in 0..new {
        let u = src_of(j);
        grown.w[j * cur.cols..(j + 1) * cur.cols].copy_from_slice(&cur.w[u * cur.cols..(u + 1) * cur.cols]);
        grown.b[j] = cur.b[u];
    }
    let next = &w.dense[layer];
    let mut split = DenseWeights::zeros(next.rows, new);
    split.b.copy_from_slice(&next.b);
    for i in 0..next.rows {
        for j in 0..new {
            let u = src_of(j);
            *split.at_mut(i, j) = next.at(i, u) / replicas[u] as f64;
        }
    }
    w.dense[layer - 1] = grown;
    w.dense[layer] = split;
    let mut out = spec.clone();
    out.hidden[layer - 1] = new;
    finish(out, w, c)
}

/// New skip `from -> to` with scale exactly zero.
pub fn add_skip(spec: &NetSpec, params: &NetParams, from: usize, to: usize, c: &Constraints) -> Result<(NetSpec, NetParams), MorphError> {
    let mut w = unpack(spec, params)?;
    check_hidden(spec, to, "skip target")?;
    if from >= to {
        return Err(MorphError::BadPosition(format!("skip {from} -> {to} must go forward")));
    }
    if spec.width(from) != spec.width(to) {
        return Err(MorphError::DimMismatch(format!("widths {} and {} differ", spec.width(from), spec.width(to))));
    }
    if spec.skips.contains(&Skip { from, to }) {
        return Err(MorphError::ConstraintViolated(format!("skip {from} -> {to} already present")));
    }
    if spec.incoming(to) >= c.max_incoming {
        return Err(MorphError::ConstraintViolated(format!("layer {to} already has {} incoming skips", c.max_incoming)));
    }
    let mut out = spec.clone();
    out.skips.push(Skip { from, to });
    w.skip_scales.push(0.0);
    finish(out, w, c)
}

/// Removes hidden layer `position`; the following layer's weight matrix is
/// truncated or zero-padded to the new input width and skips touching the
/// removed layer are dropped.
pub fn remove_layer(spec: &NetSpec, params: &NetParams, position: usize, c: &Constraints) -> Result<(NetSpec, NetParams), MorphError> {
    let mut w = unpack(spec, params)?;
    check_hidden(spec, position, "remove position")?;
    if spec.depth() <= 1 {
        return Err(MorphError::ConstraintViolated("at least one hidden layer must remain".into()));
    }
    let in_width = spec.width(position - 1);
    let next = &w.dense[position];
    let mut fitted = DenseWeights::zeros(next.rows, in_width);
    fitted.b.copy_from_slice(&next.b);
    for i in 0..next.rows {
        for j in 0..in_width.min(next.cols) {
            *fitted.at_mut(i, j) = next.at(i, j);
        }
    }
    w.dense[position] = fitted;
    w.dense.remove(position - 1);

    let mut out = spec.clone();
    out.hidden.remove(position - 1);
    let mut skips = Vec::new();
    let mut scales = Vec::new();
    for (s, &a) in spec.skips.iter().zip(&w.skip_scales) {
        if s.from == position || s.to == position {
            continue;
        }
        let shift = |l: usize| if l > position { l - 1 } else { l };
        skips.push(Skip { from: shift(s.from), to: shift(s.to) });
        scales.push(a);
    }
    out.skips = skips;
    w.skip_scales = scales;
    finish(out, w, c)
}

/// Drops the last `delta` units of hidden layer `layer`.
pub fn narrow(spec: &NetSpec, params: &NetParams, layer: usize, delta: usize, c: &Constraints) -> Result<(NetSpec, NetParams), MorphError> {
    let mut w = unpack(spec, params)?;
    check_hidden(spec, layer, "narrow layer")?;
    if delta == 0 {
        return Err(MorphError::BadPosition("narrow by zero units".into()));
    }
    if spec.is_skip_endpoint(layer) {
        return Err(MorphError::DimMismatch(format!("layer {layer} is joined by a skip")));
    }
    let old = spec.width(layer);
    let floor = spec.output_dim.max(1);
    if old < delta + floor {
        return Err(MorphError::ConstraintViolated(format!("width {old} - {delta} below the floor {floor}")));
    }
    let new = old - delta;
    let cur = &w.dense[layer - 1];
    let cols = cur.cols;
    let shrunk = DenseWeights { rows: new, cols, w: cur.w[..new * cols].to_vec(), b: cur.b[..new].to_vec() };
    let next = &w.dense[layer];
    let mut cut = DenseWeights::zeros(next.rows, new);
    cut.b.copy_from_slice(&next.b);
    for i in 0..next.rows {
        for j in 0..new {
            *cut.at_mut(i, j) = next.at(i, j);
        }
    }
    w.dense[layer - 1] = shrunk;
    w.dense[layer] = cut;
    let mut out = spec.clone();
    out.hidden[layer - 1] = new;
    finish(out, w, c)
}

pub fn remove_skip(spec: &NetSpec, params: &NetParams, index: usize, c: &Constraints) -> Result<(NetSpec, NetParams), MorphError> {
    let mut w = unpack(spec, params)?;
    if index >= spec.skips.len() {
        return Err(MorphError::BadPosition(format!("no skip with index {index}")));
    }
    let mut out = spec.clone();
    out.skips.remove(index);
    w.skip_scales.remove(index);
    finish(out, w, c)
}

/// Applies a concrete edit. The rng is only consumed by `widen`.
pub fn apply<R: Rng + ?Sized>(
    spec: &NetSpec,
    params: &NetParams,
    m: &Morphism,
    c: &Constraints,
    rng: &mut R,
) -> Result<(NetSpec, NetParams), MorphError> {
    match *m {
        Morphism::Deepen { position } => deepen(spec, params, position, c),
        Morphism::Widen { layer, delta } => widen(spec, params, layer, delta, c, rng),
        Morphism::AddSkip { from, to } => add_skip(spec, params, from, to, c),
        Morphism::RemoveLayer { position } => remove_layer(spec, params, position, c),
        Morphism::Narrow { layer, delta } => narrow(spec, params, layer, delta, c),
        Morphism::RemoveSkip { index } => remove_skip(spec, params, index, c),
    }
}

/// Draws random arguments for `kind`. The draw may still be rejected by
/// `apply` (for example a widen that exceeds `max_width`).
pub fn draw<R: Rng + ?Sized>(spec: &NetSpec, kind: MorphKind, rng: &mut R) -> Result<Morphism, MorphError> {
    let depth = spec.depth();
    let none = |what: &str| Err(MorphError::BadPosition(format!("no valid {what} site")));
    match kind {
        MorphKind::Deepen | MorphKind::RemoveLayer if depth == 0 => none(kind.name()),
        MorphKind::Deepen => Ok(Morphism::Deepen { position: rng.random_range(1..=depth) }),
        MorphKind::RemoveLayer => Ok(Morphism::RemoveLayer { position: rng.random_range(1..=depth) }),
        MorphKind::Widen | MorphKind::Narrow => {
            let free: Vec<usize> = (1..=depth).filter(|&l| !spec.is_skip_endpoint(l)).collect();
            if free.is_empty() {
                return none(kind.name());
            }
            let layer = free[rng.random_range(0..free.len())];
            let w = spec.width(layer);
            if kind == MorphKind::Widen {
                Ok(Morphism::Widen { layer, delta: rng.random_range(1..=(w / 2).max(1)) })
            } else {
                Ok(Morphism::Narrow { layer, delta: rng.random_range(1..=(w / 4).max(1)) })
            }
        }
        MorphKind::AddSkip => {
            let mut sites = Vec::new();
            for to in 2..=depth {
                for from in 0..to - 1 {
                    if spec.width(from) == spec.width(to) && !spec.skips.contains(&Skip { from, to }) {
                        sites.push((from, to));
                    }
                }
            }
            if sites.is_empty() {
                return none(kind.name());
            }
            let (from, to) = sites[rng.random_range(0..sites.len())];
            Ok(Morphism::AddSkip { from, to })
        }
        MorphKind::RemoveSkip => {
            if spec.skips.is_empty() {
                return none(kind.name());
            }
            Ok(Morphism::RemoveSkip { index: rng.random_range(0..spec.skips.len()) })
        }
    }
}

/// Draws and applies one morphism of the given kind.
pub fn random_morphism<R: Rng + ?Sized>(
    spec: &NetSpec,
    params: &NetParams,
    kind: MorphKind,
    c: &Constraints,
    rng: &mut R,
) -> Result<(Morphism, NetSpec, NetParams), MorphError> {
    let m = draw(spec, kind, rng)?;
    let (s, p) = apply(spec, params, &m, c, rng)?;
    Ok((m, s, p))
}

/// One of the size-reducing kinds with random arguments.
pub fn negative_morphism<R: Rng + ?Sized>(
    spec: &NetSpec,
    params: &NetParams,
    kind: MorphKind,
    c: &Constraints,
    rng: &mut R,
) -> Result<(NetSpec, NetParams), MorphError> {
    if kind.is_positive() {
        return Err(MorphError::BadPosition(format!("{} is not a negative morphism", kind.name())));
    }
    random_morphism(spec, params, kind, c, rng).map(|(_, s, p)| (s, p))
}

/// Largest absolute difference between the class probabilities of two networks.
pub fn output_deviation(a: (&NetSpec, &NetParams), b: (&NetSpec, &NetParams), inputs: &[f64]) -> Result<f64, MorphError> {
    let pa = forward(a.0, a.1, inputs)?;
    let pb = forward(b.0, b.1, inputs)?;
    Ok(pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// An architecture in a local graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub spec: NetSpec,
    pub params: NetParams,
    /// Edits that produced it from the incumbent; empty for the incumbent.
    pub edits: Vec<Morphism>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub round: usize,
    pub child_id: usize,
    pub kind: String,
    pub args: serde_json::Value,
    pub preserved: bool,
    pub dev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraphConfig {
    pub n_neigh: usize,
    /// Morphisms applied in sequence to produce each child.
    pub edits_per_child: usize,
    pub constraints: Constraints,
    pub mix: MorphMix,
    pub topology: Topology,
}

impl Default for LocalGraphConfig {
    fn default() -> Self {
        LocalGraphConfig {
            n_neigh: 8,
            edits_per_child: 1,
            constraints: Constraints::default(),
            mix: MorphMix::default(),
            topology: Topology::Star,
        }
    }
}

pub const MAX_ATTEMPTS: usize = 50;

/// Tolerance under which a child counts as function preserving.
pub const PRESERVE_TOL: f64 = 1e-6;

/// Builds the incumbent-centered graph of `n_neigh` morphed children with
/// unit kernel weights. Each child's deviation from the incumbent is measured
/// on `probe` (row-major inputs) and reported in the audit records.
pub fn build_local_graph<R: Rng + ?Sized>(
    spec: &NetSpec,
    params: &NetParams,
    cfg: &LocalGraphConfig,
    round: usize,
    probe: &[f64],
    rng: &mut R,
) -> Result<(ArchGraph<Candidate>, Vec<AuditRecord>), MorphError> {
    if cfg.n_neigh == 0 {
        return Err(MorphError::BadPosition("n_neigh must be at least 1".into()));
    }
    cfg.mix.validate().map_err(MorphError::ConstraintViolated)?;
    let mut graph = ArchGraph::new(Candidate { spec: spec.clone(), params: params.clone(), edits: Vec::new() });
    let mut audit = Vec::with_capacity(cfg.n_neigh);
    for _ in 0..cfg.n_neigh {
        let (mut s, mut p) = (spec.clone(), params.clone());
        let mut edits = Vec::with_capacity(cfg.edits_per_child.max(1));
        for _ in 0..cfg.edits_per_child.max(1) {
            let mut last_err = None;
            let mut done = false;
            for _ in 0..MAX_ATTEMPTS {
                let kind = cfg.mix.sample(rng);
                match random_morphism(&s, &p, kind, &cfg.constraints, rng) {
                    Ok((m, s2, p2)) => {
                        edits.push(m);
                        s = s2;
                        p = p2;
                        done = true;
                        break;
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            if !done {
                return Err(MorphError::ConstraintViolated(format!(
                    "no admissible morphism after {MAX_ATTEMPTS} attempts (last: {})",
                    last_err.map(|e| e.to_string()).unwrap_or_default()
                )));
            }
        }
        let child = Candidate { spec: s, params: p, edits };
        let dev = output_deviation((spec, params), (&child.spec, &child.params), probe)?;
        let (kind, args) = match child.edits.as_slice() {
            [m] => (m.kind().name().to_string(), m.args()),
            many => (
                many.iter().map(|m| m.kind().name()).collect::<Vec<_>>().join("+"),
                serde_json::Value::Array(many.iter().map(|m| serde_json::to_value(m).expect("serializes")).collect()),
            ),
        };
        let id = graph.add_node(child, 1.0).expect("unit weight is positive");
        audit.push(AuditRecord { round, child_id: id.index(), kind, args, preserved: dev <= PRESERVE_TOL, dev });
    }
    if cfg.topology == Topology::Complete {
        graph.make_complete(1.0).expect("unit weight is positive");
    }
    Ok((graph, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, loss_and_grad, Batch};
    use crate::rng::rng_for;
    use rand_distr::StandardNormal;

    fn base() -> (NetSpec, NetParams) {
        let spec = NetSpec {
            input_dim: 3,
            output_dim: 2,
            hidden: vec![5, 4, 5],
            skips: vec![Skip { from: 1, to: 3 }],
        };
        let mut p = init_params(&spec, &mut rng_for(1, &[]));
        let n = p.len();
        p.flat[n - 1] = 0.7;
        (spec, p)
    }

    fn probe(rows: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, &[7]);
        (0..rows * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn c() -> Constraints {
        Constraints::default()
    }

    #[test]
    fn deepen_preserves_function() {
        let (s, p) = base();
        let x = probe(64, 3, 1);
        for pos in 1..=3 {
            let (s2, p2) = deepen(&s, &p, pos, &c()).unwrap();
            assert_eq!(s2.depth(), 4);
            assert!(output_deviation((&s, &p), (&s2, &p2), &x).unwrap() <= 1e-12);
        }
        assert!(matches!(deepen(&s, &p, 0, &c()), Err(MorphError::BadPosition(_))));
        assert!(matches!(deepen(&s, &p, 4, &c()), Err(MorphError::BadPosition(_))));
        let tight = Constraints { max_layers: 3, ..c() };
        assert!(matches!(deepen(&s, &p, 1, &tight), Err(MorphError::ConstraintViolated(_))));
    }

    #[test]
    fn widen_preserves_function() {
        let (s, p) = base();
        let x = probe(64, 3, 2);
        let mut rng = rng_for(2, &[]);
        let (s2, p2) = widen(&s, &p, 2, 1, &c(), &mut rng).unwrap();
        assert_eq!(s2.hidden, vec![5, 5, 5]);
        assert!(output_deviation((&s, &p), (&s2, &p2), &x).unwrap() <= 1e-12);
        let (s3, p3) = widen(&s2, &p2, 2, 7, &c(), &mut rng).unwrap();
        assert_eq!(s3.width(2), 12);
        assert!(output_deviation((&s, &p), (&s3, &p3), &x).unwrap() <= 1e-12);
        let tight = Constraints { max_width: 5, ..c() };
        assert!(matches!(widen(&s, &p, 2, 2, &tight, &mut rng), Err(MorphError::ConstraintViolated(_))));
        assert!(matches!(widen(&s, &p, 1, 1, &c(), &mut rng), Err(MorphError::DimMismatch(_))));
    }

    #[test]
    fn add_skip_is_bit_identical() {
        let x = probe(16, 3, 3);
        let spec = NetSpec::new(3, vec![5, 4, 5, 5], 2);
        let params = init_params(&spec, &mut rng_for(3, &[]));
        let (s1, p1) = add_skip(&spec, &params, 1, 4, &c()).unwrap();
        assert_eq!(forward(&spec, &params, &x).unwrap(), forward(&s1, &p1, &x).unwrap());
        let (s2, p2) = add_skip(&s1, &p1, 3, 4, &c()).unwrap();
        assert!(matches!(add_skip(&s2, &p2, 2, 3, &c()), Err(MorphError::DimMismatch(_))));
        let tight = Constraints { max_incoming: 2, ..c() };
        let three = NetSpec::new(3, vec![5, 5, 5, 5], 2);
        let pt = init_params(&three, &mut rng_for(3, &[]));
        let (a, pa) = add_skip(&three, &pt, 1, 4, &tight).unwrap();
        let (b, pb) = add_skip(&a, &pa, 2, 4, &tight).unwrap();
        assert!(matches!(add_skip(&b, &pb, 3, 4, &tight), Err(MorphError::ConstraintViolated(_))));
        assert!(matches!(add_skip(&b, &pb, 1, 4, &c()), Err(MorphError::ConstraintViolated(_))));
        assert!(matches!(add_skip(&spec, &params, 2, 1, &c()), Err(MorphError::BadPosition(_))));
    }

    #[test]
    fn trained_skip_changes_output() {
        let spec = NetSpec::new(2, vec![4, 4], 2);
        let params = init_params(&spec, &mut rng_for(4, &[]));
        let (s, mut p) = add_skip(&spec, &params, 1, 2, &c()).unwrap();
        let n = p.len();
        p.flat[n - 1] = 0.5;
        let x = probe(8, 2, 4);
        assert!(output_deviation((&spec, &params), (&s, &p), &x).unwrap() > 0.0);
    }

    #[test]
    fn remove_layer_floor() {
        let spec = NetSpec::new(2, vec![4, 4], 2);
        let p = init_params(&spec, &mut rng_for(5, &[]));
        let (s1, p1) = remove_layer(&spec, &p, 1, &c()).unwrap();
        assert_eq!(s1.hidden, vec![4]);
        assert!(matches!(remove_layer(&s1, &p1, 1, &c()), Err(MorphError::ConstraintViolated(_))));
    }

    #[test]
    fn remove_layer_reindexes_skips() {
        let spec = NetSpec {
            input_dim: 2,
            output_dim: 2,
            hidden: vec![3, 4, 3, 3],
            skips: vec![Skip { from: 1, to: 3 }, Skip { from: 3, to: 4 }, Skip { from: 0, to: 2 }],
        };
        let spec = NetSpec { skips: spec.skips[..2].to_vec(), ..spec };
        let p = init_params(&spec, &mut rng_for(6, &[]));
        let (s, p2) = remove_layer(&spec, &p, 2, &c()).unwrap();
        assert_eq!(s.hidden, vec![3, 3, 3]);
        assert_eq!(s.skips, vec![Skip { from: 1, to: 2 }, Skip { from: 2, to: 3 }]);
        assert_eq!(p2.len(), s.param_count());
        let (s, _) = remove_layer(&spec, &p, 3, &c()).unwrap();
        assert!(s.skips.is_empty());
    }

    #[test]
    fn narrow_shrinks() {
        let (s, p) = base();
        let (s2, p2) = narrow(&s, &p, 2, 2, &c()).unwrap();
        assert_eq!(s2.width(2), 2);
        assert!(p2.len() < p.len());
        assert!(matches!(narrow(&s2, &p2, 2, 1, &c()), Err(MorphError::ConstraintViolated(_))));
    }

    #[test]
    fn zero_scale_skip_removal_is_neutral() {
        let spec = NetSpec::new(3, vec![4, 4, 4], 2);
        let params = init_params(&spec, &mut rng_for(7, &[]));
        let (s, p) = add_skip(&spec, &params, 1, 3, &c()).unwrap();
        let (s2, p2) = remove_skip(&s, &p, 0, &c()).unwrap();
        assert_eq!(s2, spec);
        let x = probe(32, 3, 7);
        assert!(output_deviation((&s, &p), (&s2, &p2), &x).unwrap() <= 1e-12);
        assert!(matches!(remove_skip(&s2, &p2, 0, &c()), Err(MorphError::BadPosition(_))));
    }

    #[test]
    fn morphed_networks_stay_trainable() {
        let (s, p) = base();
        let mut rng = rng_for(8, &[]);
        let x = probe(10, 3, 8);
        let y: Vec<usize> = (0..10).map(|i| i % 2).collect();
        for kind in MorphKind::ALL {
            for _ in 0..5 {
                if let Ok((_, s2, p2)) = random_morphism(&s, &p, kind, &c(), &mut rng) {
                    assert_eq!(Weights::unflatten(&s2, &p2).unwrap().flatten(), p2);
                    let (l, g) = loss_and_grad(&s2, &p2, &Batch { inputs: &x, labels: &y }).unwrap();
                    assert!(l.is_finite() && g.iter().all(|v| v.is_finite()));
                }
            }
        }
    }

    #[test]
    fn local_graph_shape_and_audit() {
        let (s, p) = base();
        let x = probe(64, 3, 9);
        let cfg = LocalGraphConfig::default();
        let (g, audit) = build_local_graph(&s, &p, &cfg, 0, &x, &mut rng_for(9, &[])).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.edge_count(), 8);
        assert_eq!(audit.len(), 8);
        for rec in &audit {
            let child = g.payload(g.node(rec.child_id).unwrap());
            cfg.constraints.check(&child.spec).unwrap();
            if MorphKind::from_name(&rec.kind).unwrap().is_positive() {
                assert!(rec.preserved, "{rec:?}");
            }
        }
        let (g2, audit2) = build_local_graph(&s, &p, &cfg, 0, &x, &mut rng_for(9, &[])).unwrap();
        assert_eq!(audit, audit2);
        assert_eq!(g.payloads(), g2.payloads());
    }

    #[test]
    fn degenerate_mix() {
        let (s, p) = base();
        let cfg = LocalGraphConfig { mix: MorphMix::only(MorphKind::Deepen), ..Default::default() };
        let (g, _) = build_local_graph(&s, &p, &cfg, 0, &probe(4, 3, 1), &mut rng_for(10, &[])).unwrap();
        assert!(g.payloads()[1..].iter().all(|c| c.spec.depth() == 4));
        let stuck = LocalGraphConfig { mix: MorphMix::only(MorphKind::RemoveSkip), ..Default::default() };
        let nets = NetSpec::new(3, vec![4], 2);
        let pp = init_params(&nets, &mut rng_for(1, &[]));
        assert!(matches!(
            build_local_graph(&nets, &pp, &stuck, 0, &probe(4, 3, 1), &mut rng_for(10, &[])),
            Err(MorphError::ConstraintViolated(_))
        ));
    }

    #[test]
    fn complete_topology() {
        let (s, p) = base();
        let cfg = LocalGraphConfig { n_neigh: 3, topology: Topology::Complete, ..Default::default() };
        let (g, _) = build_local_graph(&s, &p, &cfg, 2, &probe(4, 3, 1), &mut rng_for(11, &[])).unwrap();
        assert_eq!(g.edge_count(), 6);
    }

    #[test]
    fn mix_sampling_frequencies() {
        let mix = MorphMix::default();
        let mut rng = rng_for(12, &[]);
        let mut hits = std::collections::HashMap::new();
        for _ in 0..20_000 {
            *hits.entry(mix.sample(&mut rng)).or_insert(0usize) += 1;
        }
        for (k, w) in &mix.weights {
            let freq = hits[k] as f64 / 20_000.0;
            assert!((freq - w).abs() < 0.015, "{k:?} {freq}");
        }
    }
}
