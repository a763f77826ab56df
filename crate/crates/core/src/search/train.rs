//! Single-network training: pretraining, final SGDR training, evaluation.

use serde::{Deserialize, Serialize};

use crate::data::{BatchStream, Dataset, Split};
use crate::dynamics::{train_step, NodeState, Schedule, TrainRule};
use crate::nn::{self, Batch, NetParams, NetSpec};
use crate::rng::{derive_seed, tag};

use super::SearchError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

const EVAL_CHUNK: usize = 512;

/// Mean loss and accuracy over every row of a split.
pub fn evaluate(spec: &NetSpec, params: &NetParams, data: &Dataset, split: Split) -> Result<Metrics, SearchError> {
    let idx = data.splits.get(split);
    if idx.is_empty() {
        return Err(SearchError::Config(format!("split {split:?} is empty")));
    }
    let (mut loss, mut hits) = (0.0, 0.0);
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.gather(chunk);
        let b = Batch { inputs: &x, labels: &y };
        let rows = chunk.len() as f64;
        loss += nn::loss(spec, params, &b)? * rows;
        hits += nn::accuracy(spec, params, &b)? * rows;
    }
    let n = idx.len() as f64;
    let m = Metrics { loss: loss / n, accuracy: hits / n };
    if !m.loss.is_finite() {
        return Err(SearchError::Divergence(format!("non-finite {split:?} loss")));
    }
    Ok(m)
}

/// Runs `iters` training steps on `state` with step sizes `tau(k)`.
fn run_steps(
    spec: &NetSpec,
    state: &mut NodeState,
    data: &Dataset,
    stream: &mut BatchStream,
    iters: usize,
    rule: TrainRule,
    tau: impl Fn(usize) -> f64,
) -> Result<f64, SearchError> {
    let mut last = f64::NAN;
    for k in 0..iters {
        let (x, y) = data.gather(&stream.next_batch());
        let params = NetParams { flat: std::mem::take(&mut state.x) };
        let res = nn::loss_and_grad(spec, &params, &Batch { inputs: &x, labels: &y });
        state.x = params.flat;
        let (loss, grad) = res?;
        if !loss.is_finite() {
            return Err(SearchError::Divergence(format!("training loss is {loss}")));
        }
        train_step(state, &grad, tau(k), rule)?;
        if !state.is_finite() {
            return Err(SearchError::Divergence("parameters became non-finite".into()));
        }
        last = loss;
    }
    Ok(last)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lam_hi: f64,
    pub lam_lo: f64,
    pub batch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 20, lam_hi: 0.5, lam_lo: 1e-7, batch: crate::data::DEFAULT_TRAIN_BATCH }
    }
}

/// Trains a fresh network with a single cosine decay from `lam_hi` to `lam_lo`.
pub fn pretrain(
    spec: &NetSpec,
    params: &NetParams,
    data: &Dataset,
    cfg: &PretrainConfig,
    rule: TrainRule,
    seed: u64,
) -> Result<NetParams, SearchError> {
    if cfg.epochs == 0 {
        return Ok(params.clone());
    }
    let mut stream = BatchStream::new(data.splits.train.clone(), cfg.batch, derive_seed(seed, &[tag::PRETRAIN]))?;
    let iters = cfg.epochs * stream.batches_per_epoch();
    let schedule = Schedule { lam_start: cfg.lam_hi, lam_final: cfg.lam_lo, period: iters };
    let mut state = NodeState::at_rest(params.flat.clone());
    run_steps(spec, &mut state, data, &mut stream, iters, rule, |k| schedule.tau(k))?;
    Ok(NetParams { flat: state.x })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalConfig {
    /// Upper bound on training epochs.
    pub max_epochs: usize,
    pub cycle_epochs: usize,
    pub lam_start: f64,
    pub lam_final: f64,
    /// Cycles without improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub batch: usize,
}

impl Default for FinalConfig {
    fn default() -> Self {
        FinalConfig {
            max_epochs: 360,
            cycle_epochs: 18,
            lam_start: 0.05,
            lam_final: 1e-7,
            patience: 3,
            min_delta: 1e-4,
            batch: crate::data::DEFAULT_TRAIN_BATCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    #[serde(skip)]
    pub params: NetParams,
    pub epochs: usize,
    pub cycles: usize,
    pub val: Metrics,
    pub test: Metrics,
}

/// Warm-restart training until the validation loss stops improving by at
/// least `min_delta` for `patience` consecutive cycles, or `max_epochs` is
/// reached. Returns the parameters with the best validation loss.
/// `on_cycle` sees the best parameters after every cycle.
pub fn final_train(
    spec: &NetSpec,
    params: &NetParams,
    data: &Dataset,
    cfg: &FinalConfig,
    rule: TrainRule,
    seed: u64,
    on_cycle: &mut dyn FnMut(usize, &NetParams) -> Result<(), SearchError>,
) -> Result<FinalReport, SearchError> {
    let mut best = params.clone();
    let mut best_val = evaluate(spec, params, data, Split::Val)?;
    let (mut epochs, mut cycles, mut stale) = (0, 0, 0);
    if cfg.max_epochs > 0 {
        let mut stream = BatchStream::new(data.splits.train.clone(), cfg.batch, derive_seed(seed, &[tag::FINAL]))?;
        let bpe = stream.batches_per_epoch();
        let mut state = NodeState::at_rest(params.flat.clone());
        while epochs < cfg.max_epochs && stale < cfg.patience {
            let len = cfg.cycle_epochs.max(1).min(cfg.max_epochs - epochs);
            let schedule = Schedule { lam_start: cfg.lam_start, lam_final: cfg.lam_final, period: len * bpe };
            run_steps(spec, &mut state, data, &mut stream, len * bpe, rule, |k| schedule.tau(k))?;
            epochs += len;
            cycles += 1;
            let cur = NetParams { flat: state.x.clone() };
            let val = evaluate(spec, &cur, data, Split::Val)?;
            if val.loss < best_val.loss - cfg.min_delta {
                best_val = val;
                best = cur;
                stale = 0;
            } else {
                stale += 1;
            }
            log::debug!("final cycle {cycles}: val loss {:.5} (best {:.5})", val.loss, best_val.loss);
            on_cycle(cycles, &best)?;
        }
    }
    let test = evaluate(spec, &best, data, Split::Test)?;
    Ok(FinalReport { params: best, epochs, cycles, val: best_val, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::nn::init_params;
    use crate::rng::rng_for;

    fn blobs() -> (Dataset, NetSpec, NetParams) {
        let data = make_blobs(600, 2, 3, 0.6, 5).unwrap();
        let spec = NetSpec::new(2, vec![8], 3);
        let p = init_params(&spec, &mut rng_for(5, &[]));
        (data, spec, p)
    }

    #[test]
    fn pretrain_lowers_loss_and_is_deterministic() {
        let (data, spec, p) = blobs();
        let cfg = PretrainConfig::default();
        let before = evaluate(&spec, &p, &data, Split::Train).unwrap().loss;
        let a = pretrain(&spec, &p, &data, &cfg, TrainRule::default(), 1).unwrap();
        let after = evaluate(&spec, &a, &data, Split::Train).unwrap().loss;
        assert!(after < before, "{after} >= {before}");
        assert_eq!(a, pretrain(&spec, &p, &data, &cfg, TrainRule::default(), 1).unwrap());
        let none = PretrainConfig { epochs: 0, ..cfg };
        assert_eq!(pretrain(&spec, &p, &data, &none, TrainRule::default(), 1).unwrap(), p);
    }

    #[test]
    fn final_train_zero_budget() {
        let (data, spec, p) = blobs();
        let cfg = FinalConfig { max_epochs: 0, ..Default::default() };
        let rep = final_train(&spec, &p, &data, &cfg, TrainRule::default(), 1, &mut |_, _| Ok(())).unwrap();
        assert_eq!(rep.params, p);
        assert_eq!(rep.epochs, 0);
        assert_eq!(rep.test, evaluate(&spec, &p, &data, Split::Test).unwrap());
    }

    #[test]
    fn final_train_accuracy_and_patience() {
        let (data, spec, p) = blobs();
        let cfg = FinalConfig { cycle_epochs: 5, max_epochs: 400, ..Default::default() };
        let mut seen = 0;
        let rep = final_train(&spec, &p, &data, &cfg, TrainRule::default(), 2, &mut |_, _| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert!(rep.test.accuracy >= 0.95, "{:?}", rep.test);
        assert!(rep.epochs < 400);
        assert_eq!(seen, rep.cycles);
        assert_eq!(rep.epochs, 5 * rep.cycles);
        let strict = FinalConfig { min_delta: 1e9, ..cfg };
        let stuck = final_train(&spec, &p, &data, &strict, TrainRule::default(), 3, &mut |_, _| Ok(())).unwrap();
        assert_eq!(stuck.cycles, cfg.patience);
        assert_eq!(stuck.params, p);
    }
}
