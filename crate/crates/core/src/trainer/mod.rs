//! Training loops: the bilevel leader/follower loop, the Lagrangian
//! baseline and the unconstrained baseline.
//!
//! Every run is single-threaded and a pure function of
//! `(spec, data, config)`; wall-clock time is recorded next to the trace
//! but never inside it.

mod sweep;

pub use sweep::{
    pareto_filter, pareto_indices, pareto_sweep, run_once, spearman, RunSummary, SeedRun,
    SweepResult, SweepRow,
};

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{minibatch_indices, Dataset};
use crate::error::{Error, Result};
use crate::losses::{bce_loss, FairnessLoss, GroupedPredictions, LossEval};
use crate::metrics::{self, DEFAULT_THRESHOLD};
use crate::model::{build_network, NetworkSpec, Partition, PartitionedParams};
use crate::ndcore::{self, backward_masked, LayerGrad, Matrix, ParamGrads};
use crate::optim::{LayerOptimizer, OptimizerKind};

/// Shuffle stream of the accuracy player (and of the single-loss modes).
pub const ACCURACY_STREAM: u64 = 1;
/// Shuffle stream of the fairness player.
pub const FAIRNESS_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Bilevel,
    Lagrangian,
    /// Plain BCE on every parameter.
    None,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bilevel => "bilevel",
            Mode::Lagrangian => "lagrangian",
            Mode::None => "none",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilevel" => Ok(Mode::Bilevel),
            "lagrangian" => Ok(Mode::Lagrangian),
            "none" => Ok(Mode::None),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected bilevel, lagrangian or none)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_accuracy: f64,
    pub lr_fairness: f64,
    /// Multiplier on the fairness player's step: its rate is
    /// `lr_fairness * eta`.
    pub eta: f64,
    /// Weight of the fairness term in Lagrangian mode.
    pub lambda: f64,
    pub seed: u64,
    pub fairness_loss: FairnessLoss,
    pub mode: Mode,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 100,
            lr_accuracy: 1e-3,
            lr_fairness: 1e-5,
            eta: 100.0,
            lambda: 1e-3,
            seed: 0,
            fairness_loss: FairnessLoss::Dp,
            mode: Mode::Bilevel,
            optimizer: OptimizerKind::Adam,
        }
    }
}

fn check_rate(name: &str, v: f64, allow_zero: bool) -> Result<()> {
    let ok = v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0));
    if ok {
        Ok(())
    } else {
        let want = if allow_zero { "non-negative" } else { "positive" };
        Err(Error::Config(format!("{name} must be finite and {want}, got {v}")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        check_rate("lr_accuracy", self.lr_accuracy, false)?;
        check_rate("lr_fairness", self.lr_fairness, true)?;
        check_rate("eta", self.eta, true)?;
        check_rate("lambda", self.lambda, true)?;
        Ok(())
    }

    /// Effective learning rate of the fairness player.
    pub fn fairness_rate(&self) -> f64 {
        self.lr_fairness * self.eta
    }

    /// The Lagrangian weight that matches this bilevel configuration.
    pub fn matched_lambda(&self) -> f64 {
        self.fairness_rate()
    }

    /// Same settings, switched to `mode`; Lagrangian gets the matched λ.
    pub fn matched(&self, mode: Mode) -> Self {
        let mut cfg = self.clone();
        cfg.mode = mode;
        if mode == Mode::Lagrangian {
            cfg.lambda = self.matched_lambda();
        }
        cfg
    }
}

/// One completed epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Full-pass BCE on the training set after the epoch.
    pub bce_train: f64,
    pub bce_test: f64,
    pub acc_test: f64,
    pub dp_test: f64,
    /// Mean fairness loss over the batches where it was defined.
    pub fairness_loss: f64,
    pub skipped_batches: usize,
    /// Seconds spent in the update loop, evaluation excluded.
    pub epoch_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
}

pub const TRACE_HEADER: &str =
    "epoch,bce_train,bce_test,acc_test,dp_test,fairness_loss,skipped_batches";
pub const TIMING_HEADER: &str = "epoch,epoch_seconds";

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Deterministic part of the trace; floats use the shortest
    /// round-trip representation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.bce_train,
                r.bce_test,
                r.acc_test,
                r.dp_test,
                r.fairness_loss,
                r.skipped_batches
            );
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from(TIMING_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{},{}", r.epoch, r.epoch_seconds);
        }
        out
    }

    /// Mean epoch time over epochs numbered above `warmup`.
    pub fn mean_epoch_seconds(&self, warmup: usize) -> Option<f64> {
        let t: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.epoch > warmup)
            .map(|r| r.epoch_seconds)
            .collect();
        (!t.is_empty()).then(|| t.iter().sum::<f64>() / t.len() as f64)
    }
}

/// Per-player shuffle generators, both derived from the run seed.
#[derive(Clone, Debug)]
pub struct EpochRngs {
    pub accuracy: ChaCha8Rng,
    pub fairness: ChaCha8Rng,
}

impl EpochRngs {
    pub fn new(seed: u64) -> Self {
        let mut accuracy = ChaCha8Rng::seed_from_u64(seed);
        accuracy.set_stream(ACCURACY_STREAM);
        let mut fairness = ChaCha8Rng::seed_from_u64(seed);
        fairness.set_stream(FAIRNESS_STREAM);
        Self { accuracy, fairness }
    }
}

/// Counts of substeps that touched the other player's parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolationAudit {
    pub steps: usize,
    /// Accuracy substeps that changed θ_f.
    pub accuracy_violations: usize,
    /// Fairness substeps that changed θ_a.
    pub fairness_violations: usize,
}

impl IsolationAudit {
    pub fn violations(&self) -> usize {
        self.accuracy_violations + self.fairness_violations
    }
}

/// What one epoch's update loop produced, before evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub fairness_loss: f64,
    pub skipped_batches: usize,
    pub steps: usize,
}

#[derive(Clone, Debug)]
enum Optimizers {
    Bilevel {
        accuracy: LayerOptimizer,
        fairness: LayerOptimizer,
    },
    Joint(LayerOptimizer),
}

/// Training state that persists across epochs: parameters, optimizer
/// moments and shuffle generators.
#[derive(Clone, Debug)]
pub struct Trainer {
    spec: NetworkSpec,
    cfg: TrainConfig,
    params: PartitionedParams,
    optimizers: Optimizers,
    rngs: EpochRngs,
    accuracy_mask: Vec<bool>,
    fairness_mask: Vec<bool>,
    epoch: usize,
}

fn take_entries(grads: ParamGrads, mask: &[bool]) -> Result<Vec<(usize, LayerGrad)>> {
    grads
        .layers
        .into_iter()
        .enumerate()
        .filter(|(l, _)| mask[*l])
        .map(|(l, g)| {
            g.map(|g| (l, g))
                .ok_or_else(|| Error::Contract(format!("missing gradient for layer {l}")))
        })
        .collect()
}

fn fairness_eval(
    kind: FairnessLoss,
    yhat: &[f64],
    y: &[f64],
    groups: &[usize],
    k: usize,
) -> Result<Option<LossEval>> {
    let gp = GroupedPredictions::new(yhat, groups, k)?;
    let gp = match kind {
        FairnessLoss::Eo => gp.with_labels(y)?,
        FairnessLoss::Dp => gp,
    };
    match kind.eval(&gp) {
        Ok(l) => Ok(Some(l)),
        Err(Error::EmptyGroupInBatch { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

impl Trainer {
    /// Fresh parameters from `cfg.seed`.
    pub fn new(spec: &NetworkSpec, cfg: &TrainConfig) -> Result<Self> {
        spec.validate()?;
        let params = build_network(spec, cfg.seed)?;
        Self::with_params(spec, cfg, params)
    }

    pub fn with_params(spec: &NetworkSpec, cfg: &TrainConfig, params: PartitionedParams) -> Result<Self> {
        cfg.validate()?;
        params.check_against(spec)?;
        let optimizers = match cfg.mode {
            Mode::Bilevel => Optimizers::Bilevel {
                accuracy: LayerOptimizer::for_partition(
                    cfg.optimizer,
                    cfg.lr_accuracy,
                    &params,
                    Partition::Accuracy,
                )?,
                fairness: LayerOptimizer::for_partition(
                    cfg.optimizer,
                    cfg.fairness_rate(),
                    &params,
                    Partition::Fairness,
                )?,
            },
            Mode::Lagrangian | Mode::None => {
                Optimizers::Joint(LayerOptimizer::for_all(cfg.optimizer, cfg.lr_accuracy, &params)?)
            }
        };
        Ok(Self {
            spec: spec.clone(),
            cfg: cfg.clone(),
            accuracy_mask: params.mask(Partition::Accuracy),
            fairness_mask: params.mask(Partition::Fairness),
            params,
            optimizers,
            rngs: EpochRngs::new(cfg.seed),
            epoch: 0,
        })
    }

    pub fn params(&self) -> &PartitionedParams {
        &self.params
    }

    pub fn into_params(self) -> PartitionedParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    fn check_data(&self, ds: &Dataset) -> Result<()> {
        if ds.width() != self.spec.input_width {
            return Err(Error::Config(format!(
                "dataset has {} features but the network expects {}",
                ds.width(),
                self.spec.input_width
            )));
        }
        if ds.is_empty() {
            return Err(Error::Precondition("empty training set".into()));
        }
        if self.cfg.fairness_loss == FairnessLoss::Eo && ds.k != 2 {
            return Err(Error::Config(format!(
                "equalized odds needs a binary sensitive attribute, got {} groups",
                ds.k
            )));
        }
        Ok(())
    }

    /// Runs one epoch of the configured mode's update loop.
    pub fn run_epoch(&mut self, ds: &Dataset) -> Result<EpochStats> {
        self.run_epoch_audited(ds, None)
    }

    /// As [`Trainer::run_epoch`], checking player isolation around every
    /// bilevel substep when `audit` is given.
    pub fn run_epoch_audited(
        &mut self,
        ds: &Dataset,
        audit: Option<&mut IsolationAudit>,
    ) -> Result<EpochStats> {
        self.check_data(ds)?;
        let stats = match self.cfg.mode {
            Mode::Bilevel => self.bilevel_epoch(ds, audit)?,
            Mode::Lagrangian => self.single_loss_epoch(ds, self.cfg.lambda, true)?,
            Mode::None => self.single_loss_epoch(ds, 0.0, false)?,
        };
        self.epoch += 1;
        Ok(stats)
    }

    fn bilevel_epoch(&mut self, ds: &Dataset, mut audit: Option<&mut IsolationAudit>) -> Result<EpochStats> {
        let Optimizers::Bilevel { accuracy, fairness } = &mut self.optimizers else {
            return Err(Error::Contract("bilevel epoch on a joint optimizer".into()));
        };
        let bs = self.cfg.batch_size.min(ds.len());
        let acc_batches = minibatch_indices(ds.len(), bs, &mut self.rngs.accuracy)?;
        let fair_batches = minibatch_indices(ds.len(), bs, &mut self.rngs.fairness)?;
        let mut stats = EpochStats::default();
        let mut fair_sum = 0.0;
        let mut fair_n = 0usize;

        for (b_a, b_f) in acc_batches.iter().zip(&fair_batches) {
            // accuracy substep
            let before_f = audit.as_ref().map(|_| self.params.checksum(Partition::Fairness));
            let (x, y, _) = ds.batch(b_a);
            let (out, tape) = ndcore::forward(self.params.layers(), &x)?;
            let l = bce_loss(out.data(), &y)?;
            let d = Matrix::column(l.grad)?;
            let g = backward_masked(self.params.layers(), &tape, &d, &self.accuracy_mask, false)?;
            accuracy.step(&mut self.params, &take_entries(g, &self.accuracy_mask)?)?;
            if let (Some(a), Some(c)) = (audit.as_deref_mut(), before_f) {
                if self.params.checksum(Partition::Fairness) != c {
                    a.accuracy_violations += 1;
                }
            }

            // fairness substep
            let before_a = audit.as_ref().map(|_| self.params.checksum(Partition::Accuracy));
            let (x, y, groups) = ds.batch(b_f);
            let (out, tape) = ndcore::forward(self.params.layers(), &x)?;
            match fairness_eval(self.cfg.fairness_loss, out.data(), &y, &groups, ds.k)? {
                None => stats.skipped_batches += 1,
                Some(l) => {
                    fair_sum += l.value;
                    fair_n += 1;
                    let d = Matrix::column(l.grad)?;
                    let g = backward_masked(self.params.layers(), &tape, &d, &self.fairness_mask, false)?;
                    fairness.step(&mut self.params, &take_entries(g, &self.fairness_mask)?)?;
                }
            }
            if let (Some(a), Some(c)) = (audit.as_deref_mut(), before_a) {
                if self.params.checksum(Partition::Accuracy) != c {
                    a.fairness_violations += 1;
                }
                a.steps += 1;
            }
            stats.steps += 1;
        }
        stats.fairness_loss = if fair_n > 0 { fair_sum / fair_n as f64 } else { 0.0 };
        Ok(stats)
    }

    /// Lagrangian (`use_fairness`) or unconstrained epoch: one batch per
    /// step, every parameter updated by one optimizer.
    fn single_loss_epoch(&mut self, ds: &Dataset, lambda: f64, use_fairness: bool) -> Result<EpochStats> {
        let Optimizers::Joint(opt) = &mut self.optimizers else {
            return Err(Error::Contract("single-loss epoch on bilevel optimizers".into()));
        };
        let bs = self.cfg.batch_size.min(ds.len());
        let batches = minibatch_indices(ds.len(), bs, &mut self.rngs.accuracy)?;
        let all = vec![true; self.params.layers().len()];
        let mut stats = EpochStats::default();
        let mut fair_sum = 0.0;
        let mut fair_n = 0usize;
        for b in &batches {
            let (x, y, groups) = ds.batch(b);
            let (out, tape) = ndcore::forward(self.params.layers(), &x)?;
            let mut loss = bce_loss(out.data(), &y)?;
            match fairness_eval(self.cfg.fairness_loss, out.data(), &y, &groups, ds.k)? {
                Some(f) => {
                    fair_sum += f.value;
                    fair_n += 1;
                    if use_fairness {
                        for (a, g) in loss.grad.iter_mut().zip(&f.grad) {
                            *a += lambda * g;
                        }
                    }
                }
                None => stats.skipped_batches += 1,
            }
            let d = Matrix::column(loss.grad)?;
            let g = backward_masked(self.params.layers(), &tape, &d, &all, false)?;
            opt.step(&mut self.params, &take_entries(g, &all)?)?;
            stats.steps += 1;
        }
        stats.fairness_loss = if fair_n > 0 { fair_sum / fair_n as f64 } else { 0.0 };
        Ok(stats)
    }

    /// Runs one epoch and evaluates on both sets.
    pub fn epoch_record(&mut self, train: &Dataset, test: &Dataset) -> Result<EpochRecord> {
        let start = Instant::now();
        let stats = self.run_epoch(train)?;
        let epoch_seconds = start.elapsed().as_secs_f64();
        let yhat_train = predictions(&self.params, train)?;
        let yhat_test = predictions(&self.params, test)?;
        let pred = metrics::threshold_predictions(&yhat_test, DEFAULT_THRESHOLD);
        Ok(EpochRecord {
            epoch: self.epoch,
            bce_train: bce_loss(&yhat_train, &train.y)?.value,
            bce_test: bce_loss(&yhat_test, &test.y)?.value,
            acc_test: metrics::accuracy(&yhat_test, &test.y, DEFAULT_THRESHOLD)?,
            dp_test: metrics::dp_difference(&pred, &test.groups, test.k)?,
            fairness_loss: stats.fairness_loss,
            skipped_batches: stats.skipped_batches,
            epoch_seconds,
        })
    }
}

/// Network outputs for every row of `ds`.
pub fn predictions(params: &PartitionedParams, ds: &Dataset) -> Result<Vec<f64>> {
    Ok(ndcore::predict(params.layers(), &ds.x)?.into_data())
}

/// Test-set report for trained parameters.
pub fn evaluate_params(params: &PartitionedParams, ds: &Dataset) -> Result<metrics::EvalReport> {
    let yhat = predictions(params, ds)?;
    metrics::evaluate(&yhat, &ds.y, &ds.groups, ds.k)
}

/// One bilevel epoch on existing state.
pub fn bilevel_epoch(trainer: &mut Trainer, ds: &Dataset) -> Result<EpochStats> {
    if trainer.cfg.mode != Mode::Bilevel {
        return Err(Error::Precondition("bilevel_epoch needs mode = bilevel".into()));
    }
    trainer.run_epoch(ds)
}

/// One Lagrangian epoch on existing state.
pub fn lagrangian_epoch(trainer: &mut Trainer, ds: &Dataset) -> Result<EpochStats> {
    if trainer.cfg.mode != Mode::Lagrangian {
        return Err(Error::Precondition("lagrangian_epoch needs mode = lagrangian".into()));
    }
    trainer.run_epoch(ds)
}

/// Trains from a fresh initialization for `cfg.epochs` epochs, evaluating
/// on `test` after each.
pub fn train(
    spec: &NetworkSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(PartitionedParams, TrainTrace)> {
    let mut trainer = Trainer::new(spec, cfg)?;
    for ds in [train, test] {
        if ds.width() != spec.input_width {
            return Err(Error::Config(format!(
                "dataset has {} features but the network expects {}",
                ds.width(),
                spec.input_width
            )));
        }
    }
    let mut trace = TrainTrace::default();
    for _ in 0..cfg.epochs {
        trace.records.push(trainer.epoch_record(train, test)?);
    }
    Ok((trainer.into_params(), trace))
}

#[cfg(test)]
mod tests;
