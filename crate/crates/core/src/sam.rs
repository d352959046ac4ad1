//! Sharpness-aware minimization over SGD with momentum and weight decay, and the epoch loop.
//!
//! Each step evaluates the gradient at `w`, ascends to `w + ε` with
//! `ε = ρ·g / (‖g‖₂ + τ)`, evaluates the gradient there, and applies the base update with
//! that second gradient at the original `w`:
//!
//! ```text
//! buf ← momentum·buf + (g₂ + weight_decay·w)
//! w   ← w − lr·buf
//! ```
//!
//! The perturbed point is a separate copy, so `w` itself is never modified until the
//! base update.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::image::ImageStore;
use crate::loss::{total_loss, LossBreakdown};
use crate::nn::{Batch, Network, ParamVector, Real};
use crate::rng::{derive_seed, rng_from_seed};

/// Keeps `‖ε‖` finite when the gradient vanishes.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamConfig {
    pub rho: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for SamConfig {
    fn default() -> Self {
        Self {
            rho: 0.05,
            lr: 5e-4,
            momentum: 0.9,
            weight_decay: 5e-3,
            epochs: 100,
            batch_size: 16,
            lambda: 20.0,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl SamConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.rho >= 0.0 && self.rho.is_finite(), "rho must be >= 0"),
            (self.lr > 0.0 && self.lr.is_finite(), "lr must be > 0"),
            ((0.0..1.0).contains(&self.momentum), "momentum must lie in [0, 1)"),
            (self.weight_decay >= 0.0 && self.weight_decay.is_finite(), "weight_decay must be >= 0"),
            (self.batch_size > 0, "batch_size must be positive"),
            (self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be >= 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::invalid(format!("train.{msg}"))),
            None => Ok(()),
        }
    }
}

/// Momentum buffers (kept in `f64`) and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub momentum: ParamVector<f64>,
    pub step_count: u64,
}

impl OptimizerState {
    pub fn new<T: Real>(params: &ParamVector<T>) -> Self {
        Self {
            momentum: params.cast::<f64>().zeros_like(),
            step_count: 0,
        }
    }
}

/// A loss with gradient, evaluated at arbitrary parameters.
pub trait Objective<T: Real> {
    fn evaluate(&mut self, params: &ParamVector<T>) -> Result<(LossBreakdown, ParamVector<T>)>;
}

/// Total multi-task loss of `net` on one batch.
pub struct BatchObjective<'a> {
    pub net: &'a Network,
    pub batch: &'a Batch,
    pub lambda: f64,
}

impl<T: Real> Objective<T> for BatchObjective<'_> {
    fn evaluate(&mut self, params: &ParamVector<T>) -> Result<(LossBreakdown, ParamVector<T>)> {
        let fwd = self.net.forward(params, self.batch)?;
        let (loss, upstream) = total_loss(&fwd.fake_logits, &fwd.dem_logits, self.batch, self.lambda)?;
        let grad = self.net.backward(params, self.batch, &upstream, &fwd.cache)?;
        Ok((loss, grad))
    }
}

/// `ε = ρ·g / (‖g‖₂ + τ)`.
///
/// Rounding can leave the stored `ε` a few ulps outside the ball, so the scale is nudged
/// down until `‖ε‖₂ ≤ ρ` holds for the values actually returned.
pub fn compute_perturbation<T: Real>(grad: &ParamVector<T>, rho: f64) -> Result<ParamVector<T>> {
    if !grad.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::invalid(format!("rho {rho} must be finite and non-negative")));
    }
    let mut scale = rho / (grad.norm() + NORM_EPS);
    loop {
        let eps = grad.map(|g| T::from_f64(scale * g.to_f64()));
        if eps.norm() <= rho {
            return Ok(eps);
        }
        scale *= 1.0 - 4.0 * T::EPSILON;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Loss at the perturbed point `w + ε`.
    pub loss: LossBreakdown,
    /// Loss at the entry point `w`.
    pub loss_at_entry: LossBreakdown,
    pub grad_norm: f64,
    pub eps_norm: f64,
}

/// One SAM step. On error the parameters and state are left untouched.
pub fn sam_step<T: Real>(
    params: &mut ParamVector<T>,
    objective: &mut dyn Objective<T>,
    config: &SamConfig,
    state: &mut OptimizerState,
) -> Result<StepReport> {
    if !state.momentum.same_layout(params) {
        return Err(Error::Shape("optimizer state does not match the parameters".into()));
    }
    let (loss_at_entry, g1) = objective.evaluate(params)?;
    if !loss_at_entry.is_finite() {
        return Err(Error::NonFinite("loss at w".into()));
    }
    let eps = compute_perturbation(&g1, config.rho)?;
    let perturbed = params.zip_map(&eps, |w, e| T::from_f64(w.to_f64() + e.to_f64()))?;
    let (loss, g2) = objective.evaluate(&perturbed)?;
    if !loss.is_finite() || !g2.all_finite() {
        return Err(Error::NonFinite("loss at w + ε".into()));
    }

    let (momentum, wd, lr) = (config.momentum, config.weight_decay, config.lr);
    for ((w_t, g_t), b_t) in params
        .tensors_mut()
        .iter_mut()
        .zip(g2.tensors())
        .zip(state.momentum.tensors_mut())
    {
        for ((w, g), b) in w_t.data.iter_mut().zip(&g_t.data).zip(b_t.data.iter_mut()) {
            let wf = w.to_f64();
            *b = momentum * *b + (g.to_f64() + wd * wf);
            *w = T::from_f64(wf - lr * *b);
        }
    }
    state.step_count += 1;
    Ok(StepReport {
        loss,
        loss_at_entry,
        grad_norm: g1.norm(),
        eps_norm: eps.norm(),
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub l_real: f64,
    pub l_dem: f64,
    pub var_acc: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub eps_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: Vec<StepLog>,
    pub wall_time_secs: f64,
}

impl EpochLog {
    pub fn mean_total(&self) -> f64 {
        self.steps.iter().map(|s| s.total).sum::<f64>() / self.steps.len().max(1) as f64
    }
}

pub fn make_batch(records: &[&SampleRecord], images: &dyn ImageStore) -> Result<Batch> {
    let mut imgs = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    let mut groups = Vec::with_capacity(records.len());
    for r in records {
        imgs.push(images.load(r)?);
        labels.push(r.label.as_u8());
        groups.push(r.group.index());
    }
    Batch::new(imgs, labels, groups)
}

/// Runs one epoch (1-based `epoch`) over the train split: shuffle with an epoch-specific
/// seed, fixed-size batches with the short last batch kept, one SAM step per batch.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch<T: Real>(
    net: &Network,
    params: &mut ParamVector<T>,
    manifest: &DatasetManifest,
    images: &dyn ImageStore,
    config: &SamConfig,
    state: &mut OptimizerState,
    epoch: usize,
) -> Result<EpochLog> {
    config.validate()?;
    let mut order: Vec<&SampleRecord> = manifest.split(Split::Train).collect();
    if order.is_empty() {
        return Err(Error::invalid("train split is empty"));
    }
    let start = Instant::now();
    order.shuffle(&mut rng_from_seed(derive_seed(config.seed, epoch as u64)));
    let mut steps = Vec::with_capacity(order.len().div_ceil(config.batch_size));
    for (step, chunk) in order.chunks(config.batch_size).enumerate() {
        let batch = make_batch(chunk, images)?;
        let mut objective = BatchObjective {
            net,
            batch: &batch,
            lambda: config.lambda,
        };
        let report = sam_step(params, &mut objective, config, state).map_err(|e| match e {
            Error::NonFinite(what) => Error::NonFinite(format!("epoch {epoch} step {step}: {what}")),
            other => other,
        })?;
        steps.push(StepLog {
            epoch,
            step,
            l_real: report.loss.l_real,
            l_dem: report.loss.l_dem,
            var_acc: report.loss.var_acc,
            total: report.loss.total,
            grad_norm: report.grad_norm,
            eps_norm: report.eps_norm,
        });
    }
    Ok(EpochLog {
        epoch,
        steps,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs `config.epochs` epochs from a fresh optimizer state, calling `on_epoch` after each.
pub fn fit<T: Real>(
    net: &Network,
    params: &mut ParamVector<T>,
    manifest: &DatasetManifest,
    images: &dyn ImageStore,
    config: &SamConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ParamVector<T>) -> Result<()>,
) -> Result<OptimizerState> {
    let mut state = OptimizerState::new(params);
    for epoch in 1..=config.epochs {
        let log = train_epoch(net, params, manifest, images, config, &mut state, epoch)?;
        on_epoch(&log, params)?;
    }
    Ok(state)
}
