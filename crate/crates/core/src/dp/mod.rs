//! DPSGD: per-example clipping, Gaussian noise once per lot, and a
//! moments accountant.

mod accountant;

pub use accountant::{
    accountant_step, get_epsilon, log_moment_increments, EpsilonReport, PrivacyLedger,
    DEFAULT_MAX_ORDER,
};

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{sgd_step, Dataset, Model, ModelError, ParamVector};
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error("sampling rate {0} is outside (0, 1]")]
    InvalidSamplingRate(f64),
    #[error("noise multiplier {0} is invalid")]
    InvalidNoise(f64),
    #[error("zero noise with positive sampling rate has an infinite moment")]
    InfiniteMoment,
    #[error("delta {0} is outside (0, 1)")]
    InvalidDelta(f64),
    #[error("no steps have been recorded")]
    EmptyLedger,
    #[error("empty lot")]
    EmptyLot,
    #[error("lot size {lot} exceeds dataset size {n}")]
    LotTooLarge { lot: usize, n: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    pub lot_size: usize,
    pub batch_size: usize,
    pub delta: f64,
}

impl DpConfig {
    pub fn validate(&self) -> Result<(), DpError> {
        if !(self.clip_norm > 0.0) {
            return Err(DpError::InvalidConfig(format!(
                "clip norm {} must be positive",
                self.clip_norm
            )));
        }
        if !(self.noise_multiplier >= 0.0) || !self.noise_multiplier.is_finite() {
            return Err(DpError::InvalidNoise(self.noise_multiplier));
        }
        if self.batch_size == 0 || self.lot_size == 0 || self.batch_size > self.lot_size {
            return Err(DpError::InvalidConfig(format!(
                "need 0 < batch ({}) <= lot ({})",
                self.batch_size, self.lot_size
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(DpError::InvalidDelta(self.delta));
        }
        Ok(())
    }
}

/// Scale `g` by `1 / max(1, ‖g‖₂ / C)`.
///
/// The result never has norm above `C`, even after rounding.
pub fn clip_grad(g: &ParamVector, clip_norm: f64) -> ParamVector {
    let norm = g.norm();
    if norm <= clip_norm {
        return g.clone();
    }
    let mut factor = clip_norm / norm;
    loop {
        let mut out = g.clone();
        out.scale(factor);
        if out.norm() <= clip_norm {
            return out;
        }
        factor = factor.next_down();
    }
}

pub fn clip_grads(grads: &[ParamVector], clip_norm: f64) -> Vec<ParamVector> {
    grads.iter().map(|g| clip_grad(g, clip_norm)).collect()
}

/// `(Σ clip(gᵢ) + N(0, σ²C²I)) / L` with `L = grads.len()`.
pub fn noisy_lot_grad(
    grads: &[ParamVector],
    clip_norm: f64,
    sigma: f64,
    rng: &mut Rng,
) -> Result<ParamVector, DpError> {
    let first = grads.first().ok_or(DpError::EmptyLot)?;
    let mut sum = ParamVector::zeros_like(first);
    for g in grads {
        sum.axpy(1.0, &clip_grad(g, clip_norm))?;
    }
    add_noise_and_average(sum, grads.len(), clip_norm, sigma, rng)
}

fn add_noise_and_average(
    mut sum: ParamVector,
    lot: usize,
    clip_norm: f64,
    sigma: f64,
    rng: &mut Rng,
) -> Result<ParamVector, DpError> {
    if sigma > 0.0 {
        let std = sigma * clip_norm;
        for v in sum.values_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += std * z;
        }
    }
    sum.scale(1.0 / lot as f64);
    Ok(sum)
}

#[derive(Debug, Clone)]
pub struct DpsgdOutcome {
    pub model: Model,
    pub ledger: PrivacyLedger,
    /// Largest per-example gradient norm seen after clipping.
    pub max_clipped_norm: f64,
    /// Mean training loss of each lot, before its update.
    pub lot_losses: Vec<f64>,
}

/// DPSGD with lots drawn by shuffle-and-partition each epoch.
///
/// Every lot is processed in batches of `batch_size`; the clipped
/// per-example gradients of all batches are summed, noised once, and
/// applied as a single update. The ledger advances once per lot with
/// `q = L / N`. An incomplete trailing lot is dropped.
pub fn dpsgd_train(
    model: &Model,
    data: &Dataset,
    cfg: &DpConfig,
    epochs: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<DpsgdOutcome, DpError> {
    cfg.validate()?;
    let n = data.len();
    if cfg.lot_size > n {
        return Err(DpError::LotTooLarge {
            lot: cfg.lot_size,
            n,
        });
    }
    let q = cfg.lot_size as f64 / n as f64;
    let mut model = model.clone();
    let mut ledger = PrivacyLedger::default();
    let mut max_clipped_norm: f64 = 0.0;
    let mut lot_losses = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        if cfg.lot_size < n {
            order.shuffle(rng);
        }
        for lot in order.chunks_exact(cfg.lot_size) {
            let mut sum = ParamVector::zeros_like(&model.params());
            let mut loss_sum = 0.0;
            for batch in lot.chunks(cfg.batch_size) {
                let part = data.subset(batch);
                loss_sum += model.loss(&part.x, &part.y)? * batch.len() as f64;
                let grads = model.per_example_grads(&part.x, &part.y)?;
                let clipped: Vec<ParamVector> = grads
                    .par_iter()
                    .map(|g| clip_grad(g, cfg.clip_norm))
                    .collect();
                for g in &clipped {
                    max_clipped_norm = max_clipped_norm.max(g.norm());
                    sum.axpy(1.0, g)?;
                }
            }
            lot_losses.push(loss_sum / lot.len() as f64);
            let noisy =
                add_noise_and_average(sum, lot.len(), cfg.clip_norm, cfg.noise_multiplier, rng)?;
            let next = sgd_step(&model.params(), &noisy, lr)?;
            model.set_params(&next)?;
            if cfg.noise_multiplier == 0.0 {
                ledger.record_non_private(q);
            } else {
                ledger.step(q, cfg.noise_multiplier)?;
            }
        }
    }
    Ok(DpsgdOutcome {
        model,
        ledger,
        max_clipped_norm,
        lot_losses,
    })
}
