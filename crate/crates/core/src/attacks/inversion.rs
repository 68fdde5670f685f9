//! Gradient-matching reconstruction (DLG, iDLG, cosine variant) and the
//! honest-but-curious server manager that mounts it.

use std::sync::{Arc, Mutex};

use rand::Rng as _;
use rayon::prelude::*;

use super::AttackError;
use crate::fed::{ClientUpdate, FedError, ServerContext, ServerHook};
use crate::model::{softmax, Loss, Model, ParamVector, Tensor};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Optimizes input and a softmax-parameterized soft label.
    Dlg,
    /// Infers the label from the bias gradient, then optimizes the input.
    Idlg,
    /// Cosine match loss with optional total variation.
    CosineGs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distance {
    L2,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionConfig {
    pub variant: Variant,
    pub distance: Distance,
    pub max_iters: usize,
    pub lr: f64,
    /// Learning rate is multiplied by this factor at 50% and 75% of `max_iters`.
    pub lr_drop: f64,
    pub tv_weight: f64,
    pub seeds: Vec<u64>,
    /// `(height, width)` for the total-variation term.
    pub input_shape: Option<(usize, usize)>,
    /// Stop a restart once the match loss falls below this.
    pub tol: f64,
}

impl InversionConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            distance: if variant == Variant::CosineGs {
                Distance::Cosine
            } else {
                Distance::L2
            },
            max_iters: 2000,
            lr: 0.1,
            lr_drop: 0.1,
            tv_weight: 0.0,
            seeds: (0..10).collect(),
            input_shape: None,
            tol: 0.0,
        }
    }

    pub fn validate(&self, model: &Model) -> Result<(), AttackError> {
        let bad = |m: &str| Err(AttackError::InvalidConfig(m.to_string()));
        if model.loss_kind() != Loss::CrossEntropy {
            return bad("gradient inversion needs a cross-entropy model");
        }
        if self.variant == Variant::CosineGs && self.distance != Distance::Cosine {
            return bad("the cosine variant uses cosine distance");
        }
        if self.variant != Variant::CosineGs && self.tv_weight != 0.0 {
            return bad("total variation applies to the cosine variant only");
        }
        if !(self.tv_weight >= 0.0) || !(self.lr > 0.0) || self.seeds.is_empty() {
            return bad("need tv_weight >= 0, lr > 0 and at least one seed");
        }
        if let Some((h, w)) = self.input_shape {
            if h * w != model.input_dim() {
                return bad("input_shape does not match the model input");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelEstimate {
    Hard(i64),
    Soft(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionResult {
    pub x_hat: Tensor,
    pub y_hat: LabelEstimate,
    pub final_match_loss: f64,
    /// Best objective so far, one entry per iteration.
    pub trace: Vec<f64>,
    pub seed: u64,
}

/// The class whose last-layer bias gradient is negative.
///
/// For one cross-entropy example that gradient is `softmax(z) − onehot(y)`,
/// negative exactly at `y`.
pub fn infer_label_idlg(grad: &ParamVector, model: &Model) -> Result<i64, AttackError> {
    if !model.ends_with_dense() || model.loss_kind() != Loss::CrossEntropy {
        return Err(AttackError::InvalidConfig(
            "label inference needs a cross-entropy model ending in a dense layer".into(),
        ));
    }
    model.params().check_layout(grad)?;
    let slot = model.last_bias_slot().expect("dense model has a bias");
    let neg: Vec<usize> = grad
        .block(slot)
        .iter()
        .enumerate()
        .filter(|(_, v)| **v < 0.0)
        .map(|(i, _)| i)
        .collect();
    match neg.as_slice() {
        [i] => Ok(*i as i64),
        _ => Err(AttackError::AmbiguousLabel {
            negatives: neg.len(),
        }),
    }
}

/// Match distance and its gradient w.r.t. `g`.
pub fn match_loss(g: &ParamVector, target: &ParamVector, distance: Distance) -> (f64, Vec<f64>) {
    let (gv, tv) = (g.values(), target.values());
    match distance {
        Distance::L2 => {
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(gv.len());
            for (a, b) in gv.iter().zip(tv) {
                let d = a - b;
                loss += d * d;
                grad.push(2.0 * d);
            }
            (loss, grad)
        }
        Distance::Cosine => {
            let dot: f64 = gv.iter().zip(tv).map(|(a, b)| a * b).sum();
            let ng = gv.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nt = tv.iter().map(|a| a * a).sum::<f64>().sqrt();
            if ng == 0.0 || nt == 0.0 {
                return (1.0, vec![0.0; gv.len()]);
            }
            let cos = dot / (ng * nt);
            let grad = gv
                .iter()
                .zip(tv)
                .map(|(a, b)| -(b / (ng * nt) - cos * a / (ng * ng)))
                .collect();
            ((1.0 - cos).max(0.0), grad)
        }
    }
}

/// Anisotropic total variation and its subgradient.
pub fn total_variation(x: &[f64], shape: Option<(usize, usize)>) -> (f64, Vec<f64>) {
    let (h, w) = shape.unwrap_or((1, x.len()));
    let mut tv = 0.0;
    let mut g = vec![0.0; x.len()];
    let mut pair = |i: usize, j: usize| {
        let d = x[j] - x[i];
        tv += d.abs();
        let s = d.signum() * (d != 0.0) as u8 as f64;
        g[j] += s;
        g[i] -= s;
    };
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                pair(i, i + 1);
            }
            if r + 1 < h {
                pair(i, i + w);
            }
        }
    }
    (tv, g)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            x[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

struct Problem<'a> {
    model: &'a Model,
    target: &'a ParamVector,
    cfg: &'a InversionConfig,
    label: Option<i64>,
}

impl Problem<'_> {
    fn targets(&self, u: &[f64]) -> Tensor {
        match self.label {
            Some(y) => {
                let mut t = vec![0.0; self.model.output_dim()];
                t[y as usize] = 1.0;
                Tensor::row_vector(&t)
            }
            None => Tensor::row_vector(&softmax(u)),
        }
    }

    /// Objective and gradients w.r.t. the input and the label logits.
    fn eval(&self, x: &[f64], u: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), AttackError> {
        let xt = Tensor::row_vector(x);
        let t = self.targets(u);
        let g = self.model.soft_label_grad(&xt, &t)?;
        let (mut loss, dg) = match_loss(&g, self.target, self.cfg.distance);
        let gbar = g.with_values(dg)?;
        let (_, xbar, tbar) = self.model.soft_label_grad_adjoint(&xt, &t, &gbar)?;
        let mut gx = xbar.into_data();
        if self.cfg.tv_weight > 0.0 {
            let (tv, tg) = total_variation(x, self.cfg.input_shape);
            loss += self.cfg.tv_weight * tv;
            for (a, b) in gx.iter_mut().zip(tg) {
                *a += self.cfg.tv_weight * b;
            }
        }
        let gu = match self.label {
            Some(_) => Vec::new(),
            None => {
                // through t = softmax(u)
                let tv = t.row(0);
                let tb = tbar.row(0);
                let s: f64 = tv.iter().zip(tb).map(|(a, b)| a * b).sum();
                tv.iter().zip(tb).map(|(ti, bi)| ti * (bi - s)).collect()
            }
        };
        Ok((loss, gx, gu))
    }

    fn run(
        &self,
        x0: Vec<f64>,
        u0: Vec<f64>,
        seed: u64,
    ) -> Result<ReconstructionResult, AttackError> {
        let mut x = x0;
        let mut u = u0;
        let dx = x.len();
        let mut opt = Adam::new(dx + u.len());
        let mut best = (f64::INFINITY, x.clone(), u.clone());
        let mut trace = Vec::with_capacity(self.cfg.max_iters + 1);
        for it in 0..=self.cfg.max_iters {
            let (loss, gx, gu) = self.eval(&x, &u)?;
            if !loss.is_finite() {
                break;
            }
            if loss < best.0 {
                best = (loss, x.clone(), u.clone());
            }
            trace.push(best.0);
            if it == self.cfg.max_iters || loss <= self.cfg.tol {
                break;
            }
            let mut lr = self.cfg.lr;
            if 2 * it >= self.cfg.max_iters {
                lr *= self.cfg.lr_drop;
            }
            if 4 * it >= 3 * self.cfg.max_iters {
                lr *= self.cfg.lr_drop;
            }
            let mut all: Vec<f64> = x.iter().chain(&u).copied().collect();
            let grads: Vec<f64> = gx.into_iter().chain(gu).collect();
            opt.step(&mut all, &grads, lr);
            if all.iter().any(|v| !v.is_finite()) {
                break;
            }
            x.copy_from_slice(&all[..dx]);
            u.copy_from_slice(&all[dx..]);
        }
        if !best.0.is_finite() {
            return Err(AttackError::Diverged);
        }
        let y_hat = match self.label {
            Some(y) => LabelEstimate::Hard(y),
            None => LabelEstimate::Soft(softmax(&best.2)),
        };
        Ok(ReconstructionResult {
            x_hat: Tensor::row_vector(&best.1),
            y_hat,
            final_match_loss: best.0,
            trace,
            seed,
        })
    }
}

fn problem<'a>(
    target: &'a ParamVector,
    model: &'a Model,
    cfg: &'a InversionConfig,
) -> Result<Problem<'a>, AttackError> {
    cfg.validate(model)?;
    model.params().check_layout(target)?;
    let label = match cfg.variant {
        Variant::Idlg => Some(infer_label_idlg(target, model)?),
        Variant::Dlg | Variant::CosineGs => None,
    };
    Ok(Problem {
        model,
        target,
        cfg,
        label,
    })
}

/// Reconstructs one training example from its gradient.
///
/// `model` must hold the parameters at which `target_grad` was taken.
/// Each seed starts from uniform(−0.5, 0.5) dummy data; the restart with
/// the lowest final match loss is returned.
pub fn gradient_inversion(
    target_grad: &ParamVector,
    model: &Model,
    cfg: &InversionConfig,
) -> Result<ReconstructionResult, AttackError> {
    let p = problem(target_grad, model, cfg)?;
    let d = model.input_dim();
    let c = if p.label.is_some() {
        0
    } else {
        model.output_dim()
    };
    let runs: Vec<Result<ReconstructionResult, AttackError>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = seeded(seed);
            let x0 = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let u0 = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
            p.run(x0, u0, seed)
        })
        .collect();
    best_of(runs)
}

/// Runs the optimizer from a given starting point (one restart).
pub fn reconstruct_from(
    target_grad: &ParamVector,
    model: &Model,
    cfg: &InversionConfig,
    x0: &[f64],
    label_logits: &[f64],
) -> Result<ReconstructionResult, AttackError> {
    let p = problem(target_grad, model, cfg)?;
    let u0 = if p.label.is_some() {
        Vec::new()
    } else {
        label_logits.to_vec()
    };
    p.run(x0.to_vec(), u0, 0)
}

/// Per-seed results of a multi-restart attack.
pub fn gradient_inversion_all(
    target_grad: &ParamVector,
    model: &Model,
    cfg: &InversionConfig,
) -> Result<Vec<ReconstructionResult>, AttackError> {
    cfg.seeds
        .iter()
        .map(|&s| {
            let single = InversionConfig {
                seeds: vec![s],
                ..cfg.clone()
            };
            gradient_inversion(target_grad, model, &single)
        })
        .collect()
}

fn best_of(
    runs: Vec<Result<ReconstructionResult, AttackError>>,
) -> Result<ReconstructionResult, AttackError> {
    let mut best: Option<ReconstructionResult> = None;
    let mut last_err = None;
    for r in runs {
        match r {
            Ok(r) => {
                if best
                    .as_ref()
                    .is_none_or(|b| r.final_match_loss < b.final_match_loss)
                {
                    best = Some(r);
                }
            }
            Err(AttackError::Diverged) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => Err(AttackError::Diverged),
    }
}

/// One entry of the inversion server's attack log.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub round: u32,
    pub rank: u32,
    /// Set when local training was not a single full step, so the update
    /// is not exactly `−lr·gradient`.
    pub multi_step: bool,
    /// `None` when the server could not see a plaintext update.
    pub result: Option<ReconstructionResult>,
    pub error: Option<String>,
}

pub type AttackLog = Arc<Mutex<Vec<AttackRecord>>>;

/// Server manager that reconstructs each client's data from its update
/// while passing every update through unchanged.
pub struct InversionServerHook {
    model: Model,
    cfg: InversionConfig,
    log: AttackLog,
}

impl InversionServerHook {
    pub fn new(model: Model, cfg: InversionConfig) -> Self {
        Self {
            model,
            cfg,
            log: AttackLog::default(),
        }
    }

    pub fn log(&self) -> AttackLog {
        self.log.clone()
    }
}

impl ServerHook for InversionServerHook {
    fn pre_aggregate(
        &mut self,
        ctx: &ServerContext,
        updates: Vec<ClientUpdate>,
    ) -> Result<Vec<ClientUpdate>, FedError> {
        let cfg = ctx.config;
        let global = ctx
            .global
            .ok_or_else(|| FedError::Protocol("plaintext updates without a global model".into()))?;
        let at_global = self.model.with_params(global)?;
        let mut records: Vec<AttackRecord> = updates
            .par_iter()
            .map(|u| {
                let batch = cfg
                    .local_batch
                    .map_or(u.n_samples, |b| (b as u64).min(u.n_samples));
                let multi_step = cfg.local_epochs > 1 || batch < u.n_samples;
                let mut grad = u.update.clone();
                if cfg.lr > 0.0 {
                    grad.scale(-1.0 / cfg.lr);
                }
                let (result, error) = match gradient_inversion(&grad, &at_global, &self.cfg) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                AttackRecord {
                    round: ctx.round,
                    rank: u.rank,
                    multi_step,
                    result,
                    error,
                }
            })
            .collect();
        records.sort_by_key(|r| r.rank);
        self.log
            .lock()
            .expect("attack log poisoned")
            .extend(records);
        Ok(updates)
    }

    fn observe_encrypted(&mut self, ctx: &ServerContext, senders: &[(u32, u64)]) {
        let mut log = self.log.lock().expect("attack log poisoned");
        for &(rank, _) in senders {
            log.push(AttackRecord {
                round: ctx.round,
                rank,
                multi_step: false,
                result: None,
                error: Some("update is encrypted".into()),
            });
        }
    }
}
