//! Single-point SVM poisoning by ascent on validation hinge loss.
//!
//! The ascent direction is a central-difference gradient taken through full
//! retraining, one coordinate per task.

use rayon::prelude::*;

use super::AttackError;
use crate::model::{clip_box, norm2, train_svm, Dataset, SvmParams};

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonConfig {
    /// Initial step length along the normalized ascent direction.
    pub step: f64,
    pub max_iter: usize,
    /// Central-difference half-width.
    pub h: f64,
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        Self {
            step: 0.5,
            max_iter: 30,
            h: 1e-3,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonResult {
    pub x_poison: Vec<f64>,
    /// Validation hinge loss at each accepted point, starting with `x0`.
    pub trace: Vec<f64>,
    /// False when no step ever raised the loss.
    pub improved: bool,
}

fn validation_loss(
    train: &Dataset,
    valid: &Dataset,
    svm: &SvmParams,
    x: &[f64],
    label: i64,
) -> Result<f64, AttackError> {
    let poisoned = train.push(x, label)?;
    Ok(train_svm(&poisoned, svm)?.hinge_loss(valid))
}

/// Moves one poison point labelled `target_label` to maximize the
/// validation hinge loss of the retrained SVM.
///
/// A step is accepted only when the loss strictly increases; a rejected
/// step halves the step length.
pub fn svm_poison_point(
    train: &Dataset,
    valid: &Dataset,
    svm: &SvmParams,
    x0: &[f64],
    target_label: i64,
    cfg: &PoisonConfig,
) -> Result<PoisonResult, AttackError> {
    if target_label != 1 && target_label != -1 {
        return Err(AttackError::InvalidConfig("poison label must be ±1".into()));
    }
    if !(cfg.step >= 0.0) || !(cfg.h > 0.0) {
        return Err(AttackError::InvalidConfig(
            "need step >= 0 and h > 0".into(),
        ));
    }
    let bounds = cfg.bounds.as_deref().or(train.bounds.as_deref());
    if let Some(b) = bounds {
        if b.len() != x0.len() || x0.iter().zip(b).any(|(v, (lo, hi))| v < lo || v > hi) {
            return Err(AttackError::InvalidConfig(
                "x0 lies outside the feature box".into(),
            ));
        }
    }
    let mut x = x0.to_vec();
    let mut loss = validation_loss(train, valid, svm, &x, target_label)?;
    let mut trace = vec![loss];
    let mut step = cfg.step;
    for _ in 0..cfg.max_iter {
        if step == 0.0 {
            break;
        }
        let grad: Vec<f64> = (0..x.len())
            .into_par_iter()
            .map(|j| {
                let mut p = x.clone();
                p[j] += cfg.h;
                let mut m = x.clone();
                m[j] -= cfg.h;
                let lp = validation_loss(train, valid, svm, &p, target_label)?;
                let lm = validation_loss(train, valid, svm, &m, target_label)?;
                Ok((lp - lm) / (2.0 * cfg.h))
            })
            .collect::<Result<_, AttackError>>()?;
        let gn = norm2(&grad);
        if gn == 0.0 || !gn.is_finite() {
            break;
        }
        let mut cand: Vec<f64> = x
            .iter()
            .zip(&grad)
            .map(|(a, g)| a + step * g / gn)
            .collect();
        if let Some(b) = bounds {
            clip_box(&mut cand, b);
        }
        let cand_loss = validation_loss(train, valid, svm, &cand, target_label)?;
        if cand_loss > loss {
            x = cand;
            loss = cand_loss;
            trace.push(loss);
        } else {
            step *= 0.5;
        }
    }
    Ok(PoisonResult {
        x_poison: x,
        improved: trace.len() > 1,
        trace,
    })
}
