//! Gradient-descent evasion of a trained SVM with a mimicry term that pulls
//! the point toward benign data.

use super::AttackError;
use crate::model::{clip_box, norm2, Kernel, SvmModel};

#[derive(Debug, Clone, PartialEq)]
pub struct EvasionConfig {
    pub lambda_mimicry: f64,
    /// Maximum L2 distance from the starting point.
    pub d_max: f64,
    /// Length of each normalized descent step.
    pub step: f64,
    pub max_iter: usize,
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Mimicry kernel width; defaults to the SVM's own RBF gamma.
    pub mimicry_gamma: Option<f64>,
}

impl Default for EvasionConfig {
    fn default() -> Self {
        Self {
            lambda_mimicry: 0.0,
            d_max: 1.0,
            step: 0.05,
            max_iter: 200,
            bounds: None,
            mimicry_gamma: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvasionResult {
    /// Best iterate by objective.
    pub x_adv: Vec<f64>,
    /// Best objective so far after each iterate (starting point included).
    pub trace: Vec<f64>,
    /// Every iterate visited, starting point first.
    pub iterates: Vec<Vec<f64>>,
    pub decision: f64,
    pub evaded: bool,
}

/// Keeps `x` inside the `d_max` ball around `x0` and the box.
///
/// The box step only moves coordinates toward `x0` (which lies in the box),
/// so the ball constraint still holds afterwards.
fn project(x: &mut [f64], x0: &[f64], d_max: f64, bounds: Option<&[(f64, f64)]>) {
    let d: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    let r = norm2(&d);
    if r > d_max {
        let s = if r > 0.0 { d_max / r } else { 0.0 };
        for (xi, (di, x0i)) in x.iter_mut().zip(d.iter().zip(x0)) {
            *xi = x0i + di * s;
        }
    }
    if let Some(b) = bounds {
        clip_box(x, b);
    }
}

/// Projected gradient descent on
/// `decision(x) − λ/|B| · Σ_b k(x, b)` over the feasible set.
pub fn biggio_evasion(
    svm: &SvmModel,
    x0: &[f64],
    benign: &[Vec<f64>],
    cfg: &EvasionConfig,
) -> Result<EvasionResult, AttackError> {
    if !(cfg.lambda_mimicry >= 0.0) || !(cfg.d_max >= 0.0) || !(cfg.step >= 0.0) {
        return Err(AttackError::InvalidConfig(
            "lambda, d_max and step must be non-negative".into(),
        ));
    }
    let start = svm.decision(x0);
    if start <= 0.0 {
        return Err(AttackError::AlreadyBenign { decision: start });
    }
    let bounds = cfg.bounds.as_deref();
    if let Some(b) = bounds {
        if b.len() != x0.len() || x0.iter().zip(b).any(|(v, (lo, hi))| v < lo || v > hi) {
            return Err(AttackError::InvalidConfig(
                "starting point lies outside the box".into(),
            ));
        }
    }
    let use_mimicry = cfg.lambda_mimicry > 0.0 && !benign.is_empty();
    let mimic = match (cfg.mimicry_gamma, svm.kernel) {
        (Some(g), _) => Kernel::Rbf { gamma: g },
        (None, Kernel::Rbf { gamma }) => Kernel::Rbf { gamma },
        (None, Kernel::Linear) if use_mimicry => {
            return Err(AttackError::InvalidConfig(
                "a linear SVM needs an explicit mimicry gamma".into(),
            ));
        }
        (None, Kernel::Linear) => Kernel::Rbf { gamma: 1.0 },
    };
    let weight = if use_mimicry {
        cfg.lambda_mimicry / benign.len() as f64
    } else {
        0.0
    };
    let objective = |x: &[f64]| -> f64 {
        let m: f64 = if use_mimicry {
            benign.iter().map(|b| mimic.eval(b, x)).sum()
        } else {
            0.0
        };
        svm.decision(x) - weight * m
    };
    let gradient = |x: &[f64]| -> Vec<f64> {
        let mut g = svm.input_grad(x);
        if use_mimicry {
            for b in benign {
                for (gi, ki) in g.iter_mut().zip(mimic.grad_wrt_second(b, x)) {
                    *gi -= weight * ki;
                }
            }
        }
        g
    };

    let mut x = x0.to_vec();
    let mut best = (objective(&x), x.clone());
    let mut trace = vec![best.0];
    let mut iterates = vec![x.clone()];
    for _ in 0..cfg.max_iter {
        let g = gradient(&x);
        let gn = norm2(&g);
        if gn == 0.0 || cfg.step == 0.0 {
            break;
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= cfg.step * gi / gn;
        }
        project(&mut x, x0, cfg.d_max, bounds);
        let f = objective(&x);
        if f < best.0 {
            best = (f, x.clone());
        }
        trace.push(best.0);
        iterates.push(x.clone());
    }
    let decision = svm.decision(&best.1);
    Ok(EvasionResult {
        x_adv: best.1,
        trace,
        iterates,
        decision,
        evaded: decision < 0.0,
    })
}
