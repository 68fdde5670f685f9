//! Kernel SVM trained with simplified SMO.

use rand::Rng as _;

use super::dataset::Dataset;
use super::tensor::dot;
use super::ModelError;
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
        }
    }

    /// ∂k(a, x)/∂x.
    pub fn grad_wrt_second(&self, a: &[f64], x: &[f64]) -> Vec<f64> {
        match *self {
            Kernel::Linear => a.to_vec(),
            Kernel::Rbf { gamma } => {
                let k = self.eval(a, x);
                x.iter()
                    .zip(a)
                    .map(|(xi, ai)| -2.0 * gamma * (xi - ai) * k)
                    .collect()
            }
        }
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub kernel: Kernel,
    pub c: f64,
    pub tol: f64,
    pub max_passes: usize,
    /// Seed for the random second-index choice.
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            kernel: Kernel::Linear,
            c: 1.0,
            tol: 1e-4,
            max_passes: 50,
            seed: 0,
        }
    }
}

impl SvmParams {
    pub fn new(kernel: Kernel, c: f64) -> Self {
        Self {
            kernel,
            c,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    /// Dual coefficients of the support vectors (all > 0).
    pub alphas: Vec<f64>,
    pub support_x: Vec<Vec<f64>>,
    pub support_y: Vec<f64>,
    pub bias: f64,
}

/// Upper bound on full sweeps, so pathological inputs terminate.
const MAX_SWEEPS: usize = 20_000;

/// Trains a soft-margin SVM on `{-1, +1}` labels.
pub fn train_svm(data: &Dataset, params: &SvmParams) -> Result<SvmModel, ModelError> {
    if !(params.c > 0.0) || !params.c.is_finite() {
        return Err(ModelError::InvalidSvm(format!(
            "C must be positive, got {}",
            params.c
        )));
    }
    let n = data.len();
    if n < 2 {
        return Err(ModelError::InvalidSvm(
            "need at least two training points".into(),
        ));
    }
    let mut y = Vec::with_capacity(n);
    for &label in &data.y {
        match label {
            1 => y.push(1.0),
            -1 => y.push(-1.0),
            other => {
                return Err(ModelError::InvalidSvm(format!("label {other} is not ±1")));
            }
        }
    }
    if y.iter().all(|&v| v > 0.0) || y.iter().all(|&v| v < 0.0) {
        return Err(ModelError::InvalidSvm(
            "training data contains a single class".into(),
        ));
    }

    let c = params.c;
    let tol = params.tol;
    let min_move = tol.min(1e-5);
    let kernel = params.kernel;
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let k = kernel.eval(data.row(i), data.row(j));
            gram[i * n + j] = k;
            gram[j * n + i] = k;
        }
    }
    let k = |i: usize, j: usize| gram[i * n + j];

    let mut alpha = vec![0.0; n];
    let mut b = 0.0;
    // f_cache[i] = Σ α_j y_j K_ij (without bias)
    let mut f_cache = vec![0.0; n];
    let mut rng = seeded(params.seed);
    let mut passes = 0;
    let mut sweeps = 0;
    while passes < params.max_passes && sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut changed = 0;
        for i in 0..n {
            let e_i = f_cache[i] + b - y[i];
            if !((y[i] * e_i < -tol && alpha[i] < c) || (y[i] * e_i > tol && alpha[i] > 0.0)) {
                continue;
            }
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let e_j = f_cache[j] + b - y[j];
            let (ai_old, aj_old) = (alpha[i], alpha[j]);
            let (lo, hi) = if y[i] != y[j] {
                ((aj_old - ai_old).max(0.0), (c + aj_old - ai_old).min(c))
            } else {
                ((ai_old + aj_old - c).max(0.0), (ai_old + aj_old).min(c))
            };
            if lo >= hi {
                continue;
            }
            let eta = 2.0 * k(i, j) - k(i, i) - k(j, j);
            if eta >= 0.0 {
                continue;
            }
            let aj = (aj_old - y[j] * (e_i - e_j) / eta).clamp(lo, hi);
            if (aj - aj_old).abs() < min_move {
                continue;
            }
            let ai = (ai_old + y[i] * y[j] * (aj_old - aj)).clamp(0.0, c);
            let (di, dj) = (ai - ai_old, aj - aj_old);
            alpha[i] = ai;
            alpha[j] = aj;
            let b1 = b - e_i - y[i] * di * k(i, i) - y[j] * dj * k(i, j);
            let b2 = b - e_j - y[i] * di * k(i, j) - y[j] * dj * k(j, j);
            b = if ai > 0.0 && ai < c {
                b1
            } else if aj > 0.0 && aj < c {
                b2
            } else {
                0.5 * (b1 + b2)
            };
            for (t, f) in f_cache.iter_mut().enumerate() {
                *f += y[i] * di * k(i, t) + y[j] * dj * k(j, t);
            }
            changed += 1;
        }
        passes = if changed == 0 { passes + 1 } else { 0 };
    }

    let mut model = SvmModel {
        kernel,
        c,
        alphas: Vec::new(),
        support_x: Vec::new(),
        support_y: Vec::new(),
        bias: b,
    };
    for i in 0..n {
        if alpha[i] > 0.0 {
            model.alphas.push(alpha[i]);
            model.support_x.push(data.row(i).to_vec());
            model.support_y.push(y[i]);
        }
    }
    Ok(model)
}

impl SvmModel {
    /// Σ αᵢ yᵢ k(xᵢ, x) + b.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.alphas
            .iter()
            .zip(&self.support_y)
            .zip(&self.support_x)
            .map(|((a, y), sx)| a * y * self.kernel.eval(sx, x))
            .sum::<f64>()
            + self.bias
    }

    /// ∇ₓ of [`SvmModel::decision`].
    pub fn input_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for ((a, y), sx) in self.alphas.iter().zip(&self.support_y).zip(&self.support_x) {
            let kg = self.kernel.grad_wrt_second(sx, x);
            for (gi, kgi) in g.iter_mut().zip(kg) {
                *gi += a * y * kgi;
            }
        }
        g
    }

    pub fn predict(&self, x: &[f64]) -> i64 {
        if self.decision(x) >= 0.0 {
            1
        } else {
            -1
        }
    }

    /// Fraction of rows whose sign matches the `±1` label.
    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = (0..data.len())
            .filter(|&i| self.predict(data.row(i)) == data.y[i])
            .count();
        hits as f64 / data.len() as f64
    }

    /// Mean hinge loss `max(0, 1 − y·f(x))` over the set.
    pub fn hinge_loss(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        (0..data.len())
            .map(|i| (1.0 - data.y[i] as f64 * self.decision(data.row(i))).max(0.0))
            .sum::<f64>()
            / data.len() as f64
    }

    /// Σ αᵢ yᵢ over the support set.
    pub fn dual_balance(&self) -> f64 {
        self.alphas
            .iter()
            .zip(&self.support_y)
            .map(|(a, y)| a * y)
            .sum()
    }

    /// Largest KKT violation `|min(0, ...)|` over the training set.
    pub fn kkt_violation(&self, data: &Dataset) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..data.len() {
            let xi = data.row(i);
            let alpha = self
                .support_x
                .iter()
                .zip(&self.alphas)
                .find(|(sx, _)| sx.as_slice() == xi)
                .map_or(0.0, |(_, a)| *a);
            let m = data.y[i] as f64 * self.decision(xi);
            let v = if alpha <= 0.0 {
                (1.0 - m).max(0.0)
            } else if alpha >= self.c {
                (m - 1.0).max(0.0)
            } else {
                (m - 1.0).abs()
            };
            worst = worst.max(v);
        }
        worst
    }
}
