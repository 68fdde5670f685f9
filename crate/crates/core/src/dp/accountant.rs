//! Moments accountant for the sampled Gaussian mechanism.

use super::DpError;

pub const DEFAULT_MAX_ORDER: usize = 64;

/// Log-moments α(λ) for λ = 1..=max_order, accumulated over steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyLedger {
    log_moments: Vec<f64>,
    steps: u64,
    non_private_steps: u64,
    sampling_rate: Option<f64>,
    noise_multiplier: Option<f64>,
    cache: Option<(f64, f64, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonReport {
    pub epsilon: f64,
    pub delta: f64,
    /// Smallest order attaining the minimum; 0 when ε is infinite.
    pub order: usize,
}

impl Default for PrivacyLedger {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_ORDER)
    }
}

impl PrivacyLedger {
    pub fn new(max_order: usize) -> Self {
        Self {
            log_moments: vec![0.0; max_order],
            steps: 0,
            non_private_steps: 0,
            sampling_rate: None,
            noise_multiplier: None,
            cache: None,
        }
    }

    pub fn max_order(&self) -> usize {
        self.log_moments.len()
    }

    /// α(λ) indexed from λ = 1.
    pub fn log_moments(&self) -> &[f64] {
        &self.log_moments
    }

    pub fn log_moment(&self, order: usize) -> f64 {
        self.log_moments[order - 1]
    }

    pub fn steps(&self) -> u64 {
        self.steps + self.non_private_steps
    }

    pub fn sampling_rate(&self) -> Option<f64> {
        self.sampling_rate
    }

    pub fn noise_multiplier(&self) -> Option<f64> {
        self.noise_multiplier
    }

    /// Adds one step of the sampled Gaussian mechanism.
    pub fn step(&mut self, q: f64, sigma: f64) -> Result<(), DpError> {
        self.step_n(q, sigma, 1)
    }

    /// Adds `count` identical steps.
    pub fn step_n(&mut self, q: f64, sigma: f64, count: u64) -> Result<(), DpError> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(DpError::InvalidSamplingRate(q));
        }
        if sigma == 0.0 {
            return Err(DpError::InfiniteMoment);
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(DpError::InvalidNoise(sigma));
        }
        let hit = matches!(&self.cache, Some((cq, cs, _)) if *cq == q && *cs == sigma);
        if !hit {
            let inc = log_moment_increments(q, sigma, self.max_order());
            self.cache = Some((q, sigma, inc));
        }
        let (_, _, inc) = self.cache.as_ref().expect("filled above");
        for (a, d) in self.log_moments.iter_mut().zip(inc) {
            *a += count as f64 * d;
        }
        self.steps += count;
        self.sampling_rate = Some(q);
        self.noise_multiplier = Some(sigma);
        Ok(())
    }

    /// Records a step taken without noise; ε becomes infinite.
    pub fn record_non_private(&mut self, q: f64) {
        self.non_private_steps += 1;
        self.sampling_rate = Some(q);
        self.noise_multiplier = Some(0.0);
    }

    /// ε = min over λ of (α(λ) − ln δ)/λ.
    pub fn epsilon(&self, delta: f64) -> Result<EpsilonReport, DpError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DpError::InvalidDelta(delta));
        }
        if self.steps() == 0 {
            return Err(DpError::EmptyLedger);
        }
        if self.non_private_steps > 0 {
            return Ok(EpsilonReport {
                epsilon: f64::INFINITY,
                delta,
                order: 0,
            });
        }
        let ln_delta = delta.ln();
        let mut best = EpsilonReport {
            epsilon: f64::INFINITY,
            delta,
            order: 0,
        };
        for (i, a) in self.log_moments.iter().enumerate() {
            let order = i + 1;
            let eps = (a - ln_delta) / order as f64;
            if eps < best.epsilon {
                best.epsilon = eps;
                best.order = order;
            }
        }
        Ok(best)
    }
}

/// Functional form of [`PrivacyLedger::step`].
pub fn accountant_step(
    ledger: &PrivacyLedger,
    q: f64,
    sigma: f64,
) -> Result<PrivacyLedger, DpError> {
    let mut next = ledger.clone();
    next.step(q, sigma)?;
    Ok(next)
}

pub fn get_epsilon(ledger: &PrivacyLedger, delta: f64) -> Result<EpsilonReport, DpError> {
    ledger.epsilon(delta)
}

fn log_gaussian(z: f64, mean: f64, sigma: f64) -> f64 {
    let d = z - mean;
    -d * d / (2.0 * sigma * sigma) - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Per-step log-moment for every λ in 1..=max_order.
///
/// For q = 1 the moment is λ(λ+1)/(2σ²) exactly. Otherwise both
/// directions E₀[(μ₀/μ)^λ] and E_μ[(μ/μ₀)^λ] are integrated with the
/// trapezoidal rule in log space (step 10⁻³σ) and the larger one kept.
/// The window extends past ±(12σ + 12) by λ_max + 1 because the second
/// integrand peaks near z = λ + 1.
pub fn log_moment_increments(q: f64, sigma: f64, max_order: usize) -> Vec<f64> {
    if q == 1.0 {
        return (1..=max_order)
            .map(|l| {
                let l = l as f64;
                l * (l + 1.0) / (2.0 * sigma * sigma)
            })
            .collect();
    }
    let half_width = 12.0 * sigma + 12.0 + max_order as f64 + 1.0;
    let h = 1e-3 * sigma;
    let points = (2.0 * half_width / h).ceil() as usize + 1;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    // log μ₀ and log μ on the grid
    let mut l0 = Vec::with_capacity(points);
    let mut lmix = Vec::with_capacity(points);
    let mut lw = Vec::with_capacity(points);
    for i in 0..points {
        let z = -half_width + i as f64 * h;
        let a = log_gaussian(z, 0.0, sigma);
        let b = log_gaussian(z, 1.0, sigma);
        l0.push(a);
        lmix.push(log_add_exp(ln_1mq + a, ln_q + b));
        let w = if i == 0 || i + 1 == points {
            0.5 * h
        } else {
            h
        };
        lw.push(w.ln());
    }
    let mut buf = vec![0.0; points];
    (1..=max_order)
        .map(|order| {
            let l = order as f64;
            let mut integrate = |f: &dyn Fn(usize) -> f64| {
                let mut m = f64::NEG_INFINITY;
                for (i, slot) in buf.iter_mut().enumerate() {
                    *slot = f(i) + lw[i];
                    m = m.max(*slot);
                }
                m + buf.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            };
            let e1 = integrate(&|i| (l + 1.0) * l0[i] - l * lmix[i]);
            let e2 = integrate(&|i| (l + 1.0) * lmix[i] - l * l0[i]);
            e1.max(e2)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_closed_form() {
        let mut ledger = PrivacyLedger::default();
        ledger.step(1.0, 1.0).unwrap();
        assert_eq!(ledger.log_moment(2), 3.0);
        let rep = ledger.epsilon(1e-5).unwrap();
        assert_eq!(rep.order, 5);
        assert!((rep.epsilon - 5.303).abs() < 1e-3);
    }

    #[test]
    fn steps_compose_additively() {
        let mut a = PrivacyLedger::new(16);
        for _ in 0..3 {
            a.step(0.05, 1.2).unwrap();
        }
        let mut b = PrivacyLedger::new(16);
        b.step(0.05, 1.2).unwrap();
        for (x, y) in a.log_moments().iter().zip(b.log_moments()) {
            assert!((x - 3.0 * y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn zero_steps_means_zero_moments_and_no_epsilon() {
        let ledger = PrivacyLedger::default();
        assert!(ledger.log_moments().iter().all(|&a| a == 0.0));
        assert_eq!(ledger.epsilon(1e-5).unwrap_err(), DpError::EmptyLedger);
    }

    #[test]
    fn rejects_degenerate_steps() {
        let mut ledger = PrivacyLedger::default();
        assert_eq!(ledger.step(0.1, 0.0).unwrap_err(), DpError::InfiniteMoment);
        assert!(matches!(
            ledger.step(0.0, 1.0),
            Err(DpError::InvalidSamplingRate(_))
        ));
        assert!(matches!(
            ledger.step(1.5, 1.0),
            Err(DpError::InvalidSamplingRate(_))
        ));
        assert!(matches!(ledger.epsilon(0.0), Err(DpError::InvalidDelta(_))));
    }

    #[test]
    fn more_steps_never_lower_epsilon() {
        let mut ledger = PrivacyLedger::new(32);
        let mut last = 0.0;
        for _ in 0..5 {
            ledger.step_n(0.02, 1.0, 10).unwrap();
            let e = ledger.epsilon(1e-5).unwrap().epsilon;
            assert!(e >= last);
            last = e;
        }
    }

    #[test]
    fn composition_beats_naive_sum() {
        let mut one = PrivacyLedger::new(32);
        one.step(0.05, 1.0).unwrap();
        let eps1 = one.epsilon(1e-5).unwrap().epsilon;
        for t in [2u64, 10, 100] {
            let mut l = PrivacyLedger::new(32);
            l.step_n(0.05, 1.0, t).unwrap();
            assert!(l.epsilon(1e-5).unwrap().epsilon <= t as f64 * eps1);
        }
    }

    /// Composite Simpson's rule on the raw densities, 10× finer step.
    fn simpson_moment(q: f64, sigma: f64, order: f64) -> f64 {
        let pdf = |z: f64, m: f64| {
            (-(z - m) * (z - m) / (2.0 * sigma * sigma)).exp()
                / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let half = 12.0 * sigma + 12.0 + order + 1.0;
        let h = 1e-4 * sigma;
        let mut n = (2.0 * half / h).ceil() as usize;
        n += n % 2;
        let h = 2.0 * half / n as f64;
        let mut best = f64::NEG_INFINITY;
        for dir in 0..2 {
            let f = |z: f64| {
                let m0 = pdf(z, 0.0);
                let mu = (1.0 - q) * m0 + q * pdf(z, 1.0);
                if dir == 0 {
                    if m0 == 0.0 {
                        0.0
                    } else {
                        m0 * (m0 / mu).powf(order)
                    }
                } else if mu == 0.0 {
                    0.0
                } else {
                    mu * (mu / m0).powf(order)
                }
            };
            let mut s = f(-half) + f(half);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(-half + i as f64 * h);
            }
            best = best.max((s * h / 3.0).ln());
        }
        best
    }

    #[test]
    fn quadrature_matches_independent_simpson_oracle() {
        let inc = log_moment_increments(0.01, 1.0, 8);
        let oracle = simpson_moment(0.01, 1.0, 8.0);
        assert!(
            ((inc[7] - oracle) / oracle).abs() < 1e-4,
            "{} vs {}",
            inc[7],
            oracle
        );
        let inc = log_moment_increments(0.1, 2.0, 4);
        let oracle = simpson_moment(0.1, 2.0, 3.0);
        assert!(((inc[2] - oracle) / oracle).abs() < 1e-4);
    }

    #[test]
    fn subsampled_moment_is_below_full_batch() {
        let inc = log_moment_increments(0.5, 1.0, 8);
        for (i, a) in inc.iter().enumerate() {
            let l = (i + 1) as f64;
            assert!(*a > 0.0 && *a < l * (l + 1.0) / 2.0);
        }
    }

    #[test]
    fn non_private_steps_make_epsilon_infinite() {
        let mut ledger = PrivacyLedger::default();
        ledger.record_non_private(1.0);
        assert_eq!(ledger.epsilon(1e-5).unwrap().epsilon, f64::INFINITY);
    }
}
