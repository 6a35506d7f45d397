//! Gaussian differential privacy accounting.
//!
//! Every step is charged as a `mu_t`-GDP mechanism with
//! `mu_t = p * sqrt(exp(1 / sigma_t^2) - 1)`, where `p` is the Poisson
//! sampling probability and `sigma_t` the effective noise multiplier of that
//! step. Steps compose by root-sum-of-squares, so decaying noise schedules are
//! handled by simply charging each step with its own `sigma_t`. The per-step
//! formula is the central-limit approximation for subsampled Gaussian steps,
//! not an exact curve.
//!
//! A `mu`-GDP guarantee converts to `(eps, delta)`-DP through
//! `delta(eps) = Phi(-eps/mu + mu/2) - e^eps * Phi(-eps/mu - mu/2)`,
//! which is inverted for `eps` by bisection.

use crate::error::{Error, Result};

/// Target `(eps_max, delta)` for a private run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta {delta} outside (0, 1)")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// GDP parameter of one subsampled Gaussian step.
pub fn step_mu(sampling_probability: f64, noise_multiplier: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&sampling_probability) {
        return Err(Error::InvalidArgument(format!(
            "sampling probability {sampling_probability} outside [0, 1]"
        )));
    }
    if !(noise_multiplier > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise multiplier {noise_multiplier} must be positive"
        )));
    }
    Ok(sampling_probability * (1.0 / (noise_multiplier * noise_multiplier)).exp_m1().sqrt())
}

/// Root-sum-of-squares composition.
pub fn compose(mus: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &mu in mus {
        if !(mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("mu {mu} must be non-negative")));
        }
        sum += mu * mu;
    }
    Ok(sum.sqrt())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Phi(x)`, accurate far into the lower tail where `Phi` underflows.
pub fn ln_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return normal_cdf(x).ln();
    }
    // Asymptotic series of the Mills ratio; at |x| >= 30 the first omitted
    // term is below 1e-14 relative.
    let x2 = x * x;
    let mut term = 1.0;
    let mut series = 1.0;
    for k in 1..=5 {
        term *= -((2 * k - 1) as f64) / x2;
        series += term;
    }
    -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + series.ln()
}

/// The `delta` a `mu`-GDP mechanism pays at privacy level `eps`.
pub fn delta_for_epsilon(mu: f64, epsilon: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    let a = -epsilon / mu + mu / 2.0;
    let b = -epsilon / mu - mu / 2.0;
    normal_cdf(a) - (epsilon + ln_normal_cdf(b)).exp()
}

/// Smallest `eps >= 0` with `delta(eps) <= delta` for a `mu`-GDP mechanism.
pub fn mu_to_epsilon(mu: f64, delta: f64) -> Result<f64> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "mu {mu} must be finite and non-negative"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta {delta} outside (0, 1)")));
    }
    if mu == 0.0 || delta_for_epsilon(mu, 0.0) <= delta {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while delta_for_epsilon(mu, hi) > delta {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > 60 || !hi.is_finite() {
            return Err(Error::Convergence(format!(
                "no epsilon bracket for mu = {mu}, delta = {delta}"
            )));
        }
    }
    // Bisect down to adjacent floats; delta(eps) <= delta holds at `hi`.
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if delta_for_epsilon(mu, mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Running GDP ledger of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Accountant {
    sum_mu_sq: f64,
    steps: u64,
    budget: PrivacyBudget,
}

impl Accountant {
    pub fn new(budget: PrivacyBudget) -> Self {
        Self {
            sum_mu_sq: 0.0,
            steps: 0,
            budget,
        }
    }

    pub fn budget(&self) -> PrivacyBudget {
        self.budget
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn sum_mu_sq(&self) -> f64 {
        self.sum_mu_sq
    }

    /// Composed GDP parameter so far.
    pub fn mu(&self) -> f64 {
        self.sum_mu_sq.sqrt()
    }

    /// Spent `eps` at the budget's `delta`.
    pub fn epsilon(&self) -> Result<f64> {
        mu_to_epsilon(self.mu(), self.budget.delta)
    }

    /// Whether charging one more step of `next_mu` would push the spent
    /// `eps` past the budget. Does not change the ledger.
    pub fn would_exceed(&self, next_mu: f64) -> bool {
        let mu = (self.sum_mu_sq + next_mu * next_mu).sqrt();
        match mu_to_epsilon(mu, self.budget.delta) {
            Ok(eps) => eps > self.budget.epsilon,
            Err(_) => true,
        }
    }

    pub fn record_step(&mut self, mu: f64) -> Result<()> {
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!("mu {mu} must be non-negative")));
        }
        self.sum_mu_sq += mu * mu;
        self.steps += 1;
        Ok(())
    }
}
