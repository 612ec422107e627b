//! Observed solver rates and the algebraic error estimator.
//!
//! `rho^(k) = |r_k| / |r_{k-1}|` approaches the spectral radius of the
//! error propagation matrix from below, and
//! `eta_a^(k+1) = e^{1/k} rho^(k) / (1 - rho^(k)) |u^(k+1) - u^(k)|_A`.

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum RateError {
    /// The previous residual vanished: the iterate is already exact.
    #[error("previous residual is zero; iteration has converged")]
    Converged,
    /// Not enough residuals recorded for this index.
    #[error("rate at step {0} needs more history")]
    InsufficientHistory(usize),
    /// Observed rate is not below one; the estimate is unusable this step.
    #[error("observed rate {0} is not below one")]
    Defer(f64),
}

/// Residual norms `|r_0|, |r_1|, ...` and energy increments
/// `|u^(k) - u^(k-1)|_A` of one solve, indexed by iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    residuals: Vec<f64>,
    /// `increments[k - 1] = |u^(k) - u^(k-1)|_A`
    increments: Vec<f64>,
}

impl IterationTrace {
    pub fn new(initial_residual: f64) -> Self {
        Self {
            residuals: vec![initial_residual],
            increments: Vec::new(),
        }
    }

    pub fn from_residuals(residuals: Vec<f64>) -> Self {
        Self {
            residuals,
            increments: Vec::new(),
        }
    }

    /// Records iterate `k = len`.
    pub fn push(&mut self, residual: f64, increment: f64) {
        self.residuals.push(residual);
        self.increments.push(increment);
    }

    /// Index of the latest iterate.
    pub fn k(&self) -> usize {
        self.residuals.len() - 1
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn increment(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.increments.get(i)).copied()
    }

    pub fn rho(&self, k: usize) -> Result<f64, RateError> {
        rho_k(&self.residuals, k)
    }

    pub fn rho_hat(&self, k: usize) -> Result<f64, RateError> {
        rho_hat_k(&self.residuals, k)
    }

    /// `eta_a^(k)` for the latest-or-earlier iterate `k >= 2`, built from
    /// `rho^(k-1)` and the increment into `u^(k)`.
    pub fn eta_a(&self, k: usize) -> Result<f64, RateError> {
        if k < 2 {
            return Err(RateError::InsufficientHistory(k));
        }
        let du = self.increment(k).ok_or(RateError::InsufficientHistory(k))?;
        eta_a(self.rho(k - 1)?, k - 1, du)
    }

    /// `|rho^(k) / rho^(k-1) - 1|`
    pub fn drift(&self, k: usize) -> Result<f64, RateError> {
        if k < 2 {
            return Err(RateError::InsufficientHistory(k));
        }
        Ok(rate_drift(self.rho(k)?, self.rho(k - 1)?))
    }
}

/// `|r_k| / |r_{k-1}|` over a residual history.
pub fn rho_k(residuals: &[f64], k: usize) -> Result<f64, RateError> {
    if k == 0 || k >= residuals.len() {
        return Err(RateError::InsufficientHistory(k));
    }
    let prev = residuals[k - 1];
    if prev == 0.0 {
        return Err(RateError::Converged);
    }
    Ok(residuals[k] / prev)
}

/// `rho^(k)^2 / rho^(k-1)`
pub fn rho_hat_k(residuals: &[f64], k: usize) -> Result<f64, RateError> {
    if k < 2 {
        return Err(RateError::InsufficientHistory(k));
    }
    let r = rho_k(residuals, k)?;
    let p = rho_k(residuals, k - 1)?;
    if p == 0.0 {
        return Err(RateError::Converged);
    }
    Ok(r * r / p)
}

/// `e^{1/k} rho / (1 - rho) * du` for `k >= 1`.
pub fn eta_a(rho: f64, k: usize, du: f64) -> Result<f64, RateError> {
    if k == 0 {
        return Err(RateError::InsufficientHistory(0));
    }
    if !(rho < 1.0) {
        return Err(RateError::Defer(rho));
    }
    Ok((1.0 / k as f64).exp() * rho / (1.0 - rho) * du)
}

/// Relative change `|rho_k / rho_km1 - 1|` of consecutive rates.
pub fn rate_drift(rho_k: f64, rho_km1: f64) -> f64 {
    (rho_k / rho_km1 - 1.0).abs()
}
