use serde::{Deserialize, Serialize};

use super::MaternParams;
use crate::error::{Error, Result};

/// Joint penalised-complexity prior on the Matérn range and marginal
/// standard deviation in two dimensions, set through the tail statements
/// `P(ρ < rho0) = alpha_rho` and `P(σ > sigma0) = alpha_sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcPrior {
    pub rho0: f64,
    pub alpha_rho: f64,
    pub sigma0: f64,
    pub alpha_sigma: f64,
}

impl PcPrior {
    pub fn new(rho0: f64, alpha_rho: f64, sigma0: f64, alpha_sigma: f64) -> Result<Self> {
        let p = Self {
            rho0,
            alpha_rho,
            sigma0,
            alpha_sigma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |a: f64| a > 0.0 && a < 1.0;
        if !(self.rho0 > 0.0 && self.sigma0 > 0.0) || !self.rho0.is_finite() || !self.sigma0.is_finite() {
            return Err(Error::invalid("PC prior thresholds must be positive"));
        }
        if !in_unit(self.alpha_rho) || !in_unit(self.alpha_sigma) {
            return Err(Error::invalid("PC prior tail probabilities must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Rate of the range component: `P(ρ < ρ0) = exp(-λ_ρ / ρ0)`.
    pub fn lambda_rho(&self) -> f64 {
        -self.alpha_rho.ln() * self.rho0
    }

    /// Rate of the exponential prior on `σ`.
    pub fn lambda_sigma(&self) -> f64 {
        -self.alpha_sigma.ln() / self.sigma0
    }

    pub fn log_density_range(&self, rho: f64) -> f64 {
        if !(rho > 0.0) {
            return f64::NEG_INFINITY;
        }
        let l = self.lambda_rho();
        l.ln() - 2.0 * rho.ln() - l / rho
    }

    pub fn log_density_sigma(&self, sigma: f64) -> f64 {
        if !(sigma > 0.0) {
            return f64::NEG_INFINITY;
        }
        let l = self.lambda_sigma();
        l.ln() - l * sigma
    }

    /// Joint log-density `log(λ_ρ ρ⁻² e^{-λ_ρ/ρ} · λ_σ e^{-λ_σ σ})`.
    pub fn log_density(&self, p: &MaternParams) -> f64 {
        self.log_density_range(p.rho) + self.log_density_sigma(p.sigma)
    }

    /// Log-density of `(log ρ, log σ)`, including the Jacobian.
    pub fn log_density_log_scale(&self, log_rho: f64, log_sigma: f64) -> f64 {
        let (rho, sigma) = (log_rho.exp(), log_sigma.exp());
        self.log_density_range(rho) + self.log_density_sigma(sigma) + log_rho + log_sigma
    }

    pub fn median_range(&self) -> f64 {
        self.lambda_rho() / std::f64::consts::LN_2
    }

    pub fn median_sigma(&self) -> f64 {
        std::f64::consts::LN_2 / self.lambda_sigma()
    }

    /// Quantile of the marginal range prior.
    pub fn range_quantile(&self, q: f64) -> f64 {
        -self.lambda_rho() / q.ln()
    }

    pub fn sigma_quantile(&self, q: f64) -> f64 {
        -(1.0 - q).ln() / self.lambda_sigma()
    }
}

/// The density helper used by [`pc_log_density`] callers that prefer a free
/// function.
pub fn pc_log_density(prior: &PcPrior, p: &MaternParams) -> f64 {
    prior.log_density(p)
}
