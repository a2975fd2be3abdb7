//! Gaussian conditioning on sparse precisions and hyperparameter sampling.

mod mcmc;
mod model;

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub use mcmc::{mwg_sample, run_chains, split_rhat, Chain, HyperModel, MwgSettings};
pub use model::{HyperParam, StackedModel};

use crate::cholesky::{Cholesky, SymbolicCholesky};
use crate::error::{Error, Result};
use crate::observations::ObsOperator;
use crate::processes::StackedPrior;
use crate::sparse::CsrMatrix;

/// How marginal standard deviations are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalMethod {
    /// Empirical SD of exact posterior draws.
    Sampling { draws: usize, seed: u64 },
    /// Diagonal of the inverse from Takahashi recursions.
    SelectedInverse,
}

impl Default for MarginalMethod {
    fn default() -> Self {
        MarginalMethod::Sampling { draws: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorResult {
    pub mean: Vec<f64>,
    pub marginal_sd: Vec<f64>,
    pub marginal_method: MarginalMethod,
    pub samples: Option<Vec<Vec<f64>>>,
    pub log_marginal_likelihood: f64,
}

/// Symbolic analyses reused across factorisations with a fixed pattern.
#[derive(Debug, Default, Clone)]
pub struct FactorCache {
    prior: Option<Arc<SymbolicCholesky>>,
    posterior: Option<Arc<SymbolicCholesky>>,
}

impl FactorCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn factor(slot: &mut Option<Arc<SymbolicCholesky>>, a: &CsrMatrix) -> Result<Cholesky> {
        let sym = match slot {
            Some(s) if s.matches(a) => Arc::clone(s),
            _ => {
                let s = SymbolicCholesky::analyse(a)?;
                *slot = Some(Arc::clone(&s));
                s
            }
        };
        Cholesky::factor(sym, a)
    }
}

/// Gaussian posterior of the latent vector given data, with its factor.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub precision: CsrMatrix,
    pub mean: Vec<f64>,
    pub log_marginal_likelihood: f64,
    chol: Cholesky,
}

impl GaussianPosterior {
    pub fn n(&self) -> usize {
        self.mean.len()
    }

    pub fn factor(&self) -> &Cholesky {
        &self.chol
    }

    /// One exact draw `μ + L'⁻¹ z`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n()).map(|_| rng.sample(StandardNormal)).collect();
        let mut x = self.chol.colour_noise(&z);
        for (a, m) in x.iter_mut().zip(&self.mean) {
            *a += m;
        }
        x
    }

    pub fn sample<R: Rng + ?Sized>(&self, n_draws: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n_draws).map(|_| self.draw(rng)).collect()
    }

    pub fn marginal_variance(&self, method: MarginalMethod) -> Vec<f64> {
        match method {
            MarginalMethod::SelectedInverse => self.chol.selected_inverse().diagonal(),
            MarginalMethod::Sampling { draws, seed } => {
                let mut rng = crate::seeded_rng(seed);
                let samples = self.sample(draws.max(2), &mut rng);
                let k = samples.len() as f64;
                (0..self.n())
                    .map(|i| {
                        let m = samples.iter().map(|s| s[i]).sum::<f64>() / k;
                        samples.iter().map(|s| (s[i] - m).powi(2)).sum::<f64>() / (k - 1.0)
                    })
                    .collect()
            }
        }
    }

    /// Dense covariance `Q_post⁻¹` (small problems only).
    pub fn covariance_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut c = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.chol.solve(&e);
            e[j] = 0.0;
            for i in 0..n {
                c[(i, j)] = col[i];
            }
        }
        c
    }

    pub fn result(&self, method: MarginalMethod) -> PosteriorResult {
        PosteriorResult {
            mean: self.mean.clone(),
            marginal_sd: self.marginal_variance(method).into_iter().map(|v| v.max(0.0).sqrt()).collect(),
            marginal_method: method,
            samples: None,
            log_marginal_likelihood: self.log_marginal_likelihood,
        }
    }
}

/// Conditions `η ~ N(μ₀, Q⁻¹)` on `z = H η + offset + ε`,
/// `ε ~ N(0, diag(noise_var))`:
/// `Q_post = Q + H'R⁻¹H`, `Q_post μ = Q μ₀ + H'R⁻¹(z - offset)`, and
/// `log p(z) = -½[m log 2π + log|R| - log|Q| + log|Q_post| + r'R⁻¹r + (μ-μ₀)'Q(μ-μ₀)]`
/// with `r = z - offset - Hμ`.
pub fn condition(
    q: &CsrMatrix,
    prior_mean: &[f64],
    op: &ObsOperator,
    noise_var: &[f64],
    cache: &mut FactorCache,
) -> Result<GaussianPosterior> {
    let n = q.nrows();
    let m = op.n_obs();
    if op.h.ncols() != n || prior_mean.len() != n {
        return Err(Error::invalid("operator, prior mean and precision sizes differ"));
    }
    if noise_var.len() != m || op.values.len() != m || op.offset.len() != m {
        return Err(Error::invalid("observation vectors must have one entry per row of H"));
    }
    if let Some(i) = noise_var.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid(format!("noise variance of observation {i} must be positive")));
    }
    let rinv: Vec<f64> = noise_var.iter().map(|v| 1.0 / v).collect();
    let q_post = q.add_scaled(1.0, &op.h.weighted_gram(&rinv), 1.0);
    let chol_prior = FactorCache::factor(&mut cache.prior, q).map_err(|e| spd_error(e, "the prior precision is not positive definite"))?;
    let chol = FactorCache::factor(&mut cache.posterior, &q_post).map_err(|e| spd_error(e, "the posterior precision is not positive definite"))?;
    let resid0: Vec<f64> = (0..m).map(|i| (op.values[i] - op.offset[i]) * rinv[i]).collect();
    let mut rhs = op.h.tr_mul_vec(&resid0);
    for (r, v) in rhs.iter_mut().zip(q.mul_vec(prior_mean)) {
        *r += v;
    }
    let mean = chol.solve(&rhs);
    let fitted = op.h.mul_vec(&mean);
    let quad_data: f64 = (0..m)
        .map(|i| (op.values[i] - op.offset[i] - fitted[i]).powi(2) * rinv[i])
        .sum();
    let dev: Vec<f64> = mean.iter().zip(prior_mean).map(|(a, b)| a - b).collect();
    let quad_prior = q.quad_form(&dev);
    let log_det_r: f64 = noise_var.iter().map(|v| v.ln()).sum();
    let log_marginal_likelihood = -0.5
        * (m as f64 * (2.0 * PI).ln() + log_det_r - chol_prior.log_det() + chol.log_det() + quad_data + quad_prior);
    Ok(GaussianPosterior {
        precision: q_post,
        mean,
        log_marginal_likelihood,
        chol,
    })
}

fn spd_error(e: Error, hint: &'static str) -> Error {
    match e {
        Error::NotPositiveDefinite { pivot, value, .. } => Error::NotPositiveDefinite { pivot, value, hint },
        other => other,
    }
}

/// Posterior of a stacked prior given an observation operator.
pub fn gaussian_condition(prior: &StackedPrior, op: &ObsOperator, method: MarginalMethod) -> Result<PosteriorResult> {
    let post = condition(&prior.precision, &prior.mean, op, &op.noise_var, &mut FactorCache::new())?;
    Ok(post.result(method))
}

/// `n_draws` exact posterior draws under `seed`.
pub fn sample_posterior(post: &GaussianPosterior, n_draws: usize, seed: u64) -> Vec<Vec<f64>> {
    post.sample(n_draws, &mut crate::seeded_rng(seed))
}

/// Dense normal-normal update for `x = F η + e`, `η ~ N(μ_p, Σ_p)`,
/// `e ~ N(0, Σ_l)`:
/// `μ = μ_p + K (x - F μ_p)`, `Σ = Σ_p - K F Σ_p`, `K = Σ_p F' (F Σ_p F' + Σ_l)⁻¹`.
pub fn gaugau_exact(
    mu_prior: &DVector<f64>,
    sigma_prior: &DMatrix<f64>,
    f: &DMatrix<f64>,
    sigma_l: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (m, n) = f.shape();
    if mu_prior.len() != n || sigma_prior.shape() != (n, n) || sigma_l.shape() != (m, m) || x.len() != m {
        return Err(Error::invalid("Gau-Gau update: dimension mismatch"));
    }
    let s = f * sigma_prior * f.transpose() + sigma_l;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("Gau-Gau update: F Σ_p F' + Σ_l is singular".into()))?;
    let fs = f * sigma_prior;
    let k_t = chol.solve(&fs); // (Σ_p F' S⁻¹)' = S⁻¹ F Σ_p
    let mu = mu_prior + k_t.transpose() * (x - f * mu_prior);
    let mut sigma = sigma_prior - fs.transpose() * &k_t;
    sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok((mu, sigma))
}
