use rand::Rng;
use rand_distr::StandardNormal;

use super::{FactorCache, GaussianPosterior};
use crate::error::{Error, Result};

/// Hyperparameters on an unconstrained working scale, and the Gaussian
/// latent posterior they imply.
pub trait HyperModel {
    fn names(&self) -> Vec<String>;

    fn initial(&self) -> Vec<f64>;

    /// Log prior density on the working scale, Jacobian included.
    fn log_prior(&self, theta: &[f64]) -> f64;

    /// Working-scale values mapped back to natural units.
    fn natural(&self, theta: &[f64]) -> Vec<f64>;

    /// Initial random-walk step per coordinate.
    fn proposal_sd(&self) -> Vec<f64> {
        vec![0.1; self.initial().len()]
    }

    fn evaluate(&self, theta: &[f64], cache: &mut FactorCache) -> Result<GaussianPosterior>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MwgSettings {
    /// Iterations after burn-in.
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Draw the latent vector at every retained iteration.
    pub latent_draws: bool,
}

impl Default for MwgSettings {
    fn default() -> Self {
        Self {
            n_iter: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 0,
            latent_draws: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub names: Vec<String>,
    /// Retained hyperparameters in natural units.
    pub theta: Vec<Vec<f64>>,
    /// Retained hyperparameters on the working scale.
    pub working: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    pub latent: Option<Vec<Vec<f64>>>,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub proposal_sd: Vec<f64>,
}

impl Chain {
    /// Column `k` of the retained natural-scale draws.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.theta.iter().map(|t| t[k]).collect()
    }
}

const TARGET_ACCEPT: f64 = 0.35;
const ADAPT_BATCH: usize = 50;

/// Metropolis-within-Gibbs: a block random-walk Metropolis step on the
/// working-scale hyperparameters targeting `p(θ | z) ∝ p(z | θ) p(θ)` with
/// the latent field integrated out, followed by an exact Gaussian draw of
/// the latent field given `θ`. The proposal scale adapts during burn-in only.
pub fn mwg_sample<M: HyperModel + ?Sized>(model: &M, settings: &MwgSettings) -> Result<Chain> {
    let mut rng = crate::seeded_rng(settings.seed);
    mwg_with_rng(model, settings, &mut rng)
}

fn mwg_with_rng<M: HyperModel + ?Sized, R: Rng>(model: &M, settings: &MwgSettings, rng: &mut R) -> Result<Chain> {
    if settings.thin == 0 {
        return Err(Error::invalid("thinning interval must be at least 1"));
    }
    let names = model.names();
    let mut theta = model.initial();
    let d = theta.len();
    let mut base_sd = model.proposal_sd();
    if base_sd.len() != d {
        return Err(Error::invalid("proposal_sd length differs from the hyperparameter count"));
    }
    let mut cache = FactorCache::new();
    let dump = |t: &[f64]| {
        names
            .iter()
            .zip(model.natural(t))
            .map(|(n, v)| format!("{n}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let mut post = model
        .evaluate(&theta, &mut cache)
        .map_err(|e| Error::Numerical(format!("initial state [{}] failed: {e}", dump(&theta))))?;
    let mut lp = post.log_marginal_likelihood + model.log_prior(&theta);
    if !lp.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite log posterior {lp} at initial state [{}]",
            dump(&theta)
        )));
    }

    let mut log_scale = 0.0f64;
    let mut batch_accept = 0usize;
    let mut batch_index = 0usize;
    let mut burn_trace: Vec<Vec<f64>> = Vec::new();
    let mut accepted_after = 0usize;

    let mut chain = Chain {
        names: names.clone(),
        theta: Vec::new(),
        working: Vec::new(),
        log_posterior: Vec::new(),
        latent: settings.latent_draws.then(Vec::new),
        acceptance_rate: 0.0,
        proposal_sd: Vec::new(),
    };

    let total = settings.burn_in + settings.n_iter;
    for it in 0..total {
        let burning = it < settings.burn_in;
        if d > 0 {
            let step = log_scale.exp();
            let prop: Vec<f64> = theta
                .iter()
                .zip(&base_sd)
                .map(|(t, s)| t + step * s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let lprior = model.log_prior(&prop);
            let mut accepted = false;
            if lprior.is_finite() {
                if let Ok(p) = model.evaluate(&prop, &mut cache) {
                    let lp_new = p.log_marginal_likelihood + lprior;
                    let u: f64 = rng.random();
                    if lp_new.is_finite() && u.ln() < lp_new - lp {
                        theta = prop;
                        lp = lp_new;
                        post = p;
                        accepted = true;
                    }
                }
            }
            if burning {
                batch_accept += accepted as usize;
                burn_trace.push(theta.clone());
                if (it + 1) % ADAPT_BATCH == 0 {
                    let rate = batch_accept as f64 / ADAPT_BATCH as f64;
                    batch_index += 1;
                    let gain = (1.0 / (batch_index as f64).sqrt()).min(0.5);
                    log_scale += gain * (rate - TARGET_ACCEPT) * 4.0;
                    batch_accept = 0;
                }
                // Halfway through burn-in, match the proposal shape to the
                // spread seen so far.
                if it + 1 == settings.burn_in / 2 && burn_trace.len() >= 4 * ADAPT_BATCH {
                    let tail = &burn_trace[burn_trace.len() / 2..];
                    let k = tail.len() as f64;
                    let sd: Vec<f64> = (0..d)
                        .map(|j| {
                            let m = tail.iter().map(|t| t[j]).sum::<f64>() / k;
                            (tail.iter().map(|t| (t[j] - m).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
                        })
                        .collect();
                    if sd.iter().all(|s| *s > 1e-8 && s.is_finite()) {
                        let f = 2.38 / (d as f64).sqrt();
                        base_sd = sd.iter().map(|s| s * f).collect();
                        log_scale = 0.0;
                    }
                }
            } else {
                accepted_after += accepted as usize;
            }
        }
        if !burning && (it - settings.burn_in) % settings.thin == 0 {
            chain.natural_push(model.natural(&theta), theta.clone(), lp);
            if let Some(l) = chain.latent.as_mut() {
                l.push(post.draw(rng));
            }
        }
    }
    chain.acceptance_rate = if settings.n_iter > 0 {
        accepted_after as f64 / settings.n_iter as f64
    } else {
        0.0
    };
    chain.proposal_sd = base_sd.iter().map(|s| s * log_scale.exp()).collect();
    Ok(chain)
}

impl Chain {
    fn natural_push(&mut self, natural: Vec<f64>, working: Vec<f64>, lp: f64) {
        self.theta.push(natural);
        self.working.push(working);
        self.log_posterior.push(lp);
    }
}

/// Runs `n_chains` independent chains, chain `c` on random stream `c` of
/// `settings.seed`. Results do not depend on `threads`.
pub fn run_chains<M: HyperModel + Sync + ?Sized>(
    model: &M,
    settings: &MwgSettings,
    n_chains: usize,
    threads: usize,
) -> Result<Vec<Chain>> {
    let run = |c: usize| {
        let mut rng = crate::seeded_rng_stream(settings.seed, c as u64);
        mwg_with_rng(model, settings, &mut rng)
    };
    if threads <= 1 || n_chains <= 1 {
        return (0..n_chains).map(run).collect();
    }
    let mut out: Vec<Option<Result<Chain>>> = (0..n_chains).map(|_| None).collect();
    let ids: Vec<usize> = (0..n_chains).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = ids
            .chunks(n_chains.div_ceil(threads))
            .map(|group| {
                let run = &run;
                scope.spawn(move || group.iter().map(|&c| (c, run(c))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (c, r) in h.join().expect("chain thread panicked") {
                out[c] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.expect("every chain ran")).collect()
}

/// Split-R̂: each chain is halved and the between/within variance ratio
/// of the halves is computed.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return f64::NAN;
        }
        halves.push(&c[..h]);
        halves.push(&c[c.len() - h..]);
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0) as f64;
    let m = halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / h.len() as f64).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (h.len() as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}
