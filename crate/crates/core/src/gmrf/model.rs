use super::{condition, FactorCache, GaussianPosterior, HyperModel};
use crate::error::{Error, Result};
use crate::matern::{MaternParams, PcPrior};
use crate::observations::ObsOperator;
use crate::processes::{stack, ProcessKind, ProcessSpec, StackedPrior};

/// A sampled hyperparameter block of a [`StackedModel`].
#[derive(Debug, Clone, PartialEq)]
pub enum HyperParam {
    /// `(log ρ, log σ)` of a Matérn process under a PC prior.
    Matern { process: String, prior: PcPrior },
    /// `atanh a` of a constant AR(1) coefficient, uniform prior on (-1, 1).
    ArCoefficient { process: String },
    /// Log of a multiplicative factor on the noise variance of `rows`, with
    /// a normal prior on the log factor.
    NoiseScale {
        name: String,
        rows: Vec<usize>,
        log_mean: f64,
        log_sd: f64,
    },
}

/// Stacked process prior plus a fixed observation operator, with some
/// process and noise hyperparameters left free.
#[derive(Debug, Clone)]
pub struct StackedModel {
    specs: Vec<ProcessSpec>,
    op: ObsOperator,
    params: Vec<HyperParam>,
    initial: Vec<f64>,
}

impl StackedModel {
    /// Initial values are read from `specs` (noise scales start at 1).
    pub fn new(specs: Vec<ProcessSpec>, op: ObsOperator, params: Vec<HyperParam>) -> Result<Self> {
        let mut initial = Vec::new();
        for p in &params {
            match p {
                HyperParam::Matern { process, prior } => {
                    prior.validate()?;
                    let m = matern_of(&specs, process)?;
                    initial.extend([m.rho.ln(), m.sigma.ln()]);
                }
                HyperParam::ArCoefficient { process } => {
                    let spec = find(&specs, process)?;
                    let ProcessKind::Ar1 { a, .. } = &spec.kind else {
                        return Err(Error::invalid(format!("process '{process}' is not AR(1)")));
                    };
                    let a0 = a.first().copied().unwrap_or(0.0);
                    if a.iter().any(|x| *x != a0) {
                        return Err(Error::invalid(format!(
                            "process '{process}': only a constant AR coefficient can be sampled"
                        )));
                    }
                    initial.push(a0.atanh());
                }
                HyperParam::NoiseScale { rows, log_sd, .. } => {
                    if rows.iter().any(|&r| r >= op.n_obs()) {
                        return Err(Error::invalid("noise-scale row index out of range"));
                    }
                    if !(*log_sd > 0.0) {
                        return Err(Error::invalid("noise-scale prior sd must be positive"));
                    }
                    initial.push(0.0);
                }
            }
        }
        let model = Self {
            specs,
            op,
            params,
            initial,
        };
        model.prior(&model.initial)?;
        Ok(model)
    }

    pub fn operator(&self) -> &ObsOperator {
        &self.op
    }

    pub fn specs(&self) -> &[ProcessSpec] {
        &self.specs
    }

    /// Process specs with the hyperparameters `theta` substituted.
    pub fn specs_at(&self, theta: &[f64]) -> Result<Vec<ProcessSpec>> {
        let mut specs = self.specs.clone();
        let mut k = 0;
        for p in &self.params {
            match p {
                HyperParam::Matern { process, .. } => {
                    let (rho, sigma) = (theta[k].exp(), theta[k + 1].exp());
                    k += 2;
                    let spec = specs.iter_mut().find(|s| &s.id == process).unwrap();
                    match &mut spec.kind {
                        ProcessKind::SpatialOnly { matern, .. } | ProcessKind::Ar1 { matern, .. } => {
                            *matern = MaternParams::new(sigma, rho, matern.nu)?;
                        }
                        _ => unreachable!("checked in new"),
                    }
                }
                HyperParam::ArCoefficient { process } => {
                    let a_new = theta[k].tanh();
                    k += 1;
                    let spec = specs.iter_mut().find(|s| &s.id == process).unwrap();
                    if let ProcessKind::Ar1 { a, .. } = &mut spec.kind {
                        a.iter_mut().for_each(|x| *x = a_new);
                    }
                }
                HyperParam::NoiseScale { .. } => k += 1,
            }
        }
        Ok(specs)
    }

    pub fn prior(&self, theta: &[f64]) -> Result<StackedPrior> {
        stack(&self.specs_at(theta)?)
    }

    pub fn noise_var(&self, theta: &[f64]) -> Vec<f64> {
        let mut v = self.op.noise_var.clone();
        let mut k = 0;
        for p in &self.params {
            match p {
                HyperParam::Matern { .. } => k += 2,
                HyperParam::ArCoefficient { .. } => k += 1,
                HyperParam::NoiseScale { rows, .. } => {
                    let f = theta[k].exp();
                    for &r in rows {
                        v[r] *= f;
                    }
                    k += 1;
                }
            }
        }
        v
    }
}

fn find<'a>(specs: &'a [ProcessSpec], id: &str) -> Result<&'a ProcessSpec> {
    specs
        .iter()
        .find(|s| s.id == id)
        .ok_or_else(|| Error::invalid(format!("unknown process '{id}'")))
}

fn matern_of(specs: &[ProcessSpec], id: &str) -> Result<MaternParams> {
    match &find(specs, id)?.kind {
        ProcessKind::SpatialOnly { matern, .. } | ProcessKind::Ar1 { matern, .. } => Ok(*matern),
        _ => Err(Error::invalid(format!("process '{id}' has no Matérn parameters"))),
    }
}

impl HyperModel for StackedModel {
    fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for p in &self.params {
            match p {
                HyperParam::Matern { process, .. } => {
                    names.push(format!("{process}.rho"));
                    names.push(format!("{process}.sigma"));
                }
                HyperParam::ArCoefficient { process } => names.push(format!("{process}.a")),
                HyperParam::NoiseScale { name, .. } => names.push(format!("{name}.noise_scale")),
            }
        }
        names
    }

    fn initial(&self) -> Vec<f64> {
        self.initial.clone()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let mut lp = 0.0;
        let mut k = 0;
        for p in &self.params {
            match p {
                HyperParam::Matern { prior, .. } => {
                    lp += prior.log_density_log_scale(theta[k], theta[k + 1]);
                    k += 2;
                }
                HyperParam::ArCoefficient { .. } => {
                    // Uniform a on (-1, 1): density of atanh a is (1 - a²)/2.
                    let a = theta[k].tanh();
                    lp += (0.5 * (1.0 - a * a)).ln();
                    k += 1;
                }
                HyperParam::NoiseScale { log_mean, log_sd, .. } => {
                    let z = (theta[k] - log_mean) / log_sd;
                    lp += -0.5 * z * z - log_sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                    k += 1;
                }
            }
        }
        lp
    }

    fn natural(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(theta.len());
        let mut k = 0;
        for p in &self.params {
            match p {
                HyperParam::Matern { .. } => {
                    out.extend([theta[k].exp(), theta[k + 1].exp()]);
                    k += 2;
                }
                HyperParam::ArCoefficient { .. } => {
                    out.push(theta[k].tanh());
                    k += 1;
                }
                HyperParam::NoiseScale { .. } => {
                    out.push(theta[k].exp());
                    k += 1;
                }
            }
        }
        out
    }

    fn evaluate(&self, theta: &[f64], cache: &mut FactorCache) -> Result<GaussianPosterior> {
        let prior = self.prior(theta)?;
        condition(&prior.precision, &prior.mean, &self.op, &self.noise_var(theta), cache)
    }
}
