//! Per-year, per-season spatial prediction of surface mass balance from
//! stake measurements.
//!
//! Truth in year `t` and season `w` is
//! `β₀ + β₁ s1 + β₂ s2 + β₃ z(s) + U(s)` with `U` a Matérn field drawn on
//! the study mesh. Each (year, season) is fitted separately with the same
//! regression-plus-field model, the field hyperparameters sampled by
//! Metropolis-within-Gibbs under a PC prior.

use std::fmt;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{derive_seed, glacier_outline, parallel_map};
use crate::cholesky::Cholesky;
use crate::error::{Error, Result};
use crate::gmrf::{condition, run_chains, FactorCache, HyperParam, MwgSettings, StackedModel};
use crate::io::formats::{PredictionRecord, TruthRecord};
use crate::matern::{MaternParams, PcPrior};
use crate::mesh::{build_mesh_with_margin, dist, point_eval_matrix, Point, Polygon};
use crate::observations::{point_operator, PointDesign, PointObs};
use crate::processes::{stack, MeshModel, ProcessSpec};
use crate::sparse::CsrMatrix;
use crate::transport::{Grid, GridField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Summer,
}

impl Season {
    pub const BOTH: [Season; 2] = [Season::Winter, Season::Summer];
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Season::Winter => "winter",
            Season::Summer => "summer",
        })
    }
}

/// Truth generator for one season.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonTruth {
    /// Coefficients of `(1, s1, s2, z)`, `z` in metres.
    pub beta: [f64; 4],
    /// Year-to-year standard deviation of each coefficient.
    pub beta_sd: [f64; 4],
    /// Residual field SD; zero gives an exactly linear truth.
    pub sigma: f64,
    pub rho: f64,
}

/// Surface elevation `z(s) = margin + (summit - margin)(1 - (d/R)²)`,
/// `d` the distance to the summit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Elevation {
    pub summit: Point,
    pub summit_m: f64,
    pub margin_m: f64,
    pub radius: f64,
}

impl Elevation {
    pub fn at(&self, s: Point) -> f64 {
        let d = dist(s, self.summit) / self.radius;
        self.margin_m + (self.summit_m - self.margin_m) * (1.0 - d * d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmbStudyConfig {
    /// Glacier outline in scaled coordinates.
    pub outline: Vec<Point>,
    pub n_sites: usize,
    /// Sites measured in the first year; later years add sites up to
    /// `n_sites`.
    pub min_sites: usize,
    /// Extra stakes never used for fitting, scored every year.
    pub holdout_sites: usize,
    pub first_year: i32,
    pub n_years: usize,
    /// Length in metres of one scaled unit.
    pub extent_m: f64,
    pub resolution_m: f64,
    pub mesh_edge: f64,
    pub mesh_margin: f64,
    pub elevation: Elevation,
    pub winter: SeasonTruth,
    pub summer: SeasonTruth,
    pub noise_sd: f64,
    pub prior: PcPrior,
    /// Sample `(ρ, σ)`; otherwise they are fixed at their true values.
    pub estimate_hyperparameters: bool,
    pub sampler: SamplerSettings,
    /// Latent draws used for prediction SDs.
    pub prediction_draws: usize,
    /// Also emit truth and prediction records for every grid cell.
    pub score_grid: bool,
}

impl Default for SmbStudyConfig {
    fn default() -> Self {
        Self {
            outline: glacier_outline(),
            n_sites: 25,
            min_sites: 22,
            holdout_sites: 10,
            first_year: 1997,
            n_years: 19,
            extent_m: 30_000.0,
            resolution_m: 100.0,
            mesh_edge: 0.05,
            mesh_margin: 0.2,
            elevation: Elevation {
                summit: [0.52, 0.55],
                summit_m: 1450.0,
                margin_m: 450.0,
                radius: 0.45,
            },
            winter: SeasonTruth {
                beta: [0.2, 0.3, -0.2, 0.0015],
                beta_sd: [0.2, 0.1, 0.1, 0.0002],
                sigma: 0.25,
                rho: 0.3,
            },
            summer: SeasonTruth {
                beta: [-6.5, -0.4, 0.3, 0.0045],
                beta_sd: [0.5, 0.1, 0.1, 0.0004],
                sigma: 0.35,
                rho: 0.25,
            },
            noise_sd: 0.15,
            prior: PcPrior {
                rho0: 0.1,
                alpha_rho: 0.05,
                sigma0: 1.0,
                alpha_sigma: 0.05,
            },
            estimate_hyperparameters: true,
            sampler: SamplerSettings {
                n_iter: 1000,
                burn_in: 500,
                thin: 5,
            },
            prediction_draws: 200,
            score_grid: false,
        }
    }
}

impl SmbStudyConfig {
    pub fn validate(&self) -> Result<Polygon> {
        let mut errs = Vec::new();
        if self.n_sites < 3 {
            errs.push("smb: n_sites must be at least 3".to_string());
        }
        if self.min_sites < 3 || self.min_sites > self.n_sites {
            errs.push("smb: min_sites must lie in [3, n_sites]".to_string());
        }
        if self.n_years == 0 {
            errs.push("smb: n_years must be at least 1".to_string());
        }
        for (name, v) in [
            ("extent_m", self.extent_m),
            ("resolution_m", self.resolution_m),
            ("mesh_edge", self.mesh_edge),
            ("noise_sd", self.noise_sd),
            ("elevation.radius", self.elevation.radius),
            ("winter.rho", self.winter.rho),
            ("summer.rho", self.summer.rho),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("smb: {name} must be positive"));
            }
        }
        for (name, s) in [("winter", &self.winter), ("summer", &self.summer)] {
            if !(s.sigma >= 0.0) || s.beta_sd.iter().any(|v| !(*v >= 0.0)) {
                errs.push(format!("smb: {name} standard deviations must be non-negative"));
            }
        }
        if !(self.mesh_margin >= 0.0) {
            errs.push("smb: mesh_margin must be non-negative".into());
        }
        if self.sampler.thin == 0 {
            errs.push("smb: sampler.thin must be at least 1".into());
        }
        if self.prediction_draws < 2 {
            errs.push("smb: prediction_draws must be at least 2".into());
        }
        if let Err(e) = self.prior.validate() {
            errs.push(format!("smb: prior: {e}"));
        }
        let poly = Polygon::new(self.outline.clone()).map_err(|e| errs.push(format!("smb: outline: {e}")));
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let poly = poly.expect("checked");
        if self.resolution_m / self.extent_m > poly.diameter() {
            return Err(Error::Config(vec!["smb: resolution is coarser than the glacier".into()]));
        }
        Ok(poly)
    }

    fn truth(&self, season: Season) -> &SeasonTruth {
        match season {
            Season::Winter => &self.winter,
            Season::Summer => &self.summer,
        }
    }
}

/// One successful (year, season) fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SmbFit {
    pub year: i32,
    pub season: Season,
    pub n_sites: usize,
    pub mean: GridField,
    pub sd: GridField,
    pub truth: GridField,
    /// Posterior means of `(ρ, σ)`, or their fixed values.
    pub rho: f64,
    pub sigma: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitFailure {
    pub year: i32,
    pub season: Season,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetMap {
    pub year: i32,
    pub mean: GridField,
    pub sd: GridField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmbReport {
    pub grid: Grid,
    pub sites: Vec<Point>,
    pub holdout_sites: Vec<Point>,
    pub fits: Vec<SmbFit>,
    pub failures: Vec<FitFailure>,
    /// Winter plus summer for every year with both fits.
    pub net: Vec<NetMap>,
    pub holdout_truth: Vec<TruthRecord>,
    pub holdout_prediction: Vec<PredictionRecord>,
    /// Filled when `score_grid` is set.
    pub grid_truth: Vec<TruthRecord>,
    pub grid_prediction: Vec<PredictionRecord>,
}

struct Layout {
    mesh: Arc<MeshModel>,
    grid: Grid,
    cells: Vec<usize>,
    cell_points: Vec<Point>,
    sites: Vec<Point>,
    holdout: Vec<Point>,
    /// Site indices measured in each year.
    years: Vec<Vec<usize>>,
}

fn uniform_sites<R: Rng>(poly: &Polygon, n: usize, min_sep: f64, rng: &mut R) -> Vec<Point> {
    let (lo, hi) = poly.bbox();
    let mut out: Vec<Point> = Vec::with_capacity(n);
    let mut sep = min_sep;
    let mut tries = 0;
    while out.len() < n {
        let p = [
            lo[0] + (hi[0] - lo[0]) * rng.random::<f64>(),
            lo[1] + (hi[1] - lo[1]) * rng.random::<f64>(),
        ];
        tries += 1;
        if tries % 10_000 == 0 {
            sep *= 0.5;
        }
        if poly.contains(p) && out.iter().all(|q| dist(*q, p) >= sep) {
            out.push(p);
        }
    }
    out
}

fn layout(cfg: &SmbStudyConfig, poly: &Polygon, seed: u64) -> Result<Layout> {
    let mesh = build_mesh_with_margin(poly, cfg.mesh_edge, cfg.mesh_margin)?;
    let mesh = MeshModel::new("smb", mesh);
    let dx = cfg.resolution_m / cfg.extent_m;
    let (lo, hi) = poly.bbox();
    let nx = ((hi[0] - lo[0]) / dx).ceil().max(1.0) as usize;
    let ny = ((hi[1] - lo[1]) / dx).ceil().max(1.0) as usize;
    let grid = Grid::new(nx, ny, dx, lo)?;
    let (cells, cell_points): (Vec<usize>, Vec<Point>) = grid
        .centres()
        .into_iter()
        .enumerate()
        .filter(|(_, p)| poly.contains(*p))
        .unzip();
    let mut rng = crate::seeded_rng(derive_seed(seed, 0));
    let all = uniform_sites(poly, cfg.n_sites + cfg.holdout_sites, 0.6 * poly.diameter() / (cfg.n_sites as f64).sqrt() * 0.5, &mut rng);
    let (sites, holdout) = (all[..cfg.n_sites].to_vec(), all[cfg.n_sites..].to_vec());
    let years = (0..cfg.n_years)
        .map(|y| {
            let extra = if cfg.n_years > 1 {
                (cfg.n_sites - cfg.min_sites) * y / (cfg.n_years - 1)
            } else {
                cfg.n_sites - cfg.min_sites
            };
            let mut idx = sample(&mut rng, cfg.n_sites, cfg.min_sites + extra).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    Ok(Layout {
        mesh,
        grid,
        cells,
        cell_points,
        sites,
        holdout,
        years,
    })
}

/// Regression rows `(1, s1, s2, z)` and interpolation matrix for locations.
struct Predictor {
    x: Vec<[f64; 4]>,
    a: CsrMatrix,
}

impl Predictor {
    fn new(cfg: &SmbStudyConfig, mesh: &MeshModel, pts: &[Point]) -> Result<Self> {
        Ok(Self {
            x: pts.iter().map(|p| [1.0, p[0], p[1], cfg.elevation.at(*p)]).collect(),
            a: point_eval_matrix(&mesh.mesh, pts)?,
        })
    }

    /// `x'β + A u` for a latent vector laid out as `[β; u]`.
    fn apply(&self, beta: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = self.a.mul_vec(u);
        for (o, x) in out.iter_mut().zip(&self.x) {
            *o += x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        }
        out
    }
}

/// Running mean and variance (Welford).
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    fn sd(&self) -> Vec<f64> {
        self.m2.iter().map(|s| (s / (self.n - 1.0)).sqrt()).collect()
    }
}

struct FitOutput {
    fit: SmbFit,
    holdout_mean: Vec<f64>,
    holdout_sd: Vec<f64>,
    holdout_obs: Vec<f64>,
}

pub fn run_smb_study(cfg: &SmbStudyConfig, seed: u64, threads: usize) -> Result<SmbReport> {
    let poly = cfg.validate()?;
    let lay = layout(cfg, &poly, seed)?;
    let grid_pred = Predictor::new(cfg, &lay.mesh, &lay.cell_points)?;
    let hold_pred = Predictor::new(cfg, &lay.mesh, &lay.holdout)?;
    let site_pred = Predictor::new(cfg, &lay.mesh, &lay.sites)?;
    let residual_factor: Vec<Option<Cholesky>> = Season::BOTH
        .iter()
        .map(|s| {
            let t = cfg.truth(*s);
            if t.sigma > 0.0 {
                let m = MaternParams::spde(t.sigma, t.rho)?;
                Cholesky::new(&lay.mesh.spde.precision(&m)).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..cfg.n_years).flat_map(|y| [(y, 0), (y, 1)]).collect();
    let results = parallel_map(jobs.len(), threads, |j| {
        let (y, s) = jobs[j];
        fit_one(cfg, &lay, [&grid_pred, &hold_pred, &site_pred], residual_factor[s].as_ref(), seed, y, Season::BOTH[s])
    });

    let mut fits = Vec::new();
    let mut failures = Vec::new();
    let mut holdout_truth = Vec::new();
    let mut holdout_prediction = Vec::new();
    let mut grid_truth = Vec::new();
    let mut grid_prediction = Vec::new();
    for (j, r) in results.into_iter().enumerate() {
        let (y, s) = jobs[j];
        let year = cfg.first_year + y as i32;
        let season = Season::BOTH[s];
        match r {
            Ok(out) => {
                let item = format!("{year}-{season}");
                for k in 0..lay.holdout.len() {
                    holdout_truth.push(TruthRecord {
                        group: format!("stake{k}"),
                        item: item.clone(),
                        value: out.holdout_obs[k],
                    });
                    holdout_prediction.push(PredictionRecord {
                        group: format!("stake{k}"),
                        item: item.clone(),
                        mean: out.holdout_mean[k],
                        sd: out.holdout_sd[k],
                        prior_sd: f64::NAN,
                    });
                }
                if cfg.score_grid {
                    for &c in &lay.cells {
                        grid_truth.push(TruthRecord {
                            group: format!("cell{c}"),
                            item: item.clone(),
                            value: out.fit.truth.values[c],
                        });
                        grid_prediction.push(PredictionRecord {
                            group: format!("cell{c}"),
                            item: item.clone(),
                            mean: out.fit.mean.values[c],
                            sd: out.fit.sd.values[c],
                            prior_sd: f64::NAN,
                        });
                    }
                }
                fits.push(out.fit);
            }
            Err(e) => failures.push(FitFailure {
                year,
                season,
                message: e.to_string(),
            }),
        }
    }
    let net = net_maps(&fits);
    Ok(SmbReport {
        grid: lay.grid,
        sites: lay.sites,
        holdout_sites: lay.holdout,
        fits,
        failures,
        net,
        holdout_truth,
        holdout_prediction,
        grid_truth,
        grid_prediction,
    })
}

/// Pointwise winter + summer; SDs add in quadrature since the seasonal fits
/// are independent.
pub fn net_maps(fits: &[SmbFit]) -> Vec<NetMap> {
    let mut out = Vec::new();
    for w in fits.iter().filter(|f| f.season == Season::Winter) {
        if let Some(s) = fits.iter().find(|f| f.season == Season::Summer && f.year == w.year) {
            let add = |a: &GridField, b: &GridField, f: fn(f64, f64) -> f64| GridField {
                grid: a.grid,
                values: a.values.iter().zip(&b.values).map(|(x, y)| f(*x, *y)).collect(),
            };
            out.push(NetMap {
                year: w.year,
                mean: add(&w.mean, &s.mean, |x, y| x + y),
                sd: add(&w.sd, &s.sd, |x, y| x.hypot(y)),
            });
        }
    }
    out
}

fn fit_one(
    cfg: &SmbStudyConfig,
    lay: &Layout,
    [grid_pred, hold_pred, site_pred]: [&Predictor; 3],
    residual: Option<&Cholesky>,
    seed: u64,
    y: usize,
    season: Season,
) -> Result<FitOutput> {
    let tag = 1 + 2 * y as u64 + (season == Season::Summer) as u64;
    let mut rng = crate::seeded_rng(derive_seed(seed, tag));
    let t = cfg.truth(season);
    let beta: Vec<f64> = (0..4)
        .map(|k| t.beta[k] + t.beta_sd[k] * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let u = match residual {
        Some(chol) => chol.sample_zero_mean(&mut rng),
        None => vec![0.0; lay.mesh.n_vertices()],
    };
    let site_truth = site_pred.apply(&beta, &u);
    let mut noise = |v: f64| v + cfg.noise_sd * rng.sample::<f64, _>(StandardNormal);
    let obs: Vec<PointObs> = lay.years[y]
        .iter()
        .map(|&k| PointObs {
            location: lay.sites[k],
            value: noise(site_truth[k]),
            epoch: 0,
            covariates: vec![cfg.elevation.at(lay.sites[k])],
            noise_sd: cfg.noise_sd,
        })
        .collect();
    let holdout_obs: Vec<f64> = hold_pred.apply(&beta, &u).into_iter().map(&mut noise).collect();

    let (rho0, sigma0) = if cfg.estimate_hyperparameters {
        (cfg.prior.median_range(), cfg.prior.median_sigma())
    } else {
        (t.rho, t.sigma.max(1e-12))
    };
    let specs = vec![
        ProcessSpec::fixed_effects("beta", PointDesign::elevation_precisions()),
        ProcessSpec::spatial_only("u", Arc::clone(&lay.mesh), MaternParams::spde(sigma0, rho0)?, 1),
    ];
    let prior = stack(&specs)?;
    let op = point_operator(&obs, &prior, &PointDesign::elevation_regression("beta", "u"))?;
    let nb = 4;
    let mut grid_m = Moments::new(lay.cells.len());
    let mut hold_m = Moments::new(lay.holdout.len());
    let (rho, sigma, acceptance_rate, exact_mean) = if cfg.estimate_hyperparameters {
        let model = StackedModel::new(
            specs,
            op,
            vec![HyperParam::Matern {
                process: "u".into(),
                prior: cfg.prior,
            }],
        )?;
        let settings = MwgSettings {
            n_iter: cfg.sampler.n_iter,
            burn_in: cfg.sampler.burn_in,
            thin: cfg.sampler.thin,
            seed: derive_seed(seed, 1_000_000 + tag),
            latent_draws: true,
        };
        let chain = run_chains(&model, &settings, 1, 1)?.remove(0);
        let latent = chain.latent.as_ref().expect("latent draws requested");
        let step = latent.len().div_ceil(cfg.prediction_draws).max(1);
        for x in latent.iter().step_by(step) {
            grid_m.push(&grid_pred.apply(&x[..nb], &x[nb..]));
            hold_m.push(&hold_pred.apply(&x[..nb], &x[nb..]));
        }
        let avg = |k: usize| chain.theta.iter().map(|t| t[k]).sum::<f64>() / chain.theta.len() as f64;
        (avg(0), avg(1), chain.acceptance_rate, None)
    } else {
        let post = condition(&prior.precision, &prior.mean, &op, &op.noise_var, &mut FactorCache::new())?;
        for _ in 0..cfg.prediction_draws {
            let x = post.draw(&mut rng);
            grid_m.push(&grid_pred.apply(&x[..nb], &x[nb..]));
            hold_m.push(&hold_pred.apply(&x[..nb], &x[nb..]));
        }
        let m = &post.mean;
        let exact = (grid_pred.apply(&m[..nb], &m[nb..]), hold_pred.apply(&m[..nb], &m[nb..]));
        (rho0, sigma0, f64::NAN, Some(exact))
    };
    let (grid_mean, hold_mean) = match exact_mean {
        Some(e) => e,
        None => (grid_m.mean.clone(), hold_m.mean.clone()),
    };
    let place = |vals: &[f64]| {
        let mut v = vec![f64::NAN; lay.grid.len()];
        for (c, x) in lay.cells.iter().zip(vals) {
            v[*c] = *x;
        }
        GridField { grid: lay.grid, values: v }
    };
    let truth = grid_pred.apply(&beta, &u);
    let holdout_sd = hold_m.sd().iter().map(|s| s.hypot(cfg.noise_sd)).collect();
    Ok(FitOutput {
        fit: SmbFit {
            year: cfg.first_year + y as i32,
            season,
            n_sites: obs.len(),
            mean: place(&grid_mean),
            sd: place(&grid_m.sd()),
            truth: place(&truth),
            rho,
            sigma,
            acceptance_rate,
        },
        holdout_mean: hold_mean,
        holdout_sd,
        holdout_obs,
    })
}
