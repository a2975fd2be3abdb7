//! Executes a [`RunConfig`] and writes its artifacts.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::config::{BoundaryKind, FitConfig, Mode, RunConfig, SimulateConfig, TransportConfig, VelocityConfig};
use super::formats::{
    chains_to_string, grid_to_string, mesh_to_string, point_obs_to_string, polygon_to_string, read_mesh,
    read_point_obs, read_polygon, records_to_bytes, PredictionRecord, TruthRecord,
};
use super::manifest::{Manifest, OutputDir, RunInfo};
use crate::cholesky::Cholesky;
use crate::error::{Error, Result};
use crate::experiments::rates::PROCESSES;
use crate::experiments::{run_rates_study, run_smb_study, score_files, score_pair, Scores};
use crate::gmrf::{condition, run_chains, split_rhat, FactorCache, HyperParam, MwgSettings, StackedModel};
use crate::matern::MaternParams;
use crate::mesh::{build_mesh_with_margin, point_eval_matrix, Point, Polygon, TriMesh};
use crate::observations::{point_operator, PointDesign, PointObs, Term, ELEVATION_PRECISION, INTERCEPT_PRECISION};
use crate::processes::{stack, MeshModel, ProcessSpec};
use crate::transport::{generate_synthetic_truth, Boundary, Grid, GridField, TruthConfig, VelocityField};

/// Runs `cfg` into `out` (created if needed) and returns the manifest.
pub fn execute(cfg: &RunConfig, out: &Path, threads: usize) -> Result<Manifest> {
    let threads = threads.max(1);
    let mut dir = OutputDir::create(out)?;
    match cfg.mode {
        Mode::SmbStudy => smb_study(cfg, &mut dir, threads)?,
        Mode::RatesStudy => rates_study(cfg, &mut dir, threads)?,
        Mode::Fit => fit(cfg, &mut dir, threads)?,
        Mode::Simulate => simulate(cfg, &mut dir)?,
        Mode::Transport => transport(cfg, &mut dir)?,
    }
    let config = cfg.to_toml();
    dir.finish(RunInfo {
        mode: cfg.mode.name(),
        seed: cfg.seed,
        threads,
        config: &config,
    })
}

#[derive(Serialize)]
struct FitRow {
    year: i32,
    season: String,
    n_sites: usize,
    rho: f64,
    sigma: f64,
    acceptance_rate: f64,
}

#[derive(Serialize)]
struct FailureRow {
    year: i32,
    season: String,
    message: String,
}

#[derive(Serialize)]
struct SmbSummary {
    n_fits: usize,
    n_failures: usize,
    holdout: Scores,
    grid: Option<Scores>,
}

fn smb_study(cfg: &RunConfig, dir: &mut OutputDir, threads: usize) -> Result<()> {
    let study = cfg.smb.as_ref().expect("validated");
    let report = run_smb_study(study, cfg.seed, threads)?;
    let mut rows = Vec::new();
    for f in &report.fits {
        let stem = format!("maps/{}_{}", f.year, f.season);
        dir.write_str(&format!("{stem}_mean.csv"), &grid_to_string(&f.mean))?;
        dir.write_str(&format!("{stem}_sd.csv"), &grid_to_string(&f.sd))?;
        dir.write_str(&format!("{stem}_truth.csv"), &grid_to_string(&f.truth))?;
        rows.push(FitRow {
            year: f.year,
            season: f.season.to_string(),
            n_sites: f.n_sites,
            rho: f.rho,
            sigma: f.sigma,
            acceptance_rate: f.acceptance_rate,
        });
    }
    for n in &report.net {
        dir.write_str(&format!("maps/{}_net_mean.csv", n.year), &grid_to_string(&n.mean))?;
        dir.write_str(&format!("maps/{}_net_sd.csv", n.year), &grid_to_string(&n.sd))?;
    }
    dir.write("fits.csv", &records_to_bytes(&rows)?)?;
    if !report.failures.is_empty() {
        let rows: Vec<FailureRow> = report
            .failures
            .iter()
            .map(|f| FailureRow {
                year: f.year,
                season: f.season.to_string(),
                message: f.message.clone(),
            })
            .collect();
        dir.write("failures.csv", &records_to_bytes(&rows)?)?;
    }
    let sites: String = std::iter::once("x,y\n".to_string())
        .chain(report.sites.iter().map(|p| format!("{},{}\n", p[0], p[1])))
        .collect();
    dir.write_str("sites.csv", &sites)?;
    dir.write("holdout_truth.csv", &records_to_bytes(&report.holdout_truth)?)?;
    dir.write("holdout_prediction.csv", &records_to_bytes(&report.holdout_prediction)?)?;
    // Scores come from the written files only.
    let root = dir.dir().to_path_buf();
    let at = |name: &str| root.join(name);
    let holdout = score_pair(&at("holdout_truth.csv"), &at("holdout_prediction.csv"))?;
    let grid = if report.grid_truth.is_empty() {
        None
    } else {
        dir.write("grid_truth.csv", &records_to_bytes(&report.grid_truth)?)?;
        dir.write("grid_prediction.csv", &records_to_bytes(&report.grid_prediction)?)?;
        Some(score_pair(&at("grid_truth.csv"), &at("grid_prediction.csv"))?)
    };
    dir.write_json(
        "summary.json",
        &SmbSummary {
            n_fits: report.fits.len(),
            n_failures: report.failures.len(),
            holdout,
            grid,
        },
    )
}

#[derive(Serialize)]
struct ProcessScores {
    scores: Scores,
    fraction_beating_prior: f64,
}

#[derive(Serialize)]
struct RatesSummary {
    replicates: usize,
    n_latent: usize,
    n_obs: usize,
    mesh_vertices: [usize; 2],
    processes: BTreeMap<String, ProcessScores>,
    /// Vertices of all processes pooled.
    fraction_beating_prior: f64,
    smb_ice_corr: f64,
    smb_ice_corr_without_gravimetry: Option<f64>,
    gia_sd_at_gps: Vec<(f64, f64)>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct VertexRow {
    vertex: usize,
    x: f64,
    y: f64,
    truth: f64,
    mean: f64,
    sd: f64,
    prior_sd: f64,
    stipple: bool,
}

fn rates_study(cfg: &RunConfig, dir: &mut OutputDir, threads: usize) -> Result<()> {
    let study = cfg.rates.as_ref().expect("validated");
    let reports = run_rates_study(study, cfg.seed, threads)?;
    let first = reports.first().ok_or_else(|| Error::invalid("rates study needs at least one replicate"))?;
    let mut pairs: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for (k, r) in reports.iter().enumerate() {
        for id in PROCESSES {
            let prefix = format!("{id}/");
            let truth: Vec<&TruthRecord> = r.truth_records.iter().filter(|t| t.group.starts_with(&prefix)).collect();
            let pred: Vec<&PredictionRecord> =
                r.prediction_records.iter().filter(|t| t.group.starts_with(&prefix)).collect();
            let (tn, pn) = (format!("replicate_{k:02}/{id}_truth.csv"), format!("replicate_{k:02}/{id}_prediction.csv"));
            dir.write(&tn, &records_to_bytes(&truth)?)?;
            dir.write(&pn, &records_to_bytes(&pred)?)?;
            pairs.entry(id).or_default().push((dir.dir().join(tn), dir.dir().join(pn)));
        }
    }
    for m in &first.maps {
        let year = study.first_year + m.epoch as i32;
        let stem = if m.process == "gia" {
            "maps/gia".to_string()
        } else {
            format!("maps/{}_{year}", m.process)
        };
        dir.write_str(&format!("{stem}_mean.csv"), &grid_to_string(&m.mean_grid))?;
        dir.write_str(&format!("{stem}_sd.csv"), &grid_to_string(&m.sd_grid))?;
        let rows: Vec<VertexRow> = (0..m.vertices.len())
            .map(|k| VertexRow {
                vertex: m.vertices[k],
                x: m.coords[k][0],
                y: m.coords[k][1],
                truth: m.truth[k],
                mean: m.mean[k],
                sd: m.sd[k],
                prior_sd: m.prior_sd[k],
                stipple: m.stipple[k],
            })
            .collect();
        dir.write(&format!("{stem}_vertices.csv"), &records_to_bytes(&rows)?)?;
    }
    let mut processes = BTreeMap::new();
    let (mut beat, mut total) = (0, 0);
    for (id, p) in &pairs {
        let scores = score_files(p)?;
        beat += scores.groups_beating_prior;
        total += scores.groups_with_prior;
        processes.insert(
            id.to_string(),
            ProcessScores {
                fraction_beating_prior: scores.fraction_beating_prior(),
                scores,
            },
        );
    }
    dir.write_json(
        "summary.json",
        &RatesSummary {
            replicates: reports.len(),
            n_latent: first.n_latent,
            n_obs: first.n_obs,
            mesh_vertices: first.mesh_vertices,
            processes,
            fraction_beating_prior: beat as f64 / total.max(1) as f64,
            smb_ice_corr: first.smb_ice_corr,
            smb_ice_corr_without_gravimetry: first.smb_ice_corr_without_gravimetry,
            gia_sd_at_gps: first.gia_sd_at_gps.clone(),
            warnings: first.warnings.clone(),
        },
    )
}

fn bbox_rectangle(points: impl Iterator<Item = Point>, pad: f64) -> Result<Polygon> {
    let pts: Vec<Point> = points.collect();
    if pts.is_empty() {
        return Err(Error::invalid("no locations to bound"));
    }
    let (lo, hi) = crate::mesh::bbox(&pts);
    let pad = pad.max(1e-9 * (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0));
    Polygon::rectangle([lo[0] - pad, lo[1] - pad], [hi[0] + pad, hi[1] + pad])
}

/// A regular grid over `domain` with cells outside it left out.
fn map_cells(domain: &Polygon, res: f64) -> Result<(Grid, Vec<usize>, Vec<Point>)> {
    let (lo, hi) = domain.bbox();
    let nx = ((hi[0] - lo[0]) / res).ceil().max(1.0) as usize;
    let ny = ((hi[1] - lo[1]) / res).ceil().max(1.0) as usize;
    let grid = Grid::new(nx, ny, res, lo)?;
    let mut cells = Vec::new();
    let mut pts = Vec::new();
    for (c, p) in grid.centres().into_iter().enumerate() {
        if domain.contains(p) {
            cells.push(c);
            pts.push(p);
        }
    }
    Ok((grid, cells, pts))
}

#[derive(Serialize)]
struct VertexEstimate {
    vertex: usize,
    x: f64,
    y: f64,
    mean: f64,
    sd: f64,
}

#[derive(Serialize)]
struct CoefficientEstimate {
    term: String,
    mean: f64,
    sd: f64,
}

#[derive(Serialize)]
struct FitSummary {
    n_obs: usize,
    n_vertices: usize,
    estimated: bool,
    hyperparameters: Vec<String>,
    posterior_mean: Vec<f64>,
    split_rhat: Vec<f64>,
    acceptance_rate: Vec<f64>,
    log_marginal_likelihood: Option<f64>,
}

fn fit_mesh(cfg: &RunConfig, f: &FitConfig, obs: &[PointObs]) -> Result<TriMesh> {
    if let Some(m) = &cfg.paths.mesh {
        return read_mesh(m);
    }
    let domain = match &cfg.paths.polygon {
        Some(p) => read_polygon(p)?,
        None => bbox_rectangle(obs.iter().map(|o| o.location), 0.5 * f.mesh_edge)?,
    };
    build_mesh_with_margin(&domain, f.mesh_edge, f.mesh_margin)
}

struct Moments {
    n: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            n: 0,
            sum: vec![0.0; n],
            sq: vec![0.0; n],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        for ((s, q), v) in self.sum.iter_mut().zip(&mut self.sq).zip(x) {
            *s += v;
            *q += v * v;
        }
    }

    fn mean_sd(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let sd = self
            .sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| ((q / n - m * m) * n / (n - 1.0).max(1.0)).max(0.0).sqrt())
            .collect();
        (mean, sd)
    }
}

fn fit(cfg: &RunConfig, dir: &mut OutputDir, threads: usize) -> Result<()> {
    let f = cfg.fit.as_ref().expect("validated");
    let obs = read_point_obs(cfg.paths.observations.as_ref().expect("validated"))?;
    if obs.is_empty() {
        return Err(Error::invalid("the observation file has no rows"));
    }
    let k = obs[0].covariates.len();
    let mesh = MeshModel::new("u", fit_mesh(cfg, f, &obs)?);
    let n_times = obs.iter().map(|o| o.epoch).max().unwrap_or(0) + 1;
    let mut precisions = vec![INTERCEPT_PRECISION];
    precisions.extend(std::iter::repeat_n(ELEVATION_PRECISION, k));
    let mut terms = vec![Term::Intercept];
    terms.extend((0..k).map(Term::Covariate));
    let nb = terms.len();
    let specs = vec![
        ProcessSpec::fixed_effects("beta", precisions),
        ProcessSpec::spatial_only("u", Arc::clone(&mesh), MaternParams::spde(f.sigma, f.rho)?, n_times),
    ];
    let prior = stack(&specs)?;
    let design = PointDesign {
        fixed_process: Some("beta".into()),
        terms,
        field_process: "u".into(),
    };
    let op = point_operator(&obs, &prior, &design)?;
    let nv = mesh.n_vertices();
    let grid = if f.grid_resolution > 0.0 {
        let (grid, cells, pts) = map_cells(mesh.mesh.domain(), f.grid_resolution)?;
        Some((grid, cells, point_eval_matrix(&mesh.mesh, &pts)?))
    } else {
        None
    };
    let (latent_mean, latent_sd, summary) = if f.estimate_hyperparameters {
        let model = StackedModel::new(
            specs,
            op,
            vec![HyperParam::Matern {
                process: "u".into(),
                prior: f.prior,
            }],
        )?;
        let settings = MwgSettings {
            n_iter: cfg.sampler.n_iter,
            burn_in: cfg.sampler.burn_in,
            thin: cfg.sampler.thin,
            seed: cfg.seed,
            latent_draws: true,
        };
        let chains = run_chains(&model, &settings, cfg.sampler.chains, threads)?;
        dir.write_str("chains.csv", &chains_to_string(&chains))?;
        let mut m = Moments::new(prior.len());
        for c in &chains {
            for x in c.latent.as_ref().expect("latent draws requested") {
                m.push(x);
            }
        }
        let names = chains[0].names.clone();
        let posterior_mean = (0..names.len())
            .map(|j| {
                let all: Vec<f64> = chains.iter().flat_map(|c| c.column(j)).collect();
                all.iter().sum::<f64>() / all.len() as f64
            })
            .collect();
        let split_rhat = (0..names.len())
            .map(|j| split_rhat(&chains.iter().map(|c| c.column(j)).collect::<Vec<_>>()))
            .collect();
        let (mean, sd) = m.mean_sd();
        let summary = FitSummary {
            n_obs: obs.len(),
            n_vertices: nv,
            estimated: true,
            hyperparameters: names,
            posterior_mean,
            split_rhat,
            acceptance_rate: chains.iter().map(|c| c.acceptance_rate).collect(),
            log_marginal_likelihood: None,
        };
        (mean, sd, summary)
    } else {
        let post = condition(&prior.precision, &prior.mean, &op, &op.noise_var, &mut FactorCache::new())?;
        let sd = post.factor().selected_inverse().diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
        let summary = FitSummary {
            n_obs: obs.len(),
            n_vertices: nv,
            estimated: false,
            hyperparameters: vec!["rho".into(), "sigma".into()],
            posterior_mean: vec![f.rho, f.sigma],
            split_rhat: Vec::new(),
            acceptance_rate: Vec::new(),
            log_marginal_likelihood: Some(post.log_marginal_likelihood),
        };
        (post.mean.clone(), sd, summary)
    };
    let coef: Vec<CoefficientEstimate> = (0..nb)
        .map(|j| CoefficientEstimate {
            term: if j == 0 { "intercept".into() } else { format!("cov{}", j - 1) },
            mean: latent_mean[j],
            sd: latent_sd[j],
        })
        .collect();
    dir.write("coefficients.csv", &records_to_bytes(&coef)?)?;
    let u_mean = &latent_mean[nb..nb + nv];
    let u_sd = &latent_sd[nb..nb + nv];
    let rows: Vec<VertexEstimate> = mesh
        .mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(v, p)| VertexEstimate {
            vertex: v,
            x: p[0],
            y: p[1],
            mean: u_mean[v],
            sd: u_sd[v],
        })
        .collect();
    dir.write("field_vertices.csv", &records_to_bytes(&rows)?)?;
    if let Some((grid, cells, a)) = grid {
        // Map of the field alone; SDs interpolate vertex SDs.
        let place = |vals: Vec<f64>| {
            let mut v = vec![f64::NAN; grid.len()];
            for (c, x) in cells.iter().zip(vals) {
                v[*c] = x;
            }
            GridField { grid, values: v }
        };
        dir.write_str("field_mean.csv", &grid_to_string(&place(a.mul_vec(u_mean))))?;
        dir.write_str("field_sd.csv", &grid_to_string(&place(a.mul_vec(u_sd))))?;
    }
    dir.write_json("summary.json", &summary)
}

fn random_sites<R: Rng>(poly: &Polygon, n: usize, rng: &mut R) -> Vec<Point> {
    let (lo, hi) = poly.bbox();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = [
            lo[0] + (hi[0] - lo[0]) * rng.random::<f64>(),
            lo[1] + (hi[1] - lo[1]) * rng.random::<f64>(),
        ];
        if poly.contains(p) {
            out.push(p);
        }
    }
    out
}

fn simulate(cfg: &RunConfig, dir: &mut OutputDir) -> Result<()> {
    let s: &SimulateConfig = cfg.simulate.as_ref().expect("validated");
    let poly = match &cfg.paths.polygon {
        Some(p) => read_polygon(p)?,
        None => Polygon::unit_square(),
    };
    let mesh = MeshModel::new("u", build_mesh_with_margin(&poly, s.mesh_edge, s.mesh_margin)?);
    let mut rng = crate::seeded_rng(cfg.seed);
    let q = mesh.spde.precision(&MaternParams::spde(s.sigma, s.rho)?);
    let u = Cholesky::new(&q)?.sample_zero_mean(&mut rng);
    let sites = random_sites(&poly, s.n_obs, &mut rng);
    let a = point_eval_matrix(&mesh.mesh, &sites)?;
    let at_sites = a.mul_vec(&u);
    let obs: Vec<PointObs> = sites
        .iter()
        .zip(&at_sites)
        .map(|(p, v)| PointObs {
            location: *p,
            value: s.intercept + v + s.noise_sd * rng.sample::<f64, _>(StandardNormal),
            epoch: 0,
            covariates: Vec::new(),
            noise_sd: s.noise_sd,
        })
        .collect();
    let truth: Vec<TruthRecord> = u
        .iter()
        .enumerate()
        .map(|(k, v)| TruthRecord {
            group: format!("u/v{k}"),
            item: "0".into(),
            value: *v,
        })
        .collect();
    dir.write_str("polygon.csv", &polygon_to_string(&poly))?;
    dir.write_str("mesh.csv", &mesh_to_string(&mesh.mesh))?;
    dir.write_str("observations.csv", &point_obs_to_string(&obs)?)?;
    dir.write("truth.csv", &records_to_bytes(&truth)?)
}

#[derive(Serialize)]
struct BudgetSummary {
    time: f64,
    source: f64,
    boundary_outflow: f64,
    clipped: f64,
}

fn transport(cfg: &RunConfig, dir: &mut OutputDir) -> Result<()> {
    let t: &TransportConfig = cfg.transport.as_ref().expect("validated");
    let ar1 = |m: &Option<super::config::MaternAr1>| -> Result<Option<(MaternParams, f64)>> {
        m.map(|m| Ok((MaternParams::spde(m.sigma, m.rho)?, m.a))).transpose()
    };
    let truth = generate_synthetic_truth(&TruthConfig {
        grid: Grid::new(t.nx, t.ny, t.dx, [0.0, 0.0])?,
        n_epochs: t.n_epochs,
        epoch_length: t.epoch_length,
        steps_per_epoch: t.steps_per_epoch,
        boundary: match t.boundary {
            BoundaryKind::Periodic => Boundary::Periodic,
            BoundaryKind::FreeFlux => Boundary::FreeFlux,
        },
        velocity: match t.velocity {
            VelocityConfig::Uniform { u, v } => VelocityField::Uniform { u, v },
            VelocityConfig::Spreading { speed } => VelocityField::Spreading { speed },
        },
        dome_height: t.dome_height,
        smb: ar1(&t.smb)?,
        firn: ar1(&t.firn)?,
        gia: t.gia.map(|g| MaternParams::spde(g.sigma, g.rho)).transpose()?,
        mesh_edge: t.mesh_edge,
        seed: cfg.seed,
    })?;
    for (name, fields) in [("smb", &truth.smb), ("ice", &truth.ice), ("firn", &truth.firn), ("altimetry", &truth.altimetry)] {
        for (e, g) in fields.iter().enumerate() {
            dir.write_str(&format!("{name}/epoch_{e:02}.csv"), &grid_to_string(g))?;
        }
    }
    dir.write_str("gia.csv", &grid_to_string(&truth.gia))?;
    let b = truth.budget;
    dir.write_json(
        "budget.json",
        &BudgetSummary {
            time: b.time,
            source: b.source,
            boundary_outflow: b.boundary_outflow,
            clipped: b.clipped,
        },
    )
}
