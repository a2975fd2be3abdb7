//! Joint separation of four elevation-rate processes from GPS, altimetry
//! and gravimetry footprints.
//!
//! GIA is a time-invariant field on a coarse mesh, ice dynamics a
//! per-vertex linear trend whose prior variance grows with a synthetic flow
//! speed, and SMB and firn compaction are AR(1) processes with Matérn
//! innovations on a fine mesh. Truth is drawn from the same prior the fit
//! uses, so posterior summaries can be checked against it directly.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, parallel_map};
use crate::cholesky::{Cholesky, SelectedInverse};
use crate::error::{Error, Result};
use crate::gmrf::{condition, FactorCache};
use crate::io::formats::{PredictionRecord, TruthRecord};
use crate::matern::MaternParams;
use crate::mesh::{build_mesh_with_margin, point_eval_matrix, Footprint, Point, Polygon};
use crate::observations::{
    footprint_operator, simulate_with, Densities, FootprintObs, Instrument, InstrumentMask, ObsOperator,
    RateProcessIds,
};
use crate::processes::{speed_trend_variance, stack, MeshModel, ProcessSpec, StackedPrior};
use crate::sparse::CsrMatrix;
use crate::transport::{Grid, GridField};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldPrior {
    pub sigma: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ar1Prior {
    pub sigma: f64,
    pub rho: f64,
    pub a: f64,
}

/// Trend weight variances `base + gain * speed(s)` with
/// `speed(s) = 0.1 + 0.9 s1²` on the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendPrior {
    pub intercept_base: f64,
    pub intercept_gain: f64,
    pub slope_base: f64,
    pub slope_gain: f64,
    pub residual_var: f64,
}

/// A lattice of square footprints tiling the unit square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileDesign {
    pub tile: f64,
    /// Noise SD of the footprint mean; the datum SD is this times the area.
    pub sd: f64,
    pub quad_cell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpsDesign {
    pub sites: usize,
    /// Side of the square footprint around each receiver.
    pub side: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesStudyConfig {
    pub first_year: i32,
    pub n_epochs: usize,
    pub fine_edge: f64,
    pub fine_margin: f64,
    pub coarse_edge: f64,
    pub coarse_margin: f64,
    pub gia: FieldPrior,
    pub ice: TrendPrior,
    pub smb: Ar1Prior,
    pub firn: Ar1Prior,
    pub densities: Densities,
    pub instruments: Vec<Instrument>,
    pub gps: GpsDesign,
    pub altimetry: TileDesign,
    pub gravimetry: TileDesign,
    /// Refit without gravimetry to measure how much it separates SMB from
    /// ice dynamics.
    pub ablate_gravimetry: bool,
    pub replicates: usize,
    /// Cell size of the gridded output maps.
    pub map_resolution: f64,
}

impl Default for RatesStudyConfig {
    fn default() -> Self {
        Self {
            first_year: 2003,
            n_epochs: 7,
            fine_edge: 0.1,
            fine_margin: 0.125,
            coarse_edge: 0.25,
            coarse_margin: 0.25,
            gia: FieldPrior { sigma: 0.05, rho: 0.8 },
            ice: TrendPrior {
                intercept_base: 0.01,
                intercept_gain: 0.09,
                slope_base: 0.0004,
                slope_gain: 0.0036,
                residual_var: 0.0025,
            },
            smb: Ar1Prior {
                sigma: 0.15,
                rho: 0.3,
                a: 0.3,
            },
            firn: Ar1Prior {
                sigma: 0.03,
                rho: 0.8,
                a: 0.5,
            },
            densities: Densities::default(),
            instruments: Instrument::ALL.to_vec(),
            gps: GpsDesign {
                sites: 12,
                side: 0.01,
                sd: 0.002,
            },
            altimetry: TileDesign {
                tile: 0.1,
                sd: 0.02,
                quad_cell: 0.025,
            },
            gravimetry: TileDesign {
                tile: 0.2,
                sd: 5.0,
                quad_cell: 0.025,
            },
            ablate_gravimetry: true,
            replicates: 10,
            map_resolution: 0.02,
        }
    }
}

pub const PROCESSES: [&str; 4] = ["gia", "ice", "smb", "firn"];

/// Flow speed proxy, fastest along the `s1 = 1` edge.
pub fn flow_speed(p: Point) -> f64 {
    0.1 + 0.9 * p[0].clamp(0.0, 1.0).powi(2)
}

impl RatesStudyConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_epochs == 0 || self.n_epochs > 10 {
            errs.push("rates: n_epochs must lie in [1, 10]".to_string());
        }
        let positive = [
            ("fine_edge", self.fine_edge),
            ("coarse_edge", self.coarse_edge),
            ("gia.sigma", self.gia.sigma),
            ("gia.rho", self.gia.rho),
            ("smb.sigma", self.smb.sigma),
            ("smb.rho", self.smb.rho),
            ("firn.sigma", self.firn.sigma),
            ("firn.rho", self.firn.rho),
            ("ice.residual_var", self.ice.residual_var),
            ("gps.side", self.gps.side),
            ("gps.sd", self.gps.sd),
            ("altimetry.tile", self.altimetry.tile),
            ("altimetry.sd", self.altimetry.sd),
            ("altimetry.quad_cell", self.altimetry.quad_cell),
            ("gravimetry.tile", self.gravimetry.tile),
            ("gravimetry.sd", self.gravimetry.sd),
            ("gravimetry.quad_cell", self.gravimetry.quad_cell),
            ("map_resolution", self.map_resolution),
            ("densities.ice", self.densities.ice),
            ("densities.surface", self.densities.surface),
            ("densities.mantle", self.densities.mantle),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("rates: {name} must be positive"));
            }
        }
        for (name, a) in [("smb.a", self.smb.a), ("firn.a", self.firn.a)] {
            if !(a.abs() < 1.0) {
                errs.push(format!("rates: {name} must lie in (-1, 1)"));
            }
        }
        if self.instruments.is_empty() {
            errs.push("rates: at least one instrument is needed".into());
        }
        if self.replicates == 0 {
            errs.push("rates: replicates must be at least 1".into());
        }
        if !(self.fine_margin >= 0.0 && self.coarse_margin >= 0.0) {
            errs.push("rates: mesh margins must be non-negative".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Posterior summaries of one process at one epoch on the in-domain
/// vertices of its mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMap {
    pub process: String,
    pub epoch: usize,
    pub vertices: Vec<usize>,
    pub coords: Vec<Point>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub prior_sd: Vec<f64>,
    /// `sd / |mean| < 1`.
    pub stipple: Vec<bool>,
    pub mean_grid: GridField,
    pub sd_grid: GridField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatesReport {
    pub seed: u64,
    pub n_latent: usize,
    pub n_obs: usize,
    pub mesh_vertices: [usize; 2],
    pub maps: Vec<ProcessMap>,
    pub truth_records: Vec<TruthRecord>,
    pub prediction_records: Vec<PredictionRecord>,
    /// Mean |posterior correlation| of SMB and ice dynamics over in-domain
    /// vertices and epochs.
    pub smb_ice_corr: f64,
    pub smb_ice_corr_without_gravimetry: Option<f64>,
    /// Posterior and prior SD of GIA at each GPS site.
    pub gia_sd_at_gps: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Everything shared by the replicates: meshes, prior, operator, and prior
/// readout SDs.
pub struct RatesSetup {
    pub cfg: RatesStudyConfig,
    pub prior: StackedPrior,
    pub op: ObsOperator,
    pub gravimetry_rows: Vec<usize>,
    pub gps_sites: Vec<Point>,
    prior_chol: Cholesky,
    /// Per process: in-domain vertex indices and their coordinates.
    domain_vertices: Vec<(Vec<usize>, Vec<Point>)>,
    /// Per process and epoch: readout rows and prior SDs at in-domain vertices.
    readouts: Vec<Vec<(Vec<Vec<(usize, f64)>>, Vec<f64>)>>,
    gps_readout: Vec<Vec<(usize, f64)>>,
    gps_prior_sd: Vec<f64>,
    map_grid: Grid,
    map_interp: Vec<CsrMatrix>,
    warnings: Vec<String>,
}

fn tiles(side: f64) -> Vec<Polygon> {
    let n = (1.0 / side).round().max(1.0) as usize;
    let h = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let lo = [i as f64 * h, j as f64 * h];
            let hi = [if i + 1 == n { 1.0 } else { lo[0] + h }, if j + 1 == n { 1.0 } else { lo[1] + h }];
            out.push(Polygon::rectangle(lo, hi).expect("tile is valid"));
        }
    }
    out
}

fn gps_sites<R: Rng>(n: usize, side: f64, rng: &mut R) -> Vec<Point> {
    // Jittered lattice, kept a footprint away from the domain edge.
    let k = (n as f64).sqrt().ceil() as usize;
    let cell = 1.0 / k as f64;
    let mut cells: Vec<usize> = (0..k * k).collect();
    for i in (1..cells.len()).rev() {
        cells.swap(i, rng.random_range(0..=i));
    }
    cells[..n]
        .iter()
        .map(|&c| {
            let (i, j) = ((c % k) as f64, (c / k) as f64);
            let pad = side;
            let u = pad + (cell - 2.0 * pad) * rng.random::<f64>();
            let v = pad + (cell - 2.0 * pad) * rng.random::<f64>();
            [i * cell + u, j * cell + v]
        })
        .collect()
}

fn readout_rows(map: &CsrMatrix, rows: &[usize]) -> Vec<Vec<(usize, f64)>> {
    rows.iter().map(|&v| map.row(v).collect()).collect()
}

fn solve_quad(chol: &Cholesky, a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut e = vec![0.0; chol.n()];
    for &(i, w) in b {
        e[i] += w;
    }
    let x = chol.solve(&e);
    a.iter().map(|&(i, w)| w * x[i]).sum()
}

/// `a' Σ b` from the selected inverse, falling back to a solve when a
/// needed entry lies outside the factor pattern.
fn readout_cov(sel: &SelectedInverse, chol: &Cholesky, a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let mut acc = 0.0;
    for &(i, wa) in a {
        for &(j, wb) in b {
            match sel.get(i, j) {
                Some(s) => acc += wa * wb * s,
                None => return solve_quad(chol, a, b),
            }
        }
    }
    acc
}

fn dot(row: &[(usize, f64)], x: &[f64]) -> f64 {
    row.iter().map(|&(i, w)| w * x[i]).sum()
}

impl RatesSetup {
    pub fn new(cfg: &RatesStudyConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let domain = Polygon::unit_square();
        let fine = MeshModel::new("fine", build_mesh_with_margin(&domain, cfg.fine_edge, cfg.fine_margin)?);
        let coarse = MeshModel::new("coarse", build_mesh_with_margin(&domain, cfg.coarse_edge, cfg.coarse_margin)?);
        let t = cfg.n_epochs;
        let speed: Vec<f64> = fine.mesh.vertices().iter().map(|p| flow_speed(*p)).collect();
        let specs = vec![
            ProcessSpec::spatial_only("gia", Arc::clone(&coarse), MaternParams::spde(cfg.gia.sigma, cfg.gia.rho)?, t),
            ProcessSpec::trend(
                "ice",
                Arc::clone(&fine),
                speed_trend_variance(&speed, cfg.ice.intercept_base, cfg.ice.intercept_gain)?,
                speed_trend_variance(&speed, cfg.ice.slope_base, cfg.ice.slope_gain)?,
                cfg.ice.residual_var,
                t,
            ),
            ProcessSpec::ar1("smb", Arc::clone(&fine), MaternParams::spde(cfg.smb.sigma, cfg.smb.rho)?, cfg.smb.a, t),
            ProcessSpec::ar1("firn", Arc::clone(&fine), MaternParams::spde(cfg.firn.sigma, cfg.firn.rho)?, cfg.firn.a, t),
        ];
        let prior = stack(&specs)?;
        let mut rng = crate::seeded_rng(derive_seed(seed, 0));
        let sites = gps_sites(cfg.gps.sites, cfg.gps.side, &mut rng);

        let mut obs = Vec::new();
        let push_tiles = |inst: Instrument, design: &TileDesign, obs: &mut Vec<FootprintObs>| -> Result<()> {
            for epoch in 0..t {
                for tile in tiles(design.tile) {
                    let area = tile.area();
                    obs.push(FootprintObs {
                        footprint: Footprint::new(tile, design.quad_cell)?,
                        value: 0.0,
                        epoch,
                        instrument: inst,
                        noise_sd: design.sd * area,
                    });
                }
            }
            Ok(())
        };
        for &inst in &cfg.instruments {
            match inst {
                Instrument::Gps => {
                    for epoch in 0..t {
                        for s in &sites {
                            let h = 0.5 * cfg.gps.side;
                            let region = Polygon::rectangle([s[0] - h, s[1] - h], [s[0] + h, s[1] + h])?;
                            let area = region.area();
                            obs.push(FootprintObs {
                                footprint: Footprint::new(region, cfg.gps.side / 4.0)?,
                                value: 0.0,
                                epoch,
                                instrument: inst,
                                noise_sd: cfg.gps.sd * area,
                            });
                        }
                    }
                }
                Instrument::Altimetry => push_tiles(inst, &cfg.altimetry, &mut obs)?,
                Instrument::Gravimetry => push_tiles(inst, &cfg.gravimetry, &mut obs)?,
            }
        }
        let mask = InstrumentMask::elevation_rates(&RateProcessIds::default(), &cfg.densities);
        let op = footprint_operator(&obs, &mask, &prior)?;
        let gravimetry_rows = obs
            .iter()
            .enumerate()
            .filter(|(_, o)| o.instrument == Instrument::Gravimetry)
            .map(|(k, _)| k)
            .collect();

        let mut warnings = Vec::new();
        let mut kinds = cfg.instruments.clone();
        kinds.sort();
        kinds.dedup();
        if kinds.len() < 2 {
            warnings.push(format!(
                "only {} observes the processes: they are seen as a sum and are not separately identifiable; \
                 expect inflated posterior correlations",
                kinds[0]
            ));
        }

        let prior_chol = Cholesky::new(&prior.precision)?;
        let prior_sel = prior_chol.selected_inverse();
        let inside = |m: &MeshModel| -> (Vec<usize>, Vec<Point>) {
            m.mesh
                .vertices()
                .iter()
                .enumerate()
                .filter(|(_, p)| (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]))
                .map(|(k, p)| (k, *p))
                .unzip()
        };
        let domain_vertices: Vec<_> = PROCESSES
            .iter()
            .map(|id| inside(if *id == "gia" { &coarse } else { &fine }))
            .collect();
        let mut readouts = Vec::new();
        for (p, id) in PROCESSES.iter().enumerate() {
            let mut per_epoch = Vec::new();
            for e in 0..t {
                let rows = readout_rows(&prior.field_at(id, e)?, &domain_vertices[p].0);
                let sd = rows
                    .iter()
                    .map(|r| readout_cov(&prior_sel, &prior_chol, r, r).max(0.0).sqrt())
                    .collect();
                per_epoch.push((rows, sd));
            }
            readouts.push(per_epoch);
        }
        let gia_map = prior.field_at("gia", 0)?;
        let interp = point_eval_matrix(&coarse.mesh, &sites)?;
        let gps_readout: Vec<Vec<(usize, f64)>> = (0..sites.len())
            .map(|k| {
                let mut row: Vec<(usize, f64)> = Vec::new();
                for (v, w) in interp.row(k) {
                    for (col, c) in gia_map.row(v) {
                        row.push((col, w * c));
                    }
                }
                row
            })
            .collect();
        let gps_prior_sd = gps_readout
            .iter()
            .map(|r| readout_cov(&prior_sel, &prior_chol, r, r).max(0.0).sqrt())
            .collect();
        let n = (1.0 / cfg.map_resolution).round().max(1.0) as usize;
        let map_grid = Grid::new(n, n, 1.0 / n as f64, [0.0, 0.0])?;
        let centres = map_grid.centres();
        let map_interp = PROCESSES
            .iter()
            .map(|id| point_eval_matrix(&(if *id == "gia" { &coarse } else { &fine }).mesh, &centres))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            prior,
            op,
            gravimetry_rows,
            gps_sites: sites,
            prior_chol,
            domain_vertices,
            readouts,
            gps_readout,
            gps_prior_sd,
            map_grid,
            map_interp,
            warnings,
        })
    }

    pub fn mesh_vertices(&self) -> [usize; 2] {
        let n = |id: &str| self.prior.specs()[self.prior.process_index(id).unwrap()].mesh().unwrap().n_vertices();
        [n("gia"), n("ice")]
    }

    /// One replicate: truth from the prior, data through the operator,
    /// exact posterior summaries.
    pub fn run(&self, seed: u64) -> Result<RatesReport> {
        let cfg = &self.cfg;
        let mut rng = crate::seeded_rng(seed);
        let sim = simulate_with(&self.prior_chol, &self.prior, &self.op, &mut rng)?;
        let mut op = self.op.clone();
        op.values = sim.data;
        let mut cache = FactorCache::new();
        let post = condition(&self.prior.precision, &self.prior.mean, &op, &op.noise_var, &mut cache)?;
        let chol = post.factor();
        let sel = chol.selected_inverse();

        let mut maps = Vec::new();
        let mut truth_records = Vec::new();
        let mut prediction_records = Vec::new();
        for (p, id) in PROCESSES.iter().enumerate() {
            let epochs = if *id == "gia" { 1 } else { cfg.n_epochs };
            let (verts, coords) = &self.domain_vertices[p];
            for e in 0..epochs {
                let (rows, prior_sd) = &self.readouts[p][e];
                let truth: Vec<f64> = rows.iter().map(|r| dot(r, &sim.truth)).collect();
                let mean: Vec<f64> = rows.iter().map(|r| dot(r, &post.mean)).collect();
                let sd: Vec<f64> = rows.iter().map(|r| readout_cov(&sel, chol, r, r).max(0.0).sqrt()).collect();
                for k in 0..verts.len() {
                    let group = format!("{id}/v{}", verts[k]);
                    let item = format!("{}", cfg.first_year + e as i32);
                    truth_records.push(TruthRecord {
                        group: group.clone(),
                        item: item.clone(),
                        value: truth[k],
                    });
                    prediction_records.push(PredictionRecord {
                        group,
                        item,
                        mean: mean[k],
                        sd: sd[k],
                        prior_sd: prior_sd[k],
                    });
                }
                let full_map = self.prior.field_at(id, e)?;
                let vertex_mean = full_map.mul_vec(&post.mean);
                let vertex_sd: Vec<f64> = (0..full_map.nrows())
                    .map(|v| {
                        let r: Vec<(usize, f64)> = full_map.row(v).collect();
                        readout_cov(&sel, chol, &r, &r).max(0.0).sqrt()
                    })
                    .collect();
                let grid = |vals: &[f64]| GridField {
                    grid: self.map_grid,
                    values: self.map_interp[p].mul_vec(vals),
                };
                maps.push(ProcessMap {
                    process: id.to_string(),
                    epoch: e,
                    vertices: verts.clone(),
                    coords: coords.clone(),
                    stipple: mean.iter().zip(&sd).map(|(m, s)| s / m.abs() < 1.0).collect(),
                    truth,
                    mean,
                    sd,
                    prior_sd: prior_sd.clone(),
                    mean_grid: grid(&vertex_mean),
                    sd_grid: grid(&vertex_sd),
                });
            }
        }
        let smb_ice_corr = self.mean_abs_corr(&sel, chol);
        let smb_ice_corr_without_gravimetry = if cfg.ablate_gravimetry && !self.gravimetry_rows.is_empty() {
            let keep: Vec<usize> = (0..op.n_obs()).filter(|r| !self.gravimetry_rows.contains(r)).collect();
            let sub = op.select(&keep);
            let p2 = condition(&self.prior.precision, &self.prior.mean, &sub, &sub.noise_var, &mut FactorCache::new())?;
            Some(self.mean_abs_corr(&p2.factor().selected_inverse(), p2.factor()))
        } else {
            None
        };
        let gia_sd_at_gps = self
            .gps_readout
            .iter()
            .zip(&self.gps_prior_sd)
            .map(|(r, prior)| (readout_cov(&sel, chol, r, r).max(0.0).sqrt(), *prior))
            .collect();
        Ok(RatesReport {
            seed,
            n_latent: self.prior.len(),
            n_obs: op.n_obs(),
            mesh_vertices: self.mesh_vertices(),
            maps,
            truth_records,
            prediction_records,
            smb_ice_corr,
            smb_ice_corr_without_gravimetry,
            gia_sd_at_gps,
            warnings: self.warnings.clone(),
        })
    }

    fn mean_abs_corr(&self, sel: &SelectedInverse, chol: &Cholesky) -> f64 {
        let (ice, smb) = (1, 2);
        let mut acc = 0.0;
        let mut n = 0usize;
        for e in 0..self.cfg.n_epochs {
            let (ri, _) = &self.readouts[ice][e];
            let (rs, _) = &self.readouts[smb][e];
            for (a, b) in ri.iter().zip(rs) {
                let c = readout_cov(sel, chol, a, b);
                let va = readout_cov(sel, chol, a, a);
                let vb = readout_cov(sel, chol, b, b);
                acc += (c / (va * vb).sqrt()).abs();
                n += 1;
            }
        }
        acc / n as f64
    }
}

pub fn run_rates_study(cfg: &RatesStudyConfig, seed: u64, threads: usize) -> Result<Vec<RatesReport>> {
    let setup = RatesSetup::new(cfg, seed)?;
    parallel_map(cfg.replicates, threads, |r| setup.run(derive_seed(seed, 1 + r as u64)))
        .into_iter()
        .collect()
}
