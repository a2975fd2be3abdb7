//! First-order upwind finite-volume solver for `∂H/∂t + ∇·(H v) = M_s + M_b`
//! on a regular grid, and a synthetic-truth generator built on it.

use crate::cholesky::Cholesky;
use crate::error::{Error, Result};
use crate::matern::MaternParams;
use crate::mesh::{build_mesh_with_margin, point_eval_matrix, Point, Polygon};
use crate::processes::{ar1_joint_precision, MeshModel};

/// Largest admissible Courant number.
pub const CFL_LIMIT: f64 = 0.9;

/// Regular grid of `nx × ny` square cells; cell `(i, j)` has its lower-left
/// corner at `origin + (i, j) dx` and is stored at `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub origin: Point,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, dx: f64, origin: Point) -> Result<Self> {
        if nx == 0 || ny == 0 || !(dx > 0.0) || !dx.is_finite() {
            return Err(Error::invalid("grid needs positive dimensions and cell size"));
        }
        Ok(Self { nx, ny, dx, origin })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dx
    }

    pub fn centre(&self, i: usize, j: usize) -> Point {
        [
            self.origin[0] + (i as f64 + 0.5) * self.dx,
            self.origin[1] + (j as f64 + 0.5) * self.dx,
        ]
    }

    pub fn centres(&self) -> Vec<Point> {
        (0..self.ny)
            .flat_map(|j| (0..self.nx).map(move |i| (i, j)))
            .map(|(i, j)| self.centre(i, j))
            .collect()
    }

    pub fn extent(&self) -> Polygon {
        let hi = [
            self.origin[0] + self.nx as f64 * self.dx,
            self.origin[1] + self.ny as f64 * self.dx,
        ];
        Polygon::rectangle(self.origin, hi).expect("grid extent is a valid rectangle")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    /// Outflow leaves freely with the upwind thickness; nothing flows in.
    FreeFlux,
}

/// Cumulative mass terms, all in thickness × area.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MassBudget {
    pub time: f64,
    pub source: f64,
    pub boundary_outflow: f64,
    /// Mass added back when negative thicknesses are clipped to zero.
    pub clipped: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportState {
    pub grid: Grid,
    pub boundary: Boundary,
    /// Thickness per cell.
    pub h: Vec<f64>,
    /// x-velocity on vertical faces, `ny × (nx + 1)`; face `i` is the left
    /// face of cell `i`. Under periodic boundaries face `nx` is face `0`.
    pub vx: Vec<f64>,
    /// y-velocity on horizontal faces, `(ny + 1) × nx`; face `j` is the
    /// bottom face of row `j`.
    pub vy: Vec<f64>,
    pub m_s: Vec<f64>,
    pub m_b: Vec<f64>,
    pub budget: MassBudget,
}

impl TransportState {
    /// State at rest with zero thickness, velocity and balance.
    pub fn new(grid: Grid, boundary: Boundary) -> Self {
        let n = grid.len();
        Self {
            grid,
            boundary,
            h: vec![0.0; n],
            vx: vec![0.0; grid.ny * (grid.nx + 1)],
            vy: vec![0.0; (grid.ny + 1) * grid.nx],
            m_s: vec![0.0; n],
            m_b: vec![0.0; n],
            budget: MassBudget::default(),
        }
    }

    pub fn set_uniform_velocity(&mut self, u: f64, v: f64) {
        self.vx.iter_mut().for_each(|x| *x = u);
        self.vy.iter_mut().for_each(|x| *x = v);
    }

    /// Sets face velocities from a function of position.
    pub fn set_velocity(&mut self, f: impl Fn(Point) -> (f64, f64)) {
        let g = self.grid;
        for j in 0..g.ny {
            for i in 0..=g.nx {
                let p = [g.origin[0] + i as f64 * g.dx, g.origin[1] + (j as f64 + 0.5) * g.dx];
                self.vx[j * (g.nx + 1) + i] = f(p).0;
            }
        }
        for j in 0..=g.ny {
            for i in 0..g.nx {
                let p = [g.origin[0] + (i as f64 + 0.5) * g.dx, g.origin[1] + j as f64 * g.dx];
                self.vy[j * g.nx + i] = f(p).1;
            }
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.h.iter().sum::<f64>() * self.grid.cell_area()
    }

    fn vx_face(&self, i: usize, j: usize) -> f64 {
        let nx = self.grid.nx;
        let i = if self.boundary == Boundary::Periodic && i == nx { 0 } else { i };
        self.vx[j * (nx + 1) + i]
    }

    fn vy_face(&self, i: usize, j: usize) -> f64 {
        let ny = self.grid.ny;
        let j = if self.boundary == Boundary::Periodic && j == ny { 0 } else { j };
        self.vy[j * self.grid.nx + i]
    }

    /// Largest total outgoing Courant number of any cell for step `dt`.
    pub fn cfl(&self, dt: f64) -> f64 {
        let g = self.grid;
        let mut worst = 0.0f64;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let out = (-self.vx_face(i, j)).max(0.0)
                    + self.vx_face(i + 1, j).max(0.0)
                    + (-self.vy_face(i, j)).max(0.0)
                    + self.vy_face(i, j + 1).max(0.0);
                let speed = self.vx_face(i, j).abs().max(self.vx_face(i + 1, j).abs())
                    + self.vy_face(i, j).abs().max(self.vy_face(i, j + 1).abs());
                worst = worst.max(out.max(speed));
            }
        }
        worst * dt / g.dx
    }

    /// Upwind flux `v H_upwind` through a face between `left` and `right`
    /// cells (either may be outside the domain).
    fn flux(v: f64, left: Option<f64>, right: Option<f64>) -> f64 {
        if v > 0.0 {
            v * left.unwrap_or(0.0)
        } else {
            v * right.unwrap_or(0.0)
        }
    }

    /// Advances one explicit step of length `dt`.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid("time step must be positive"));
        }
        let cfl = self.cfl(dt);
        if cfl > CFL_LIMIT {
            return Err(Error::Cfl {
                cfl,
                limit: CFL_LIMIT,
                suggested_dt: dt * CFL_LIMIT / cfl,
            });
        }
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let periodic = self.boundary == Boundary::Periodic;
        let cell = |i: isize, j: isize, h: &[f64]| -> Option<f64> {
            let (i, j) = if periodic {
                (i.rem_euclid(nx as isize), j.rem_euclid(ny as isize))
            } else if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
                return None;
            } else {
                (i, j)
            };
            Some(h[j as usize * nx + i as usize])
        };
        // Face fluxes.
        let mut fx = vec![0.0; ny * (nx + 1)];
        let mut fy = vec![0.0; (ny + 1) * nx];
        for j in 0..ny {
            for i in 0..=nx {
                let (ii, jj) = (i as isize, j as isize);
                fx[j * (nx + 1) + i] = Self::flux(self.vx_face(i, j), cell(ii - 1, jj, &self.h), cell(ii, jj, &self.h));
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                let (ii, jj) = (i as isize, j as isize);
                fy[j * nx + i] = Self::flux(self.vy_face(i, j), cell(ii, jj - 1, &self.h), cell(ii, jj, &self.h));
            }
        }
        if periodic {
            for j in 0..ny {
                fx[j * (nx + 1) + nx] = fx[j * (nx + 1)];
            }
            for i in 0..nx {
                fy[ny * nx + i] = fy[i];
            }
        }
        let r = dt / g.dx;
        let area = g.cell_area();
        let mut source = 0.0;
        let mut clipped = 0.0;
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let div = fx[j * (nx + 1) + i + 1] - fx[j * (nx + 1) + i] + fy[(j + 1) * nx + i] - fy[j * nx + i];
                let s = self.m_s[k] + self.m_b[k];
                let mut h = self.h[k] - r * div + dt * s;
                source += dt * s * area;
                if h < 0.0 {
                    clipped -= h * area;
                    h = 0.0;
                }
                self.h[k] = h;
            }
        }
        if !periodic {
            let mut out = 0.0;
            for j in 0..ny {
                out += fx[j * (nx + 1) + nx] - fx[j * (nx + 1)];
            }
            for i in 0..nx {
                out += fy[ny * nx + i] - fy[i];
            }
            self.budget.boundary_outflow += out * dt * g.dx;
        }
        self.budget.source += source;
        self.budget.clipped += clipped;
        self.budget.time += dt;
        Ok(())
    }
}

/// A scalar field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VelocityField {
    Uniform { u: f64, v: f64 },
    /// Flow away from the domain centre with speed growing linearly to
    /// `speed` at the edge midpoints.
    Spreading { speed: f64 },
}

/// Settings of the synthetic elevation-change generator.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthConfig {
    pub grid: Grid,
    pub n_epochs: usize,
    pub epoch_length: f64,
    pub steps_per_epoch: usize,
    pub boundary: Boundary,
    pub velocity: VelocityField,
    /// Peak of the initial Gaussian ice dome.
    pub dome_height: f64,
    /// Surface mass balance: Matérn innovations and AR(1) coefficient.
    pub smb: Option<(MaternParams, f64)>,
    pub firn: Option<(MaternParams, f64)>,
    pub gia: Option<MaternParams>,
    /// Edge length of the mesh the random fields are drawn on.
    pub mesh_edge: f64,
    pub seed: u64,
}

/// Per-epoch elevation-change truths on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub smb: Vec<GridField>,
    pub ice: Vec<GridField>,
    pub firn: Vec<GridField>,
    pub gia: GridField,
    pub altimetry: Vec<GridField>,
    pub budget: MassBudget,
}

/// Draws SMB, firn and GIA fields, runs the transport solver with the SMB as
/// surface balance, and reports the flow-driven thickness change per epoch.
pub fn generate_synthetic_truth(cfg: &TruthConfig) -> Result<SyntheticTruth> {
    if cfg.n_epochs == 0 || cfg.steps_per_epoch == 0 || !(cfg.epoch_length > 0.0) {
        return Err(Error::invalid("synthetic truth needs epochs, steps and a positive epoch length"));
    }
    let g = cfg.grid;
    let centres = g.centres();
    let mesh = build_mesh_with_margin(&g.extent(), cfg.mesh_edge, 2.0 * cfg.mesh_edge)?;
    let model = MeshModel::new("truth", mesh);
    let a = point_eval_matrix(&model.mesh, &centres)?;
    let mut rng = crate::seeded_rng(cfg.seed);
    let nv = model.n_vertices();
    let zero = || vec![vec![0.0; g.len()]; cfg.n_epochs];
    let ar1_fields = |spec: &Option<(MaternParams, f64)>, rng: &mut crate::SeededRng| -> Result<Vec<Vec<f64>>> {
        let Some((m, coef)) = spec else {
            return Ok(zero());
        };
        let q = ar1_joint_precision(&model.spde.precision(m), &vec![*coef; nv], cfg.n_epochs)?;
        let x = Cholesky::new(&q)?.sample_zero_mean(rng);
        Ok((0..cfg.n_epochs).map(|t| a.mul_vec(&x[t * nv..(t + 1) * nv])).collect())
    };
    let smb = ar1_fields(&cfg.smb, &mut rng)?;
    let firn = ar1_fields(&cfg.firn, &mut rng)?;
    let gia = match &cfg.gia {
        Some(m) => a.mul_vec(&Cholesky::new(&model.spde.precision(m))?.sample_zero_mean(&mut rng)),
        None => vec![0.0; g.len()],
    };

    let mut state = TransportState::new(g, cfg.boundary);
    let c = g.extent().centroid();
    let width = 0.25 * (g.nx.max(g.ny) as f64 * g.dx);
    for (k, p) in centres.iter().enumerate() {
        let r2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        state.h[k] = cfg.dome_height * (-r2 / (2.0 * width * width)).exp();
    }
    match cfg.velocity {
        VelocityField::Uniform { u, v } => state.set_uniform_velocity(u, v),
        VelocityField::Spreading { speed } => {
            let half = 0.5 * g.nx.max(g.ny) as f64 * g.dx;
            state.set_velocity(|p| (speed * (p[0] - c[0]) / half, speed * (p[1] - c[1]) / half));
        }
    }
    let dt = cfg.epoch_length / cfg.steps_per_epoch as f64;
    let field = |values: Vec<f64>| GridField { grid: g, values };
    let mut ice = Vec::with_capacity(cfg.n_epochs);
    for smb_t in smb.iter() {
        state.m_s.clone_from(smb_t);
        let start = state.h.clone();
        for _ in 0..cfg.steps_per_epoch {
            state.step(dt)?;
        }
        let rate: Vec<f64> = (0..g.len())
            .map(|k| (state.h[k] - start[k]) / cfg.epoch_length - smb_t[k] - state.m_b[k])
            .collect();
        ice.push(field(rate));
    }
    let altimetry = (0..cfg.n_epochs)
        .map(|t| field((0..g.len()).map(|k| smb[t][k] + firn[t][k] + ice[t].values[k] + gia[k]).collect()))
        .collect();
    Ok(SyntheticTruth {
        smb: smb.into_iter().map(field).collect(),
        ice,
        firn: firn.into_iter().map(field).collect(),
        gia: field(gia),
        altimetry,
        budget: state.budget,
    })
}
