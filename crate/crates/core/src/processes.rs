//! Latent process priors and their block-diagonal stacking.
//!
//! Every process contributes a block of coefficients to one joint latent
//! vector. A [`StackedPrior`] records which global index holds which
//! coefficient and can produce, for any process and epoch, the sparse map
//! from the latent vector to that process's vertex values.

use std::collections::HashMap;
use std::sync::Arc;

use crate::cholesky::Cholesky;
use crate::error::{Error, Result};
use crate::matern::{MaternParams, SpdeBasis};
use crate::mesh::{assemble_fem, FemMatrices, TriMesh};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// A mesh together with its finite-element matrices and SPDE basis.
#[derive(Debug)]
pub struct MeshModel {
    pub id: String,
    pub mesh: TriMesh,
    pub fem: FemMatrices,
    pub spde: SpdeBasis,
}

impl MeshModel {
    pub fn new(id: impl Into<String>, mesh: TriMesh) -> Arc<Self> {
        let fem = assemble_fem(&mesh);
        let spde = SpdeBasis::new(&fem);
        Arc::new(Self {
            id: id.into(),
            mesh,
            fem,
            spde,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.mesh.n_vertices()
    }
}

#[derive(Debug, Clone)]
pub enum ProcessKind {
    /// One time-invariant Matérn field shared by every epoch.
    SpatialOnly { mesh: Arc<MeshModel>, matern: MaternParams },
    /// `Y_t(s) = a(s) Y_{t-1}(s) + w_t(s)` with Matérn innovations, started
    /// from its stationary marginal.
    Ar1 {
        mesh: Arc<MeshModel>,
        matern: MaternParams,
        a: Vec<f64>,
    },
    /// `Y_t(s) = β₀(s) + x_t β₁(s) + w_t(s)` with independent per-vertex
    /// priors on the weights and iid residual coefficients.
    TrendRegression {
        mesh: Arc<MeshModel>,
        times: Vec<f64>,
        intercept_var: Vec<f64>,
        slope_var: Vec<f64>,
        residual_var: f64,
    },
    /// Scalar regression coefficients with independent Gaussian priors.
    FixedEffects { precisions: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct ProcessSpec {
    pub id: String,
    pub n_times: usize,
    pub kind: ProcessKind,
}

impl ProcessSpec {
    pub fn spatial_only(id: impl Into<String>, mesh: Arc<MeshModel>, matern: MaternParams, n_times: usize) -> Self {
        Self {
            id: id.into(),
            n_times,
            kind: ProcessKind::SpatialOnly { mesh, matern },
        }
    }

    /// AR(1) with one coefficient at every vertex.
    pub fn ar1(id: impl Into<String>, mesh: Arc<MeshModel>, matern: MaternParams, a: f64, n_times: usize) -> Self {
        let a = vec![a; mesh.n_vertices()];
        Self::ar1_varying(id, mesh, matern, a, n_times)
    }

    pub fn ar1_varying(
        id: impl Into<String>,
        mesh: Arc<MeshModel>,
        matern: MaternParams,
        a: Vec<f64>,
        n_times: usize,
    ) -> Self {
        Self {
            id: id.into(),
            n_times,
            kind: ProcessKind::Ar1 { mesh, matern, a },
        }
    }

    /// Trend regression on covariates `(1, t)` for `t = 0, …, T-1`.
    pub fn trend(
        id: impl Into<String>,
        mesh: Arc<MeshModel>,
        intercept_var: Vec<f64>,
        slope_var: Vec<f64>,
        residual_var: f64,
        n_times: usize,
    ) -> Self {
        Self {
            id: id.into(),
            n_times,
            kind: ProcessKind::TrendRegression {
                mesh,
                times: (0..n_times).map(|t| t as f64).collect(),
                intercept_var,
                slope_var,
                residual_var,
            },
        }
    }

    pub fn fixed_effects(id: impl Into<String>, precisions: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            n_times: 1,
            kind: ProcessKind::FixedEffects { precisions },
        }
    }

    pub fn mesh(&self) -> Option<&Arc<MeshModel>> {
        match &self.kind {
            ProcessKind::SpatialOnly { mesh, .. }
            | ProcessKind::Ar1 { mesh, .. }
            | ProcessKind::TrendRegression { mesh, .. } => Some(mesh),
            ProcessKind::FixedEffects { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_times == 0 {
            return Err(Error::invalid(format!("process '{}': needs at least one time step", self.id)));
        }
        let nv = self.mesh().map(|m| m.n_vertices());
        let need_spde = |m: &MaternParams| {
            if m.nu != 1.0 {
                Err(Error::invalid(format!("process '{}': SPDE fields need ν = 1", self.id)))
            } else {
                Ok(())
            }
        };
        match &self.kind {
            ProcessKind::SpatialOnly { matern, .. } => need_spde(matern)?,
            ProcessKind::Ar1 { matern, a, .. } => {
                need_spde(matern)?;
                if Some(a.len()) != nv {
                    return Err(Error::invalid(format!("process '{}': one AR coefficient per vertex", self.id)));
                }
                if let Some((v, x)) = a.iter().enumerate().find(|(_, x)| !(x.abs() < 1.0)) {
                    return Err(Error::invalid(format!(
                        "process '{}': AR coefficient {x} at vertex {v} is not inside (-1, 1)",
                        self.id
                    )));
                }
            }
            ProcessKind::TrendRegression {
                times,
                intercept_var,
                slope_var,
                residual_var,
                ..
            } => {
                if times.len() != self.n_times {
                    return Err(Error::invalid(format!("process '{}': one covariate per time step", self.id)));
                }
                for (name, v) in [("intercept", intercept_var), ("slope", slope_var)] {
                    if Some(v.len()) != nv {
                        return Err(Error::invalid(format!(
                            "process '{}': one {name} variance per vertex",
                            self.id
                        )));
                    }
                    if v.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                        return Err(Error::invalid(format!(
                            "process '{}': {name} variances must be finite and non-negative",
                            self.id
                        )));
                    }
                }
                if !(*residual_var > 0.0 && residual_var.is_finite()) {
                    return Err(Error::invalid(format!(
                        "process '{}': residual variance must be positive",
                        self.id
                    )));
                }
            }
            ProcessKind::FixedEffects { precisions } => {
                if precisions.is_empty() || precisions.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
                    return Err(Error::invalid(format!(
                        "process '{}': fixed-effect precisions must be positive",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Monotone non-decreasing trend variance `base + gain · speed(s)`.
pub fn speed_trend_variance(speed: &[f64], base: f64, gain: f64) -> Result<Vec<f64>> {
    if !(base >= 0.0) || !(gain >= 0.0) {
        return Err(Error::invalid("trend variance base and gain must be non-negative"));
    }
    if speed.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::invalid("speeds must be non-negative"));
    }
    Ok(speed.iter().map(|s| base + gain * s).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Field,
    Intercept,
    Slope,
    Residual,
    Fixed,
}

/// One latent coefficient: `index` is a vertex, or the position of a fixed
/// effect. `time` is `None` for time-invariant coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub process: usize,
    pub component: Component,
    pub time: Option<usize>,
    pub index: usize,
}

/// Precision block of one process with its slots (process index 0).
#[derive(Debug, Clone)]
pub struct PriorBlock {
    pub slots: Vec<Slot>,
    pub precision: CsrMatrix,
}

pub fn spatial_only_prior(spec: &ProcessSpec) -> Result<PriorBlock> {
    spec.validate()?;
    let ProcessKind::SpatialOnly { mesh, matern } = &spec.kind else {
        return Err(Error::invalid("spatial_only_prior needs a SpatialOnly spec"));
    };
    let slots = (0..mesh.n_vertices())
        .map(|v| Slot {
            process: 0,
            component: Component::Field,
            time: None,
            index: v,
        })
        .collect();
    Ok(PriorBlock {
        slots,
        precision: mesh.spde.precision(matern),
    })
}

/// Joint precision of `x_0, …, x_{T-1}` with `x_t = A x_{t-1} + w_t`,
/// `w_t ~ N(0, Q_w⁻¹)`, `A = diag(a)` and `x_0 = D w_0`, `D = diag(1/√(1-a²))`.
/// For constant `a` the chain is exactly stationary; with varying `a` the
/// start matches the stationary per-vertex scaling.
pub fn ar1_joint_precision(q_w: &CsrMatrix, a: &[f64], n_times: usize) -> Result<CsrMatrix> {
    let n = q_w.nrows();
    if a.len() != n || n_times == 0 {
        return Err(Error::invalid("AR(1) precision: coefficient count or horizon mismatch"));
    }
    if a.iter().any(|x| !(x.abs() < 1.0)) {
        return Err(Error::invalid("AR(1) coefficients must lie inside (-1, 1)"));
    }
    let d_inv: Vec<f64> = a.iter().map(|x| (1.0 - x * x).sqrt()).collect();
    let start = q_w.scale_rows(&d_inv).scale_cols(&d_inv);
    let aqa = q_w.scale_rows(a).scale_cols(a);
    let interior = q_w.add_scaled(1.0, &aqa, 1.0);
    let first = start.add_scaled(1.0, &aqa, 1.0);
    let qa = q_w.scale_cols(a);
    let aq = q_w.scale_rows(a);
    let mut t = TripletBuilder::with_capacity(n * n_times, n * n_times, 3 * q_w.nnz() * n_times);
    let mut push = |bi: usize, bj: usize, m: &CsrMatrix, s: f64| {
        for (i, j, v) in m.triplets() {
            t.push(bi * n + i, bj * n + j, s * v);
        }
    };
    for k in 0..n_times {
        let diag = if n_times == 1 {
            &start
        } else if k == 0 {
            &first
        } else if k + 1 == n_times {
            q_w
        } else {
            &interior
        };
        push(k, k, diag, 1.0);
        if k > 0 {
            // Q[k, k-1] = -Q_w A, Q[k-1, k] = -A Q_w.
            push(k, k - 1, &qa, -1.0);
            push(k - 1, k, &aq, -1.0);
        }
    }
    Ok(t.build())
}

pub fn ar1_prior(spec: &ProcessSpec) -> Result<PriorBlock> {
    spec.validate()?;
    let ProcessKind::Ar1 { mesh, matern, a } = &spec.kind else {
        return Err(Error::invalid("ar1_prior needs an Ar1 spec"));
    };
    let q_w = mesh.spde.precision(matern);
    let n = mesh.n_vertices();
    let mut slots = Vec::with_capacity(n * spec.n_times);
    for t in 0..spec.n_times {
        slots.extend((0..n).map(|v| Slot {
            process: 0,
            component: Component::Field,
            time: Some(t),
            index: v,
        }));
    }
    Ok(PriorBlock {
        slots,
        precision: ar1_joint_precision(&q_w, a, spec.n_times)?,
    })
}

/// Weights with zero prior variance are fixed at zero and get no slot.
pub fn trend_regression_prior(spec: &ProcessSpec) -> Result<PriorBlock> {
    spec.validate()?;
    let ProcessKind::TrendRegression {
        mesh,
        intercept_var,
        slope_var,
        residual_var,
        ..
    } = &spec.kind
    else {
        return Err(Error::invalid("trend_regression_prior needs a TrendRegression spec"));
    };
    let mut slots = Vec::new();
    let mut diag = Vec::new();
    for (component, vars) in [(Component::Intercept, intercept_var), (Component::Slope, slope_var)] {
        for (v, &var) in vars.iter().enumerate() {
            if var > 0.0 {
                slots.push(Slot {
                    process: 0,
                    component,
                    time: None,
                    index: v,
                });
                diag.push(1.0 / var);
            }
        }
    }
    for t in 0..spec.n_times {
        for v in 0..mesh.n_vertices() {
            slots.push(Slot {
                process: 0,
                component: Component::Residual,
                time: Some(t),
                index: v,
            });
            diag.push(1.0 / residual_var);
        }
    }
    Ok(PriorBlock {
        slots,
        precision: CsrMatrix::from_diagonal(&diag),
    })
}

pub fn fixed_effects_prior(spec: &ProcessSpec) -> Result<PriorBlock> {
    spec.validate()?;
    let ProcessKind::FixedEffects { precisions } = &spec.kind else {
        return Err(Error::invalid("fixed_effects_prior needs a FixedEffects spec"));
    };
    let slots = (0..precisions.len())
        .map(|k| Slot {
            process: 0,
            component: Component::Fixed,
            time: None,
            index: k,
        })
        .collect();
    Ok(PriorBlock {
        slots,
        precision: CsrMatrix::from_diagonal(precisions),
    })
}

pub fn process_prior(spec: &ProcessSpec) -> Result<PriorBlock> {
    match spec.kind {
        ProcessKind::SpatialOnly { .. } => spatial_only_prior(spec),
        ProcessKind::Ar1 { .. } => ar1_prior(spec),
        ProcessKind::TrendRegression { .. } => trend_regression_prior(spec),
        ProcessKind::FixedEffects { .. } => fixed_effects_prior(spec),
    }
}

/// Joint zero-mean Gaussian prior over all process coefficients.
#[derive(Debug, Clone)]
pub struct StackedPrior {
    specs: Vec<ProcessSpec>,
    offsets: Vec<usize>,
    slots: Vec<Slot>,
    lookup: HashMap<Slot, usize>,
    pub precision: CsrMatrix,
    pub mean: Vec<f64>,
}

/// Builds each process block and stacks them in the given order.
pub fn stack(specs: &[ProcessSpec]) -> Result<StackedPrior> {
    let blocks = specs.iter().map(process_prior).collect::<Result<Vec<_>>>()?;
    stack_blocks(specs.to_vec(), blocks)
}

/// Stacks prebuilt blocks. Layout order is process (as given), then the
/// block's own slot order (time-invariant coefficients, then time, then
/// vertex).
pub fn stack_blocks(specs: Vec<ProcessSpec>, blocks: Vec<PriorBlock>) -> Result<StackedPrior> {
    if specs.len() != blocks.len() {
        return Err(Error::invalid("one block per process spec"));
    }
    let mut seen = HashMap::new();
    for s in &specs {
        if seen.insert(s.id.as_str(), ()).is_some() {
            return Err(Error::invalid(format!("duplicate process id '{}'", s.id)));
        }
    }
    let mut slots = Vec::new();
    let mut offsets = Vec::with_capacity(specs.len());
    for (p, b) in blocks.iter().enumerate() {
        if b.slots.len() != b.precision.nrows() {
            return Err(Error::invalid("block slot count differs from its precision size"));
        }
        offsets.push(slots.len());
        slots.extend(b.slots.iter().map(|s| Slot { process: p, ..*s }));
    }
    let lookup = slots.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let refs: Vec<&CsrMatrix> = blocks.iter().map(|b| &b.precision).collect();
    let precision = CsrMatrix::block_diag(&refs);
    let n = slots.len();
    Ok(StackedPrior {
        specs,
        offsets,
        slots,
        lookup,
        precision,
        mean: vec![0.0; n],
    })
}

impl StackedPrior {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn specs(&self) -> &[ProcessSpec] {
        &self.specs
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, i: usize) -> Slot {
        self.slots[i]
    }

    pub fn index_of(&self, slot: &Slot) -> Option<usize> {
        self.lookup.get(slot).copied()
    }

    pub fn process_index(&self, id: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.id == id)
    }

    pub fn process_range(&self, p: usize) -> std::ops::Range<usize> {
        let end = self.offsets.get(p + 1).copied().unwrap_or(self.slots.len());
        self.offsets[p]..end
    }

    fn require(&self, id: &str) -> Result<usize> {
        self.process_index(id)
            .ok_or_else(|| Error::invalid(format!("unknown process '{id}'")))
    }

    /// Sparse map (vertices × N) from the latent vector to the vertex
    /// values of process `id` at epoch `t`.
    pub fn field_at(&self, id: &str, t: usize) -> Result<CsrMatrix> {
        let p = self.require(id)?;
        let spec = &self.specs[p];
        if t >= spec.n_times {
            return Err(Error::invalid(format!(
                "process '{id}' has {} epochs, asked for epoch {t}",
                spec.n_times
            )));
        }
        let n = self.len();
        let slot = |component, time, index| Slot {
            process: p,
            component,
            time,
            index,
        };
        let rows = match (&spec.kind, spec.mesh()) {
            (ProcessKind::FixedEffects { precisions }, _) => precisions.len(),
            (_, Some(mesh)) => mesh.n_vertices(),
            (_, None) => 0,
        };
        let mut b = TripletBuilder::with_capacity(rows, n, 3 * rows);
        match &spec.kind {
            ProcessKind::SpatialOnly { mesh, .. } => {
                for v in 0..mesh.n_vertices() {
                    b.push(v, self.lookup[&slot(Component::Field, None, v)], 1.0);
                }
            }
            ProcessKind::Ar1 { mesh, .. } => {
                for v in 0..mesh.n_vertices() {
                    b.push(v, self.lookup[&slot(Component::Field, Some(t), v)], 1.0);
                }
            }
            ProcessKind::TrendRegression { mesh, times, .. } => {
                for v in 0..mesh.n_vertices() {
                    if let Some(&i) = self.lookup.get(&slot(Component::Intercept, None, v)) {
                        b.push(v, i, 1.0);
                    }
                    if let Some(&i) = self.lookup.get(&slot(Component::Slope, None, v)) {
                        b.push(v, i, times[t]);
                    }
                    b.push(v, self.lookup[&slot(Component::Residual, Some(t), v)], 1.0);
                }
            }
            ProcessKind::FixedEffects { precisions } => {
                for k in 0..precisions.len() {
                    b.push(k, self.lookup[&slot(Component::Fixed, None, k)], 1.0);
                }
            }
        }
        Ok(b.build())
    }

    /// Zero-mean Gaussian log-density of `x`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.len() {
            return Err(Error::invalid("log_density: length mismatch"));
        }
        let chol = Cholesky::new(&self.precision)?;
        let r: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let n = self.len() as f64;
        Ok(0.5 * chol.log_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * self.precision.quad_form(&r))
    }
}
