//! Linear observation operators for point and footprint data.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cholesky::Cholesky;
use crate::error::{Error, Result};
use crate::mesh::{footprint_matrix, point_eval_matrix, Footprint, Point};
use crate::processes::{ProcessKind, StackedPrior};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Intercept precision of the point-data regression (near flat).
pub const INTERCEPT_PRECISION: f64 = 1e-6;
/// Precision of the easting and northing coefficients.
pub const COORDINATE_PRECISION: f64 = 1.0;
/// Precision of the elevation coefficient.
pub const ELEVATION_PRECISION: f64 = 0.1;
/// Density of ice in kg/m³.
pub const ICE_DENSITY: f64 = 917.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PointObs {
    pub location: Point,
    pub value: f64,
    pub epoch: usize,
    pub covariates: Vec<f64>,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Instrument {
    Gps,
    Altimetry,
    Gravimetry,
}

impl Instrument {
    pub const ALL: [Instrument; 3] = [Instrument::Gps, Instrument::Altimetry, Instrument::Gravimetry];

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Gps => "gps",
            Instrument::Altimetry => "altimetry",
            Instrument::Gravimetry => "gravimetry",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gps" => Ok(Instrument::Gps),
            "altimetry" => Ok(Instrument::Altimetry),
            "gravimetry" => Ok(Instrument::Gravimetry),
            other => Err(Error::invalid(format!("unknown instrument '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FootprintObs {
    pub footprint: Footprint,
    pub value: f64,
    pub epoch: usize,
    pub instrument: Instrument,
    pub noise_sd: f64,
}

/// Weight function `f(s)` applied to one process inside a footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskWeight {
    Zero,
    One,
    IceDensity,
    Constant(f64),
}

/// Maps every (instrument, process) pair to its weight function.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentMask {
    pub ice_density: f64,
    rules: BTreeMap<(Instrument, String), MaskWeight>,
}

/// Volume-to-mass conversion factors in kg m⁻³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Densities {
    pub ice: f64,
    /// Density at which surface mass balance changes elevation.
    pub surface: f64,
    /// Density of the solid earth under GIA.
    pub mantle: f64,
}

impl Default for Densities {
    fn default() -> Self {
        Self {
            ice: ICE_DENSITY,
            surface: 350.0,
            mantle: 3300.0,
        }
    }
}

/// Process ids for the four-process elevation-change model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateProcessIds {
    pub gia: String,
    pub ice: String,
    pub smb: String,
    pub firn: String,
}

impl Default for RateProcessIds {
    fn default() -> Self {
        Self {
            gia: "gia".into(),
            ice: "ice".into(),
            smb: "smb".into(),
            firn: "firn".into(),
        }
    }
}

impl InstrumentMask {
    pub fn empty(ice_density: f64) -> Self {
        Self {
            ice_density,
            rules: BTreeMap::new(),
        }
    }

    /// GPS sees bedrock motion only, altimetry sees the sum of all surface
    /// and bedrock changes, gravimetry sees ice-dynamics change at ice
    /// density, surface mass change at the surface density, solid-earth
    /// motion at the mantle density, and is blind to firn compaction.
    pub fn elevation_rates(ids: &RateProcessIds, d: &Densities) -> Self {
        use Instrument::*;
        use MaskWeight::*;
        let mut m = Self::empty(d.ice);
        let table = [
            (Gps, [One, Zero, Zero, Zero]),
            (Altimetry, [One, One, One, One]),
            (Gravimetry, [Constant(d.mantle), IceDensity, Constant(d.surface), Zero]),
        ];
        for (inst, w) in table {
            for (id, w) in [&ids.gia, &ids.ice, &ids.smb, &ids.firn].into_iter().zip(w) {
                m.set(inst, id, w);
            }
        }
        m
    }

    pub fn set(&mut self, instrument: Instrument, process: &str, w: MaskWeight) {
        self.rules.insert((instrument, process.to_string()), w);
    }

    pub fn weight(&self, instrument: Instrument, process: &str) -> Result<MaskWeight> {
        self.rules
            .get(&(instrument, process.to_string()))
            .copied()
            .ok_or_else(|| Error::invalid(format!("no mask weight for instrument {instrument} and process '{process}'")))
    }

    fn value(&self, w: MaskWeight) -> f64 {
        match w {
            MaskWeight::Zero => 0.0,
            MaskWeight::One => 1.0,
            MaskWeight::IceDensity => self.ice_density,
            MaskWeight::Constant(c) => c,
        }
    }
}

/// Sparse observation operator `z = H η + offset + ε`, `ε ~ N(0, diag(noise_var))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsOperator {
    pub h: CsrMatrix,
    pub noise_var: Vec<f64>,
    pub offset: Vec<f64>,
    pub values: Vec<f64>,
}

impl ObsOperator {
    pub fn n_obs(&self) -> usize {
        self.h.nrows()
    }

    pub fn empty(n_latent: usize) -> Self {
        Self {
            h: CsrMatrix::zeros(0, n_latent),
            noise_var: Vec::new(),
            offset: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Row-stacks two operators over the same latent vector.
    pub fn concat(&self, other: &ObsOperator) -> Result<ObsOperator> {
        let cat = |a: &[f64], b: &[f64]| a.iter().chain(b).copied().collect::<Vec<_>>();
        Ok(ObsOperator {
            h: CsrMatrix::vstack(&[&self.h, &other.h])?,
            noise_var: cat(&self.noise_var, &other.noise_var),
            offset: cat(&self.offset, &other.offset),
            values: cat(&self.values, &other.values),
        })
    }

    /// Keeps the listed rows in the given order.
    pub fn select(&self, rows: &[usize]) -> ObsOperator {
        let mut t = TripletBuilder::new(rows.len(), self.h.ncols());
        for (r, &i) in rows.iter().enumerate() {
            for (j, v) in self.h.row(i) {
                t.push(r, j, v);
            }
        }
        let pick = |x: &[f64]| rows.iter().map(|&i| x[i]).collect::<Vec<_>>();
        ObsOperator {
            h: t.build(),
            noise_var: pick(&self.noise_var),
            offset: pick(&self.offset),
            values: pick(&self.values),
        }
    }

    fn check_rows(&self) -> Result<()> {
        for i in 0..self.h.nrows() {
            if self.h.row(i).all(|(_, v)| v == 0.0) {
                return Err(Error::invalid(format!("observation {i} does not see any latent process")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Intercept,
    Easting,
    Northing,
    Covariate(usize),
}

/// Fixed-effect design for point data: each term multiplies one
/// coefficient of the fixed-effects process, and the field process adds its
/// interpolated value.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDesign {
    pub fixed_process: Option<String>,
    pub terms: Vec<Term>,
    pub field_process: String,
}

impl PointDesign {
    /// `β₀ + β₁ s1 + β₂ s2 + β₃ z(s) + U(s)` with `z` the first covariate.
    pub fn elevation_regression(fixed_process: &str, field_process: &str) -> Self {
        Self {
            fixed_process: Some(fixed_process.into()),
            terms: vec![Term::Intercept, Term::Easting, Term::Northing, Term::Covariate(0)],
            field_process: field_process.into(),
        }
    }

    /// Prior precisions matching [`PointDesign::elevation_regression`].
    pub fn elevation_precisions() -> Vec<f64> {
        vec![INTERCEPT_PRECISION, COORDINATE_PRECISION, COORDINATE_PRECISION, ELEVATION_PRECISION]
    }

    fn term_value(&self, term: Term, obs: &PointObs, i: usize) -> Result<f64> {
        Ok(match term {
            Term::Intercept => 1.0,
            Term::Easting => obs.location[0],
            Term::Northing => obs.location[1],
            Term::Covariate(k) => *obs
                .covariates
                .get(k)
                .ok_or_else(|| Error::invalid(format!("point observation {i} is missing covariate {k}")))?,
        })
    }
}

/// Builds rows `[x(s)', φ(s)']` for point data.
pub fn point_operator(obs: &[PointObs], prior: &StackedPrior, design: &PointDesign) -> Result<ObsOperator> {
    let n = prior.len();
    let fp = prior
        .process_index(&design.field_process)
        .ok_or_else(|| Error::invalid(format!("unknown process '{}'", design.field_process)))?;
    let mesh = prior.specs()[fp]
        .mesh()
        .ok_or_else(|| Error::invalid("the field process of a point design needs a mesh"))?
        .clone();
    let fixed_cols: Vec<usize> = match &design.fixed_process {
        Some(id) => {
            let map = prior.field_at(id, 0)?;
            if map.nrows() != design.terms.len() {
                return Err(Error::invalid(format!(
                    "fixed-effects process '{id}' has {} coefficients but the design has {} terms",
                    map.nrows(),
                    design.terms.len()
                )));
            }
            (0..map.nrows()).map(|k| map.row(k).next().unwrap().0).collect()
        }
        None if design.terms.is_empty() => Vec::new(),
        None => return Err(Error::invalid("design terms need a fixed-effects process")),
    };
    let mut fields: HashMap<usize, CsrMatrix> = HashMap::new();
    let mut t = TripletBuilder::with_capacity(obs.len(), n, obs.len() * (3 + fixed_cols.len()));
    let mut noise_var = Vec::with_capacity(obs.len());
    let locations: Vec<Point> = obs.iter().map(|o| o.location).collect();
    let a = point_eval_matrix(&mesh.mesh, &locations)?;
    for (i, o) in obs.iter().enumerate() {
        if !(o.noise_sd > 0.0 && o.noise_sd.is_finite()) {
            return Err(Error::invalid(format!("point observation {i} needs a positive noise sd")));
        }
        for (k, &term) in design.terms.iter().enumerate() {
            t.push(i, fixed_cols[k], design.term_value(term, o, i)?);
        }
        let epoch = effective_epoch(prior, fp, o.epoch);
        if !fields.contains_key(&epoch) {
            fields.insert(epoch, prior.field_at(&design.field_process, epoch)?);
        }
        let map = &fields[&epoch];
        for (v, w) in a.row(i) {
            for (col, c) in map.row(v) {
                t.push(i, col, w * c);
            }
        }
        noise_var.push(o.noise_sd * o.noise_sd);
    }
    let op = ObsOperator {
        h: t.build(),
        noise_var,
        offset: vec![0.0; obs.len()],
        values: obs.iter().map(|o| o.value).collect(),
    };
    op.check_rows()?;
    Ok(op)
}

/// Time-invariant processes answer every epoch with their single block.
fn effective_epoch(prior: &StackedPrior, p: usize, epoch: usize) -> usize {
    match prior.specs()[p].kind {
        ProcessKind::SpatialOnly { .. } | ProcessKind::FixedEffects { .. } => 0,
        _ => epoch,
    }
}

/// Builds one row per footprint datum: `Σ_i (b_i^j)' η_{i,t}` over every
/// process of the prior, with `b` from footprint quadrature weighted by the
/// instrument mask.
pub fn footprint_operator(obs: &[FootprintObs], mask: &InstrumentMask, prior: &StackedPrior) -> Result<ObsOperator> {
    let n = prior.len();
    let specs = prior.specs();
    // Resolve the mask up front so a missing rule fails before any work.
    let mut weights = BTreeMap::new();
    for inst in Instrument::ALL {
        for (p, s) in specs.iter().enumerate() {
            if obs.iter().any(|o| o.instrument == inst) {
                weights.insert((inst, p), mask.weight(inst, &s.id)?);
            }
        }
    }
    let mut fields: HashMap<(usize, usize), CsrMatrix> = HashMap::new();
    let mut t = TripletBuilder::new(obs.len(), n);
    let mut noise_var = Vec::with_capacity(obs.len());
    for (j, o) in obs.iter().enumerate() {
        if !(o.noise_sd > 0.0 && o.noise_sd.is_finite()) {
            return Err(Error::invalid(format!("footprint observation {j} needs a positive noise sd")));
        }
        for (p, s) in specs.iter().enumerate() {
            let w = weights[&(o.instrument, p)];
            if w == MaskWeight::Zero {
                continue;
            }
            let Some(mesh) = s.mesh() else {
                return Err(Error::invalid(format!(
                    "process '{}' has no mesh and cannot enter a footprint integral",
                    s.id
                )));
            };
            let f = mask.value(w);
            let b = footprint_matrix(&mesh.mesh, &o.footprint, |_| f)?;
            let epoch = effective_epoch(prior, p, o.epoch);
            if !fields.contains_key(&(p, epoch)) {
                fields.insert((p, epoch), prior.field_at(&s.id, epoch)?);
            }
            let map = &fields[&(p, epoch)];
            for &(v, bv) in &b.entries {
                for (col, c) in map.row(v) {
                    t.push(j, col, bv * c);
                }
            }
        }
        noise_var.push(o.noise_sd * o.noise_sd);
    }
    let op = ObsOperator {
        h: t.build(),
        noise_var,
        offset: vec![0.0; obs.len()],
        values: obs.iter().map(|o| o.value).collect(),
    };
    op.check_rows()?;
    Ok(op)
}

/// A synthetic data set with the latent draw that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub truth: Vec<f64>,
    pub data: Vec<f64>,
}

/// Draws `η ~ N(mean, Q⁻¹)` and returns `H η + offset + ε`.
pub fn simulate_data<R: Rng + ?Sized>(prior: &StackedPrior, op: &ObsOperator, rng: &mut R) -> Result<Simulated> {
    let chol = Cholesky::new(&prior.precision)?;
    simulate_with(&chol, prior, op, rng)
}

/// As [`simulate_data`] with a precomputed factor of the prior precision.
pub fn simulate_with<R: Rng + ?Sized>(
    chol: &Cholesky,
    prior: &StackedPrior,
    op: &ObsOperator,
    rng: &mut R,
) -> Result<Simulated> {
    if op.h.ncols() != prior.len() {
        return Err(Error::invalid("operator and prior sizes differ"));
    }
    let mut truth = chol.sample_zero_mean(rng);
    for (x, m) in truth.iter_mut().zip(&prior.mean) {
        *x += m;
    }
    let mut data = op.h.mul_vec(&truth);
    for (i, z) in data.iter_mut().enumerate() {
        let e: f64 = rng.sample(StandardNormal);
        *z += op.offset[i] + op.noise_var[i].sqrt() * e;
    }
    Ok(Simulated { truth, data })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matern::MaternParams;
    use crate::mesh::{build_mesh, Polygon};
    use crate::processes::{stack, MeshModel, ProcessSpec};

    fn rates_prior(t: usize) -> StackedPrior {
        let m = MeshModel::new("m", build_mesh(&Polygon::unit_square(), 0.25, 0.0).unwrap());
        let n = m.n_vertices();
        let mat = MaternParams::spde(1.0, 0.5).unwrap();
        stack(&[
            ProcessSpec::spatial_only("gia", m.clone(), mat, t),
            ProcessSpec::trend("ice", m.clone(), vec![1.0; n], vec![0.5; n], 0.1, t),
            ProcessSpec::ar1("smb", m.clone(), mat, 0.4, t),
            ProcessSpec::ar1("firn", m, mat, 0.4, t),
        ])
        .unwrap()
    }

    fn fp(inst: Instrument, region: Polygon) -> FootprintObs {
        FootprintObs {
            footprint: Footprint::new(region, 0.02).unwrap(),
            value: 0.0,
            epoch: 1,
            instrument: inst,
            noise_sd: 0.1,
        }
    }

    fn constant_state(prior: &StackedPrior, vals: [f64; 4]) -> Vec<f64> {
        // Field, intercept and residual coefficients take the process
        // constant; slopes are zero.
        use crate::processes::Component;
        prior
            .slots()
            .iter()
            .map(|s| match s.component {
                Component::Slope => 0.0,
                Component::Residual => 0.0,
                _ => vals[s.process],
            })
            .collect()
    }

    #[test]
    fn gps_rows_ignore_ice_processes() {
        let prior = rates_prior(3);
        let mask = InstrumentMask::elevation_rates(&RateProcessIds::default(), &Densities::default());
        let region = Polygon::rectangle([0.4, 0.4], [0.45, 0.45]).unwrap();
        let op = footprint_operator(&[fp(Instrument::Gps, region)], &mask, &prior).unwrap();
        for (col, v) in op.h.row(0) {
            if v != 0.0 {
                assert_eq!(prior.slot(col).process, 0);
            }
        }
    }

    #[test]
    fn altimetry_over_domain_sums_processes() {
        let prior = rates_prior(3);
        let mask = InstrumentMask::elevation_rates(&RateProcessIds::default(), &Densities::default());
        let op = footprint_operator(&[fp(Instrument::Altimetry, Polygon::unit_square())], &mask, &prior).unwrap();
        let x = constant_state(&prior, [0.3, -1.2, 0.5, 0.25]);
        let got = op.h.mul_vec(&x)[0];
        assert!((got - (0.3 - 1.2 + 0.5 + 0.25)).abs() < 1e-12, "{got}");
    }

    #[test]
    fn gravimetry_constant_ice_thinning() {
        let prior = rates_prior(3);
        let mask = InstrumentMask::elevation_rates(&RateProcessIds::default(), &Densities::default());
        let region = Polygon::rectangle([0.1, 0.2], [0.6, 0.5]).unwrap();
        let op = footprint_operator(&[fp(Instrument::Gravimetry, region.clone())], &mask, &prior).unwrap();
        let h = -0.8;
        let x = constant_state(&prior, [0.0, h, 0.0, 0.0]);
        let got = op.h.mul_vec(&x)[0];
        assert!((got - ICE_DENSITY * h * region.area()).abs() < 1e-9, "{got}");
    }

    #[test]
    fn unknown_instrument_and_missing_rules() {
        assert!("sonar".parse::<Instrument>().is_err());
        let prior = rates_prior(1);
        let mask = InstrumentMask::empty(ICE_DENSITY);
        let region = Polygon::rectangle([0.1, 0.1], [0.2, 0.2]).unwrap();
        assert!(footprint_operator(&[fp(Instrument::Gps, region)], &mask, &prior).is_err());
    }

    #[test]
    fn all_zero_row_is_an_error() {
        let prior = rates_prior(3);
        let mut mask = InstrumentMask::elevation_rates(&RateProcessIds::default(), &Densities::default());
        mask.set(Instrument::Gps, "gia", MaskWeight::Zero);
        let region = Polygon::rectangle([0.1, 0.1], [0.2, 0.2]).unwrap();
        assert!(footprint_operator(&[fp(Instrument::Gps, region)], &mask, &prior).is_err());
    }

    #[test]
    fn point_rows_and_defaults() {
        let m = MeshModel::new("m", build_mesh(&Polygon::unit_square(), 0.25, 0.0).unwrap());
        let prior = stack(&[
            ProcessSpec::fixed_effects("beta", PointDesign::elevation_precisions()),
            ProcessSpec::spatial_only("u", m, MaternParams::spde(1.0, 0.5).unwrap(), 1),
        ])
        .unwrap();
        assert_eq!(PointDesign::elevation_precisions()[3], 0.1);
        assert_eq!(PointDesign::elevation_precisions()[1], 1.0);
        let design = PointDesign::elevation_regression("beta", "u");
        let obs = PointObs {
            location: [0.5, 0.25],
            value: 1.0,
            epoch: 0,
            covariates: vec![0.7],
            noise_sd: 0.1,
        };
        let op = point_operator(&[obs.clone()], &prior, &design).unwrap();
        let row: Vec<_> = op.h.row(0).collect();
        assert_eq!(&row[..4], &[(0, 1.0), (1, 0.5), (2, 0.25), (3, 0.7)]);
        let w: f64 = row[4..].iter().map(|e| e.1).sum();
        assert!((w - 1.0).abs() < 1e-12);
        let missing = PointObs {
            covariates: vec![],
            ..obs
        };
        assert!(point_operator(&[missing], &prior, &design).is_err());
    }
}
