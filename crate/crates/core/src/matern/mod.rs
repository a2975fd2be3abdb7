//! Matérn covariances and their sparse SPDE precision approximations.
//!
//! With `κ = √(8ν)/ρ` the Matérn field with smoothness `ν` solves
//! `(κ² − Δ)^{α/2} (τ U) = W` for `α = ν + 1` in two dimensions. For
//! `α = 2` the P1 finite-element discretisation with lumped mass `C̃` gives
//! `Q = τ² (κ⁴ C̃ + 2κ² G + G C̃⁻¹ G)` and `τ² = 1 / (4π κ² σ²)`.

mod bessel;
mod pc_prior;

use std::f64::consts::PI;

pub use bessel::{bessel_k0, bessel_k1};
pub use pc_prior::{pc_log_density, PcPrior};

use crate::cholesky::Cholesky;
use crate::error::{Error, Result};
use crate::mesh::FemMatrices;
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    pub sigma: f64,
    pub rho: f64,
    pub nu: f64,
}

impl MaternParams {
    /// Smoothness `ν` must be 1 (the SPDE case) or one of the half-integers
    /// 1/2, 3/2, 5/2 with closed-form covariances.
    pub fn new(sigma: f64, rho: f64, nu: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("Matérn sigma must be positive, got {sigma}")));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::invalid(format!("Matérn range must be positive, got {rho}")));
        }
        if ![0.5, 1.0, 1.5, 2.5].contains(&nu) {
            return Err(Error::invalid(format!("unsupported Matérn smoothness {nu}")));
        }
        Ok(Self { sigma, rho, nu })
    }

    /// `ν = 1` parameters.
    pub fn spde(sigma: f64, rho: f64) -> Result<Self> {
        Self::new(sigma, rho, 1.0)
    }

    pub fn kappa(&self) -> f64 {
        (8.0 * self.nu).sqrt() / self.rho
    }
}

/// Matérn covariance at distance `dist`.
pub fn matern_cov(p: &MaternParams, dist: f64) -> f64 {
    let var = p.sigma * p.sigma;
    if dist <= 0.0 {
        return var;
    }
    let x = p.kappa() * dist;
    let corr = if p.nu == 1.0 {
        x * bessel_k1(x)
    } else if p.nu == 0.5 {
        (-x).exp()
    } else if p.nu == 1.5 {
        (1.0 + x) * (-x).exp()
    } else {
        (1.0 + x + x * x / 3.0) * (-x).exp()
    };
    var * corr
}

/// Hyperparameter-free building blocks of the `α = 2` SPDE precision on one
/// mesh, aligned to a common sparsity pattern:
/// `Q = τ² (κ⁴ M0 + 2κ² M1 + M2)`.
#[derive(Debug, Clone)]
pub struct SpdeBasis {
    m0: CsrMatrix,
    m1: CsrMatrix,
    m2: CsrMatrix,
}

impl SpdeBasis {
    pub fn new(fem: &FemMatrices) -> Self {
        let inv_lumped: Vec<f64> = fem.lumped_mass.iter().map(|c| 1.0 / c).collect();
        let c = CsrMatrix::from_diagonal(&fem.lumped_mass);
        let g = &fem.stiffness;
        let gcg = g.scale_cols(&inv_lumped).matmul(g);
        // Union pattern (G C̃⁻¹ G covers the two-ring, G and C̃ sit inside it).
        let zero = gcg.scale(0.0);
        let m0 = zero.add_scaled(1.0, &c, 1.0);
        let m1 = zero.add_scaled(1.0, g, 1.0);
        let m2 = gcg.add_scaled(1.0, &m0.scale(0.0), 1.0);
        debug_assert!(m0.same_pattern(&m1) && m1.same_pattern(&m2));
        Self { m0, m1, m2 }
    }

    pub fn n(&self) -> usize {
        self.m0.nrows()
    }

    /// The shared sparsity pattern with zero values.
    pub fn pattern(&self) -> CsrMatrix {
        self.m0.scale(0.0)
    }

    /// Precision for `ν = 1` parameters, no SPD check.
    pub fn precision(&self, p: &MaternParams) -> CsrMatrix {
        let kappa = p.kappa();
        let k2 = kappa * kappa;
        let tau2 = 1.0 / (4.0 * PI * k2 * p.sigma * p.sigma);
        let (a, b, c) = (tau2 * k2 * k2, 2.0 * tau2 * k2, tau2);
        let mut q = self.m2.clone();
        let v0 = self.m0.values();
        let v1 = self.m1.values();
        for (k, v) in q.values_mut().iter_mut().enumerate() {
            *v = a * v0[k] + b * v1[k] + c * *v;
        }
        q
    }
}

/// Validated SPDE precision with its parameters.
#[derive(Debug, Clone)]
pub struct SpdeOperator {
    pub kappa: f64,
    pub tau: f64,
    pub alpha: u32,
    pub params: MaternParams,
    pub precision: CsrMatrix,
}

/// Builds the `α = 2` SPDE precision and checks it factorises.
pub fn build_precision(fem: &FemMatrices, p: &MaternParams) -> Result<SpdeOperator> {
    if p.nu != 1.0 {
        return Err(Error::invalid(format!(
            "SPDE precision supports ν = 1 (α = 2) only, got ν = {}",
            p.nu
        )));
    }
    let q = SpdeBasis::new(fem).precision(p);
    match Cholesky::new(&q) {
        Ok(_) => {}
        Err(Error::NotPositiveDefinite { pivot, value, .. }) => {
            return Err(Error::NotPositiveDefinite {
                pivot,
                value,
                hint: "SPDE precision lost definiteness; refine the mesh relative to the range",
            })
        }
        Err(e) => return Err(e),
    }
    let kappa = p.kappa();
    Ok(SpdeOperator {
        kappa,
        tau: (1.0 / (4.0 * PI * kappa * kappa * p.sigma * p.sigma)).sqrt(),
        alpha: 2,
        params: *p,
        precision: q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{assemble_fem, build_mesh, Polygon};

    #[test]
    fn covariance_at_zero_is_variance() {
        let p = MaternParams::spde(1.7, 0.3).unwrap();
        assert_eq!(matern_cov(&p, 0.0), 1.7 * 1.7);
    }

    #[test]
    fn correlation_at_range() {
        // √8 K1(√8), frozen from a 30-digit arbitrary-precision evaluation.
        let p = MaternParams::spde(1.0, 1.0).unwrap();
        let c = matern_cov(&p, 1.0);
        assert!((c - 0.139_667_474_015_293_14).abs() < 1e-14, "{c}");
        let p2 = MaternParams::spde(2.0, 1.0).unwrap();
        assert!((matern_cov(&p2, 1.0) - 4.0 * c).abs() < 1e-15);
    }

    #[test]
    fn monotone_in_distance() {
        let p = MaternParams::spde(1.0, 0.4).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..1000 {
            let c = matern_cov(&p, k as f64 * 0.002);
            assert!(c <= prev);
            prev = c;
        }
    }

    #[test]
    fn half_integer_closed_forms() {
        // ν = 1/2: κ = 2/ρ, exponential covariance.
        let p = MaternParams::new(1.0, 1.0, 0.5).unwrap();
        assert!((matern_cov(&p, 0.5) - (-1.0f64).exp()).abs() < 1e-15);
        // ν = 3/2: κ = √12/ρ.
        let p = MaternParams::new(1.0, 2.0, 1.5).unwrap();
        let x = 12f64.sqrt() / 2.0;
        assert!((matern_cov(&p, 1.0) - (1.0 + x) * (-x).exp()).abs() < 1e-15);
        assert!(MaternParams::new(1.0, 1.0, 0.7).is_err());
        assert!(MaternParams::new(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn precision_is_spd_and_two_ring_sparse() {
        let mesh = build_mesh(&Polygon::unit_square(), 0.1, 0.3).unwrap();
        let fem = assemble_fem(&mesh);
        let op = build_precision(&fem, &MaternParams::spde(1.0, 0.3).unwrap()).unwrap();
        assert!(op.precision.is_symmetric(1e-12));
        let g = &fem.stiffness;
        let two_ring = g.matmul(g);
        for (i, j, _) in op.precision.triplets() {
            assert!(two_ring.contains(i, j));
        }
        assert!(build_precision(&fem, &MaternParams::new(1.0, 0.3, 0.5).unwrap()).is_err());
    }
}
