use super::{Point, TriMesh};
use crate::error::{Error, Result};
use crate::sparse::{CsrMatrix, TripletBuilder};

/// P1 finite-element matrices of a mesh.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    /// Consistent mass matrix `C_ij = ∫ φ_i φ_j`.
    pub mass: CsrMatrix,
    /// Stiffness matrix `G_ij = ∫ ∇φ_i · ∇φ_j` (natural boundary conditions).
    pub stiffness: CsrMatrix,
    /// Row sums of `mass`.
    pub lumped_mass: Vec<f64>,
}

/// Assembles mass and stiffness matrices by element integration. Element
/// contributions are summed in triangle order, so identical meshes give
/// bit-identical matrices.
pub fn assemble_fem(mesh: &TriMesh) -> FemMatrices {
    let n = mesh.n_vertices();
    let ne = mesh.n_triangles();
    let mut mass = TripletBuilder::with_capacity(n, n, 9 * ne);
    let mut stiff = TripletBuilder::with_capacity(n, n, 9 * ne);
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        let p = tri.map(|v| mesh.vertices()[v]);
        // Edge opposite vertex k, rotated: gradient of φ_k is e_k^⊥ / (2A).
        let e: [[f64; 2]; 3] = std::array::from_fn(|k| {
            let a = p[(k + 1) % 3];
            let b = p[(k + 2) % 3];
            [b[0] - a[0], b[1] - a[1]]
        });
        for i in 0..3 {
            for j in 0..3 {
                let m = if i == j { area / 6.0 } else { area / 12.0 };
                mass.push(tri[i], tri[j], m);
                let g = (e[i][0] * e[j][0] + e[i][1] * e[j][1]) / (4.0 * area);
                stiff.push(tri[i], tri[j], g);
            }
        }
    }
    let mass = mass.build();
    let lumped_mass = mass.row_sums();
    FemMatrices {
        mass,
        stiffness: stiff.build(),
        lumped_mass,
    }
}

/// Rows of barycentric weights mapping vertex coefficients to values at
/// `locations`.
pub fn point_eval_matrix(mesh: &TriMesh, locations: &[Point]) -> Result<CsrMatrix> {
    let mut t = TripletBuilder::with_capacity(locations.len(), mesh.n_vertices(), 3 * locations.len());
    for (i, &p) in locations.iter().enumerate() {
        let (tri, w) = mesh.locate(p).ok_or(Error::OutsideMesh {
            index: i,
            x: p[0],
            y: p[1],
        })?;
        for k in 0..3 {
            if w[k] != 0.0 {
                t.push(i, mesh.triangles()[tri][k], w[k]);
            }
        }
    }
    Ok(t.build())
}
