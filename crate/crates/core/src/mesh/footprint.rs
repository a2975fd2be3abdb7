use super::polygon::{polygon_centroid, signed_area};
use super::{Point, Polygon, TriMesh};
use crate::error::{Error, Result};
use crate::sparse::SparseVec;

/// Observation footprint with a cell-centroid quadrature rule.
#[derive(Debug, Clone)]
pub struct Footprint {
    pub region: Polygon,
    pub quad_points: Vec<Point>,
    pub quad_weights: Vec<f64>,
}

const MAX_SPLIT_DEPTH: usize = 4;

impl Footprint {
    /// Grids the bounding box of `region` with square cells of side
    /// `cell_side` and clips every cell to the polygon. Each clipped piece
    /// contributes its centroid with its exact area as weight; pieces whose
    /// centroid falls outside a non-convex region are split further.
    pub fn new(region: Polygon, cell_side: f64) -> Result<Self> {
        if !(cell_side > 0.0) || !cell_side.is_finite() {
            return Err(Error::invalid("footprint cell side must be positive"));
        }
        let (lo, hi) = region.bbox();
        let nx = ((hi[0] - lo[0]) / cell_side).ceil().max(1.0) as usize;
        let ny = ((hi[1] - lo[1]) / cell_side).ceil().max(1.0) as usize;
        let mut fp = Footprint {
            region,
            quad_points: Vec::new(),
            quad_weights: Vec::new(),
        };
        for j in 0..ny {
            for i in 0..nx {
                let c0 = [lo[0] + i as f64 * cell_side, lo[1] + j as f64 * cell_side];
                let c1 = [c0[0] + cell_side, c0[1] + cell_side];
                fp.add_cell(c0, c1, 0);
            }
        }
        Ok(fp)
    }

    fn add_cell(&mut self, lo: Point, hi: Point, depth: usize) {
        let piece = self.region.clip_to_rect(lo, hi);
        if piece.len() < 3 {
            return;
        }
        let area = signed_area(&piece);
        let cell_area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        if area <= 1e-14 * cell_area {
            return;
        }
        let Some(c) = polygon_centroid(&piece) else {
            return;
        };
        if self.region.contains(c) || depth >= MAX_SPLIT_DEPTH {
            // At the depth limit the nearest piece vertex stands in.
            let c = if self.region.contains(c) {
                c
            } else {
                *piece
                    .iter()
                    .min_by(|a, b| super::dist(**a, c).total_cmp(&super::dist(**b, c)))
                    .unwrap()
            };
            self.quad_points.push(c);
            self.quad_weights.push(area);
            return;
        }
        let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        self.add_cell(lo, mid, depth + 1);
        self.add_cell([mid[0], lo[1]], [hi[0], mid[1]], depth + 1);
        self.add_cell([lo[0], mid[1]], [mid[0], hi[1]], depth + 1);
        self.add_cell(mid, hi, depth + 1);
    }

    pub fn area(&self) -> f64 {
        self.quad_weights.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.quad_points.is_empty()
    }
}

/// Row `b` with `b_k = Σ_l f(s_l) φ_k(s_l) Δ_l`, approximating
/// `∫_Ω f(s) φ_k(s) ds`.
pub fn footprint_matrix(mesh: &TriMesh, fp: &Footprint, weight: impl Fn(Point) -> f64) -> Result<SparseVec> {
    if fp.is_empty() {
        return Err(Error::invalid("empty footprint"));
    }
    let mut pairs = Vec::with_capacity(3 * fp.quad_points.len());
    for (l, (&s, &dl)) in fp.quad_points.iter().zip(&fp.quad_weights).enumerate() {
        let (tri, w) = mesh.locate(s).ok_or(Error::OutsideMesh {
            index: l,
            x: s[0],
            y: s[1],
        })?;
        let f = weight(s);
        if f == 0.0 {
            continue;
        }
        for k in 0..3 {
            if w[k] != 0.0 {
                pairs.push((mesh.triangles()[tri][k], f * w[k] * dl));
            }
        }
    }
    Ok(SparseVec::from_pairs(pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    #[test]
    fn quadrature_weights_sum_to_area() {
        let disk = Polygon::regular([0.5, 0.5], 0.3, 64).unwrap();
        let fp = Footprint::new(disk.clone(), 0.01).unwrap();
        assert!((fp.area() - disk.area()).abs() < 1e-6 * disk.area());
        assert!(fp.quad_points.iter().all(|&p| disk.contains(p)));
    }

    #[test]
    fn constant_field_over_one_triangle() {
        let mesh = build_mesh(&Polygon::unit_square(), 0.25, 0.0).unwrap();
        let tri = mesh.triangles()[5].map(|v| mesh.vertices()[v]);
        let region = Polygon::new(tri.to_vec()).unwrap();
        let fp = Footprint::new(region.clone(), 0.25 / 8.0).unwrap();
        let b = footprint_matrix(&mesh, &fp, |_| 1.0).unwrap();
        let c = 2.5;
        let coeffs = vec![c; mesh.n_vertices()];
        assert!((b.dot(&coeffs) - c * region.area()).abs() < 1e-12);
        let rho = 917.0;
        let b = footprint_matrix(&mesh, &fp, |_| rho).unwrap();
        assert!((b.dot(&coeffs) - rho * c * region.area()).abs() < 1e-9);
    }

    #[test]
    fn whole_hull_integrates_to_area() {
        let mesh = build_mesh(&Polygon::unit_square(), 0.2, 0.0).unwrap();
        let fp = Footprint::new(Polygon::unit_square(), 0.05).unwrap();
        let b = footprint_matrix(&mesh, &fp, |_| 1.0).unwrap();
        let total: f64 = b.entries.iter().map(|e| e.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn footprint_outside_mesh_errors() {
        let mesh = build_mesh(&Polygon::unit_square(), 0.2, 0.0).unwrap();
        let far = Polygon::rectangle([2.0, 2.0], [3.0, 3.0]).unwrap();
        let fp = Footprint::new(far, 0.1).unwrap();
        assert!(footprint_matrix(&mesh, &fp, |_| 1.0).is_err());
    }
}
