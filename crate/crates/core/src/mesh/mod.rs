//! Planar triangulations with piecewise-linear finite elements.

mod fem;
mod footprint;
mod polygon;

use std::collections::HashMap;
use std::sync::OnceLock;

pub use fem::{assemble_fem, point_eval_matrix, FemMatrices};
pub use footprint::{footprint_matrix, Footprint};
pub use polygon::{bbox, dist, point_segment_distance, polygon_centroid, signed_area, Point, Polygon};

use crate::error::{Error, Result};

/// Conforming triangulation covering a study domain.
#[derive(Debug)]
pub struct TriMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    domain: Polygon,
    locator: OnceLock<Locator>,
}

impl Clone for TriMesh {
    fn clone(&self) -> Self {
        Self {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            boundary: self.boundary.clone(),
            domain: self.domain.clone(),
            locator: OnceLock::new(),
        }
    }
}

impl PartialEq for TriMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.triangles == other.triangles && self.domain == other.domain
    }
}

impl TriMesh {
    /// Validates and wraps an explicit triangulation. Triangles are
    /// reoriented counter-clockwise; boundary flags are derived from edges
    /// used by a single triangle.
    pub fn new(vertices: Vec<Point>, mut triangles: Vec<[usize; 3]>, domain: Polygon) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::invalid("mesh needs vertices and triangles"));
        }
        let n = vertices.len();
        let (lo, hi) = bbox(&vertices);
        let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        for (t, tri) in triangles.iter_mut().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::invalid(format!("triangle {t} references a missing vertex")));
            }
            let a = tri_signed_area(&vertices, tri);
            if a.abs() <= 1e-14 * scale * scale {
                return Err(Error::invalid(format!("triangle {t} is degenerate")));
            }
            if a < 0.0 {
                tri.swap(1, 2);
            }
        }

        // Each directed edge at most once; each undirected edge at most twice.
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let e = (tri[k], tri[(k + 1) % 3]);
                if directed.insert(e, t).is_some() {
                    return Err(Error::invalid(format!(
                        "edge ({}, {}) is used twice with the same orientation (overlapping triangles)",
                        e.0, e.1
                    )));
                }
            }
        }
        let mut boundary = vec![false; n];
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                boundary[a] = true;
                boundary[b] = true;
            }
        }

        let mesh = Self {
            vertices,
            triangles,
            boundary,
            domain,
            locator: OnceLock::new(),
        };

        // Hanging nodes: every vertex must be a corner of each triangle containing it.
        for (v, &p) in mesh.vertices.iter().enumerate() {
            for t in mesh.locator().candidates(p) {
                let tri = mesh.triangles[t];
                if tri.contains(&v) {
                    continue;
                }
                let w = mesh.barycentric(t, p);
                if w.iter().all(|&x| x > 1e-10) || (w.iter().all(|&x| x >= -1e-12) && w.iter().filter(|&&x| x.abs() <= 1e-12).count() == 1) {
                    return Err(Error::invalid(format!(
                        "vertex {v} lies inside triangle {t} (non-conforming mesh)"
                    )));
                }
            }
        }

        for (k, &p) in mesh.domain.vertices().iter().enumerate() {
            if mesh.locate(p).is_none() {
                return Err(Error::invalid(format!(
                    "domain polygon vertex {k} lies outside the mesh hull"
                )));
            }
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn domain(&self) -> &Polygon {
        &self.domain
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        tri_signed_area(&self.vertices, &self.triangles[t])
    }

    /// Total area covered by the triangles.
    pub fn hull_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|tri| (0..3).map(move |k| (tri[k], tri[(k + 1) % 3])))
            .map(|(a, b)| dist(self.vertices[a], self.vertices[b]))
            .fold(0.0, f64::max)
    }

    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let w1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let w2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - w1 - w2, w1, w2]
    }

    /// Lowest-index triangle containing `p` with its barycentric weights.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        const TOL: f64 = 1e-12;
        for t in self.locator().candidates(p) {
            let w = self.barycentric(t, p);
            if w.iter().all(|&x| x >= -TOL) {
                // Snap round-off so weights stay a partition of unity.
                let mut w = w.map(|x| x.max(0.0));
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= s);
                return Some((t, w));
            }
        }
        None
    }

    fn locator(&self) -> &Locator {
        self.locator.get_or_init(|| Locator::build(&self.vertices, &self.triangles))
    }
}

fn tri_signed_area(v: &[Point], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = tri.map(|i| v[i]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Uniform bucket grid over triangle bounding boxes.
#[derive(Debug)]
struct Locator {
    lo: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn build(vertices: &[Point], triangles: &[[usize; 3]]) -> Self {
        let (lo, hi) = bbox(vertices);
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        let side = (triangles.len() as f64).sqrt().ceil().max(1.0);
        let cell = span / side;
        let nx = (((hi[0] - lo[0]) / cell).floor() as usize + 1).max(1);
        let ny = (((hi[1] - lo[1]) / cell).floor() as usize + 1).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let pad = 1e-9 * span;
        for (t, tri) in triangles.iter().enumerate() {
            let pts = tri.map(|i| vertices[i]);
            let (tlo, thi) = bbox(&pts);
            let (i0, j0) = Self::cell_of(lo, cell, nx, ny, [tlo[0] - pad, tlo[1] - pad]);
            let (i1, j1) = Self::cell_of(lo, cell, nx, ny, [thi[0] + pad, thi[1] + pad]);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t);
                }
            }
        }
        Self {
            lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn cell_of(lo: Point, cell: f64, nx: usize, ny: usize, p: Point) -> (usize, usize) {
        let i = ((p[0] - lo[0]) / cell).floor().clamp(0.0, (nx - 1) as f64) as usize;
        let j = ((p[1] - lo[1]) / cell).floor().clamp(0.0, (ny - 1) as f64) as usize;
        (i, j)
    }

    /// Triangles whose bounding box may contain `p`, ascending.
    fn candidates(&self, p: Point) -> impl Iterator<Item = usize> + '_ {
        let fx = (p[0] - self.lo[0]) / self.cell;
        let fy = (p[1] - self.lo[1]) / self.cell;
        let outside = !(fx > -1e-9 && fy > -1e-9 && fx < self.nx as f64 + 1e-9 && fy < self.ny as f64 + 1e-9);
        let bucket: &[usize] = if outside {
            &[]
        } else {
            let (i, j) = Self::cell_of(self.lo, self.cell, self.nx, self.ny, p);
            &self.buckets[j * self.nx + i]
        };
        bucket.iter().copied()
    }
}

/// Structured triangulation of the domain dilated by `extension_factor`
/// times the larger side of its bounding box.
///
/// The mesh is a regular grid with spacing at most `target_edge` whose cells
/// are split along alternating diagonals, so the longest edge is at most
/// `sqrt(2) * target_edge`. Cells farther than the margin (in the maximum
/// norm) from the polygon are dropped.
pub fn build_mesh(domain: &Polygon, target_edge: f64, extension_factor: f64) -> Result<TriMesh> {
    if !(extension_factor >= 0.0) {
        return Err(Error::invalid("extension factor must be non-negative"));
    }
    let (lo, hi) = domain.bbox();
    let reference = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    build_mesh_with_margin(domain, target_edge, extension_factor * reference)
}

/// As [`build_mesh`] with an absolute margin, e.g. the largest prior
/// median spatial range.
pub fn build_mesh_with_margin(domain: &Polygon, target_edge: f64, margin: f64) -> Result<TriMesh> {
    if !(target_edge > 0.0) || !target_edge.is_finite() {
        return Err(Error::invalid("target edge length must be positive"));
    }
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(Error::invalid("mesh margin must be non-negative"));
    }
    let (plo, phi) = domain.bbox();
    let lo = [plo[0] - margin, plo[1] - margin];
    let hi = [phi[0] + margin, phi[1] + margin];
    let nx = (((hi[0] - lo[0]) / target_edge) - 1e-9).ceil().max(1.0) as usize;
    let ny = (((hi[1] - lo[1]) / target_edge) - 1e-9).ceil().max(1.0) as usize;
    if (nx + 1) * (ny + 1) > 4_000_000 {
        return Err(Error::invalid("requested mesh is too large"));
    }
    let hx = (hi[0] - lo[0]) / nx as f64;
    let hy = (hi[1] - lo[1]) / ny as f64;
    let node = |i: usize, j: usize| j * (nx + 1) + i;
    let coord = |i: usize, j: usize| {
        // Exact grid endpoints avoid round-off at the hull edges.
        let x = if i == nx { hi[0] } else { lo[0] + i as f64 * hx };
        let y = if j == ny { hi[1] } else { lo[1] + j as f64 * hy };
        [x, y]
    };

    let mut used = vec![false; (nx + 1) * (ny + 1)];
    let mut cells = Vec::new();
    let tol = 1e-12 * (hx + hy);
    for j in 0..ny {
        for i in 0..nx {
            let c0 = coord(i, j);
            let c1 = coord(i + 1, j + 1);
            let keep = domain.intersects_rect(
                [c0[0] - margin - tol, c0[1] - margin - tol],
                [c1[0] + margin + tol, c1[1] + margin + tol],
            );
            if keep {
                cells.push((i, j));
                for (a, b) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
                    used[node(a, b)] = true;
                }
            }
        }
    }

    let mut remap = vec![usize::MAX; used.len()];
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            if used[node(i, j)] {
                remap[node(i, j)] = vertices.len();
                vertices.push(coord(i, j));
            }
        }
    }
    let mut triangles = Vec::with_capacity(2 * cells.len());
    for (i, j) in cells {
        let v00 = remap[node(i, j)];
        let v10 = remap[node(i + 1, j)];
        let v01 = remap[node(i, j + 1)];
        let v11 = remap[node(i + 1, j + 1)];
        if (i + j) % 2 == 0 {
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        } else {
            triangles.push([v00, v10, v01]);
            triangles.push([v10, v11, v01]);
        }
    }
    TriMesh::new(vertices, triangles, domain.clone())
}
