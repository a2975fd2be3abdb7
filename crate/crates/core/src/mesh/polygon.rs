use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// A simple polygon, stored counter-clockwise and closed implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::invalid("polygon needs at least three vertices"));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("polygon has non-finite coordinates"));
        }
        let area = signed_area(&vertices);
        let (lo, hi) = bbox(&vertices);
        let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        if area.abs() <= 1e-14 * scale * scale || scale == 0.0 {
            return Err(Error::invalid("degenerate polygon (zero area)"));
        }
        if let Some((a, b)) = first_self_intersection(&vertices) {
            return Err(Error::invalid(format!(
                "polygon is not simple: edges {a} and {b} intersect"
            )));
        }
        if area < 0.0 {
            vertices.reverse();
        }
        Ok(Self { vertices })
    }

    pub fn rectangle(lo: Point, hi: Point) -> Result<Self> {
        Self::new(vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]])
    }

    pub fn unit_square() -> Self {
        Self::rectangle([0.0, 0.0], [1.0, 1.0]).expect("unit square is valid")
    }

    /// Regular `n`-gon inscribed in the circle of the given centre and radius.
    pub fn regular(centre: Point, radius: f64, n: usize) -> Result<Self> {
        let pts = (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                [centre[0] + radius * a.cos(), centre[1] + radius * a.sin()]
            })
            .collect();
        Self::new(pts)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn centroid(&self) -> Point {
        polygon_centroid(&self.vertices).expect("valid polygon has nonzero area")
    }

    pub fn bbox(&self) -> (Point, Point) {
        bbox(&self.vertices)
    }

    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for a in &self.vertices {
            for b in &self.vertices {
                d = d.max(dist(*a, *b));
            }
        }
        d
    }

    /// Even-odd containment; points on the boundary count as inside.
    pub fn contains(&self, p: Point) -> bool {
        let (lo, hi) = self.bbox();
        let tol = 1e-12 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
        if self.edges().any(|(a, b)| point_segment_distance(p, a, b) <= tol) {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// True when the closed axis-aligned rectangle meets the polygon.
    pub fn intersects_rect(&self, lo: Point, hi: Point) -> bool {
        let in_rect = |p: Point| p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1];
        if self.vertices.iter().any(|&p| in_rect(p)) {
            return true;
        }
        let corners = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
        if corners.iter().any(|&c| self.contains(c)) {
            return true;
        }
        self.edges().any(|(a, b)| {
            (0..4).any(|k| segments_intersect(a, b, corners[k], corners[(k + 1) % 4]))
        })
    }

    /// Intersection with an axis-aligned rectangle (Sutherland-Hodgman).
    /// The result may contain zero-width slivers for non-convex polygons;
    /// its area and centroid are still exact.
    pub fn clip_to_rect(&self, lo: Point, hi: Point) -> Vec<Point> {
        let mut poly = self.vertices.clone();
        let planes: [(usize, f64, bool); 4] =
            [(0, lo[0], true), (0, hi[0], false), (1, lo[1], true), (1, hi[1], false)];
        for (axis, bound, keep_greater) in planes {
            if poly.is_empty() {
                break;
            }
            let inside = |p: &Point| {
                if keep_greater {
                    p[axis] >= bound
                } else {
                    p[axis] <= bound
                }
            };
            let mut out = Vec::with_capacity(poly.len() + 4);
            for i in 0..poly.len() {
                let cur = poly[i];
                let prev = poly[(i + poly.len() - 1) % poly.len()];
                let (ci, pi) = (inside(&cur), inside(&prev));
                if ci != pi {
                    let t = (bound - prev[axis]) / (cur[axis] - prev[axis]);
                    let mut x = [prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])];
                    x[axis] = bound;
                    out.push(x);
                }
                if ci {
                    out.push(cur);
                }
            }
            poly = out;
        }
        poly
    }
}

pub fn signed_area(pts: &[Point]) -> f64 {
    let n = pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

/// Area-weighted centroid, `None` for (near) zero area.
pub fn polygon_centroid(pts: &[Point]) -> Option<Point> {
    let n = pts.len();
    if n < 3 {
        return None;
    }
    // Shift to the first vertex to limit cancellation.
    let o = pts[0];
    let (mut a2, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let p = [pts[i][0] - o[0], pts[i][1] - o[1]];
        let q = [pts[(i + 1) % n][0] - o[0], pts[(i + 1) % n][1] - o[1]];
        let cross = p[0] * q[1] - q[0] * p[1];
        a2 += cross;
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    if a2.abs() < 1e-300 {
        return None;
    }
    Some([o[0] + cx / (3.0 * a2), o[1] + cy / (3.0 * a2)])
}

pub fn bbox(pts: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    dist(p, [a[0] + t * d[0], a[1] + t * d[1]])
}

/// Closed-segment intersection test, touching endpoints included.
pub fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |p: Point, q: Point, r: Point| {
        r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
    };
    (d1 == 0.0 && on(c, d, a))
        || (d2 == 0.0 && on(c, d, b))
        || (d3 == 0.0 && on(a, b, c))
        || (d4 == 0.0 && on(a, b, d))
}

fn first_self_intersection(pts: &[Point]) -> Option<(usize, usize)> {
    let n = pts.len();
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        if a == b {
            return Some((i, i));
        }
        for j in i + 1..n {
            // Adjacent edges share exactly one endpoint.
            if j == i + 1 || (i == 0 && j == n - 1) {
                let (c, d) = (pts[j], pts[(j + 1) % n]);
                let shared = if j == i + 1 { b } else { a };
                let other = if j == i + 1 { d } else { c };
                let mine = if j == i + 1 { a } else { b };
                // Collinear back-tracking overlaps the neighbour.
                if cross(mine, shared, other) == 0.0
                    && (other[0] - shared[0]) * (mine[0] - shared[0]) + (other[1] - shared[1]) * (mine[1] - shared[1]) > 0.0
                {
                    return Some((i, j));
                }
                continue;
            }
            if segments_intersect(a, b, pts[j], pts[(j + 1) % n]) {
                return Some((i, j));
            }
        }
    }
    None
}
