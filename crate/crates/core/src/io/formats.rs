//! Delimited-text formats for meshes, polygons, observations, grids,
//! score tables and chains.
//!
//! Floats are written in shortest round-trip form, so a write followed by a
//! read reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmrf::Chain;
use crate::mesh::{Footprint, Point, Polygon, TriMesh};
use crate::observations::{FootprintObs, Instrument, PointObs};
use crate::transport::{Grid, GridField};

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn floats(path: &Path, line: usize, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| parse_err(path, line, format!("'{}' is not a number", t.trim())))
        })
        .collect()
}

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 12);
    for (k, v) in values.iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

/// `x,y` header then one vertex per line.
pub fn polygon_to_string(poly: &Polygon) -> String {
    let mut s = String::from("x,y\n");
    for p in poly.vertices() {
        writeln!(s, "{},{}", p[0], p[1]).unwrap();
    }
    s
}

pub fn write_polygon(path: &Path, poly: &Polygon) -> Result<()> {
    write_text(path, &polygon_to_string(poly))
}

pub fn read_polygon(path: &Path) -> Result<Polygon> {
    let text = read_text(path)?;
    let mut pts = Vec::new();
    for (n, line) in content_lines(&text) {
        if line.eq_ignore_ascii_case("x,y") {
            continue;
        }
        let v = floats(path, n, line)?;
        if v.len() != 2 {
            return Err(parse_err(path, n, "expected two columns x,y"));
        }
        pts.push([v[0], v[1]]);
    }
    Polygon::new(pts).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// Sections `vertices,N` / `triangles,M` / `domain,K`, each followed by its
/// rows.
pub fn mesh_to_string(mesh: &TriMesh) -> String {
    let mut s = String::new();
    writeln!(s, "vertices,{}", mesh.n_vertices()).unwrap();
    for v in mesh.vertices() {
        writeln!(s, "{},{}", v[0], v[1]).unwrap();
    }
    writeln!(s, "triangles,{}", mesh.n_triangles()).unwrap();
    for t in mesh.triangles() {
        writeln!(s, "{},{},{}", t[0], t[1], t[2]).unwrap();
    }
    let dom = mesh.domain().vertices();
    writeln!(s, "domain,{}", dom.len()).unwrap();
    for p in dom {
        writeln!(s, "{},{}", p[0], p[1]).unwrap();
    }
    s
}

pub fn write_mesh(path: &Path, mesh: &TriMesh) -> Result<()> {
    write_text(path, &mesh_to_string(mesh))
}

pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let mut section = |name: &str, width: usize| -> Result<Vec<Vec<f64>>> {
        let (n, head) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, format!("missing '{name}' section")))?;
        let count = head
            .strip_prefix(name)
            .and_then(|r| r.strip_prefix(','))
            .and_then(|c| c.trim().parse::<usize>().ok())
            .ok_or_else(|| parse_err(path, n, format!("expected '{name},<count>'")))?;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = lines
                .next()
                .ok_or_else(|| parse_err(path, n, format!("'{name}' section ends early")))?;
            let v = floats(path, n, line)?;
            if v.len() != width {
                return Err(parse_err(path, n, format!("expected {width} columns")));
            }
            rows.push(v);
        }
        Ok(rows)
    };
    let verts: Vec<Point> = section("vertices", 2)?.into_iter().map(|v| [v[0], v[1]]).collect();
    let mut tris = Vec::new();
    for v in section("triangles", 3)? {
        if v.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
            return Err(parse_err(path, 0, "triangle indices must be non-negative integers"));
        }
        tris.push([v[0] as usize, v[1] as usize, v[2] as usize]);
    }
    let dom: Vec<Point> = section("domain", 2)?.into_iter().map(|v| [v[0], v[1]]).collect();
    let domain = Polygon::new(dom).map_err(|e| parse_err(path, 0, e.to_string()))?;
    TriMesh::new(verts, tris, domain).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// `x,y,epoch,value,noise_sd,cov0,cov1,...`
pub fn point_obs_to_string(obs: &[PointObs]) -> Result<String> {
    let k = obs.iter().map(|o| o.covariates.len()).max().unwrap_or(0);
    let mut s = String::from("x,y,epoch,value,noise_sd");
    for c in 0..k {
        write!(s, ",cov{c}").unwrap();
    }
    s.push('\n');
    for o in obs {
        if o.covariates.len() != k {
            return Err(Error::invalid("point observations have differing covariate counts"));
        }
        write!(s, "{},{},{},{},{}", o.location[0], o.location[1], o.epoch, o.value, o.noise_sd).unwrap();
        for c in &o.covariates {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn write_point_obs(path: &Path, obs: &[PointObs]) -> Result<()> {
    write_text(path, &point_obs_to_string(obs)?)
}

pub fn read_point_obs(path: &Path) -> Result<Vec<PointObs>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut width = None;
    for (n, line) in content_lines(&text) {
        if line.starts_with("x,") {
            width = Some(line.split(',').count());
            continue;
        }
        let v = floats(path, n, line)?;
        if v.len() < 5 || width.is_some_and(|w| w != v.len()) {
            return Err(parse_err(path, n, "row width differs from the header"));
        }
        if v[2] < 0.0 || v[2].fract() != 0.0 {
            return Err(parse_err(path, n, "epoch must be a non-negative integer"));
        }
        out.push(PointObs {
            location: [v[0], v[1]],
            epoch: v[2] as usize,
            value: v[3],
            noise_sd: v[4],
            covariates: v[5..].to_vec(),
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct FootprintRow {
    instrument: Instrument,
    epoch: usize,
    value: f64,
    noise_sd: f64,
    cell_side: f64,
    /// `x y;x y;...`
    polygon: String,
}

/// `instrument,epoch,value,noise_sd,cell_side,polygon` with the polygon as
/// `x y;x y;...`.
pub fn write_footprint_obs(path: &Path, obs: &[FootprintObs], cell_side: f64) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for o in obs {
        let polygon = o
            .footprint
            .region
            .vertices()
            .iter()
            .map(|p| format!("{} {}", p[0], p[1]))
            .collect::<Vec<_>>()
            .join(";");
        w.serialize(FootprintRow {
            instrument: o.instrument,
            epoch: o.epoch,
            value: o.value,
            noise_sd: o.noise_sd,
            cell_side,
            polygon,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_footprint_obs(path: &Path) -> Result<Vec<FootprintObs>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out = Vec::new();
    for (k, row) in r.deserialize::<FootprintRow>().enumerate() {
        let line = k + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        let mut pts = Vec::new();
        for pair in row.polygon.split(';') {
            let xy: Vec<f64> = pair
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(path, line, format!("bad coordinate '{t}'"))))
                .collect::<Result<_>>()?;
            if xy.len() != 2 {
                return Err(parse_err(path, line, "polygon vertices need two coordinates"));
            }
            pts.push([xy[0], xy[1]]);
        }
        let region = Polygon::new(pts).map_err(|e| parse_err(path, line, e.to_string()))?;
        let footprint = Footprint::new(region, row.cell_side).map_err(|e| parse_err(path, line, e.to_string()))?;
        out.push(FootprintObs {
            footprint,
            value: row.value,
            epoch: row.epoch,
            instrument: row.instrument,
            noise_sd: row.noise_sd,
        });
    }
    Ok(out)
}

/// Two header lines `nx,ny,dx,x0,y0` and their values, then `ny` rows of
/// `nx` values starting from the row nearest the origin. Missing cells are
/// `NaN`.
pub fn grid_to_string(field: &GridField) -> String {
    let g = field.grid;
    let mut s = String::with_capacity(field.values.len() * 12 + 64);
    writeln!(s, "nx,ny,dx,x0,y0\n{},{},{},{},{}", g.nx, g.ny, g.dx, g.origin[0], g.origin[1]).unwrap();
    for row in field.values.chunks(g.nx) {
        s.push_str(&join(row));
        s.push('\n');
    }
    s
}

pub fn write_grid(path: &Path, field: &GridField) -> Result<()> {
    write_text(path, &grid_to_string(field))
}

pub fn read_grid(path: &Path) -> Result<GridField> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == "nx,ny,dx,x0,y0" => {}
        _ => return Err(parse_err(path, 1, "expected header 'nx,ny,dx,x0,y0'")),
    }
    let (n, head) = lines.next().ok_or_else(|| parse_err(path, 2, "missing grid geometry"))?;
    let h = floats(path, n, head)?;
    if h.len() != 5 || h[0] < 1.0 || h[1] < 1.0 || h[0].fract() != 0.0 || h[1].fract() != 0.0 {
        return Err(parse_err(path, n, "grid geometry must be nx,ny,dx,x0,y0"));
    }
    let grid = Grid::new(h[0] as usize, h[1] as usize, h[2], [h[3], h[4]]).map_err(|e| parse_err(path, n, e.to_string()))?;
    let mut values = Vec::with_capacity(grid.len());
    let mut rows = 0;
    for (n, line) in lines {
        let v = floats(path, n, line)?;
        if v.len() != grid.nx {
            return Err(parse_err(path, n, format!("expected {} values, found {}", grid.nx, v.len())));
        }
        values.extend(v);
        rows += 1;
    }
    if rows != grid.ny {
        return Err(parse_err(path, 0, format!("expected {} rows, found {rows}", grid.ny)));
    }
    Ok(GridField { grid, values })
}

/// `chain,iteration,log_posterior,<names...>` in natural units.
pub fn chains_to_string(chains: &[Chain]) -> String {
    let mut s = String::from("chain,iteration,log_posterior");
    if let Some(c) = chains.first() {
        for n in &c.names {
            write!(s, ",{n}").unwrap();
        }
    }
    s.push('\n');
    for (c, chain) in chains.iter().enumerate() {
        for (i, (theta, lp)) in chain.theta.iter().zip(&chain.log_posterior).enumerate() {
            writeln!(s, "{c},{i},{lp},{}", join(theta)).unwrap();
        }
    }
    s
}

/// One row of a truth file read by the scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    /// Unit the score is aggregated over, e.g. a vertex of one process.
    pub group: String,
    /// Replicate within the group, e.g. an epoch.
    pub item: String,
    pub value: f64,
}

/// One row of a prediction file read by the scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub group: String,
    pub item: String,
    pub mean: f64,
    pub sd: f64,
    /// Prior predictive SD, or `NaN` when not available.
    pub prior_sd: f64,
}

pub fn write_records<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    fs::write(path, records_to_bytes(rows)?).map_err(|e| Error::io(path, e))
}

pub fn records_to_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(k, row)| row.map_err(|e| parse_err(path, k + 2, e.to_string())))
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if let csv::ErrorKind::Io(_) = e.kind() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        parse_err(path, 0, e.to_string())
    }
}
