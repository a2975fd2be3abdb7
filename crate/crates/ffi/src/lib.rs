//! C ABI over `icefield`: meshes, exact Matérn-field posteriors from point
//! data, and config-driven runs.
//!
//! Every function returns an [`IcefieldStatus`]. Objects are opaque handles
//! created by `*_build`/`*_fit` and released with the matching `*_free`.
//! On failure a message is kept per thread; read it with
//! [`icefield_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use icefield::cholesky::SelectedInverse;
use icefield::gmrf::{condition, FactorCache};
use icefield::io::{execute, RunConfig};
use icefield::matern::{matern_cov, MaternParams};
use icefield::mesh::{build_mesh_with_margin, point_eval_matrix, Point, Polygon};
use icefield::observations::{point_operator, PointDesign, PointObs};
use icefield::processes::{stack, MeshModel, ProcessSpec};
use icefield::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcefieldStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad arguments or configuration.
    InvalidInput = 2,
    /// Factorisation or solver failure.
    Numerical = 3,
    Io = 4,
    /// An internal panic was caught.
    Panic = 5,
    /// An output buffer is shorter than required.
    BufferTooSmall = 6,
}

/// A triangular mesh with its finite-element matrices.
pub struct IcefieldMesh {
    model: Arc<MeshModel>,
}

/// Exact posterior of a zero-mean Matérn field given point data.
pub struct IcefieldPosterior {
    model: Arc<MeshModel>,
    mean: Vec<f64>,
    sel: SelectedInverse,
    log_marginal_likelihood: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Fail(IcefieldStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            3 => IcefieldStatus::Numerical,
            4 => IcefieldStatus::Io,
            _ => IcefieldStatus::InvalidInput,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: &str) -> Fail {
    Fail(IcefieldStatus::InvalidInput, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IcefieldStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (IcefieldStatus::Ok, String::new()),
        Ok(Err(Fail(s, m))) => (s, m),
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (IcefieldStatus::Panic, format!("internal error: {m}"))
        }
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(IcefieldStatus::NullPointer, "null handle or pointer".into()))
}

unsafe fn slice<'a, T>(p: *const T, n: usize) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(IcefieldStatus::NullPointer, "null array".into()));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail(IcefieldStatus::NullPointer, "null array".into()));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn points(xy: *const f64, n: usize) -> Result<Vec<Point>, Fail> {
    Ok(slice(xy, 2 * n)?.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
}

unsafe fn put<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(IcefieldStatus::NullPointer, "null output pointer".into()));
    }
    out.write(v);
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(IcefieldStatus::NullPointer, "null string".into()));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid("string is not UTF-8"))
}

fn check_len(have: usize, need: usize) -> Result<(), Fail> {
    if have < need {
        return Err(Fail(
            IcefieldStatus::BufferTooSmall,
            format!("buffer holds {have} values, {need} needed"),
        ));
    }
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full length including the
/// terminator, so a second call with a larger buffer can get all of it.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn icefield_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn icefield_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Meshes the polygon given by `n` vertices `(x0, y0, x1, y1, ...)` with
/// target edge length `edge` and an outer extension of width `margin`.
///
/// # Safety
/// `xy` must hold `2 n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icefield_mesh_build(
    xy: *const f64,
    n: usize,
    edge: f64,
    margin: f64,
    out: *mut *mut IcefieldMesh,
) -> IcefieldStatus {
    guard(|| {
        let poly = Polygon::new(points(xy, n)?)?;
        let mesh = build_mesh_with_margin(&poly, edge, margin)?;
        let handle = Box::new(IcefieldMesh {
            model: MeshModel::new("field", mesh),
        });
        put(out, Box::into_raw(handle))
    })
}

/// # Safety
/// `mesh` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icefield_mesh_n_vertices(mesh: *const IcefieldMesh, out: *mut usize) -> IcefieldStatus {
    guard(|| put(out, deref(mesh)?.model.n_vertices()))
}

/// Writes vertex coordinates as `(x, y)` pairs; `len` counts doubles.
///
/// # Safety
/// `mesh` must be a live handle; `xy` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn icefield_mesh_vertices(mesh: *const IcefieldMesh, xy: *mut f64, len: usize) -> IcefieldStatus {
    guard(|| {
        let v = deref(mesh)?.model.mesh.vertices();
        check_len(len, 2 * v.len())?;
        let buf = slice_mut(xy, 2 * v.len())?;
        for (c, p) in buf.chunks_exact_mut(2).zip(v) {
            c.copy_from_slice(p);
        }
        Ok(())
    })
}

/// # Safety
/// `mesh` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn icefield_mesh_free(mesh: *mut IcefieldMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Matérn (ν = 1) correlation at distance `d` for range `rho`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icefield_matern_correlation(rho: f64, d: f64, out: *mut f64) -> IcefieldStatus {
    guard(|| {
        if !(d >= 0.0) {
            return Err(invalid("distance must be non-negative"));
        }
        put(out, matern_cov(&MaternParams::spde(1.0, rho)?, d))
    })
}

/// Exact posterior of a zero-mean SPDE Matérn field (SD `sigma`, range
/// `rho`) on `mesh`, given `n_obs` noisy point values.
///
/// # Safety
/// `mesh` must be a live handle; `xy` must hold `2 n_obs` doubles, `values`
/// and `noise_sd` `n_obs` doubles each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icefield_posterior_fit(
    mesh: *const IcefieldMesh,
    sigma: f64,
    rho: f64,
    n_obs: usize,
    xy: *const f64,
    values: *const f64,
    noise_sd: *const f64,
    out: *mut *mut IcefieldPosterior,
) -> IcefieldStatus {
    guard(|| {
        let model = Arc::clone(&deref(mesh)?.model);
        let locs = points(xy, n_obs)?;
        let (vals, sds) = (slice(values, n_obs)?, slice(noise_sd, n_obs)?);
        let obs: Vec<PointObs> = (0..n_obs)
            .map(|i| PointObs {
                location: locs[i],
                value: vals[i],
                epoch: 0,
                covariates: Vec::new(),
                noise_sd: sds[i],
            })
            .collect();
        let spec = ProcessSpec::spatial_only("field", Arc::clone(&model), MaternParams::spde(sigma, rho)?, 1);
        let prior = stack(&[spec])?;
        let design = PointDesign {
            fixed_process: None,
            terms: Vec::new(),
            field_process: "field".into(),
        };
        let op = point_operator(&obs, &prior, &design)?;
        let post = condition(&prior.precision, &prior.mean, &op, &op.noise_var, &mut FactorCache::new())?;
        let handle = Box::new(IcefieldPosterior {
            model,
            sel: post.factor().selected_inverse(),
            log_marginal_likelihood: post.log_marginal_likelihood,
            mean: post.mean,
        });
        put(out, Box::into_raw(handle))
    })
}

/// # Safety
/// `post` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn icefield_posterior_log_marginal_likelihood(
    post: *const IcefieldPosterior,
    out: *mut f64,
) -> IcefieldStatus {
    guard(|| put(out, deref(post)?.log_marginal_likelihood))
}

/// Posterior mean and SD at every mesh vertex; either output may be null.
///
/// # Safety
/// `post` must be a live handle; non-null outputs must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn icefield_posterior_vertices(
    post: *const IcefieldPosterior,
    mean: *mut f64,
    sd: *mut f64,
    len: usize,
) -> IcefieldStatus {
    guard(|| {
        let p = deref(post)?;
        let n = p.mean.len();
        check_len(len, n)?;
        if !mean.is_null() {
            slice_mut(mean, n)?.copy_from_slice(&p.mean);
        }
        if !sd.is_null() {
            for (o, v) in slice_mut(sd, n)?.iter_mut().zip(p.sel.diagonal()) {
                *o = v.max(0.0).sqrt();
            }
        }
        Ok(())
    })
}

/// Posterior mean and SD at `n` points inside the mesh; `sd` may be null.
///
/// # Safety
/// `post` must be a live handle; `xy` must hold `2 n` doubles and `mean`
/// (and `sd` when non-null) `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn icefield_posterior_predict(
    post: *const IcefieldPosterior,
    n: usize,
    xy: *const f64,
    mean: *mut f64,
    sd: *mut f64,
) -> IcefieldStatus {
    guard(|| {
        let p = deref(post)?;
        let a = point_eval_matrix(&p.model.mesh, &points(xy, n)?)?;
        slice_mut(mean, n)?.copy_from_slice(&a.mul_vec(&p.mean));
        if !sd.is_null() {
            let out = slice_mut(sd, n)?;
            for (i, o) in out.iter_mut().enumerate() {
                let row: Vec<(usize, f64)> = a.row(i).collect();
                let mut var = 0.0;
                for &(j, wj) in &row {
                    for &(k, wk) in &row {
                        // Vertices of one triangle are neighbours, so
                        // every pair lies in the factor pattern.
                        var += wj * wk * p.sel.get(j, k).expect("triangle pair in pattern");
                    }
                }
                *o = var.max(0.0).sqrt();
            }
        }
        Ok(())
    })
}

/// # Safety
/// `post` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn icefield_posterior_free(post: *mut IcefieldPosterior) {
    if !post.is_null() {
        drop(Box::from_raw(post));
    }
}

/// Runs a config file as the command-line tool would, writing into
/// `out_dir`. `seed` overrides the file's seed when `use_seed` is true.
///
/// # Safety
/// `config_path` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn icefield_run_config(
    config_path: *const c_char,
    out_dir: *const c_char,
    use_seed: bool,
    seed: u64,
    threads: usize,
) -> IcefieldStatus {
    guard(|| {
        let cfg = RunConfig::load(Path::new(str_arg(config_path)?), use_seed.then_some(seed))?;
        execute(&cfg, Path::new(str_arg(out_dir)?), threads)?;
        Ok(())
    })
}
