//! Seeded end-to-end studies on synthetic truth: per-season glacier surface
//! mass balance prediction, and joint multi-instrument separation of
//! elevation-rate processes.

pub mod rates;
pub mod scorer;
pub mod smb;

pub use rates::{run_rates_study, RatesReport, RatesStudyConfig};
pub use scorer::{score_files, score_pair, Scores};
pub use smb::{run_smb_study, SmbReport, SmbStudyConfig};

use crate::mesh::{Point, Polygon};

/// SplitMix64 of `seed` and `tag`: independent seeds for sub-jobs.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `f(0..n)` on up to `threads` scoped threads, results in index order.
pub fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, threads: usize, f: F) -> Vec<T> {
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads.min(n))
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if k >= n {
                            break;
                        }
                        done.push((k, f(k)));
                    }
                    done
                })
            })
            .collect();
        for h in handles {
            for (k, v) in h.join().expect("worker thread panicked") {
                out[k] = Some(v);
            }
        }
    });
    out.into_iter().map(|v| v.expect("every job ran")).collect()
}

/// A lobed outline inside the unit square, loosely shaped like an ice cap
/// with outlet lobes.
pub fn glacier_outline() -> Vec<Point> {
    let n = 60;
    (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            let r = 0.3 * (1.0 + 0.14 * (3.0 * a).cos() + 0.07 * (5.0 * a + 0.6).sin());
            [0.5 + 1.25 * r * a.cos(), 0.5 + 0.95 * r * a.sin()]
        })
        .collect()
}

pub fn glacier_polygon() -> Polygon {
    Polygon::new(glacier_outline()).expect("outline is simple")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outline_fits_the_unit_square() {
        let p = glacier_polygon();
        let (lo, hi) = p.bbox();
        assert!(lo[0] > 0.0 && lo[1] > 0.0 && hi[0] < 1.0 && hi[1] < 1.0);
        assert!(p.area() > 0.2);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let a = parallel_map(17, 4, |k| k * k);
        assert_eq!(a, (0..17).map(|k| k * k).collect::<Vec<_>>());
        assert_ne!(derive_seed(1, 2), derive_seed(2, 1));
    }
}
