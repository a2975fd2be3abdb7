use icefield::matern::MaternParams;
use icefield::transport::{generate_synthetic_truth, Boundary, Grid, TransportState, TruthConfig, VelocityField};
use std::f64::consts::PI;

/// L1 error of a advected sine wave after time `t` on `n` cells.
fn sine_error(n: usize, t: f64) -> f64 {
    let grid = Grid::new(n, 1, 1.0 / n as f64, [0.0, 0.0]).unwrap();
    let mut s = TransportState::new(grid, Boundary::Periodic);
    s.set_uniform_velocity(1.0, 0.0);
    let dx = grid.dx;
    // Exact cell averages of sin(2πx).
    let avg = |a: f64| ((2.0 * PI * a).cos() - (2.0 * PI * (a + dx)).cos()) / (2.0 * PI * dx);
    for i in 0..n {
        s.h[i] = 2.0 + avg(i as f64 * dx);
    }
    let steps = (t / (0.5 * dx)).round() as usize;
    let dt = t / steps as f64;
    for _ in 0..steps {
        s.step(dt).unwrap();
    }
    (0..n).map(|i| (s.h[i] - 2.0 - avg(i as f64 * dx - t)).abs() * dx).sum()
}

#[test]
fn first_order_convergence_under_grid_halving() {
    let e1 = sine_error(100, 0.25);
    let e2 = sine_error(200, 0.25);
    let e3 = sine_error(400, 0.25);
    for ratio in [e1 / e2, e2 / e3] {
        assert!((ratio - 2.0).abs() < 0.6, "ratio {ratio}");
    }
}

#[test]
fn bump_translates_and_decays() {
    let n = 64;
    let grid = Grid::new(n, n, 1.0 / n as f64, [0.0, 0.0]).unwrap();
    let mut s = TransportState::new(grid, Boundary::Periodic);
    let (u, v) = (0.5, 0.25);
    s.set_uniform_velocity(u, v);
    for (k, p) in grid.centres().iter().enumerate() {
        let r2 = (p[0] - 0.3).powi(2) + (p[1] - 0.3).powi(2);
        s.h[k] = (-r2 / 0.005).exp();
    }
    let t = 0.8;
    let steps = 200;
    let mut peak = f64::INFINITY;
    for _ in 0..steps {
        s.step(t / steps as f64).unwrap();
        let m = s.h.iter().cloned().fold(0.0, f64::max);
        assert!(m <= peak);
        peak = m;
    }
    let k = (0..s.h.len()).max_by(|&a, &b| s.h[a].total_cmp(&s.h[b])).unwrap();
    let p = grid.centres()[k];
    let want = [0.3 + u * t, 0.3 + v * t];
    assert!((p[0] - want[0]).abs() <= grid.dx && (p[1] - want[1]).abs() <= grid.dx, "{p:?} vs {want:?}");
}

fn truth_config(seed: u64) -> TruthConfig {
    TruthConfig {
        grid: Grid::new(20, 16, 0.05, [0.0, 0.0]).unwrap(),
        n_epochs: 3,
        epoch_length: 1.0,
        steps_per_epoch: 40,
        boundary: Boundary::FreeFlux,
        velocity: VelocityField::Spreading { speed: 0.5 },
        dome_height: 1.0,
        smb: Some((MaternParams::spde(0.3, 0.3).unwrap(), 0.5)),
        firn: Some((MaternParams::spde(0.1, 0.3).unwrap(), 0.5)),
        gia: Some(MaternParams::spde(0.05, 0.8).unwrap()),
        mesh_edge: 0.1,
        seed,
    }
}

#[test]
fn altimetry_truth_is_the_sum_of_processes() {
    let t = generate_synthetic_truth(&truth_config(3)).unwrap();
    for e in 0..3 {
        for k in 0..t.gia.values.len() {
            let sum = t.smb[e].values[k] + t.firn[e].values[k] + t.ice[e].values[k] + t.gia.values[k];
            assert_eq!(t.altimetry[e].values[k], sum);
        }
    }
    assert!(t.ice.iter().any(|f| f.values.iter().any(|v| v.abs() > 1e-6)));
}

#[test]
fn synthetic_truth_is_reproducible() {
    let a = generate_synthetic_truth(&truth_config(9)).unwrap();
    let b = generate_synthetic_truth(&truth_config(9)).unwrap();
    let c = generate_synthetic_truth(&truth_config(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}
