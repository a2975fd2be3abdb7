//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p icefield --test acceptance` runs all eight. Set
//! `ICEFIELD_ACCEPTANCE=1,5` to run a subset.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use icefield::cholesky::Cholesky;
use icefield::experiments::scorer::{score_files, score_pair};
use icefield::experiments::smb::{run_smb_study, SamplerSettings, SmbReport, SmbStudyConfig};
use icefield::gmrf::{condition, gaugau_exact, gaussian_condition, FactorCache, HyperParam, MarginalMethod, MwgSettings, StackedModel};
use icefield::gmrf::mwg_sample;
use icefield::io::formats::write_records;
use icefield::io::{execute, Manifest, RunConfig};
use icefield::matern::{MaternParams, PcPrior};
use icefield::mesh::{build_mesh, build_mesh_with_margin, dist, Footprint, Polygon};
use icefield::observations::{
    footprint_operator, point_operator, Densities, FootprintObs, Instrument, InstrumentMask, ObsOperator, PointDesign,
    PointObs, RateProcessIds,
};
use icefield::processes::{ar1_joint_precision, stack, stack_blocks, Component, MeshModel, PriorBlock, ProcessSpec, Slot};
use icefield::sparse::{CsrMatrix, TripletBuilder};
use icefield::seeded_rng;
use icefield::transport::{Boundary, Grid, TransportState};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

// 1. SPDE correlation at distance ρ against √8 K₁(√8).

/// `√8 K₁(√8)`, frozen from an arbitrary-precision Bessel evaluation.
const MATERN_CORR_AT_RANGE: f64 = 0.139_667_474_015_293_1;

fn spde_vs_analytic() -> Outcome {
    let start = Instant::now();
    // The mesh extends one range beyond the unit square on every side.
    let rho = 1.0;
    let mesh = build_mesh(&Polygon::unit_square(), 0.05, 1.0).unwrap();
    let model = MeshModel::new("m", mesh);
    let q = model.spde.precision(&MaternParams::spde(1.0, rho).unwrap());
    let chol = Cholesky::new(&q).unwrap();
    let v = model.mesh.vertices();
    let nearest = |p: [f64; 2]| (0..v.len()).min_by(|&i, &j| dist(v[i], p).total_cmp(&dist(v[j], p))).unwrap();
    // Columns of Q⁻¹ by direct solves: the exact columns of the dense inverse.
    let column = |i: usize| {
        let mut e = vec![0.0; v.len()];
        e[i] = 1.0;
        chol.solve(&e)
    };
    let pairs = [
        ([0.0, 0.5], [1.0, 0.5]),
        ([0.5, 0.0], [0.5, 1.0]),
        ([0.0, 0.0], [1.0, 0.0]),
        ([0.0, 1.0], [1.0, 1.0]),
        ([0.0, 0.0], [0.0, 1.0]),
        ([1.0, 0.0], [1.0, 1.0]),
    ];
    let mut worst = 0.0f64;
    let mut corrs = Vec::new();
    for (a, b) in pairs {
        let (i, k) = (nearest(a), nearest(b));
        assert!((dist(v[i], v[k]) - rho).abs() < 1e-12, "no vertex pair at distance rho");
        let ci = column(i);
        let corr = ci[k] / (ci[i] * column(k)[k]).sqrt();
        worst = worst.max((corr / MATERN_CORR_AT_RANGE - 1.0).abs());
        corrs.push(corr);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 0.10 && secs < 10.0,
        format!(
            "corr at d = rho = 1 over {} vertex pairs {:.4}..{:.4} vs {:.4}, max rel err {:.1}% (tol 10%); {} vertices, {:.1} s (limit 10 s)",
            pairs.len(),
            corrs.iter().cloned().fold(f64::INFINITY, f64::min),
            corrs.iter().cloned().fold(0.0, f64::max),
            MATERN_CORR_AT_RANGE,
            100.0 * worst,
            v.len(),
            secs
        ),
    )
}

// 2. Sparse conditioning against the dense normal-normal update.

fn rates_prior(edge: f64, t: usize) -> icefield::processes::StackedPrior {
    let m = MeshModel::new("m", build_mesh(&Polygon::unit_square(), edge, 0.0).unwrap());
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

fn random_instance(k: u64) -> (icefield::processes::StackedPrior, ObsOperator) {
    let mut rng = seeded_rng(1000 + k);
    if k % 2 == 0 {
        let n = rng.random_range(50..=300);
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0 + rng.random::<f64>());
            for _ in 0..3 {
                let j = rng.random_range(0..n);
                if j != i {
                    let v = 0.3 * (rng.random::<f64>() - 0.5);
                    t.push(i, j, v);
                    t.push(j, i, v);
                }
            }
        }
        let block = PriorBlock {
            slots: (0..n)
                .map(|index| Slot {
                    process: 0,
                    component: Component::Fixed,
                    time: None,
                    index,
                })
                .collect(),
            precision: t.build(),
        };
        let spec = ProcessSpec::fixed_effects("x", vec![1.0; n]);
        let mut prior = stack_blocks(vec![spec], vec![block]).unwrap();
        prior.mean = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let m = rng.random_range(10..=n / 2);
        let mut h = TripletBuilder::new(m, n);
        for r in 0..m {
            for _ in 0..4 {
                h.push(r, rng.random_range(0..n), rng.random::<f64>() - 0.3);
            }
            h.push(r, r, 1.0);
        }
        let op = ObsOperator {
            h: h.build(),
            noise_var: (0..m).map(|_| 0.05 + rng.random::<f64>()).collect(),
            offset: (0..m).map(|_| 0.1 * rng.random::<f64>()).collect(),
            values: (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        };
        (prior, op)
    } else {
        let prior = rates_prior(1.0 / 3.0, 3);
        let mask = InstrumentMask::elevation_rates(&RateProcessIds::default(), &Densities::default());
        let obs: Vec<FootprintObs> = (0..40)
            .map(|_| {
                let (x, y) = (0.8 * rng.random::<f64>(), 0.8 * rng.random::<f64>());
                let w = 0.05 + 0.15 * rng.random::<f64>();
                FootprintObs {
                    footprint: Footprint::new(Polygon::rectangle([x, y], [x + w, y + w]).unwrap(), 0.05).unwrap(),
                    value: rng.sample(StandardNormal),
                    epoch: rng.random_range(0..3),
                    instrument: Instrument::ALL[rng.random_range(0..3)],
                    noise_sd: 0.1 + rng.random::<f64>(),
                }
            })
            .collect();
        let op = footprint_operator(&obs, &mask, &prior).unwrap();
        (prior, op)
    }
}

fn dense_oracle() -> Outcome {
    let start = Instant::now();
    let (mut worst_mean, mut worst_cov, mut worst_sd, mut largest) = (0.0f64, 0.0f64, 0.0f64, 0);
    for k in 0..20 {
        let (prior, op) = random_instance(k);
        let n = prior.len();
        largest = largest.max(n);
        assert!(n <= 300);
        let res = gaussian_condition(&prior, &op, MarginalMethod::SelectedInverse).unwrap();
        let post = condition(&prior.precision, &prior.mean, &op, &op.noise_var, &mut FactorCache::new()).unwrap();
        let sigma_p = prior.precision.to_dense().try_inverse().unwrap();
        let r = DMatrix::from_diagonal(&DVector::from_vec(op.noise_var.clone()));
        let x = DVector::from_vec(op.values.iter().zip(&op.offset).map(|(z, o)| z - o).collect());
        let (mu, sigma) = gaugau_exact(&DVector::from_column_slice(&prior.mean), &sigma_p, &op.h.to_dense(), &r, &x).unwrap();
        for i in 0..n {
            worst_mean = worst_mean.max((res.mean[i] - mu[i]).abs());
            worst_sd = worst_sd.max((res.marginal_sd[i] - sigma[(i, i)].sqrt()).abs());
        }
        worst_cov = worst_cov.max((post.covariance_dense() - &sigma).abs().max());
    }
    let secs = start.elapsed().as_secs_f64();
    let tol = 1e-8;
    outcome(
        worst_mean <= tol && worst_cov <= tol && worst_sd <= tol && secs < 30.0,
        format!(
            "20 instances (N <= {largest}): max |mean| err {worst_mean:.1e}, max |cov| err {worst_cov:.1e}, max |sd| err {worst_sd:.1e} (tol 1e-8); {secs:.1} s (limit 30 s)"
        ),
    )
}

// 3. AR(1) joint precision.

fn ar1_moments() -> Outcome {
    let mut scalar_err = 0.0f64;
    for a in [-0.7, 0.0, 0.3, 0.5, 0.9] {
        let cov = ar1_joint_precision(&CsrMatrix::identity(1), &[a], 6).unwrap().to_dense().try_inverse().unwrap();
        for t in 0..6 {
            scalar_err = scalar_err.max((cov[(t, t)] - 1.0 / (1.0 - a * a)).abs());
            if t > 0 {
                scalar_err = scalar_err.max((cov[(t, t - 1)] - a / (1.0 - a * a)).abs());
            }
        }
    }

    // Ten vertices, varying coefficient, three epochs.
    let mesh = build_mesh(&Polygon::rectangle([0.0, 0.0], [4.0, 1.0]).unwrap(), 1.0, 0.0).unwrap();
    let model = MeshModel::new("m", mesh);
    let n = model.n_vertices();
    assert_eq!(n, 10);
    let t_len = 3;
    let a: Vec<f64> = model.mesh.vertices().iter().map(|v| 0.1 + 0.2 * v[0] - 0.2 * v[1]).collect();
    let q_w = model.spde.precision(&MaternParams::spde(1.0, 2.0).unwrap());
    let cov = ar1_joint_precision(&q_w, &a, t_len).unwrap().to_dense().try_inverse().unwrap();
    // Monte Carlo of the recursion with innovations from a dense factor of Q_w⁻¹.
    let l = q_w.to_dense().try_inverse().unwrap().cholesky().unwrap().l();
    let d: Vec<f64> = a.iter().map(|x| 1.0 / (1.0 - x * x).sqrt()).collect();
    let draws = 1_000_000usize;
    let mut rng = seeded_rng(77);
    let (mut var_last, mut lag) = (vec![0.0; n], vec![0.0; n]);
    let mut z = DVector::zeros(n);
    let mut innov = |rng: &mut icefield::SeededRng| {
        for zi in z.iter_mut() {
            *zi = rng.sample::<f64, _>(StandardNormal);
        }
        &l * &z
    };
    for _ in 0..draws {
        let w0 = innov(&mut rng);
        let mut x: Vec<f64> = (0..n).map(|i| d[i] * w0[i]).collect();
        let mut prev = x.clone();
        for _ in 1..t_len {
            let w = innov(&mut rng);
            prev.copy_from_slice(&x);
            for i in 0..n {
                x[i] = a[i] * prev[i] + w[i];
            }
        }
        for i in 0..n {
            var_last[i] += x[i] * x[i];
            lag[i] += x[i] * prev[i];
        }
    }
    let nd = draws as f64;
    let last = (t_len - 1) * n;
    let before = (t_len - 2) * n;
    let mut worst_z = 0.0f64;
    for i in 0..n {
        let s_ii = cov[(last + i, last + i)];
        let s_pp = cov[(before + i, before + i)];
        let s_ip = cov[(last + i, before + i)];
        let z_var = (var_last[i] / nd - s_ii).abs() / (2.0 * s_ii * s_ii / nd).sqrt();
        let z_lag = (lag[i] / nd - s_ip).abs() / ((s_ii * s_pp + s_ip * s_ip) / nd).sqrt();
        worst_z = worst_z.max(z_var).max(z_lag);
    }
    outcome(
        scalar_err <= 1e-10 && worst_z <= 3.0,
        format!(
            "scalar variance/lag-1 max err {scalar_err:.1e} (tol 1e-10); spatial 10-vertex varying-a, 1e6 draws: worst of 20 moments {worst_z:.2} SE (tol 3 SE)"
        ),
    )
}

// 4. Hyperparameter interval coverage of the Metropolis-within-Gibbs sampler.

fn mwg_calibration() -> Outcome {
    let (sigma, rho) = (1.0, 0.3);
    let mesh = build_mesh_with_margin(&Polygon::unit_square(), 0.07, 0.3).unwrap();
    let model = MeshModel::new("m", mesh);
    let truth_chol = Cholesky::new(&model.spde.precision(&MaternParams::spde(sigma, rho).unwrap())).unwrap();
    let prior = PcPrior::new(0.1, 0.05, 2.0, 0.05).unwrap();
    let (mut cover_rho, mut cover_sigma, mut slowest) = (0, 0, 0.0f64);
    let reps = 20;
    for r in 0..reps {
        let start = Instant::now();
        let mut rng = seeded_rng(500 + r);
        let u = truth_chol.sample_zero_mean(&mut rng);
        let sites: Vec<[f64; 2]> = (0..200).map(|_| [rng.random(), rng.random()]).collect();
        let at = icefield::mesh::point_eval_matrix(&model.mesh, &sites).unwrap().mul_vec(&u);
        let obs: Vec<PointObs> = sites
            .iter()
            .zip(&at)
            .map(|(s, v)| PointObs {
                location: *s,
                value: v + 0.1 * rng.sample::<f64, _>(StandardNormal),
                epoch: 0,
                covariates: vec![],
                noise_sd: 0.1,
            })
            .collect();
        let specs = vec![ProcessSpec::spatial_only(
            "u",
            model.clone(),
            MaternParams::spde(prior.median_sigma(), prior.median_range()).unwrap(),
            1,
        )];
        let design = PointDesign {
            fixed_process: None,
            terms: vec![],
            field_process: "u".into(),
        };
        let op = point_operator(&obs, &stack(&specs).unwrap(), &design).unwrap();
        let hm = StackedModel::new(specs, op, vec![HyperParam::Matern { process: "u".into(), prior }]).unwrap();
        let settings = MwgSettings {
            n_iter: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 9000 + r,
            latent_draws: false,
        };
        let chain = mwg_sample(&hm, &settings).unwrap();
        let ci = |k: usize| {
            let mut c = chain.column(k);
            c.sort_by(f64::total_cmp);
            let q = |p: f64| c[((c.len() - 1) as f64 * p).round() as usize];
            (q(0.05), q(0.95))
        };
        let (r_lo, r_hi) = ci(0);
        let (s_lo, s_hi) = ci(1);
        cover_rho += (r_lo <= rho && rho <= r_hi) as usize;
        cover_sigma += (s_lo <= sigma && sigma <= s_hi) as usize;
        slowest = slowest.max(start.elapsed().as_secs_f64());
    }
    // At nominal 90% coverage, P(at least 16 of 20) = 0.957.
    let need = 16;
    outcome(
        cover_rho >= need && cover_sigma >= need && slowest < 60.0,
        format!(
            "90% intervals cover rho {cover_rho}/{reps}, sigma {cover_sigma}/{reps} (need >= {need}); slowest fit {slowest:.1} s (limit 60 s)"
        ),
    )
}

// 5. SMB study.

fn score_records(dir: &Path, name: &str, report: &SmbReport, grid: bool) -> (std::path::PathBuf, std::path::PathBuf) {
    let (t, p) = (dir.join(format!("{name}_truth.csv")), dir.join(format!("{name}_prediction.csv")));
    if grid {
        write_records(&t, &report.grid_truth).unwrap();
        write_records(&p, &report.grid_prediction).unwrap();
    } else {
        write_records(&t, &report.holdout_truth).unwrap();
        write_records(&p, &report.holdout_prediction).unwrap();
    }
    (t, p)
}

fn smb_study() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let base = SmbStudyConfig::default();

    let mut noiseless = SmbStudyConfig {
        n_years: 2,
        resolution_m: 500.0,
        noise_sd: 1e-9,
        estimate_hyperparameters: false,
        score_grid: true,
        prediction_draws: 2,
        ..base.clone()
    };
    for s in [&mut noiseless.winter, &mut noiseless.summer] {
        s.sigma = 0.0;
        s.beta[1] = 0.0;
        s.beta[2] = 0.0;
        s.beta_sd = [0.1, 0.0, 0.0, 1e-4];
    }
    let report = run_smb_study(&noiseless, 1, 1).unwrap();
    let (t, p) = score_records(tmp.path(), "noiseless", &report, true);
    let rmse = score_pair(&t, &p).unwrap().rmse;

    let noisy = SmbStudyConfig {
        n_years: 1,
        resolution_m: 1000.0,
        sampler: SamplerSettings {
            n_iter: 300,
            burn_in: 200,
            thin: 1,
        },
        prediction_draws: 100,
        ..base
    };
    let mut pairs = Vec::new();
    let (mut net_ok, mut nets, mut failures) = (true, 0, 0);
    for seed in 0..50 {
        let report = run_smb_study(&noisy, 100 + seed, 1).unwrap();
        failures += report.failures.len();
        for net in &report.net {
            let w = report.fits.iter().find(|f| f.year == net.year && f.season.to_string() == "winter").unwrap();
            let s = report.fits.iter().find(|f| f.year == net.year && f.season.to_string() == "summer").unwrap();
            for k in 0..net.mean.values.len() {
                let sum = w.mean.values[k] + s.mean.values[k];
                net_ok &= sum.to_bits() == net.mean.values[k].to_bits() || (sum.is_nan() && net.mean.values[k].is_nan());
            }
            nets += 1;
        }
        pairs.push(score_records(tmp.path(), &format!("seed{seed}"), &report, false));
    }
    let scores = score_files(&pairs).unwrap();
    let cov = scores.coverage95;
    outcome(
        rmse < 1e-6 && (0.88..=0.99).contains(&cov) && net_ok && nets == 50 && failures == 0,
        format!(
            "noiseless grid RMSE {rmse:.1e} (tol 1e-6); holdout 95% coverage {:.3} over 50 seeds, {} stakes (range [0.88, 0.99]); net = winter + summer bitwise on {nets} maps: {net_ok}; {failures} failed fits; {:.0} s",
            cov,
            scores.n,
            start.elapsed().as_secs_f64()
        ),
    )
}

// 6. Rates study through the run driver and the file-based scorer.

fn rates_study() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse("mode = \"rates-study\"\nseed = 31\n[rates]\nreplicates = 10\n", None, tmp.path()).unwrap();
    execute(&cfg, &tmp.path().join("out"), 1).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/summary.json")).unwrap()).unwrap();
    let mut pass = secs < 900.0;
    let mut parts = Vec::new();
    for id in ["gia", "ice", "smb", "firn"] {
        let f = summary["processes"][id]["fraction_beating_prior"].as_f64().unwrap();
        pass &= f >= 0.9;
        parts.push(format!("{id} {f:.3}"));
    }
    let verts = summary["mesh_vertices"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).max().unwrap();
    let full = summary["smb_ice_corr"].as_f64().unwrap();
    let ablated = summary["smb_ice_corr_without_gravimetry"].as_f64().unwrap_or(f64::NAN);
    pass &= verts <= 3000 && ablated > full;
    outcome(
        pass,
        format!(
            "10 seeds, fraction of vertices with RMSE < prior SD: {} (need >= 0.9); mean |corr(smb, ice)| {full:.3} -> {ablated:.3} without gravimetry (must increase); largest mesh {verts} vertices (<= 3000); {secs:.0} s (limit 900 s)",
            parts.join(", ")
        ),
    )
}

// 7. Transport.

fn sine_error(n: usize, t: f64) -> f64 {
    let grid = Grid::new(n, 1, 1.0 / n as f64, [0.0, 0.0]).unwrap();
    let mut s = TransportState::new(grid, Boundary::Periodic);
    s.set_uniform_velocity(1.0, 0.0);
    let dx = grid.dx;
    let avg = |a: f64| ((2.0 * PI * a).cos() - (2.0 * PI * (a + dx)).cos()) / (2.0 * PI * dx);
    for i in 0..n {
        s.h[i] = 2.0 + avg(i as f64 * dx);
    }
    let steps = (t / (0.5 * dx)).round() as usize;
    for _ in 0..steps {
        s.step(t / steps as f64).unwrap();
    }
    (0..n).map(|i| (s.h[i] - 2.0 - avg(i as f64 * dx - t)).abs() * dx).sum()
}

fn transport() -> Outcome {
    let grid = Grid::new(48, 48, 1.0 / 48.0, [0.0, 0.0]).unwrap();
    let mut s = TransportState::new(grid, Boundary::Periodic);
    s.set_velocity(|p| (0.6 + 0.3 * (2.0 * PI * p[1]).sin(), -0.4 + 0.2 * (2.0 * PI * p[0]).cos()));
    for (k, p) in grid.centres().iter().enumerate() {
        s.h[k] = 1.0 + 0.5 * (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos();
        s.m_s[k] = 0.05 * (2.0 * PI * (p[0] + p[1])).cos();
        s.m_b[k] = -0.01;
    }
    let m0 = s.total_mass();
    let dt = 0.8 / s.cfl(1.0);
    for _ in 0..1000 {
        s.step(dt).unwrap();
    }
    let closure = (s.total_mass() - m0 - s.budget.source - s.budget.clipped).abs() / m0;
    let (e1, e2) = (sine_error(100, 0.25), sine_error(200, 0.25));
    let ratio = e1 / e2;
    outcome(
        closure <= 1e-10 && (ratio - 2.0).abs() <= 0.6,
        format!("periodic budget residual {closure:.1e} of initial mass over 1000 steps (tol 1e-10); L1 error ratio under halving {ratio:.3} (2 +/- 30%)"),
    )
}

// 8. Determinism of the run driver.

const RUNS: [(&str, &str); 5] = [
    ("simulate", "mode = \"simulate\"\nseed = 4\n[simulate]\nn_obs = 80\nmesh_edge = 0.08\n"),
    (
        "fit",
        "mode = \"fit\"\nseed = 5\n[paths]\nmesh = \"sim/mesh.csv\"\nobservations = \"sim/observations.csv\"\n[sampler]\nn_iter = 60\nburn_in = 30\nchains = 2\n[fit]\ngrid_resolution = 0.05\n",
    ),
    (
        "transport",
        "mode = \"transport\"\nseed = 6\n[transport]\nnx = 24\nny = 24\ndx = 0.04\nn_epochs = 3\nsteps_per_epoch = 20\n",
    ),
    (
        "smb-study",
        "mode = \"smb-study\"\nseed = 7\n[smb]\nn_years = 1\nresolution_m = 1000.0\nmesh_edge = 0.08\nprediction_draws = 20\n[smb.sampler]\nn_iter = 40\nburn_in = 20\nthin = 1\n",
    ),
    (
        "rates-study",
        "mode = \"rates-study\"\nseed = 8\n[rates]\nreplicates = 1\nn_epochs = 3\nfine_edge = 0.125\ncoarse_edge = 0.5\nmap_resolution = 0.1\n",
    ),
];

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let sim = RunConfig::parse(RUNS[0].1, None, tmp.path()).unwrap();
    execute(&sim, &tmp.path().join("sim"), 1).unwrap();
    let mut mismatched = Vec::new();
    let mut files = 0;
    for (name, text) in RUNS {
        let cfg = RunConfig::parse(text, None, tmp.path()).unwrap();
        let (a, b) = (tmp.path().join(format!("{name}_a")), tmp.path().join(format!("{name}_b")));
        execute(&cfg, &a, 1).unwrap();
        execute(&cfg, &b, 1).unwrap();
        let (ma, mb) = (Manifest::read(&a).unwrap(), Manifest::read(&b).unwrap());
        files += ma.files.len();
        if ma.files != mb.files || ma.config_sha256 != mb.config_sha256 || ma.files.is_empty() {
            mismatched.push(name);
        }
    }
    outcome(
        mismatched.is_empty(),
        format!(
            "{} modes run twice with 1 thread, {files} artifacts: {}",
            RUNS.len(),
            if mismatched.is_empty() { "all hashes identical".to_string() } else { format!("differences in {mismatched:?}") }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("spde-vs-analytic-matern", spde_vs_analytic),
        ("dense-oracle-equivalence", dense_oracle),
        ("ar1-joint-precision", ar1_moments),
        ("mwg-calibration", mwg_calibration),
        ("smb-study", smb_study),
        ("rates-study", rates_study),
        ("transport-conservation", transport),
        ("determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ICEFIELD_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(k + 1))) {
            continue;
        }
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += !out.pass as usize;
        println!(
            "{} [{}] {name}: {} ({:.1} s)",
            if out.pass { "PASS" } else { "FAIL" },
            k + 1,
            out.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
