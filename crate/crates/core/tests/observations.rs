use icefield::cholesky::Cholesky;
use icefield::matern::MaternParams;
use icefield::mesh::{build_mesh, Footprint, Polygon};
use icefield::observations::{
    footprint_operator, simulate_data, simulate_with, Densities, FootprintObs, Instrument, InstrumentMask, MaskWeight,
    RateProcessIds,
};
use icefield::processes::{stack, MeshModel, ProcessSpec, StackedPrior};
use icefield::seeded_rng;
use proptest::prelude::*;

fn rates_prior(edge: f64, t: usize) -> StackedPrior {
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

fn mask() -> InstrumentMask {
    InstrumentMask::elevation_rates(&RateProcessIds::default(), &Densities::default())
}

fn obs(instrument: Instrument, lo: [f64; 2], hi: [f64; 2], epoch: usize) -> FootprintObs {
    FootprintObs {
        footprint: Footprint::new(Polygon::rectangle(lo, hi).unwrap(), 0.05).unwrap(),
        value: 0.0,
        epoch,
        instrument,
        noise_sd: 0.2,
    }
}

#[test]
fn simulated_latent_covariance_matches_the_dense_inverse() {
    let prior = rates_prior(0.5, 2);
    let n = prior.len();
    assert!(n <= 200);
    let op = footprint_operator(&[obs(Instrument::Altimetry, [0.1, 0.1], [0.6, 0.9], 1)], &mask(), &prior).unwrap();
    let cov = prior.precision.to_dense().try_inverse().unwrap();
    let chol = Cholesky::new(&prior.precision).unwrap();
    let mut rng = seeded_rng(2024);
    let draws = 100_000;
    let mut s = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut mean = vec![0.0; n];
    for _ in 0..draws {
        let x = nalgebra::DVector::from_vec(simulate_with(&chol, &prior, &op, &mut rng).unwrap().truth);
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v;
        }
        s.ger(1.0, &x, &x, 1.0);
    }
    let d = draws as f64;
    let (mut within, mut worst, mut total) = (0usize, 0.0f64, 0usize);
    for i in 0..n {
        let se_mean = (cov[(i, i)] / d).sqrt();
        assert!((mean[i] / d).abs() < 5.0 * se_mean);
        for j in 0..=i {
            // Standard error of a zero-mean sample covariance.
            let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / d).sqrt();
            let z = (s[(i, j)] / d - cov[(i, j)]).abs() / se;
            within += (z < 3.0) as usize;
            worst = worst.max(z);
            total += 1;
        }
    }
    let frac = within as f64 / total as f64;
    assert!(frac >= 0.99, "{within}/{total} within 3 SE");
    assert!(worst < 5.0, "worst entry {worst} SE");
}

#[test]
fn noiseless_data_equal_the_projected_truth() {
    let prior = rates_prior(0.25, 3);
    let mut op = footprint_operator(
        &[
            obs(Instrument::Gps, [0.4, 0.4], [0.45, 0.45], 0),
            obs(Instrument::Gravimetry, [0.0, 0.0], [1.0, 0.5], 2),
        ],
        &mask(),
        &prior,
    )
    .unwrap();
    op.noise_var = vec![0.0; 2];
    let sim = simulate_data(&prior, &op, &mut seeded_rng(5)).unwrap();
    let expect = op.h.mul_vec(&sim.truth);
    for ((z, e), o) in sim.data.iter().zip(&expect).zip(&op.offset) {
        assert_eq!(*z, e + o);
    }
    let again = simulate_data(&prior, &op, &mut seeded_rng(5)).unwrap();
    assert_eq!(sim, again);
}

#[test]
fn every_instrument_process_pair_has_a_rule() {
    let ids = RateProcessIds::default();
    let m = mask();
    for inst in Instrument::ALL {
        for p in [&ids.gia, &ids.ice, &ids.smb, &ids.firn] {
            m.weight(inst, p).unwrap();
        }
    }
    assert!(matches!(m.weight(Instrument::Gravimetry, &ids.firn).unwrap(), MaskWeight::Zero));
    assert!(m.weight(Instrument::Gps, "ocean").is_err());
}

fn region() -> impl Strategy<Value = ([f64; 2], [f64; 2])> {
    (0.0f64..0.7, 0.0f64..0.7, 0.05f64..0.3, 0.05f64..0.3).prop_map(|(x, y, w, h)| ([x, y], [x + w, y + h]))
}

fn instrument() -> impl Strategy<Value = Instrument> {
    prop::sample::select(Instrument::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn operator_of_concatenated_data_is_the_row_stack(
        a in prop::collection::vec((instrument(), region(), 0usize..3), 1..4),
        b in prop::collection::vec((instrument(), region(), 0usize..3), 1..4),
    ) {
        let prior = rates_prior(0.25, 3);
        let mk = |v: &[(Instrument, ([f64; 2], [f64; 2]), usize)]| {
            v.iter().map(|(i, (lo, hi), e)| obs(*i, *lo, *hi, *e)).collect::<Vec<_>>()
        };
        let (oa, ob) = (mk(&a), mk(&b));
        let joint: Vec<FootprintObs> = oa.iter().chain(&ob).cloned().collect();
        let whole = footprint_operator(&joint, &mask(), &prior).unwrap();
        let parts = footprint_operator(&oa, &mask(), &prior)
            .unwrap()
            .concat(&footprint_operator(&ob, &mask(), &prior).unwrap())
            .unwrap();
        prop_assert_eq!(&whole.h, &parts.h);
        prop_assert_eq!(&whole.noise_var, &parts.noise_var);
        prop_assert_eq!(&whole.offset, &parts.offset);
        // Linear in the latent state.
        let x: Vec<f64> = (0..prior.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..prior.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| 2.0 * p - 3.0 * q).collect();
        let (hx, hy, hxy) = (whole.h.mul_vec(&x), whole.h.mul_vec(&y), whole.h.mul_vec(&xy));
        for k in 0..hx.len() {
            prop_assert!((hxy[k] - (2.0 * hx[k] - 3.0 * hy[k])).abs() < 1e-9 * (1.0 + hxy[k].abs()));
        }
    }
}
