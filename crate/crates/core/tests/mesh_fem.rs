use icefield::mesh::{assemble_fem, build_mesh, footprint_matrix, point_eval_matrix, Footprint, Polygon, TriMesh};
use icefield::seeded_rng;
use proptest::prelude::*;
use rand::Rng;

fn glacier() -> Polygon {
    Polygon::new(vec![
        [0.05, 0.10],
        [0.55, 0.02],
        [0.95, 0.30],
        [0.80, 0.75],
        [0.45, 0.60],
        [0.20, 0.95],
    ])
    .unwrap()
}

#[test]
fn stake_rows_sum_to_one() {
    let poly = glacier();
    let mesh = build_mesh(&poly, 0.05, 0.1).unwrap();
    let mut rng = seeded_rng(3);
    let mut sites = Vec::new();
    while sites.len() < 25 {
        let p = [rng.random::<f64>(), rng.random::<f64>()];
        if poly.contains(p) {
            sites.push(p);
        }
    }
    let a = point_eval_matrix(&mesh, &sites).unwrap();
    assert_eq!((a.nrows(), a.ncols()), (25, mesh.n_vertices()));
    for (i, s) in a.row_sums().iter().enumerate() {
        assert!((s - 1.0).abs() < 1e-12, "row {i}: {s}");
        assert!(a.row_nnz(i) <= 3);
    }
}

#[test]
fn disk_footprint_matches_monte_carlo() {
    let (c, r) = ([0.5, 0.5], 0.3);
    let disk = Polygon::regular(c, r, 64).unwrap();
    let mesh = build_mesh(&Polygon::unit_square(), 0.05, 0.0).unwrap();
    let fp = Footprint::new(disk.clone(), 0.005).unwrap();
    let row = footprint_matrix(&mesh, &fp, |_| 1.0).unwrap();
    let eta: Vec<f64> = mesh.vertices().iter().map(|v| v[0]).collect();
    let quad = row.dot(&eta);

    // Mean of s1 over uniform points in the disk, times the shoelace area.
    let mut rng = seeded_rng(11);
    let (mut sum, mut hits) = (0.0, 0usize);
    for _ in 0..1_000_000 {
        let p = [c[0] - r + 2.0 * r * rng.random::<f64>(), c[1] - r + 2.0 * r * rng.random::<f64>()];
        if disk.contains(p) {
            sum += p[0];
            hits += 1;
        }
    }
    let mc = disk.area() * sum / hits as f64;
    assert!((quad / mc - 1.0).abs() <= 1e-3, "{quad} vs {mc}");
    assert!((fp.area() / disk.area() - 1.0).abs() < 1e-12);
}

/// `∫ exp(x) sin(2y)` over `[0.2, 0.8]²`.
fn smooth(p: [f64; 2]) -> f64 {
    p[0].exp() * (2.0 * p[1]).sin()
}

#[test]
fn footprint_integral_converges_at_second_order() {
    let omega = Polygon::rectangle([0.2, 0.2], [0.8, 0.8]).unwrap();
    let exact = (0.8f64.exp() - 0.2f64.exp()) * (0.4f64.cos() - 1.6f64.cos()) / 2.0;
    let fp = Footprint::new(omega, 0.002).unwrap();
    let err = |h: f64| {
        let mesh = build_mesh(&Polygon::unit_square(), h, 0.0).unwrap();
        let eta: Vec<f64> = mesh.vertices().iter().map(|&v| smooth(v)).collect();
        (footprint_matrix(&mesh, &fp, |_| 1.0).unwrap().dot(&eta) - exact).abs()
    };
    let (e1, e2) = (err(0.1), err(0.05));
    let ratio = e1 / e2;
    assert!((ratio / 4.0 - 1.0).abs() < 0.3, "errors {e1} {e2}, ratio {ratio}");
}

#[test]
fn assembly_is_bit_identical() {
    let a = assemble_fem(&build_mesh(&glacier(), 0.04, 0.2).unwrap());
    let b = assemble_fem(&build_mesh(&glacier(), 0.04, 0.2).unwrap());
    assert_eq!(a.mass, b.mass);
    assert_eq!(a.stiffness, b.stiffness);
    assert_eq!(a.lumped_mass, b.lumped_mass);
}

fn rect_mesh(w: f64, h: f64, edge: f64) -> TriMesh {
    build_mesh(&Polygon::rectangle([0.0, 0.0], [w, h]).unwrap(), edge, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn barycentric_rows_are_a_partition_of_unity(
        w in 0.5f64..3.0, h in 0.5f64..3.0, fx in 0.0f64..1.0, fy in 0.0f64..1.0,
    ) {
        let mesh = rect_mesh(w, h, 0.25);
        let p = [fx * w, fy * h];
        let a = point_eval_matrix(&mesh, &[p]).unwrap();
        prop_assert!((a.row_sums()[0] - 1.0).abs() < 1e-12);
        // Linear functions are reproduced exactly.
        let xs: Vec<f64> = mesh.vertices().iter().map(|v| 2.0 * v[0] - v[1]).collect();
        prop_assert!((a.mul_vec(&xs)[0] - (2.0 * p[0] - p[1])).abs() < 1e-12);
    }

    #[test]
    fn mass_totals_the_hull_area_and_stiffness_kills_constants(
        w in 0.5f64..3.0, h in 0.5f64..3.0, edge in 0.1f64..0.5,
    ) {
        let mesh = rect_mesh(w, h, edge);
        let fem = assemble_fem(&mesh);
        let total: f64 = fem.lumped_mass.iter().sum();
        prop_assert!((total / (w * h) - 1.0).abs() < 1e-12);
        let tri_total: f64 = (0..mesh.n_triangles()).map(|t| mesh.triangle_area(t)).sum();
        prop_assert!((tri_total / (w * h) - 1.0).abs() < 1e-12);
        let g1 = fem.stiffness.mul_vec(&vec![1.0; mesh.n_vertices()]);
        prop_assert!(g1.iter().all(|x| x.abs() < 1e-10));
        prop_assert!(fem.mass.is_symmetric(0.0) && fem.stiffness.is_symmetric(0.0));
        prop_assert!(mesh.max_edge_length() <= edge * 2f64.sqrt() * (1.0 + 1e-12));
    }
}
