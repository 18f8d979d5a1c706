use nalgebra::{DMatrix, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shape_transfer::cpd::{
    apply_deformation, e_step, energy, kernel_matrix, m_step, objective, register, CpdParams,
    DeformationField,
};
use shape_transfer::geometry::PointCloud;
use shape_transfer::pipeline::mean_nearest_distance;

fn random_cloud(rng: &mut impl Rng, n: usize, scale: f64) -> PointCloud<f64> {
    PointCloud::new(
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                )
            })
            .collect(),
    )
    .unwrap()
}

fn random_weights(rng: &mut impl Rng, m: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m, 3, |_, _| rng.random_range(-scale..scale))
}

fn oracle_kernel(a: &PointCloud<f64>, b: &PointCloud<f64>, beta: f64) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(a.len(), b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            let mut d2 = 0.0;
            for c in 0..3 {
                d2 += (a.points()[i][c] - b.points()[j][c]).powi(2);
            }
            g[(i, j)] = (-d2 / (2.0 * beta * beta)).exp();
        }
    }
    g
}

fn oracle_deformed(c: &PointCloud<f64>, w: &DMatrix<f64>, beta: f64) -> Vec<[f64; 3]> {
    let g = oracle_kernel(c, c, beta);
    (0..c.len())
        .map(|m| {
            let mut y = [c.points()[m].x, c.points()[m].y, c.points()[m].z];
            for k in 0..c.len() {
                for d in 0..3 {
                    y[d] += g[(m, k)] * w[(k, d)];
                }
            }
            y
        })
        .collect()
}

fn dist2(a: &[f64; 3], b: &Vector3<f64>) -> f64 {
    (a[0] - b.x).powi(2) + (a[1] - b.y).powi(2) + (a[2] - b.z).powi(2)
}

#[test]
fn kernel_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_cloud(&mut rng, 5, 1.0);
    let b = random_cloud(&mut rng, 7, 1.0);
    let g = kernel_matrix(&a, &b, 0.7);
    let oracle = oracle_kernel(&a, &b, 0.7);
    assert!((g - oracle).amax() < 1e-12);
}

#[test]
fn kernel_at_beta_root_two_is_inverse_e() {
    let beta = 0.3;
    let a = PointCloud::from_arrays(&[[0.0, 0.0, 0.0]]).unwrap();
    let b = PointCloud::from_arrays(&[[0.0, beta * 2f64.sqrt(), 0.0]]).unwrap();
    assert!((kernel_matrix(&a, &b, beta)[(0, 0)] - (-1f64).exp()).abs() < 1e-15);
}

#[test]
fn e_step_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..20 {
        let c = random_cloud(&mut rng, 4, 0.3);
        let o = random_cloud(&mut rng, 6, 0.3);
        let w = random_weights(&mut rng, 4, 0.05);
        let params = CpdParams {
            beta: 0.5,
            sigma2: 0.02,
            omega: if trial % 2 == 0 { 0.1 } else { 0.0 },
            ..Default::default()
        };
        let p = e_step(&c, &o, &w, &params);
        let y = oracle_deformed(&c, &w, params.beta);
        let outlier = params.omega / (1.0 - params.omega)
            * (2.0 * std::f64::consts::PI * params.sigma2).powf(1.5)
            / 6.0;
        for n in 0..6 {
            let like: Vec<f64> = y
                .iter()
                .map(|ym| (-dist2(ym, &o.points()[n]) / (2.0 * params.sigma2)).exp())
                .collect();
            let denom: f64 = like.iter().sum::<f64>() + outlier;
            for m in 0..4 {
                assert!((p[(m, n)] - like[m] / denom).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn m_step_satisfies_its_linear_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let c = random_cloud(&mut rng, 4, 0.3);
        let o = random_cloud(&mut rng, 6, 0.3);
        let params = CpdParams {
            beta: 0.5,
            sigma2: 0.05,
            ..Default::default()
        };
        let p = e_step(&c, &o, &DMatrix::zeros(4, 3), &params);
        let g = kernel_matrix(&c, &c, params.beta);
        let w = m_step(&g, &p, &c, &o, &params).unwrap();

        let p1: Vec<f64> = (0..4).map(|m| (0..6).map(|n| p[(m, n)]).sum()).collect();
        let mut a = g.clone();
        let mut rhs = DMatrix::zeros(4, 3);
        for m in 0..4 {
            a[(m, m)] += params.lambda * params.sigma2 / p1[m];
            for d in 0..3 {
                let px: f64 = (0..6).map(|n| p[(m, n)] * o.points()[n][d]).sum();
                rhs[(m, d)] = px / p1[m] - c.points()[m][d];
            }
        }
        let residual = (&a * &w - &rhs).norm() / rhs.norm();
        assert!(residual <= 1e-8, "{residual}");
    }
}

#[test]
fn two_point_m_step_matches_hand_solution() {
    // With P = I the system is (G + λσ²I)W = X − S; for two points the
    // 2×2 inverse is written out by hand.
    let c = PointCloud::from_arrays(&[[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]]).unwrap();
    let o = PointCloud::from_arrays(&[[0.1, 0.0, 0.0], [0.5, 0.2, 0.0]]).unwrap();
    let params = CpdParams {
        beta: 0.5,
        lambda: 2.0,
        sigma2: 0.1,
        ..Default::default()
    };
    let p = DMatrix::identity(2, 2);
    let g = kernel_matrix(&c, &c, params.beta);
    let w = m_step(&g, &p, &c, &o, &params).unwrap();
    let k = (-0.25f64 / (2.0 * 0.25)).exp();
    let diag = 1.0 + params.lambda * params.sigma2;
    let det = diag * diag - k * k;
    let r = [[0.1, 0.0, 0.0], [0.0, 0.2, 0.0]];
    for d in 0..3 {
        let w0 = (diag * r[0][d] - k * r[1][d]) / det;
        let w1 = (-k * r[0][d] + diag * r[1][d]) / det;
        assert!((w[(0, d)] - w0).abs() < 1e-10);
        assert!((w[(1, d)] - w1).abs() < 1e-10);
    }
}

#[test]
fn energy_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let c = random_cloud(&mut rng, 8, 0.3);
        let o = random_cloud(&mut rng, 11, 0.3);
        let w = random_weights(&mut rng, 8, 0.05);
        let (beta, sigma2) = (0.4, 0.03);
        let y = oracle_deformed(&c, &w, beta);
        let mut oracle = 0.0;
        for on in o.iter() {
            let s: f64 = y
                .iter()
                .map(|ym| (-dist2(ym, on) / (2.0 * sigma2)).exp())
                .sum();
            oracle -= s.ln();
        }
        let e = energy(&c, &o, &w, beta, sigma2);
        assert!(
            (e - oracle).abs() < 1e-10 * oracle.abs().max(1.0),
            "{e} vs {oracle}"
        );
    }
}

#[test]
fn energy_closed_form_at_two_sigma2() {
    let sigma2: f64 = 0.01;
    let c = PointCloud::from_arrays(&[[0.0, 0.0, 0.0]]).unwrap();
    let o = PointCloud::from_arrays(&[[(2.0 * sigma2).sqrt(), 0.0, 0.0]]).unwrap();
    assert!((energy(&c, &o, &DMatrix::zeros(1, 3), 1.0, sigma2) - 1.0f64).abs() < 1e-12);
}

#[test]
fn deformation_of_canonical_matches_matrix_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let c = random_cloud(&mut rng, 12, 0.2);
    let w = random_weights(&mut rng, 12, 0.02);
    let field = DeformationField::new(c.clone(), w.clone(), 0.15).unwrap();
    let moved = apply_deformation(&field, &c);
    let oracle = oracle_deformed(&c, &w, 0.15);
    for (p, q) in moved.iter().zip(&oracle) {
        assert!(dist2(q, p).sqrt() < 1e-12);
    }
    assert_eq!(moved, field.deformed_canonical());
}

#[test]
fn scaled_sphere_is_recovered() {
    let sphere =
        shape_transfer::geometry::TriangleMesh::<f64>::icosphere(Vector3::zeros(), 1.0, 2).unwrap();
    let canonical = PointCloud::new(sphere.vertices().to_vec()).unwrap();
    let target = canonical.map(|p| p * 1.2).unwrap();
    let params = CpdParams {
        sigma2: 0.05,
        update_sigma2: true,
        ..Default::default()
    };
    let reg = register(&canonical, &target, &params).unwrap();
    let moved = reg.field.deformed_canonical();
    let d = mean_nearest_distance(&moved, &target);
    assert!(d < 0.02, "mean nearest distance {d}");
}

#[test]
fn fixed_sigma_trace_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = random_cloud(&mut rng, 60, 0.5);
    let o = c
        .map(|p| Vector3::new(p.x * 1.1, p.y + 0.05 * p.x * p.x, p.z))
        .unwrap();
    let params = CpdParams {
        beta: 0.5,
        lambda: 3.0,
        sigma2: 0.02,
        ..Default::default()
    };
    let reg = register(&c, &o, &params).unwrap();
    for w in reg.energy_trace.windows(2).skip(1) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    let last = objective(&c, &o, reg.field.weights(), &params);
    assert!((last - reg.final_energy()).abs() < 1e-9 * last.abs().max(1.0));
}

#[test]
fn nan_energy_is_reported() {
    let c = PointCloud::from_arrays(&[[0.0, 0.0, 0.0]]).unwrap();
    let o = PointCloud::from_arrays(&[[1e3, 0.0, 0.0]]).unwrap();
    let params = CpdParams {
        sigma2: 1e-320,
        omega: 0.0,
        ..Default::default()
    };
    assert!(register(&c, &o, &params).is_err());
}

fn cloud_strategy(max: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 2..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric_psd(points in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 20), beta in 0.2f64..2.0) {
        let a = PointCloud::from_arrays(&points).unwrap();
        let g = kernel_matrix(&a, &a, beta);
        prop_assert!((&g - g.transpose()).amax() == 0.0);
        prop_assert!(g.iter().all(|v| *v > 0.0 && *v <= 1.0));
        let min = g.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-9, "smallest eigenvalue {}", min);
    }

    #[test]
    fn zero_field_is_identity(c in cloud_strategy(10), z in cloud_strategy(10), beta in 0.05f64..2.0) {
        let field = DeformationField::identity(PointCloud::from_arrays(&c).unwrap(), beta);
        let z = PointCloud::from_arrays(&z).unwrap();
        prop_assert_eq!(apply_deformation(&field, &z), z);
    }

    #[test]
    fn posterior_columns_sum_to_one_without_outliers(c in cloud_strategy(12), o in cloud_strategy(12), sigma2 in 0.01f64..1.0) {
        let c = PointCloud::from_arrays(&c).unwrap();
        let o = PointCloud::from_arrays(&o).unwrap();
        let params = CpdParams { omega: 0.0, sigma2, ..Default::default() };
        let p = e_step(&c, &o, &DMatrix::zeros(c.len(), 3), &params);
        for col in p.column_iter() {
            prop_assert!((col.sum() - 1.0).abs() < 1e-12);
        }
        let params = CpdParams { omega: 0.3, sigma2, ..Default::default() };
        let p = e_step(&c, &o, &DMatrix::zeros(c.len(), 3), &params);
        for col in p.column_iter() {
            prop_assert!(col.sum() <= 1.0 + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn register_ignores_target_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_cloud(&mut rng, 15, 0.5);
        let o = random_cloud(&mut rng, 18, 0.5);
        let mut order: Vec<usize> = (0..o.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted = o.subset(&order).unwrap();
        let params = CpdParams { beta: 0.5, sigma2: 0.05, max_iters: 30, ..Default::default() };
        let a = register(&c, &o, &params).unwrap();
        let b = register(&c, &permuted, &params).unwrap();
        prop_assert!((a.field.weights() - b.field.weights()).amax() < 1e-9);
    }
}
