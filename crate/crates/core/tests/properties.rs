use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tcentral::efficient::efficient_information;
use tcentral::numerics::{moore_penrose, projection_matrix, subspace_distance, Basis};
use tcentral::smoothing::{local_linear_fit, weighted_quantile};
use tcentral::tuning::{distance_correlation, fold_assignment};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn basis(p: usize, d: usize) -> impl Strategy<Value = Basis> {
    matrix(p, d).prop_filter_map("full column rank", |m| Basis::orthonormalized(m).ok())
}

/// Weighted normal equations at one center, solved directly.
fn normal_equations_oracle(z: &DMatrix<f64>, u: &DVector<f64>, h: f64, center: &[f64]) -> DVector<f64> {
    let (n, q) = z.shape();
    let mut design = DMatrix::zeros(n, q + 1);
    let mut w = DVector::zeros(n);
    for j in 0..n {
        design[(j, 0)] = 1.0;
        let mut d2 = 0.0;
        for c in 0..q {
            let diff = z[(j, c)] - center[c];
            design[(j, c + 1)] = diff;
            d2 += diff * diff;
        }
        w[j] = (-0.5 * d2 / (h * h)).exp();
    }
    let wd = DMatrix::from_fn(n, q + 1, |j, c| design[(j, c)] * w[j]);
    let gram = design.transpose() * &wd;
    let rhs = wd.transpose() * u;
    gram.lu().solve(&rhs).expect("nonsingular local design")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn penrose_conditions_hold(m in matrix(5, 3), rank_one in any::<bool>()) {
        let m = if rank_one { m.column(0) * m.row(0) } else { m };
        let g = moore_penrose(&m, 0.0).unwrap();
        let scale = 1.0 + m.norm() * g.norm();
        prop_assert!((&m * &g * &m - &m).norm() < 1e-8 * scale * m.norm().max(1.0));
        prop_assert!((&g * &m * &g - &g).norm() < 1e-8 * scale * g.norm().max(1.0));
        let mg = &m * &g;
        let gm = &g * &m;
        prop_assert!((&mg - mg.transpose()).norm() < 1e-8 * scale);
        prop_assert!((&gm - gm.transpose()).norm() < 1e-8 * scale);
    }

    #[test]
    fn projection_depends_only_on_span(b in basis(6, 2), c in matrix(2, 2)) {
        prop_assume!(c.determinant().abs() > 0.1);
        let bc = Basis::new(b.matrix() * &c).unwrap();
        prop_assert!((projection_matrix(&b) - projection_matrix(&bc)).norm() < 1e-10);
    }

    #[test]
    fn projection_is_symmetric_idempotent(b in basis(7, 3)) {
        let pm = projection_matrix(&b);
        prop_assert!((&pm - pm.transpose()).norm() < 1e-10);
        prop_assert!((&pm * &pm - &pm).norm() < 1e-10);
        prop_assert!((pm.trace() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn distance_is_a_metric(a in basis(5, 2), b in basis(5, 2), c in basis(5, 2)) {
        let ab = subspace_distance(&a, &b).unwrap();
        let bc = subspace_distance(&b, &c).unwrap();
        let ac = subspace_distance(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-10);
        prop_assert!((ab - subspace_distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(subspace_distance(&a, &a).unwrap() < 1e-10);
        prop_assert!(ab <= 2.0 + 1e-10);
    }

    #[test]
    fn local_linear_matches_normal_equations(
        z in matrix(50, 2),
        u in prop::collection::vec(-5.0..5.0f64, 50),
        h in 0.8..3.0f64,
    ) {
        let u = DVector::from_vec(u);
        let target = DMatrix::from_column_slice(50, 1, u.as_slice());
        let centers = z.rows(0, 5).into_owned();
        let fit = local_linear_fit(&z, &target, h, &centers).unwrap();
        for i in 0..5 {
            let center: Vec<f64> = centers.row(i).iter().copied().collect();
            let oracle = normal_equations_oracle(&z, &u, h, &center);
            let scale = 1.0 + oracle.amax();
            prop_assert!((fit.intercepts[(i, 0)] - oracle[0]).abs() < 1e-8 * scale);
            let slope = fit.slope(i, 0);
            prop_assert!((slope[0] - oracle[1]).abs() < 1e-8 * scale);
            prop_assert!((slope[1] - oracle[2]).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn information_is_average_outer_product(rows in matrix(30, 4)) {
        let j = efficient_information(&rows);
        let mut oracle = DMatrix::zeros(4, 4);
        for i in 0..30 {
            let r = rows.row(i).transpose();
            oracle += &r * r.transpose();
        }
        oracle /= 30.0;
        prop_assert!((j - oracle).amax() < 1e-12);
    }

    #[test]
    fn dcor_is_rotation_and_shift_invariant(a in matrix(40, 2), angle in 0.0..6.28f64, shift in -5.0..5.0f64) {
        prop_assume!(a.column(0).variance() > 1e-3);
        let q = DMatrix::from_row_slice(2, 2, &[angle.cos(), -angle.sin(), angle.sin(), angle.cos()]);
        let b = (&a * q).add_scalar(shift);
        let base = distance_correlation(&a, &a, 1.0).unwrap();
        let moved = distance_correlation(&a, &b, 1.0).unwrap();
        prop_assert!((base - 1.0).abs() < 1e-10);
        prop_assert!((moved - base).abs() < 1e-10);
    }

    #[test]
    fn dcor_is_bounded(a in matrix(30, 1), b in matrix(30, 2)) {
        prop_assume!(a.column(0).variance() > 1e-3);
        let v = distance_correlation(&a, &b, 1.0).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn folds_partition_into_balanced_sets(n in 10usize..300, seed in any::<u64>()) {
        let folds = fold_assignment(n, seed).unwrap();
        prop_assert_eq!(folds.len(), n);
        let mut counts = [0usize; 5];
        for &f in &folds {
            prop_assert!(f < 5);
            counts[f] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert_eq!(fold_assignment(n, seed).unwrap(), folds);
    }

    #[test]
    fn weighted_quantile_is_a_sample_value_with_correct_mass(
        values in prop::collection::vec(-10.0..10.0f64, 1..40),
        p in 0.01..0.99f64,
    ) {
        let w = vec![1.0; values.len()];
        let q = weighted_quantile(&values, &w, p);
        prop_assert!(values.contains(&q));
        let below = values.iter().filter(|&&v| v < q).count() as f64 / values.len() as f64;
        let at_or_below = values.iter().filter(|&&v| v <= q).count() as f64 / values.len() as f64;
        prop_assert!(below <= p + 1e-12 && at_or_below >= p - 1e-12);
    }
}
