use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use tcentral::efficient::{newton_bandwidths, q3_q4_values, q1_values};
use tcentral::functionals::{proxy_response, q2_values, quantile_context_on_index, tau_c, Bandwidths};
use tcentral::mave::{ensemble_central_subspace, mave_fit, opg_fit, EnsembleOptions};
use tcentral::numerics::{bandwidth, projection_matrix, subspace_distance, Basis, KernelSpec};
use tcentral::simgen::{
    generate_model, run_benchmark, sample_skewed_laplace, skewed_laplace_pdf, BenchmarkPlan, ModelSpec,
};
use tcentral::smoothing::conditional_density;
use tcentral::tuning::{cross_validate_c, distance_correlation, TuningStage};
use tcentral::{see_estimate, Covariance, FunctionalSpec, MaveOptions, MaveVariant, ModelId, SeeConfig};

fn normal(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn model(id: ModelId, n: usize, seed: u64) -> tcentral::simgen::Sample {
    generate_model(&ModelSpec::new(id, n, Covariance::Identity, seed).unwrap()).unwrap()
}

fn h_full(c: f64, n: usize, p: usize) -> f64 {
    bandwidth(&KernelSpec::new(c, p, n).unwrap())
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[test]
fn conditional_density_of_independent_normal_response() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let x = normal(&mut rng, 20000, 1);
    let y = DVector::from_fn(20000, |_, _| rng.sample(StandardNormal));
    for x0 in [-1.0, 0.0, 0.7] {
        let f = conditional_density(&x, &y, &[x0], 0.0, 0.4, 0.15).unwrap();
        assert!((f - 0.39894).abs() < 0.05, "x0={x0}: {f}");
    }
}

#[test]
fn opg_is_rotation_equivariant() {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let x = normal(&mut rng, 120, 4);
    let u = DMatrix::from_fn(120, 1, |i, _| x[(i, 0)].powi(3) + x[(i, 1)]);
    let q = normal(&mut rng, 4, 4).qr().q();
    let a = opg_fit(&x, &u, 2, 0.9).unwrap();
    let b = opg_fit(&(&x * &q), &u, 2, 0.9).unwrap();
    let rotated = Basis::new(q.transpose() * a.matrix()).unwrap();
    assert!(subspace_distance(&rotated, &b).unwrap() < 1e-6);
}

#[test]
fn opg_recovers_noiseless_cubic_index() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let x = normal(&mut rng, 400, 5);
    let u = DMatrix::from_fn(400, 1, |i, _| x[(i, 0)].powi(3));
    let b = opg_fit(&x, &u, 1, h_full(1.0, 400, 5)).unwrap();
    let truth = Basis::coordinate(5, &[0]).unwrap();
    assert!(subspace_distance(&b, &truth).unwrap() < 0.1);
}

#[test]
fn mave_recovers_noiseless_model_ii() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let x = normal(&mut rng, 400, 10);
    let u = DMatrix::from_fn(400, 1, |i, _| x[(i, 0)] * (x[(i, 0)] + x[(i, 1)] + 1.0));
    let fit = mave_fit(&x, &u, 2, h_full(2.0, 400, 10), &MaveOptions::default()).unwrap();
    let truth = Basis::coordinate(10, &[0, 1]).unwrap();
    let dist = subspace_distance(&fit.basis, &truth).unwrap();
    assert!(dist < 0.05, "{dist}");
}

#[test]
fn mave_lowers_objective_from_opg_start() {
    let s = model(ModelId::II, 200, 5);
    let u = DMatrix::from_column_slice(200, 1, s.y.as_slice());
    let opts = MaveOptions::with_variant(MaveVariant::Mave);
    let fit = mave_fit(&s.x, &u, 2, h_full(2.0, 200, 10), &opts).unwrap();
    assert!(fit.objective.last().unwrap() <= &fit.objective[0]);
}

#[test]
fn ensemble_contains_model_i_central_subspace() {
    // X2 enters only through the noise scale; n = 1000 keeps the residual
    // outside the working space well clear of the threshold
    let s = model(ModelId::I, 1000, 6);
    let fit = ensemble_central_subspace(
        &s.x,
        &s.y,
        3,
        h_full(3.0, 1000, 10),
        6,
        &MaveOptions::default(),
        &EnsembleOptions {
            frequencies: 10,
            max_frequency: 1.5,
        },
    )
    .unwrap();
    let truth = Basis::coordinate(10, &[0, 1]).unwrap();
    let inside = Basis::orthonormalized(projection_matrix(&fit.basis) * truth.matrix()).unwrap();
    let dist = subspace_distance(&inside, &truth).unwrap();
    assert!(dist < 0.3, "{dist}");
}

#[test]
fn variance_proxy_is_unbiased_for_homoscedastic_noise() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let x = normal(&mut rng, 5000, 2);
    let y = DVector::from_fn(5000, |_, _| 2.0 + rng.sample::<f64, _>(StandardNormal));
    let ctx = proxy_response(&FunctionalSpec::Variance, &x, &y, 0.5, 0.3).unwrap();
    let m = ctx.proxy.mean();
    assert!((m - 1.0).abs() < 0.1, "{m}");
}

#[test]
fn median_tau_has_mean_zero_under_symmetric_noise() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let n = 2000;
    let x = normal(&mut rng, n, 2);
    let y = DVector::from_fn(n, |i, _| x[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
    let spec = FunctionalSpec::median();
    let beta = Basis::coordinate(2, &[0]).unwrap();
    let bw = Bandwidths {
        predictor: 0.4,
        index: 0.3,
        response: 0.3,
    };
    let ctx = proxy_response(&spec, &x, &y, bw.predictor, bw.response).unwrap();
    let ctx = quantile_context_on_index(&x, &y, &beta, &ctx, &bw).unwrap();
    let tau = tau_c(&spec, &x, &y, &beta, &ctx, &bw).unwrap();
    let (m, sd) = mean_sd(tau.as_slice());
    assert!(m.abs() < 3.0 * sd / (n as f64).sqrt(), "mean {m}, sd {sd}");
}

#[test]
fn mean_q2_estimates_noise_variance() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let n = 5000;
    let x = normal(&mut rng, n, 2);
    let y = DVector::from_fn(n, |i, _| x[(i, 0)].sin() + 0.5 * rng.sample::<f64, _>(StandardNormal));
    let spec = FunctionalSpec::mean();
    let beta = Basis::coordinate(2, &[0]).unwrap();
    let bw = Bandwidths {
        predictor: 0.4,
        index: 0.25,
        response: 0.3,
    };
    let ctx = proxy_response(&spec, &x, &y, bw.predictor, bw.response).unwrap();
    let q2 = q2_values(&spec, &x, &y, &beta, &ctx, &bw).unwrap();
    let m = q2.mean();
    assert!((m - 0.25).abs() < 0.05, "{m}");
}

#[test]
fn q4_is_orthogonal_to_functions_of_the_index() {
    let n = 1000;
    let s = model(ModelId::III, n, 10);
    let spec = FunctionalSpec::mean();
    let beta = Basis::coordinate(10, &[0]).unwrap();
    let bw = newton_bandwidths(1.0, n, 10, 1, &s.y).unwrap();
    let ctx = proxy_response(&spec, &s.x, &s.y, bw.predictor, bw.response).unwrap();
    let q2 = q2_values(&spec, &s.x, &s.y, &beta, &ctx, &bw).unwrap();
    let q1 = q1_values(&s.x, &s.y, &beta, bw.index).unwrap();
    let (_, q4) = q3_q4_values(&q1, &q2, &s.x, &beta, bw.index).unwrap();
    let g: Vec<f64> = (0..n).map(|i| s.x[(i, 0)]).collect();
    for k in 0..q4.ncols() {
        let prod: Vec<f64> = (0..n).map(|i| q4[(i, k)] * g[i]).collect();
        let (m, sd) = mean_sd(&prod);
        assert!(m.abs() < 5.0 * sd / (n as f64).sqrt(), "coordinate {k}: {m} (sd {sd})");
    }
}

#[test]
fn score_at_truth_is_centered_for_model_i() {
    let n = 2000;
    let s = model(ModelId::I, n, 11);
    let beta = Basis::coordinate(10, &[0]).unwrap();
    let bw = newton_bandwidths(1.0, n, 10, 1, &s.y).unwrap();
    let spec = FunctionalSpec::mean();
    let ctx = proxy_response(&spec, &s.x, &s.y, bw.predictor, bw.response).unwrap();
    let step = tcentral::efficient::newton_step(&spec, &s.x, &s.y, &beta, &ctx, &bw).unwrap();
    let rows = &step.parts.score_rows;
    for k in 0..rows.ncols() {
        let col: Vec<f64> = rows.column(k).iter().copied().collect();
        let (m, sd) = mean_sd(&col);
        assert!(m.abs() < 4.0 * sd / (n as f64).sqrt(), "coordinate {k}: {m} (sd {sd})");
    }
}

#[test]
fn estimates_are_deterministic() {
    let s = model(ModelId::V, 150, 12);
    let config = SeeConfig::with_seed(12);
    let a = see_estimate(&s.x, &s.y, &FunctionalSpec::median(), 1, 3, &config).unwrap();
    let b = see_estimate(&s.x, &s.y, &FunctionalSpec::median(), 1, 3, &config).unwrap();
    assert_eq!(a.beta_hat, b.beta_hat);
    assert_eq!(a.beta_init, b.beta_init);
    assert_eq!(a.score_mean, b.score_mean);
}

#[test]
fn dcor_of_independent_samples_is_small() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let a = normal(&mut rng, 2000, 1);
    let b = normal(&mut rng, 2000, 1);
    assert!(distance_correlation(&a, &b, 1.0).unwrap() < 0.1);
}

#[test]
fn tuning_single_candidate_and_seeded_choice() {
    let s = model(ModelId::III, 120, 14);
    let spec = FunctionalSpec::Variance;
    let one = cross_validate_c(&TuningStage::Proxy, &[1.3], &s.x, &s.y, &spec, 1).unwrap();
    assert_eq!(one.chosen, 1.3);
    let grid = [0.5, 1.0, 2.0];
    let a = cross_validate_c(&TuningStage::Proxy, &grid, &s.x, &s.y, &spec, 2).unwrap();
    let b = cross_validate_c(&TuningStage::Proxy, &grid, &s.x, &s.y, &spec, 2).unwrap();
    assert_eq!(a, b);
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for k in 1..m {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

fn laplace_break() -> f64 {
    -0.4 * (4.0f64 / 3.0).ln()
}

#[test]
fn skewed_laplace_density_integrates_to_one() {
    let a = laplace_break();
    let total = simpson(skewed_laplace_pdf, -30.0, a, 200_000) + simpson(skewed_laplace_pdf, a, 60.0, 200_000);
    assert!((total - 1.0).abs() < 1e-6, "{total}");
}

#[test]
fn skewed_laplace_draws_match_the_density() {
    let e = sample_skewed_laplace(1_000_000, 15);
    let n = e.len() as f64;
    let below_zero = e.iter().filter(|&&v| v <= 0.0).count() as f64 / n;
    assert!((below_zero - 0.5).abs() < 0.003, "{below_zero}");
    let mean = e.mean();
    let expected = 0.2 - 0.4 * (4.0f64 / 3.0).ln();
    assert!((mean - expected).abs() < 0.01, "{mean} vs {expected}");
    let a = laplace_break();
    let upper = simpson(skewed_laplace_pdf, a, 60.0, 200_000);
    let empirical = e.iter().filter(|&&v| v >= a).count() as f64 / n;
    assert!((empirical - upper).abs() < 0.01, "{empirical} vs {upper}");
}

#[test]
fn ar_half_predictors_have_the_target_covariance() {
    let s = generate_model(&ModelSpec::new(ModelId::I, 5000, Covariance::ArHalf, 16).unwrap()).unwrap();
    let n = 5000.0;
    let mean = s.x.row_mean();
    let centered = DMatrix::from_fn(5000, 10, |i, j| s.x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1.0);
    let target = Covariance::ArHalf.matrix(10);
    let worst = (cov - target).amax();
    assert!(worst < 0.05, "{worst}");
}

#[test]
fn model_vii_upper_quartile_formula_matches_the_generator() {
    let s = model(ModelId::VII, 200_000, 17);
    let z = Normal::standard().inverse_cdf(0.75);
    let frac = |sign: f64| {
        (0..s.y.len())
            .filter(|&i| {
                let q = 1.0 + s.x[(i, 0)] + (1.0 + 0.4 * s.x[(i, 1)]).abs() * z * sign;
                s.y[i] <= q
            })
            .count() as f64
            / s.y.len() as f64
    };
    assert!((frac(1.0) - 0.75).abs() < 0.005);
    assert!((frac(-1.0) - 0.25).abs() < 0.005);
}

#[test]
fn model_v_mean_and_median_structure() {
    let s = model(ModelId::V, 400_000, 18);
    let n = s.y.len() as f64;
    let at_median = (0..s.y.len()).filter(|&i| s.y[i] <= s.x[(i, 0)].powi(2)).count() as f64 / n;
    assert!((at_median - 0.5).abs() < 0.003, "{at_median}");
    // E(Y − X1² | X2) = c·X2, so the slope of the residual on X2 estimates c
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..s.y.len() {
        let x2 = s.x[(i, 1)];
        sxy += x2 * (s.y[i] - s.x[(i, 0)].powi(2));
        sxx += x2 * x2;
    }
    let expected = 0.2 - 0.4 * (4.0f64 / 3.0).ln();
    assert!((sxy / sxx - expected).abs() < 0.01, "{}", sxy / sxx);
}

#[test]
fn two_replicate_benchmark_is_reproducible() {
    let plan = BenchmarkPlan::new(vec![ModelId::III], vec![FunctionalSpec::mean()], vec![60], 2, 19);
    let a = run_benchmark(&plan).unwrap();
    let b = run_benchmark(&plan).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.rows.len(), 3);
    assert!(a.rows.iter().all(|r| r.replicates == 2));
}
