//! Five-fold cross validation of the bandwidth constants `c`, and the
//! distance correlation used to score central-subspace fits.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::efficient::{newton_bandwidths, newton_step, proxy_bandwidths};
use crate::error::{Error, Result};
use crate::functionals::{local_quantiles_at, proxy_response, FunctionalSpec};
use crate::mave::{ensemble_central_subspace, mave_fit, EnsembleOptions, MaveOptions};
use crate::numerics::{bandwidth, Basis, KernelSpec};
use crate::smoothing::local_linear_fit;

pub const DEFAULT_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
pub const FOLDS: usize = 5;

/// Stage being tuned, with the fixed inputs the stage criterion needs.
#[derive(Debug, Clone)]
pub enum TuningStage<'a> {
    /// Negative distance correlation between `ζ̂ᵀX` and `Y` on held-out rows.
    CentralSubspace {
        working_dim: usize,
        mave: &'a MaveOptions,
        ensemble: &'a EnsembleOptions,
        dcor_exponent: f64,
    },
    /// Out-of-fold squared error (variance) or check loss (quantiles).
    Proxy,
    /// Out-of-fold squared error of the proxy smoothed on `β̃ᵀX`.
    Initial {
        s: usize,
        proxy: &'a DVector<f64>,
        mave: &'a MaveOptions,
    },
    /// Out-of-fold loss of the functional predicted from `β̂ᵀX`.
    Newton {
        s: usize,
        beta_init: &'a Basis,
        proxy_constant: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningReport {
    pub chosen: f64,
    /// Mean criterion per grid value; `Err` holds the failure message.
    pub scores: Vec<(f64, std::result::Result<f64, String>)>,
}

/// Distance correlation between the rows of `a` and the rows of `b`, with
/// distances raised to `exponent` in `(0, 2)`.
pub fn distance_correlation(a: &DMatrix<f64>, b: &DMatrix<f64>, exponent: f64) -> Result<f64> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Dimension(format!("{n} rows against {}", b.nrows())));
    }
    if n < 2 {
        return Err(Error::InvalidInput("distance correlation needs two observations".into()));
    }
    if !(exponent > 0.0 && exponent < 2.0) {
        return Err(Error::InvalidInput(format!("exponent {exponent} outside (0, 2)")));
    }
    let ca = centered_distances(a, exponent);
    let cb = centered_distances(b, exponent);
    let dcov = ca.dot(&cb);
    let va = ca.dot(&ca);
    let vb = cb.dot(&cb);
    if !(va > 0.0 && vb > 0.0) {
        return Ok(0.0);
    }
    Ok((dcov / (va * vb).sqrt()).max(0.0).sqrt())
}

fn centered_distances(m: &DMatrix<f64>, exponent: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let mut d = DMatrix::from_fn(n, n, |i, j| (m.row(i) - m.row(j)).norm().powf(exponent));
    let row_means: Vec<f64> = (0..n).map(|i| d.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            d[(i, j)] += grand - row_means[i] - row_means[j];
        }
    }
    d
}

/// Fold label in `0..FOLDS` for each of `n` observations: a seeded shuffle
/// dealt round-robin, so fold sizes differ by at most one.
pub fn fold_assignment(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 * FOLDS {
        return Err(Error::InvalidInput(format!(
            "{n} observations are too few for {FOLDS}-fold cross validation"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        folds[i] = k % FOLDS;
    }
    Ok(folds)
}

fn check_loss(u: f64, p: f64) -> f64 {
    if u < 0.0 {
        u * (p - 1.0)
    } else {
        u * p
    }
}

fn mean_of(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    sum / count.max(1) as f64
}

fn smooth_at(z: &DMatrix<f64>, u: &DVector<f64>, h: f64, centers: &DMatrix<f64>) -> Result<DVector<f64>> {
    let target = DMatrix::from_column_slice(u.len(), 1, u.as_slice());
    Ok(local_linear_fit(z, &target, h, centers)?.intercept_column(0))
}

/// Criterion of `stage` with constant `c`, fitted on `train` and evaluated
/// on `test`. Smaller is better.
pub fn fold_criterion(
    stage: &TuningStage<'_>,
    c: f64,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &FunctionalSpec,
    train: &[usize],
    test: &[usize],
    seed: u64,
) -> Result<f64> {
    let xt = x.select_rows(train);
    let yt = y.select_rows(train);
    let xv = x.select_rows(test);
    let yv = y.select_rows(test);
    let (nt, p) = xt.shape();
    match stage {
        TuningStage::CentralSubspace {
            working_dim,
            mave,
            ensemble,
            dcor_exponent,
        } => {
            let h = bandwidth(&KernelSpec::new(c, p, nt)?);
            let fit = ensemble_central_subspace(&xt, &yt, *working_dim, h, seed, mave, ensemble)?;
            let yv_col = DMatrix::from_column_slice(yv.len(), 1, yv.as_slice());
            Ok(-distance_correlation(&(&xv * fit.basis.matrix()), &yv_col, *dcor_exponent)?)
        }
        TuningStage::Proxy => {
            let (h, _) = proxy_bandwidths(c, nt, p, &yt)?;
            match *spec {
                FunctionalSpec::Variance => {
                    let fitted = smooth_at(&xt, &yt, h, &xv)?;
                    Ok(mean_of(yv.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2))))
                }
                FunctionalSpec::Quantile { p: level } => {
                    let xi = local_quantiles_at(&xt, &yt, &xv, level, h);
                    Ok(mean_of(yv.iter().zip(xi.iter()).map(|(a, b)| check_loss(a - b, level))))
                }
                _ => Err(Error::Contract(format!("{spec} needs no proxy tuning"))),
            }
        }
        TuningStage::Initial { s, proxy, mave } => {
            let pt = proxy.select_rows(train);
            let pv = proxy.select_rows(test);
            let h = bandwidth(&KernelSpec::new(c, p, nt)?);
            let u = DMatrix::from_column_slice(nt, 1, pt.as_slice());
            let beta = mave_fit(&xt, &u, *s, h, mave)?.basis;
            let hs = bandwidth(&KernelSpec::new(c, *s, nt)?);
            let fitted = smooth_at(&(&xt * beta.matrix()), &pt, hs, &(&xv * beta.matrix()))?;
            Ok(mean_of(pv.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2))))
        }
        TuningStage::Newton {
            s,
            beta_init,
            proxy_constant,
        } => {
            let (h2, h2_y) = proxy_bandwidths(*proxy_constant, nt, p, &yt)?;
            let ctx = proxy_response(spec, &xt, &yt, h2, h2_y)?;
            let bw = newton_bandwidths(c, nt, p, *s, &yt)?;
            let beta = newton_step(spec, &xt, &yt, beta_init, &ctx, &bw)?.update.basis;
            let zt = &xt * beta.matrix();
            let zv = &xv * beta.matrix();
            match *spec {
                FunctionalSpec::Mean { .. } | FunctionalSpec::Moment { .. } => {
                    let ft = yt.map(|v| spec.linear_transform(v).unwrap_or(f64::NAN));
                    let fv = yv.map(|v| spec.linear_transform(v).unwrap_or(f64::NAN));
                    let fitted = smooth_at(&zt, &ft, bw.index, &zv)?;
                    Ok(mean_of(fv.iter().zip(fitted.iter()).map(|(a, b)| (a - b).powi(2))))
                }
                FunctionalSpec::Variance => {
                    let mean_v = smooth_at(&xt, &yt, bw.predictor, &xv)?;
                    let fitted = smooth_at(&zt, &ctx.proxy, bw.index, &zv)?;
                    Ok(mean_of((0..yv.len()).map(|i| ((yv[i] - mean_v[i]).powi(2) - fitted[i]).powi(2))))
                }
                FunctionalSpec::Quantile { p: level } => {
                    let fitted = smooth_at(&zt, &ctx.proxy, bw.index, &zv)?;
                    Ok(mean_of(yv.iter().zip(fitted.iter()).map(|(a, b)| check_loss(a - b, level))))
                }
            }
        }
    }
}

/// Picks the grid value with the smallest mean out-of-fold criterion.
/// Candidates that fail on any fold are skipped; if all fail the error lists
/// every failure.
pub fn cross_validate_c(
    stage: &TuningStage<'_>,
    grid: &[f64],
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &FunctionalSpec,
    seed: u64,
) -> Result<TuningReport> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty tuning grid".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} predictor rows, {} responses", x.nrows(), y.len())));
    }
    let folds = fold_assignment(y.len(), seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..FOLDS)
        .map(|k| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] == k);
            (train, test)
        })
        .collect();
    let scores: Vec<(f64, std::result::Result<f64, String>)> = grid
        .par_iter()
        .map(|&c| {
            let mut total = 0.0;
            for (train, test) in &splits {
                match fold_criterion(stage, c, x, y, spec, train, test, seed) {
                    Ok(v) if v.is_finite() => total += v,
                    Ok(v) => return (c, Err(format!("criterion {v}"))),
                    Err(e) => return (c, Err(e.to_string())),
                }
            }
            (c, Ok(total / FOLDS as f64))
        })
        .collect();
    let mut best: Option<(f64, f64)> = None;
    for (c, score) in &scores {
        if let Ok(v) = score {
            if best.map_or(true, |(_, b)| *v < b) {
                best = Some((*c, *v));
            }
        }
    }
    match best {
        Some((chosen, _)) => Ok(TuningReport { chosen, scores }),
        None => Err(Error::Tuning {
            failures: scores.into_iter().filter_map(|(c, s)| s.err().map(|m| (c, m))).collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn dcor_of_identical_samples_is_one() {
        let a = DMatrix::from_column_slice(5, 1, &[1.0, 3.0, -2.0, 0.5, 4.0]);
        assert!((distance_correlation(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dcor_of_constant_is_zero() {
        let a = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_element(4, 1, 7.0);
        assert_eq!(distance_correlation(&a, &b, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn dcor_detects_nonlinear_dependence() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(300, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = a.map(|v| v * v);
        let c = DMatrix::from_fn(300, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        assert!(distance_correlation(&a, &b, 1.0).unwrap() > 0.3);
        assert!(distance_correlation(&a, &c, 1.0).unwrap() < 0.2);
    }

    #[test]
    fn folds_partition_and_balance() {
        let f = fold_assignment(23, 9).unwrap();
        let mut counts = [0; FOLDS];
        for &k in &f {
            counts[k] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 23);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        assert_eq!(f, fold_assignment(23, 9).unwrap());
        assert!(fold_assignment(9, 1).is_err());
    }

    #[test]
    fn check_loss_is_half_absolute_at_median() {
        for u in [-2.0, -0.1, 0.0, 0.7] {
            assert!((check_loss(u, 0.5) - 0.5 * f64::abs(u)).abs() < 1e-15);
        }
    }

    #[test]
    fn proxy_stage_rejects_linear_functionals() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(40, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(40, |i, _| x[(i, 0)]);
        let err = cross_validate_c(&TuningStage::Proxy, &[1.0], &x, &y, &FunctionalSpec::mean(), 0).unwrap_err();
        assert!(matches!(err, Error::Tuning { .. }));
    }

    #[test]
    fn proxy_stage_selects_by_exhaustive_minimum() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(80, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(80, |i, _| x[(i, 0)] + 0.5 * rng.sample::<f64, _>(StandardNormal));
        let spec = FunctionalSpec::Variance;
        let report = cross_validate_c(&TuningStage::Proxy, &DEFAULT_GRID, &x, &y, &spec, 11).unwrap();
        let folds = fold_assignment(80, 11).unwrap();
        let mut best = (f64::NAN, f64::INFINITY);
        for &c in &DEFAULT_GRID {
            let mut total = Some(0.0);
            for k in 0..FOLDS {
                let test: Vec<usize> = (0..80).filter(|&i| folds[i] == k).collect();
                let train: Vec<usize> = (0..80).filter(|&i| folds[i] != k).collect();
                let v = fold_criterion(&TuningStage::Proxy, c, &x, &y, &spec, &train, &test, 11).ok();
                total = total.zip(v).map(|(a, b)| a + b);
            }
            let Some(total) = total else { continue };
            if total / 5.0 < best.1 {
                best = (c, total / 5.0);
            }
        }
        assert_eq!(report.chosen, best.0);
    }
}
