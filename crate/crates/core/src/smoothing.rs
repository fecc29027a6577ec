//! Local-linear kernel smoothing and kernel conditional density estimation.
//!
//! Every conditional mean, local gradient and conditional density used by
//! the estimators is computed here. Per-center solves are independent and
//! run on the rayon pool; results are collected in center order, so output
//! does not depend on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{check_finite, gaussian_weight};

/// Normalized weights below this fraction of the total are treated as zero
/// when counting the effective neighborhood size.
pub const MIN_WEIGHT: f64 = 1e-12;

/// Ridge factor (relative to the Gram trace) applied to the slope block of
/// a singular local design.
pub const RIDGE_FACTOR: f64 = 1e-8;

/// Output of a local-linear fit at `k` centers for `m` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    /// `k × m` fitted values `a*`.
    pub intercepts: DMatrix<f64>,
    /// `k × (q·m)` local gradients `b*`; target `t` occupies columns
    /// `t·q .. (t+1)·q`.
    pub slopes: DMatrix<f64>,
    pub smoothing_dim: usize,
}

impl LocalFit {
    pub fn n_centers(&self) -> usize {
        self.intercepts.nrows()
    }

    pub fn n_targets(&self) -> usize {
        self.intercepts.ncols()
    }

    /// Gradient of target `t` at center `i`.
    pub fn slope(&self, i: usize, t: usize) -> DVector<f64> {
        let q = self.smoothing_dim;
        DVector::from_iterator(q, (0..q).map(|j| self.slopes[(i, t * q + j)]))
    }

    pub fn intercept_column(&self, t: usize) -> DVector<f64> {
        self.intercepts.column(t).into_owned()
    }
}

/// Gaussian kernel weights of all rows of `z` around `center`, normalized to
/// sum to one. The exponent is shifted by its minimum so the nearest point
/// never underflows.
pub fn kernel_weights(z: &DMatrix<f64>, center: &[f64], h: f64) -> Vec<f64> {
    let n = z.nrows();
    let mut d2 = vec![0.0; n];
    for (j, slot) in d2.iter_mut().enumerate() {
        let mut s = 0.0;
        for (c, &zc) in center.iter().enumerate() {
            let diff = z[(j, c)] - zc;
            s += diff * diff;
        }
        *slot = s;
    }
    normalized_from_sq_dist(&d2, h)
}

pub(crate) fn normalized_from_sq_dist(d2: &[f64], h: f64) -> Vec<f64> {
    let min = d2.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = 0.5 / (h * h);
    let mut w: Vec<f64> = d2.iter().map(|&v| (-(v - min) * scale).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

pub(crate) fn effective_count(weights: &[f64]) -> usize {
    weights.iter().filter(|&&w| w > MIN_WEIGHT).count()
}

/// Solves the `(q+1)`-dimensional weighted normal equations `gram · θ = rhs`
/// of one local design. Row/column 0 is the intercept.
///
/// A Cholesky failure or a pivot collapse below `1e-12` of the largest pivot
/// counts as singular; the slope block then gets a ridge of
/// `RIDGE_FACTOR · trace(gram)`.
pub(crate) fn solve_local_system(mut gram: DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(sol) = try_cholesky(&gram, rhs) {
        return sol;
    }
    let ridge = RIDGE_FACTOR * gram.trace().max(f64::MIN_POSITIVE);
    for j in 1..gram.nrows() {
        gram[(j, j)] += ridge;
    }
    if let Some(sol) = try_cholesky(&gram, rhs) {
        return sol;
    }
    // last resort for a design that is singular even in its intercept
    let eps = 1e-14 * gram.amax();
    let shape = (gram.ncols(), gram.nrows());
    let pinv = gram
        .pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(shape.0, shape.1));
    pinv * rhs
}

fn try_cholesky(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = gram.clone().cholesky()?;
    let l = chol.l_dirty();
    let mut min = f64::INFINITY;
    let mut max = 0.0_f64;
    for i in 0..l.nrows() {
        let v = l[(i, i)] * l[(i, i)];
        min = min.min(v);
        max = max.max(v);
    }
    if !(min > 1e-12 * max) {
        return None;
    }
    let sol = chol.solve(rhs);
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

/// Accumulates and solves one local-linear system.
///
/// `coord(j, buf)` writes the `q` local coordinates of observation `j`
/// (already centered) into `buf`.
pub(crate) fn local_solve<F>(
    n: usize,
    q: usize,
    weights: &[f64],
    u: &DMatrix<f64>,
    mut coord: F,
) -> DMatrix<f64>
where
    F: FnMut(usize, &mut [f64]),
{
    let m = u.ncols();
    let dim = q + 1;
    let mut gram = DMatrix::zeros(dim, dim);
    let mut rhs = DMatrix::zeros(dim, m);
    let mut row = vec![0.0; dim];
    row[0] = 1.0;
    for j in 0..n {
        let w = weights[j];
        if w == 0.0 {
            continue;
        }
        coord(j, &mut row[1..]);
        for a in 0..dim {
            let wa = w * row[a];
            for b in a..dim {
                gram[(a, b)] += wa * row[b];
            }
            for t in 0..m {
                rhs[(a, t)] += wa * u[(j, t)];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    solve_local_system(gram, &rhs)
}

fn validate_inputs(z: &DMatrix<f64>, u: &DMatrix<f64>, h: f64) -> Result<()> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")));
    }
    if z.nrows() != u.nrows() {
        return Err(Error::Dimension(format!(
            "{} predictor rows but {} target rows",
            z.nrows(),
            u.nrows()
        )));
    }
    let q = z.ncols();
    if q == 0 {
        return Err(Error::Dimension("predictor has no columns".into()));
    }
    if z.nrows() < q + 1 {
        return Err(Error::InvalidInput(format!(
            "local-linear fit in {q} dimensions needs at least {} observations, got {}",
            q + 1,
            z.nrows()
        )));
    }
    check_finite("predictor", z.iter().cloned())?;
    check_finite("target", u.iter().cloned())?;
    Ok(())
}

/// Local-linear regression of every column of `u` on `z` at each row of
/// `centers`.
///
/// At center `c` the fit minimizes `Σ_j [U_j − a − bᵀ(Z_j − c)]² K_h(Z_j − c)`.
pub fn local_linear_fit(
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
    h: f64,
    centers: &DMatrix<f64>,
) -> Result<LocalFit> {
    fit_centers(z, u, h, centers, false)
}

/// [`local_linear_fit`] that degrades to a local-constant fit with zero
/// slope at centers whose neighborhood is too sparse for a linear term,
/// instead of failing.
pub fn local_linear_fit_or_constant(
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
    h: f64,
    centers: &DMatrix<f64>,
) -> Result<LocalFit> {
    fit_centers(z, u, h, centers, true)
}

fn fit_centers(
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
    h: f64,
    centers: &DMatrix<f64>,
    lenient: bool,
) -> Result<LocalFit> {
    validate_inputs(z, u, h)?;
    let q = z.ncols();
    if centers.ncols() != q {
        return Err(Error::Dimension(format!(
            "centers have {} columns, predictor has {q}",
            centers.ncols()
        )));
    }
    check_finite("centers", centers.iter().cloned())?;
    let n = z.nrows();
    let m = u.ncols();
    let k = centers.nrows();

    let solutions: Vec<Result<DMatrix<f64>>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let center: Vec<f64> = centers.row(i).iter().cloned().collect();
            let weights = kernel_weights(z, &center, h);
            let effective = effective_count(&weights);
            if effective < q + 1 && lenient {
                let mut sol = DMatrix::zeros(q + 1, m);
                for t in 0..m {
                    sol[(0, t)] = weights.iter().zip(u.column(t).iter()).map(|(a, b)| a * b).sum();
                }
                return Ok(sol);
            }
            if effective < q + 1 {
                return Err(Error::DegenerateNeighborhood {
                    center: i,
                    effective,
                    required: q + 1,
                });
            }
            Ok(local_solve(n, q, &weights, u, |j, buf| {
                for (c, slot) in buf.iter_mut().enumerate() {
                    *slot = z[(j, c)] - center[c];
                }
            }))
        })
        .collect();

    let mut intercepts = DMatrix::zeros(k, m);
    let mut slopes = DMatrix::zeros(k, q * m);
    for (i, sol) in solutions.into_iter().enumerate() {
        let sol = sol?;
        for t in 0..m {
            intercepts[(i, t)] = sol[(0, t)];
            for c in 0..q {
                slopes[(i, t * q + c)] = sol[(1 + c, t)];
            }
        }
    }
    Ok(LocalFit {
        intercepts,
        slopes,
        smoothing_dim: q,
    })
}

/// [`local_linear_fit`] with the sample points as centers.
pub fn local_linear_fit_at_samples(z: &DMatrix<f64>, u: &DMatrix<f64>, h: f64) -> Result<LocalFit> {
    local_linear_fit(z, u, h, z)
}

/// [`local_linear_fit_or_constant`] with the sample points as centers.
pub fn local_fit_at_samples_or_constant(z: &DMatrix<f64>, u: &DMatrix<f64>, h: f64) -> Result<LocalFit> {
    local_linear_fit_or_constant(z, u, h, z)
}

/// Fitted conditional mean of a single response at the sample points.
/// Sparse neighborhoods fall back to the local-constant fit.
pub fn smooth_at_samples(z: &DMatrix<f64>, y: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let u = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    Ok(local_fit_at_samples_or_constant(z, &u, h)?.intercept_column(0))
}

/// Local-constant (Nadaraya–Watson) fit at the sample points. Each fitted
/// value is a convex combination of `y`, so nonnegative targets stay
/// nonnegative.
pub fn nadaraya_watson_at_samples(z: &DMatrix<f64>, y: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    if z.nrows() != y.len() {
        return Err(Error::Dimension(format!("{} rows, {} responses", z.nrows(), y.len())));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("bandwidth {h} must be positive")));
    }
    check_finite("response", y.iter().cloned())?;
    let out: Vec<f64> = (0..z.nrows())
        .into_par_iter()
        .map(|i| {
            let center: Vec<f64> = z.row(i).iter().cloned().collect();
            let w = kernel_weights(z, &center, h);
            w.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
        })
        .collect();
    Ok(DVector::from_vec(out))
}

/// Kernel conditional density `E_n[K_{h1}(Y−y0) K_h(X−x0)] / E_n[K_h(X−x0)]`.
pub fn conditional_density(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    x0: &[f64],
    y0: f64,
    h: f64,
    h1: f64,
) -> Result<f64> {
    if !(h > 0.0 && h1 > 0.0) {
        return Err(Error::InvalidInput(format!(
            "bandwidths must be positive, got h={h}, h1={h1}"
        )));
    }
    if x.nrows() != y.len() || x.ncols() != x0.len() {
        return Err(Error::Dimension(format!(
            "x is {}×{}, y has {} entries, x0 has {}",
            x.nrows(),
            x.ncols(),
            y.len(),
            x0.len()
        )));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut diff = vec![0.0; x0.len()];
    for j in 0..x.nrows() {
        for (c, slot) in diff.iter_mut().enumerate() {
            *slot = x[(j, c)] - x0[c];
        }
        let kx = gaussian_weight(&diff, h);
        den += kx;
        num += kx * gaussian_weight(&[y[j] - y0], h1);
    }
    let n = x.nrows() as f64;
    let den = den / n;
    if den < 1e-300 {
        return Err(Error::EmptyNeighborhood { denominator: den });
    }
    Ok(num / n / den)
}

/// Smallest `y` whose cumulative normalized weight reaches `p`, i.e. the
/// minimizer of `Σ_j w_j ρ_p(y_j − ξ)` for the check loss `ρ_p`.
pub fn weighted_quantile(values: &[f64], weights: &[f64], p: f64) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total: f64 = weights.iter().sum();
    let target = p * total;
    let mut acc = 0.0;
    for &i in &order {
        acc += weights[i];
        if acc >= target {
            return values[i];
        }
    }
    values[*order.last().expect("non-empty sample")]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn constant_target_is_fixed_point() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let z = random_matrix(&mut rng, 40, 2);
        let u = DMatrix::from_element(40, 1, 7.0);
        let fit = local_linear_fit_at_samples(&z, &u, 0.8).unwrap();
        for i in 0..40 {
            assert_abs_diff_eq!(fit.intercepts[(i, 0)], 7.0, epsilon = 1e-10);
            assert!(fit.slope(i, 0).amax() < 1e-9);
        }
    }

    #[test]
    fn linear_target_is_reproduced() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let z = random_matrix(&mut rng, 50, 1);
        let u = z.map(|v| 2.0 + 3.0 * v);
        for h in [0.1, 0.5, 3.0] {
            let fit = local_linear_fit_at_samples(&z, &u, h).unwrap();
            for i in 0..50 {
                assert_abs_diff_eq!(fit.intercepts[(i, 0)], u[(i, 0)], epsilon = 1e-8);
                assert_abs_diff_eq!(fit.slopes[(i, 0)], 3.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let z = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let u = DMatrix::from_element(2, 1, 1.0);
        assert!(local_linear_fit_at_samples(&z, &u, 1.0).is_err());
    }

    #[test]
    fn isolated_center_reports_its_index() {
        // one far-away center sees only a single point at h = 0.05
        let z = DMatrix::from_row_slice(4, 1, &[0.0, 0.01, 0.02, 100.0]);
        let u = DMatrix::from_element(4, 1, 1.0);
        let err = local_linear_fit_at_samples(&z, &u, 0.05).unwrap_err();
        assert!(matches!(err, Error::DegenerateNeighborhood { center: 3, .. }));
    }

    #[test]
    fn isolated_center_falls_back_to_local_constant() {
        let z = DMatrix::from_row_slice(4, 1, &[0.0, 0.01, 0.02, 100.0]);
        let u = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 1.0, 7.0]);
        let fit = local_fit_at_samples_or_constant(&z, &u, 0.05).unwrap();
        assert!((fit.intercepts[(3, 0)] - 7.0).abs() < 1e-12);
        assert_eq!(fit.slope(3, 0)[0], 0.0);
        assert!((fit.intercepts[(0, 0)] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn singular_local_design_falls_back_to_ridge() {
        // all points share the second coordinate: the slope block is singular
        let z = DMatrix::from_row_slice(5, 2, &[0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0, 1.0]);
        let u = DMatrix::from_column_slice(5, 1, &[1.0, 3.0, 5.0, 7.0, 9.0]);
        let fit = local_linear_fit_at_samples(&z, &u, 2.0).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(fit.intercepts[(i, 0)], u[(i, 0)], epsilon = 1e-6);
            assert_abs_diff_eq!(fit.slopes[(i, 0)], 2.0, epsilon = 1e-6);
            assert!(fit.slopes[(i, 1)].abs() < 1e-6);
        }
    }

    #[test]
    fn nonfinite_input_is_rejected() {
        let mut z = DMatrix::from_element(5, 1, 0.5);
        z[(2, 0)] = f64::NAN;
        let u = DMatrix::from_element(5, 1, 1.0);
        assert!(matches!(
            local_linear_fit_at_samples(&z, &u, 1.0),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn density_at_common_response_value() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 0.5, -1.0]);
        let y = DVector::from_element(3, 2.0);
        let d = conditional_density(&x, &y, &[0.1], 2.0, 0.7, 0.3).unwrap();
        assert_abs_diff_eq!(d, 0.398_942_280_4 / 0.3, epsilon = 1e-9);
    }

    #[test]
    fn density_reflection_symmetry() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 100, 2);
        let y = DVector::from_fn(100, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y0 = 0.3;
        let reflected = y.map(|v| 2.0 * y0 - v);
        let a = conditional_density(&x, &y, &[0.2, -0.1], y0, 0.6, 0.4).unwrap();
        let b = conditional_density(&x, &reflected, &[0.2, -0.1], y0, 0.6, 0.4).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn density_empty_neighborhood() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 0.1]);
        let y = DVector::from_element(2, 0.0);
        let err = conditional_density(&x, &y, &[1e6], 0.0, 0.1, 0.1).unwrap_err();
        assert!(matches!(err, Error::EmptyNeighborhood { .. }));
    }

    #[test]
    fn weighted_quantile_basics() {
        let v = [3.0, 1.0, 2.0, 4.0];
        let w = [0.25; 4];
        assert_eq!(weighted_quantile(&v, &w, 0.5), 2.0);
        assert_eq!(weighted_quantile(&v, &w, 0.51), 3.0);
        assert_eq!(weighted_quantile(&v, &[0.0, 0.0, 0.0, 1.0], 0.1), 4.0);
        assert_eq!(weighted_quantile(&[5.0; 3], &[0.2, 0.3, 0.5], 0.5), 5.0);
    }
}
