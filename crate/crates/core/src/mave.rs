//! Outer-product-of-gradients and minimum-average-variance estimation.
//!
//! The MAVE objective for targets `U` (n × m), predictors `X` (n × p) and a
//! `p × d` direction matrix `A` is
//!
//! ```text
//! Γ(a, b, A) = (1/n) Σ_i Σ_j w_ij Σ_t [U_jt − a_it − b_itᵀ Aᵀ(X_j − X_i)]²
//! ```
//!
//! with kernel weights `w_ij` normalized to sum to one for each center `i`.
//! It is minimized by alternating two exact least-squares problems: one small
//! weighted regression per center for `(a_i, b_i)`, and a single regression
//! for `vec(A)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    check_finite, mean, moore_penrose, orthonormalize, sample_variance, subspace_distance,
    top_eigenvectors, Basis,
};
use crate::smoothing::{effective_count, local_linear_fit_at_samples, local_solve, normalized_from_sq_dist};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaveVariant {
    Opg,
    Mave,
    Rmave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaveOptions {
    pub variant: MaveVariant,
    pub max_iters: usize,
    /// Stop once successive spans are closer than this.
    pub tol: f64,
    /// RMAVE only: per-iteration multiplier of the refined bandwidth.
    pub bandwidth_decay: f64,
    /// RMAVE only: floor of the refined bandwidth, relative to its start.
    pub min_bandwidth_factor: f64,
}

impl Default for MaveOptions {
    fn default() -> Self {
        Self {
            variant: MaveVariant::Rmave,
            max_iters: 25,
            tol: 1e-4,
            bandwidth_decay: 0.8,
            min_bandwidth_factor: 0.5,
        }
    }
}

impl MaveOptions {
    pub fn with_variant(variant: MaveVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("tol must be positive".into()));
        }
        if !(self.bandwidth_decay > 0.0 && self.bandwidth_decay <= 1.0) {
            return Err(Error::InvalidInput("bandwidth_decay must lie in (0, 1]".into()));
        }
        if !(self.min_bandwidth_factor > 0.0) {
            return Err(Error::InvalidInput("min_bandwidth_factor must be positive".into()));
        }
        Ok(())
    }
}

/// Result of [`mave_fit`].
#[derive(Debug, Clone)]
pub struct MaveFit {
    /// Orthonormal `p × d` basis of the estimated directions.
    pub basis: Basis,
    /// Γ after every `(a, b)` update; entry 0 is at the OPG start.
    pub objective: Vec<f64>,
    pub iterations: usize,
    /// `false` when `max_iters` ran out first; the final iterate is still
    /// returned.
    pub converged: bool,
}

/// Size and frequency range of the sine/cosine response ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleOptions {
    pub frequencies: usize,
    pub max_frequency: f64,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            frequencies: 10,
            max_frequency: 4.0,
        }
    }
}

fn validate(x: &DMatrix<f64>, u: &DMatrix<f64>, d: usize, h: f64) -> Result<()> {
    let (n, p) = x.shape();
    if d == 0 || d > p {
        return Err(Error::Dimension(format!("target dimension {d} outside 1..={p}")));
    }
    if u.nrows() != n {
        return Err(Error::Dimension(format!("{n} predictor rows, {} target rows", u.nrows())));
    }
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidInput(format!("bandwidth must be positive, got {h}")));
    }
    check_finite("predictor", x.iter().cloned())?;
    check_finite("target", u.iter().cloned())?;
    Ok(())
}

/// Top-`d` eigenvectors of the averaged outer product of local-linear
/// gradients, summed over targets.
pub fn opg_fit(x: &DMatrix<f64>, u: &DMatrix<f64>, d: usize, h: f64) -> Result<Basis> {
    validate(x, u, d, h)?;
    let (n, p) = x.shape();
    let fit = local_linear_fit_at_samples(x, u, h)?;
    let mut outer = DMatrix::zeros(p, p);
    for i in 0..n {
        for t in 0..u.ncols() {
            let b = fit.slope(i, t);
            outer.ger(1.0 / n as f64, &b, &b, 1.0);
        }
    }
    let (vecs, _) = top_eigenvectors(&outer, d);
    Basis::orthonormalized(vecs)
}

/// Per-center local solutions `(d+1) × m`: row 0 holds `a_i`, rows `1..`
/// hold `b_i`.
type LocalCoefs = Vec<Option<DMatrix<f64>>>;

struct Workspace<'a> {
    x: &'a DMatrix<f64>,
    u: &'a DMatrix<f64>,
}

impl<'a> Workspace<'a> {
    fn n(&self) -> usize {
        self.x.nrows()
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn projected(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        self.x * a
    }

    /// Normalized weights of every center from squared distances in the
    /// given coordinates.
    fn weights_in(&self, coords: &DMatrix<f64>, h: f64) -> Vec<Vec<f64>> {
        let n = self.n();
        let q = coords.ncols();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let d2: Vec<f64> = (0..n)
                    .map(|j| {
                        (0..q)
                            .map(|c| {
                                let diff = coords[(j, c)] - coords[(i, c)];
                                diff * diff
                            })
                            .sum()
                    })
                    .collect();
                normalized_from_sq_dist(&d2, h)
            })
            .collect()
    }

    /// Local coefficients per center. Centers whose neighborhood holds fewer
    /// than `d+1` points are trimmed (`None`); the fit fails only when more
    /// than half of the centers are trimmed.
    fn ab_step(&self, a: &DMatrix<f64>, weights: &[Vec<f64>]) -> Result<LocalCoefs> {
        let n = self.n();
        let d = a.ncols();
        let z = self.projected(a);
        let solved: Vec<std::result::Result<DMatrix<f64>, (usize, usize)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let w = &weights[i];
                let effective = effective_count(w);
                if effective < d + 1 {
                    return Err((i, effective));
                }
                Ok(local_solve(n, d, w, self.u, |j, buf| {
                    for (c, slot) in buf.iter_mut().enumerate() {
                        *slot = z[(j, c)] - z[(i, c)];
                    }
                }))
            })
            .collect();
        let trimmed = solved.iter().filter(|r| r.is_err()).count();
        if 2 * trimmed > n {
            let (center, effective) = solved.iter().find_map(|r| r.as_ref().err().copied()).unwrap_or((0, 0));
            return Err(Error::DegenerateNeighborhood {
                center,
                effective,
                required: d + 1,
            });
        }
        Ok(solved.into_iter().map(|r| r.ok()).collect())
    }

    fn objective(&self, a: &DMatrix<f64>, weights: &[Vec<f64>], coefs: &LocalCoefs) -> f64 {
        let n = self.n();
        let d = a.ncols();
        let m = self.u.ncols();
        let z = self.projected(a);
        let per_center: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| {
                let Some(sol) = &coefs[i] else { return 0.0 };
                let w = &weights[i];
                let mut total = 0.0;
                for j in 0..n {
                    if w[j] == 0.0 {
                        continue;
                    }
                    for t in 0..m {
                        let mut fitted = sol[(0, t)];
                        for c in 0..d {
                            fitted += sol[(1 + c, t)] * (z[(j, c)] - z[(i, c)]);
                        }
                        let r = self.u[(j, t)] - fitted;
                        total += w[j] * r * r;
                    }
                }
                total
            })
            .collect();
        per_center.iter().sum::<f64>() / n as f64
    }

    /// Exact least-squares update of `vec(A)` given the local coefficients.
    ///
    /// The regressor of `b_itᵀ Aᵀ x_ij` is `b_it ⊗ x_ij`, so the normal
    /// matrix is `Σ_i (Σ_t b_it b_itᵀ) ⊗ C_i` with `C_i = Σ_j w_ij x_ij x_ijᵀ`.
    fn a_step(&self, d: usize, weights: &[Vec<f64>], coefs: &LocalCoefs) -> Result<DMatrix<f64>> {
        let n = self.n();
        let p = self.p();
        let m = self.u.ncols();
        let dim = p * d;
        let parts: Vec<(DMatrix<f64>, DVector<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let w = &weights[i];
                let Some(sol) = &coefs[i] else {
                    return (DMatrix::zeros(dim, dim), DVector::zeros(dim));
                };
                let mut c_i = DMatrix::zeros(p, p);
                let mut g = DMatrix::zeros(p, m);
                let mut xij = DVector::zeros(p);
                for j in 0..n {
                    let wj = w[j];
                    if wj == 0.0 {
                        continue;
                    }
                    for r in 0..p {
                        xij[r] = self.x[(j, r)] - self.x[(i, r)];
                    }
                    c_i.ger(wj, &xij, &xij, 1.0);
                    for t in 0..m {
                        let resid = self.u[(j, t)] - sol[(0, t)];
                        g.column_mut(t).axpy(wj * resid, &xij, 1.0);
                    }
                }
                let b = sol.rows(1, d);
                let bbt = &b * b.transpose();
                let mut normal = DMatrix::zeros(dim, dim);
                for k in 0..d {
                    for l in 0..d {
                        let s = bbt[(k, l)];
                        if s != 0.0 {
                            normal.view_mut((k * p, l * p), (p, p)).copy_from(&(&c_i * s));
                        }
                    }
                }
                let mut rhs = DVector::zeros(dim);
                for k in 0..d {
                    for t in 0..m {
                        let bk = sol[(1 + k, t)];
                        rhs.rows_mut(k * p, p).axpy(bk, &g.column(t), 1.0);
                    }
                }
                (normal, rhs)
            })
            .collect();
        let mut normal = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (nm, r) in &parts {
            normal += nm;
            rhs += r;
        }
        let solution = match normal.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => moore_penrose(&normal, 0.0)? * &rhs,
        };
        let a = DMatrix::from_column_slice(p, d, solution.as_slice());
        if a.iter().any(|v| !v.is_finite()) || a.norm() == 0.0 {
            return Err(Error::InvalidInput("direction update collapsed".into()));
        }
        Ok(a)
    }
}

/// Alternating least-squares minimization of Γ starting from [`opg_fit`].
///
/// `h` is the bandwidth of the kernel on the full `p`-dimensional predictor,
/// used for the OPG start and for the plain MAVE weights. RMAVE recomputes
/// the weights on `Aᵀ(X_j − X_i)` each iteration, starting from the same
/// tuning constant rescaled to `d` dimensions and shrinking by
/// `bandwidth_decay` down to `min_bandwidth_factor` of that start.
pub fn mave_fit(
    x: &DMatrix<f64>,
    u: &DMatrix<f64>,
    d: usize,
    h: f64,
    opts: &MaveOptions,
) -> Result<MaveFit> {
    validate(x, u, d, h)?;
    opts.validate()?;
    let (n, p) = x.shape();
    let start = opg_fit(x, u, d, h)?;
    let ws = Workspace { x, u };

    let full_weights = match opts.variant {
        MaveVariant::Rmave => None,
        _ => Some(ws.weights_in(x, h)),
    };
    let refined_start = {
        let c = h * (n as f64).powf(1.0 / (p as f64 + 4.0));
        c * (n as f64).powf(-1.0 / (d as f64 + 4.0))
    };
    let refined_floor = opts.min_bandwidth_factor * refined_start;
    let mut refined_h = refined_start;

    let mut a = start.matrix().clone();
    let weights_for = |a: &DMatrix<f64>, h_r: f64| -> Vec<Vec<f64>> {
        match &full_weights {
            Some(w) => w.clone(),
            None => ws.weights_in(&ws.projected(a), h_r),
        }
    };

    let mut weights = weights_for(&a, refined_h);
    let mut coefs = ws.ab_step(&a, &weights)?;
    let mut objective = vec![ws.objective(&a, &weights, &coefs)];

    if opts.variant == MaveVariant::Opg || d == p {
        return Ok(MaveFit {
            basis: start,
            objective,
            iterations: 0,
            converged: true,
        });
    }

    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let next = orthonormalize(&ws.a_step(d, &weights, &coefs)?);
        let moved = subspace_distance(&Basis::new(a.clone())?, &Basis::new(next.clone())?)?;
        a = next;
        if opts.variant == MaveVariant::Rmave {
            refined_h = (opts.bandwidth_decay * refined_h).max(refined_floor);
            weights = weights_for(&a, refined_h);
        }
        coefs = ws.ab_step(&a, &weights)?;
        objective.push(ws.objective(&a, &weights, &coefs));
        if moved < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(MaveFit {
        basis: Basis::new(a)?,
        objective,
        iterations,
        converged,
    })
}

/// Builds the `n × 2m` ensemble target matrix `{sin(t_i y), cos(t_i y)}` from
/// the standardized response, with frequencies drawn from `seed`.
pub fn ensemble_targets(y: &DVector<f64>, seed: u64, ensemble: &EnsembleOptions) -> Result<DMatrix<f64>> {
    let values = y.as_slice();
    let sd = sample_variance(values).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::InvalidInput("response is constant or non-finite".into()));
    }
    let centre = mean(values);
    let z: Vec<f64> = values.iter().map(|v| (v - centre) / sd).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let unif = Uniform::new(0.0, ensemble.max_frequency)
        .map_err(|e| Error::InvalidInput(format!("ensemble frequency range: {e}")))?;
    let freqs: Vec<f64> = (0..ensemble.frequencies).map(|_| unif.sample(&mut rng)).collect();
    let n = z.len();
    let mut u = DMatrix::zeros(n, 2 * freqs.len());
    for (k, &t) in freqs.iter().enumerate() {
        for (i, &zi) in z.iter().enumerate() {
            u[(i, 2 * k)] = (t * zi).sin();
            u[(i, 2 * k + 1)] = (t * zi).cos();
        }
    }
    Ok(u)
}

/// MAVE-ensemble estimate of the central subspace: a joint MAVE fit with a
/// shared direction matrix across all sine/cosine transforms of `Y`.
pub fn ensemble_central_subspace(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    d: usize,
    h: f64,
    seed: u64,
    opts: &MaveOptions,
    ensemble: &EnsembleOptions,
) -> Result<MaveFit> {
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!(
            "{} predictor rows, {} responses",
            x.nrows(),
            y.len()
        )));
    }
    let u = ensemble_targets(y, seed, ensemble)?;
    mave_fit(x, &u, d, h, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn normal_matrix(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn column(v: Vec<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, &v)
    }

    #[test]
    fn opg_full_dimension_spans_everything() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let x = normal_matrix(&mut rng, 60, 3);
        let u = column((0..60).map(|i| x[(i, 0)] + x[(i, 1)].powi(2)).collect());
        let b = opg_fit(&x, &u, 3, 1.5).unwrap();
        let id = Basis::new(DMatrix::identity(3, 3)).unwrap();
        assert!(subspace_distance(&b, &id).unwrap() < 1e-10);
    }

    #[test]
    fn opg_recovers_cubic_index() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = normal_matrix(&mut rng, 400, 5);
        let u = column((0..400).map(|i| x[(i, 0)].powi(3)).collect());
        let h = 1.5 * 400f64.powf(-1.0 / 9.0);
        let b = opg_fit(&x, &u, 1, h).unwrap();
        let truth = Basis::coordinate(5, &[0]).unwrap();
        assert!(subspace_distance(&b, &truth).unwrap() < 0.1);
    }

    #[test]
    fn mave_objective_never_increases() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let x = normal_matrix(&mut rng, 200, 4);
        let u = column(
            (0..200)
                .map(|i| x[(i, 0)] * (x[(i, 0)] + x[(i, 1)] + 1.0) + 0.5 * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        let fit = mave_fit(&x, &u, 2, 1.2, &MaveOptions::with_variant(MaveVariant::Mave)).unwrap();
        assert!(fit.objective.len() >= 2);
        for w in fit.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-10), "objective rose: {:?}", fit.objective);
        }
        let g = fit.basis.matrix().transpose() * fit.basis.matrix();
        assert!((g - DMatrix::identity(2, 2)).amax() < 1e-10);
    }

    #[test]
    fn ensemble_is_deterministic_and_affine_invariant() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let x = normal_matrix(&mut rng, 120, 4);
        let y = DVector::from_fn(120, |i, _| x[(i, 0)] + 0.3 * x[(i, 1)].powi(2));
        let opts = MaveOptions::default();
        let ens = EnsembleOptions::default();
        let a = ensemble_central_subspace(&x, &y, 2, 1.3, 11, &opts, &ens).unwrap();
        let b = ensemble_central_subspace(&x, &y, 2, 1.3, 11, &opts, &ens).unwrap();
        assert_eq!(a.basis, b.basis);
        let shifted = y.map(|v| 5.0 * v + 2.0);
        let c = ensemble_central_subspace(&x, &shifted, 2, 1.3, 11, &opts, &ens).unwrap();
        assert!(subspace_distance(&a.basis, &c.basis).unwrap() < 1e-8);
    }

    #[test]
    fn constant_response_is_rejected() {
        let x = DMatrix::from_element(10, 2, 1.0);
        let y = DVector::from_element(10, 3.0);
        assert!(ensemble_central_subspace(&x, &y, 1, 1.0, 0, &MaveOptions::default(), &EnsembleOptions::default()).is_err());
    }

    #[test]
    fn invalid_options_are_rejected() {
        let mut opts = MaveOptions::default();
        opts.max_iters = 0;
        assert!(opts.validate().is_err());
        let mut opts = MaveOptions::default();
        opts.bandwidth_decay = 1.5;
        assert!(opts.validate().is_err());
    }
}
