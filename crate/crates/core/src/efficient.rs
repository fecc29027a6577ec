//! Efficient score, efficient information and the one-step Newton–Raphson
//! estimator built on them.
//!
//! The efficient score of `vec(β)` factors as `S = q4 · τ_c` with
//!
//! ```text
//! q1 = ∂E[T | βᵀX] / ∂vec(β)
//! q3 = q1 − E[q1 / q2 | βᵀX] / E[1 / q2 | βᵀX]
//! q4 = q3 / q2
//! ```
//!
//! where `q2 = Var(τ_c | X)`. The estimator starts from a MAVE fit `β̃` and
//! takes `β̂ = β̃ + unvec(J† E_n[S])` with `J = E_n[S Sᵀ]`.
//!
//! `vec` is column stacking throughout: entry `k·d + r` of a row of `q1`
//! corresponds to `β[r, k]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage, StageExt};
use crate::functionals::{
    proxy_response, q2_values, quantile_context_on_index, tau_c, Bandwidths, FunctionalSpec,
    ProxyContext,
};
use crate::mave::{ensemble_central_subspace, mave_fit, EnsembleOptions, MaveFit, MaveOptions, MaveVariant};
use crate::numerics::{
    bandwidth, moore_penrose_truncated, orthonormalize, sample_variance, unvec, Basis, KernelSpec,
};
use crate::smoothing::{kernel_weights, local_fit_at_samples_or_constant, smooth_at_samples};
use crate::tuning::{cross_validate_c, TuningStage, DEFAULT_GRID};

/// Per-observation building blocks of the efficient score.
#[derive(Debug, Clone)]
pub struct ScoreParts {
    pub tau_c: DVector<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DVector<f64>,
    pub q3: DMatrix<f64>,
    pub q4: DMatrix<f64>,
    /// `S_i = τ_c,i · q4_i`, one row per observation.
    pub score_rows: DMatrix<f64>,
    /// `E_n[S]`.
    pub score_mean: DVector<f64>,
}

/// `q1` rows `vec(X_i b_iᵀ)` where `b_i` is the local gradient of `target`
/// with respect to the index `βᵀX` at observation `i`.
pub fn q1_values(x: &DMatrix<f64>, target: &DVector<f64>, beta: &Basis, h_index: f64) -> Result<DMatrix<f64>> {
    if x.nrows() != target.len() {
        return Err(Error::Dimension(format!(
            "{} predictor rows, target of length {}",
            x.nrows(),
            target.len()
        )));
    }
    let (n, d) = x.shape();
    let s = beta.d();
    let z = x * beta.matrix();
    let u = DMatrix::from_column_slice(n, 1, target.as_slice());
    let fit = local_fit_at_samples_or_constant(&z, &u, h_index)?;
    let mut q1 = DMatrix::zeros(n, d * s);
    for i in 0..n {
        for k in 0..s {
            let b = fit.slopes[(i, k)];
            for r in 0..d {
                q1[(i, k * d + r)] = x[(i, r)] * b;
            }
        }
    }
    Ok(q1)
}

/// Centers `q1` by its `1/q2`-weighted conditional mean given `βᵀX`.
///
/// Both conditional expectations are local-linear intercepts on the index.
/// Where the fitted `E[1/q2 | βᵀX]` is not positive (possible at the edge of
/// the design for a local-linear fit) the ratio falls back to the kernel
/// weighted average, which is always a convex combination.
pub fn q3_q4_values(
    q1: &DMatrix<f64>,
    q2: &DVector<f64>,
    x: &DMatrix<f64>,
    beta: &Basis,
    h_index: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, k) = q1.shape();
    if q2.len() != n || x.nrows() != n {
        return Err(Error::Dimension("q1, q2 and x must share the sample size".into()));
    }
    if q2.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Contract("q2 must be strictly positive".into()));
    }
    let z = x * beta.matrix();
    let mut u = DMatrix::zeros(n, k + 1);
    for i in 0..n {
        let w = 1.0 / q2[i];
        for c in 0..k {
            u[(i, c)] = q1[(i, c)] * w;
        }
        u[(i, k)] = w;
    }
    let fit = local_fit_at_samples_or_constant(&z, &u, h_index)?;
    let mut q3 = q1.clone();
    for i in 0..n {
        let den = fit.intercepts[(i, k)];
        if den > 0.0 && den.is_finite() {
            for c in 0..k {
                q3[(i, c)] -= fit.intercepts[(i, c)] / den;
            }
        } else {
            let center: Vec<f64> = z.row(i).iter().cloned().collect();
            let w = kernel_weights(&z, &center, h_index);
            let den: f64 = (0..n).map(|j| w[j] * u[(j, k)]).sum();
            for c in 0..k {
                let num: f64 = (0..n).map(|j| w[j] * u[(j, c)]).sum();
                q3[(i, c)] -= num / den;
            }
        }
    }
    let mut q4 = q3.clone();
    for i in 0..n {
        let inv = 1.0 / q2[i];
        q4.row_mut(i).scale_mut(inv);
    }
    Ok((q3, q4))
}

/// Assembles `S_i = τ_c,i · q4_i` and its sample mean.
pub fn efficient_score(
    tau_c: DVector<f64>,
    q1: DMatrix<f64>,
    q2: DVector<f64>,
    q3: DMatrix<f64>,
    q4: DMatrix<f64>,
) -> Result<ScoreParts> {
    let n = tau_c.len();
    if q1.nrows() != n || q2.len() != n || q3.nrows() != n || q4.nrows() != n {
        return Err(Error::Dimension("score components disagree on the sample size".into()));
    }
    if q1.shape() != q3.shape() || q3.shape() != q4.shape() {
        return Err(Error::Dimension("q1, q3 and q4 must have the same shape".into()));
    }
    let mut score_rows = q4.clone();
    for i in 0..n {
        score_rows.row_mut(i).scale_mut(tau_c[i]);
    }
    if score_rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("efficient score has non-finite entries".into()));
    }
    let score_mean = score_mean(&score_rows);
    Ok(ScoreParts {
        tau_c,
        q1,
        q2,
        q3,
        q4,
        score_rows,
        score_mean,
    })
}

fn score_mean(rows: &DMatrix<f64>) -> DVector<f64> {
    let n = rows.nrows().max(1) as f64;
    DVector::from_iterator(rows.ncols(), rows.column_iter().map(|c| c.sum() / n))
}

/// Sample efficient information `J = E_n[S_i S_iᵀ]`.
pub fn efficient_information(score_rows: &DMatrix<f64>) -> DMatrix<f64> {
    let n = score_rows.nrows().max(1) as f64;
    let mut j = score_rows.transpose() * score_rows;
    j /= n;
    // exact symmetry regardless of the product's rounding
    let jt = j.transpose();
    (j + jt) * 0.5
}

/// Outcome of [`one_step_update`].
#[derive(Debug, Clone)]
pub struct Update {
    pub basis: Basis,
    /// Set when the information matrix vanished and the input was returned.
    pub warning: Option<String>,
}

/// `β̂ = orthonormalize(β̃ + unvec(J† E_n[S]))`.
///
/// `rank` caps the pseudo-inverse at the leading singular directions of
/// `J`; `None` keeps every direction above the default relative cutoff.
pub fn one_step_update(
    beta_init: &Basis,
    score_mean: &DVector<f64>,
    info: &DMatrix<f64>,
    rank: Option<usize>,
) -> Result<Update> {
    let (d, s) = (beta_init.p(), beta_init.d());
    let k = d * s;
    if score_mean.len() != k || info.shape() != (k, k) {
        return Err(Error::Dimension(format!(
            "β is {d}×{s}, score has {} entries, information is {}×{}",
            score_mean.len(),
            info.nrows(),
            info.ncols()
        )));
    }
    if info.iter().all(|&v| v == 0.0) {
        return Ok(Update {
            basis: beta_init.clone(),
            warning: Some("efficient information is zero; estimate left unchanged".into()),
        });
    }
    let pinv = moore_penrose_truncated(info, rank.unwrap_or(k))?;
    let step = pinv * score_mean;
    let updated = beta_init.matrix() + unvec(&step, d, s);
    match Basis::new(updated) {
        Ok(b) => Ok(Update {
            basis: Basis::new(orthonormalize(b.matrix()))?,
            warning: None,
        }),
        Err(e) => Ok(Update {
            basis: beta_init.clone(),
            warning: Some(format!("Newton step produced an invalid basis ({e}); estimate left unchanged")),
        }),
    }
}

/// Number of free parameters of an `s`-dimensional subspace of `R^d`; the
/// rank of the efficient information.
pub fn identified_rank(d: usize, s: usize) -> usize {
    s * (d - s)
}

/// The functional value per observation whose index gradient gives `q1`.
fn q1_target(
    spec: &FunctionalSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    ctx: &ProxyContext,
    bw: &Bandwidths,
) -> Result<DVector<f64>> {
    match spec {
        FunctionalSpec::Mean { .. } | FunctionalSpec::Moment { .. } => {
            Ok(y.map(|v| spec.linear_transform(v).unwrap_or(f64::NAN)))
        }
        FunctionalSpec::Variance => smooth_at_samples(x, &ctx.proxy, bw.predictor),
        FunctionalSpec::Quantile { .. } => Ok(ctx.proxy.clone()),
    }
}

#[derive(Debug, Clone)]
pub struct NewtonStep {
    pub parts: ScoreParts,
    pub info: DMatrix<f64>,
    pub update: Update,
}

/// Score components at `beta`.
pub fn score_at(
    spec: &FunctionalSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &Basis,
    ctx: &ProxyContext,
    bw: &Bandwidths,
) -> Result<ScoreParts> {
    let local_ctx = match spec {
        FunctionalSpec::Quantile { .. } => quantile_context_on_index(x, y, beta, ctx, bw)?,
        _ => ctx.clone(),
    };
    let tau = tau_c(spec, x, y, beta, &local_ctx, bw)?;
    let q2 = q2_values(spec, x, y, beta, &local_ctx, bw)?;
    let target = q1_target(spec, x, y, ctx, bw)?;
    let q1 = q1_values(x, &target, beta, bw.index)?;
    let (q3, q4) = q3_q4_values(&q1, &q2, x, beta, bw.index)?;
    efficient_score(tau, q1, q2, q3, q4)
}

/// Full score evaluation and one Newton step at `beta`.
pub fn newton_step(
    spec: &FunctionalSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &Basis,
    ctx: &ProxyContext,
    bw: &Bandwidths,
) -> Result<NewtonStep> {
    let parts = score_at(spec, x, y, beta, ctx, bw)?;
    let info = efficient_information(&parts.score_rows);
    let rank = identified_rank(beta.p(), beta.d());
    let update = one_step_update(beta, &parts.score_mean, &info, Some(rank))?;
    Ok(NewtonStep { parts, info, update })
}

/// A bandwidth constant: fixed, or chosen by five-fold cross validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthChoice {
    Fixed(f64),
    Auto,
}

/// Tuning constants `c` for the four stages; each stage derives its
/// bandwidths as `c · n^(−1/(q+4))` for its smoothing dimension `q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthConstants {
    pub step1: BandwidthChoice,
    pub step2: BandwidthChoice,
    pub step3: BandwidthChoice,
    pub step4: BandwidthChoice,
}

impl Default for BandwidthConstants {
    fn default() -> Self {
        Self {
            step1: BandwidthChoice::Fixed(2.0),
            step2: BandwidthChoice::Fixed(1.0),
            step3: BandwidthChoice::Fixed(1.0),
            step4: BandwidthChoice::Fixed(1.0),
        }
    }
}

impl BandwidthConstants {
    pub fn auto() -> Self {
        Self {
            step1: BandwidthChoice::Auto,
            step2: BandwidthChoice::Auto,
            step3: BandwidthChoice::Auto,
            step4: BandwidthChoice::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeeConfig {
    pub constants: BandwidthConstants,
    /// Options of the MAVE fits in steps 1 and 3.
    pub mave: MaveOptions,
    pub ensemble: EnsembleOptions,
    /// Number of Newton steps; the estimator proper takes exactly one.
    pub newton_steps: usize,
    /// Candidate constants for the `Auto` stages.
    pub grid: Vec<f64>,
    /// Exponent of the distance correlation used to tune step 1.
    pub dcor_exponent: f64,
    pub seed: u64,
}

impl Default for SeeConfig {
    fn default() -> Self {
        Self {
            constants: BandwidthConstants::default(),
            mave: MaveOptions::default(),
            ensemble: EnsembleOptions::default(),
            newton_steps: 1,
            grid: DEFAULT_GRID.to_vec(),
            dcor_exponent: 1.0,
            seed: 0,
        }
    }
}

impl SeeConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mave.validate()?;
        if self.newton_steps == 0 {
            return Err(Error::InvalidInput("newton_steps must be at least 1".into()));
        }
        if self.grid.is_empty() || self.grid.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidInput("tuning grid must be non-empty and positive".into()));
        }
        for choice in [
            self.constants.step1,
            self.constants.step2,
            self.constants.step3,
            self.constants.step4,
        ] {
            if let BandwidthChoice::Fixed(c) = choice {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::InvalidInput(format!("bandwidth constant {c} must be positive")));
                }
            }
        }
        if self.ensemble.frequencies == 0 || !(self.ensemble.max_frequency > 0.0) {
            return Err(Error::InvalidInput("ensemble needs at least one positive frequency".into()));
        }
        if !(self.dcor_exponent > 0.0 && self.dcor_exponent < 2.0) {
            return Err(Error::InvalidInput("distance-correlation exponent must lie in (0, 2)".into()));
        }
        Ok(())
    }
}

/// Bandwidths of the step-4 kernels for constant `c`: predictor
/// (`d`-dimensional), index (`s`-dimensional) and response (scaled by the
/// response's standard deviation).
pub fn newton_bandwidths(c: f64, n: usize, d: usize, s: usize, y: &DVector<f64>) -> Result<Bandwidths> {
    let sd = sample_variance(y.as_slice()).sqrt();
    let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
    Ok(Bandwidths {
        predictor: bandwidth(&KernelSpec::new(c, d, n)?),
        index: bandwidth(&KernelSpec::new(c, s, n)?),
        response: scale * bandwidth(&KernelSpec::new(c, 1, n)?),
    })
}

/// Bandwidths used by the proxy stage.
pub fn proxy_bandwidths(c: f64, n: usize, d: usize, y: &DVector<f64>) -> Result<(f64, f64)> {
    let bw = newton_bandwidths(c, n, d, 1, y)?;
    Ok((bw.predictor, bw.response))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaveSummary {
    pub iterations: usize,
    pub converged: bool,
    pub objective: Vec<f64>,
}

impl From<&MaveFit> for MaveSummary {
    fn from(fit: &MaveFit) -> Self {
        Self {
            iterations: fit.iterations,
            converged: fit.converged,
            objective: fit.objective.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Resolved constants `c` for steps 1–4.
    pub constants: [f64; 4],
    pub step1: Option<MaveSummary>,
    pub step3: MaveSummary,
    pub newton_bandwidths: Bandwidths,
    /// `‖E_n[S]‖` at `β̃`.
    pub score_norm: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    /// `ζ̂ β̂` in the original predictor space.
    pub beta_hat: Basis,
    /// `ζ̂ β̃`: the step-3 MAVE initializer in the original space.
    pub beta_init: Basis,
    /// `ζ̂`, the working central-subspace basis from step 1.
    pub central_subspace: Basis,
    /// `β̂` in the reduced coordinates `X = ζ̂ᵀX̃`.
    pub beta_hat_reduced: Basis,
    pub beta_init_reduced: Basis,
    pub info: DMatrix<f64>,
    pub score_mean: DVector<f64>,
    pub diagnostics: Diagnostics,
}

impl EstimateResult {
    /// Sufficient predictors `β̂ᵀ X̃_i` as an `n × s` matrix.
    pub fn sufficient_predictors(&self, x_raw: &DMatrix<f64>) -> DMatrix<f64> {
        x_raw * self.beta_hat.matrix()
    }
}

fn resolve(choice: BandwidthChoice, tune: impl FnOnce() -> Result<f64>) -> Result<f64> {
    match choice {
        BandwidthChoice::Fixed(c) => Ok(c),
        BandwidthChoice::Auto => tune(),
    }
}

/// The complete estimator: central subspace, proxy response, MAVE start and
/// one efficient Newton step.
pub fn see_estimate(
    x_raw: &DMatrix<f64>,
    y: &DVector<f64>,
    spec: &FunctionalSpec,
    s: usize,
    working_dim: usize,
    config: &SeeConfig,
) -> Result<EstimateResult> {
    spec.validate()?;
    config.validate()?;
    let (n, p_raw) = x_raw.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} predictor rows, {} responses", y.len())));
    }
    if !(1 <= s && s <= working_dim && working_dim <= p_raw) {
        return Err(Error::Dimension(format!(
            "need 1 <= s <= working dimension <= p, got s={s}, d={working_dim}, p={p_raw}"
        )));
    }
    if n < 10 {
        return Err(Error::InvalidInput(format!("{n} observations are too few")));
    }
    let mut warnings = Vec::new();
    let seed = config.seed;

    // step 1
    let c1 = resolve(config.constants.step1, || {
        let stage = TuningStage::CentralSubspace {
            working_dim,
            mave: &config.mave,
            ensemble: &config.ensemble,
            dcor_exponent: config.dcor_exponent,
        };
        cross_validate_c(&stage, &config.grid, x_raw, y, spec, seed ^ 0x51).map(|r| r.chosen)
    })
    .stage(Stage::Tuning)?;
    let (zeta, step1) = if working_dim == p_raw {
        (Basis::new(DMatrix::identity(p_raw, p_raw))?, None)
    } else {
        let h1 = bandwidth(&KernelSpec::new(c1, p_raw, n)?);
        let fit = ensemble_central_subspace(x_raw, y, working_dim, h1, seed, &config.mave, &config.ensemble)
            .stage(Stage::CentralSubspace)?;
        if !fit.converged {
            warnings.push(format!("step 1 MAVE-ensemble did not converge in {} iterations", fit.iterations));
        }
        let summary = MaveSummary::from(&fit);
        (fit.basis, Some(summary))
    };
    let x = x_raw * zeta.matrix();
    let d = working_dim;

    // step 2
    let c2 = if spec.is_linear() {
        match config.constants.step2 {
            BandwidthChoice::Fixed(c) => c,
            BandwidthChoice::Auto => 1.0,
        }
    } else {
        resolve(config.constants.step2, || {
            cross_validate_c(&TuningStage::Proxy, &config.grid, &x, y, spec, seed ^ 0x52).map(|r| r.chosen)
        })
        .stage(Stage::Tuning)?
    };
    let (h2, h2_y) = proxy_bandwidths(c2, n, d, y)?;
    let ctx = proxy_response(spec, &x, y, h2, h2_y).stage(Stage::Proxy)?;

    // step 3
    let c3 = resolve(config.constants.step3, || {
        let stage = TuningStage::Initial {
            s,
            proxy: &ctx.proxy,
            mave: &config.mave,
        };
        cross_validate_c(&stage, &config.grid, &x, y, spec, seed ^ 0x53).map(|r| r.chosen)
    })
    .stage(Stage::Tuning)?;
    let h3 = bandwidth(&KernelSpec::new(c3, d, n)?);
    let initial = mave_fit(&x, &DMatrix::from_column_slice(n, 1, ctx.proxy.as_slice()), s, h3, &config.mave)
        .stage(Stage::Initial)?;
    if !initial.converged {
        warnings.push(format!("step 3 MAVE did not converge in {} iterations", initial.iterations));
    }
    let beta_tilde = initial.basis.clone();

    // step 4
    let c4 = resolve(config.constants.step4, || {
        let stage = TuningStage::Newton {
            s,
            beta_init: &beta_tilde,
            proxy_constant: c2,
        };
        cross_validate_c(&stage, &config.grid, &x, y, spec, seed ^ 0x54).map(|r| r.chosen)
    })
    .stage(Stage::Tuning)?;
    let bw = newton_bandwidths(c4, n, d, s, y)?;
    let mut beta = beta_tilde.clone();
    let mut info = DMatrix::zeros(d * s, d * s);
    let mut score = DVector::zeros(d * s);
    let mut score_norm = 0.0;
    for step in 0..config.newton_steps {
        let result = newton_step(spec, &x, y, &beta, &ctx, &bw).stage(Stage::Newton)?;
        if step == 0 {
            score_norm = result.parts.score_mean.norm();
            info = result.info.clone();
            score = result.parts.score_mean.clone();
        }
        if let Some(w) = result.update.warning {
            warnings.push(w);
        }
        beta = result.update.basis;
    }

    let beta_hat = zeta.embed(&beta).stage(Stage::Newton)?;
    let beta_init = zeta.embed(&beta_tilde).stage(Stage::Initial)?;
    Ok(EstimateResult {
        beta_hat,
        beta_init,
        central_subspace: zeta,
        beta_hat_reduced: beta,
        beta_init_reduced: beta_tilde,
        info,
        score_mean: score,
        diagnostics: Diagnostics {
            constants: [c1, c2, c3, c4],
            step1,
            step3: MaveSummary::from(&initial),
            newton_bandwidths: bw,
            score_norm,
            warnings,
        },
    })
}

/// RMAVE directly on the raw predictors with `Y` (or `f(Y)`) as the single
/// target: the classical central-mean-subspace estimator.
pub fn rmave_estimate(
    x_raw: &DMatrix<f64>,
    y: &DVector<f64>,
    s: usize,
    constant: f64,
    opts: &MaveOptions,
) -> Result<Basis> {
    let (n, p) = x_raw.shape();
    let h = bandwidth(&KernelSpec::new(constant, p, n)?);
    let opts = MaveOptions {
        variant: MaveVariant::Rmave,
        ..opts.clone()
    };
    let u = DMatrix::from_column_slice(n, 1, y.as_slice());
    Ok(mave_fit(x_raw, &u, s, h, &opts)?.basis)
}
