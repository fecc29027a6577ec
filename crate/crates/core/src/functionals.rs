//! Target functionals: proxy responses, centered Riesz representations
//! `τ_c` and the conditional variances `q2` of the efficient score.
//!
//! Three families are supported:
//! - linear functionals `E[f(Y) | X]` (conditional mean and moments),
//! - the composite functional `Var(Y | X) = E[Y² | X] − E²[Y | X]`,
//! - implicit functionals solving `E[e(ξ, Y) | X] = 0`, specialized to
//!   conditional quantiles with `e(ξ, y) = −sgn(y − ξ) + 1 − 2p`.
//!
//! Other smooth composites `ρ(E[f_1|X], …)` and other estimating functions
//! would plug in at [`FunctionalSpec`]; only the cases above are shipped.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_variance, Basis};
use crate::smoothing::{
    conditional_density, kernel_weights, nadaraya_watson_at_samples, smooth_at_samples, weighted_quantile,
};

/// Floor applied to `q2`, as a fraction of the mean raw estimate.
pub const Q2_FLOOR_FACTOR: f64 = 0.1;

/// Response transform `f` of a linear functional `E[f(Y) | X]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResponseMap {
    Identity,
    /// `log(y)`; requires a positive response.
    Log,
    /// `1{y ≤ threshold}`, giving the conditional distribution function.
    Indicator { threshold: f64 },
}

impl ResponseMap {
    pub fn apply(&self, y: f64) -> f64 {
        match *self {
            ResponseMap::Identity => y,
            ResponseMap::Log => y.ln(),
            ResponseMap::Indicator { threshold } => {
                if y <= threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FunctionalSpec {
    Mean { f: ResponseMap },
    Moment { k: u32 },
    Variance,
    Quantile { p: f64 },
}

impl FunctionalSpec {
    pub fn mean() -> Self {
        FunctionalSpec::Mean {
            f: ResponseMap::Identity,
        }
    }

    pub fn median() -> Self {
        FunctionalSpec::Quantile { p: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            FunctionalSpec::Moment { k: 0 } => {
                Err(Error::InvalidInput("moment order must be at least 1".into()))
            }
            FunctionalSpec::Quantile { p } if !(p > 0.0 && p < 1.0) => Err(Error::InvalidInput(
                format!("quantile level must lie strictly inside (0, 1), got {p}"),
            )),
            _ => Ok(()),
        }
    }

    /// `f(y)` for linear functionals.
    pub fn linear_transform(&self, y: f64) -> Option<f64> {
        match *self {
            FunctionalSpec::Mean { f } => Some(f.apply(y)),
            FunctionalSpec::Moment { k } => Some(y.powi(k as i32)),
            _ => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, FunctionalSpec::Mean { .. } | FunctionalSpec::Moment { .. })
    }
}

impl fmt::Display for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalSpec::Mean {
                f: ResponseMap::Identity,
            } => write!(f, "E(Y|X)"),
            FunctionalSpec::Mean { f: map } => write!(f, "E(f(Y)|X) f={map:?}"),
            FunctionalSpec::Moment { k } => write!(f, "E(Y^{k}|X)"),
            FunctionalSpec::Variance => write!(f, "Var(Y|X)"),
            FunctionalSpec::Quantile { p } if *p == 0.5 => write!(f, "M(Y|X)"),
            FunctionalSpec::Quantile { p } => write!(f, "Q_{p}(Y|X)"),
        }
    }
}

/// Bandwidths of the three kernel families: on the full predictor, on the
/// index `βᵀX`, and on the response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub predictor: f64,
    pub index: f64,
    pub response: f64,
}

/// Per-observation proxy responses plus whatever the functional needs later.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyContext {
    pub proxy: DVector<f64>,
    /// `Ê(Y|X)` for the variance functional; the conditional quantile `ξ`
    /// for quantile functionals.
    pub auxiliary: Option<DVector<f64>>,
    /// `η̂(X_i, ξ_i)` for quantile functionals.
    pub density_at_quantile: Option<DVector<f64>>,
}

impl ProxyContext {
    fn require_auxiliary(&self, spec: &FunctionalSpec) -> Result<&DVector<f64>> {
        self.auxiliary
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{spec} needs an auxiliary vector in the proxy context")))
    }

    fn require_density(&self, spec: &FunctionalSpec) -> Result<&DVector<f64>> {
        self.density_at_quantile
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{spec} needs conditional densities in the proxy context")))
    }
}

fn check_lengths(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} predictor rows, {} responses",
            x.nrows(),
            y.len()
        )));
    }
    Ok(())
}

fn linear_values(spec: &FunctionalSpec, y: &DVector<f64>) -> Result<DVector<f64>> {
    let out = y.map(|v| spec.linear_transform(v).unwrap_or(f64::NAN));
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{spec}: f(Y) is not finite for every observation")));
    }
    Ok(out)
}

/// Conditional quantile at every sample point: the kernel-weighted sample
/// `p`-quantile of `Y`.
pub fn local_quantiles(x: &DMatrix<f64>, y: &DVector<f64>, p: f64, h: f64) -> DVector<f64> {
    local_quantiles_at(x, y, x, p, h)
}

/// Conditional quantile at each row of `centers`.
pub fn local_quantiles_at(x: &DMatrix<f64>, y: &DVector<f64>, centers: &DMatrix<f64>, p: f64, h: f64) -> DVector<f64> {
    let values = y.as_slice();
    let out: Vec<f64> = (0..centers.nrows())
        .into_par_iter()
        .map(|i| {
            let center: Vec<f64> = centers.row(i).iter().cloned().collect();
            let w = kernel_weights(x, &center, h);
            weighted_quantile(values, &w, p)
        })
        .collect();
    DVector::from_vec(out)
}

/// Kernel conditional density of `Y` at `(X_i, at_i)` for every observation.
pub fn densities_at(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    at: &DVector<f64>,
    h: f64,
    h_y: f64,
) -> Result<DVector<f64>> {
    let out: Vec<Result<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let x0: Vec<f64> = x.row(i).iter().cloned().collect();
            conditional_density(x, y, &x0, at[i], h, h_y)
        })
        .collect();
    Ok(DVector::from_vec(out.into_iter().collect::<Result<Vec<_>>>()?))
}

fn median_of(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Raises density estimates to a fraction of their median. Kernel
/// densities near zero at a few rows would otherwise dominate `τ_c` and `q2`.
pub fn floor_densities(density: DVector<f64>) -> DVector<f64> {
    let floor = Q2_FLOOR_FACTOR * median_of(density.iter().copied());
    if floor > 0.0 {
        density.map(|v| if v > floor { v } else { floor })
    } else {
        density
    }
}

/// Proxy response `Ŷ_i` estimating the functional at `X_i`.
///
/// `h` smooths on the full predictor; `h_y` is the response bandwidth used
/// only for the quantile density.
pub fn proxy_response(
    spec: &FunctionalSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    h: f64,
    h_y: f64,
) -> Result<ProxyContext> {
    spec.validate()?;
    check_lengths(x, y)?;
    match *spec {
        FunctionalSpec::Mean { .. } | FunctionalSpec::Moment { .. } => Ok(ProxyContext {
            proxy: linear_values(spec, y)?,
            auxiliary: None,
            density_at_quantile: None,
        }),
        FunctionalSpec::Variance => {
            let fitted = smooth_at_samples(x, y, h)?;
            let proxy = y.zip_map(&fitted, |v, m| (v - m) * (v - m));
            Ok(ProxyContext {
                proxy,
                auxiliary: Some(fitted),
                density_at_quantile: None,
            })
        }
        FunctionalSpec::Quantile { p } => {
            let xi = local_quantiles(x, y, p, h);
            let density = floor_densities(densities_at(x, y, &xi, h, h_y)?);
            Ok(ProxyContext {
                proxy: xi.clone(),
                auxiliary: Some(xi),
                density_at_quantile: Some(density),
            })
        }
    }
}

/// Quantile context evaluated along the index: `ξ̄_i = Ê[ξ̂ | βᵀX]_i` and
/// the conditional density at `(X_i, ξ̄_i)`.
pub fn quantile_context_on_index(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &Basis,
    ctx: &ProxyContext,
    bw: &Bandwidths,
) -> Result<ProxyContext> {
    let z = x * beta.matrix();
    let smoothed = smooth_at_samples(&z, &ctx.proxy, bw.index)?;
    let density = floor_densities(densities_at(x, y, &smoothed, bw.predictor, bw.response)?);
    Ok(ProxyContext {
        proxy: ctx.proxy.clone(),
        auxiliary: Some(smoothed),
        density_at_quantile: Some(density),
    })
}

/// Sign with the convention `sgn(0) = 1`.
fn sgn(a: f64) -> f64 {
    if a >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Centered Riesz representation `τ_c` of the functional's derivative.
///
/// Conditional expectations given `βᵀX` are local-linear intercepts with
/// bandwidth `bw.index`.
pub fn tau_c(
    spec: &FunctionalSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &Basis,
    ctx: &ProxyContext,
    bw: &Bandwidths,
) -> Result<DVector<f64>> {
    spec.validate()?;
    check_lengths(x, y)?;
    let z = x * beta.matrix();
    match *spec {
        FunctionalSpec::Mean { .. } | FunctionalSpec::Moment { .. } => {
            let f = linear_values(spec, y)?;
            let fitted = smooth_at_samples(&z, &f, bw.index)?;
            Ok(f - fitted)
        }
        FunctionalSpec::Variance => {
            let mean_fit = ctx.require_auxiliary(spec)?;
            let sq = y.zip_map(mean_fit, |v, m| (v - m) * (v - m));
            let fitted = smooth_at_samples(&z, &sq, bw.index)?;
            Ok(sq - fitted)
        }
        FunctionalSpec::Quantile { p } => {
            let xi = ctx.require_auxiliary(spec)?;
            let eta = ctx.require_density(spec)?;
            Ok(DVector::from_fn(y.len(), |i, _| {
                (sgn(y[i] - xi[i]) + 2.0 * p - 1.0) / (2.0 * eta[i])
            }))
        }
    }
}

/// Floor applied to `q2`: a fraction of the median raw estimate, so the
/// weights `1/q2` stay within a bounded ratio of each other. Falls back to a
/// tiny multiple of the proxy's variance when the raw estimate vanishes.
pub fn q2_floor(ctx: &ProxyContext, raw: &DVector<f64>) -> f64 {
    let floor = Q2_FLOOR_FACTOR * median_of(raw.iter().map(|&v| v.max(0.0)));
    if floor > 0.0 && floor.is_finite() {
        return floor;
    }
    let v = 1e-6 * sample_variance(ctx.proxy.as_slice());
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1e-12
    }
}

/// Raw (unfloored) conditional variance `q2 = Var(τ_c | X)`.
///
/// For linear and variance functionals this is `Ê[(V − Ê[V|·])² | X]` with
/// `V = f(Y)` centered on the index fit, resp. `V` the squared residual; for
/// quantiles `p(1−p)/η̂²`. The outer smoother is local-constant so the
/// estimate cannot go negative.
pub fn q2_raw(
    spec: &FunctionalSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &Basis,
    ctx: &ProxyContext,
    bw: &Bandwidths,
) -> Result<DVector<f64>> {
    spec.validate()?;
    check_lengths(x, y)?;
    match *spec {
        FunctionalSpec::Mean { .. } | FunctionalSpec::Moment { .. } => {
            let f = linear_values(spec, y)?;
            let z = x * beta.matrix();
            let index_fit = smooth_at_samples(&z, &f, bw.index)?;
            let sq = f.zip_map(&index_fit, |v, m| (v - m) * (v - m));
            nadaraya_watson_at_samples(x, &sq, bw.predictor)
        }
        FunctionalSpec::Variance => {
            let proxy = &ctx.proxy;
            let level = smooth_at_samples(x, proxy, bw.predictor)?;
            let sq = proxy.zip_map(&level, |v, m| (v - m) * (v - m));
            nadaraya_watson_at_samples(x, &sq, bw.predictor)
        }
        FunctionalSpec::Quantile { p } => {
            let eta = ctx.require_density(spec)?;
            Ok(eta.map(|e| (1.0 - p) * p / (e * e)))
        }
    }
}

/// `q2` floored at [`q2_floor`], hence strictly positive.
pub fn q2_values(
    spec: &FunctionalSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &Basis,
    ctx: &ProxyContext,
    bw: &Bandwidths,
) -> Result<DVector<f64>> {
    let raw = q2_raw(spec, x, y, beta, ctx, bw)?;
    let floor = q2_floor(ctx, &raw);
    Ok(raw.map(|v| if v > floor { v } else { floor }))
}
