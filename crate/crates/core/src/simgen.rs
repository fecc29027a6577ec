//! Simulation models I–VII, Monte-Carlo benchmarks and the bootstrap error
//! of an estimator.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::efficient::{rmave_estimate, see_estimate, SeeConfig};
use crate::error::{Error, Result};
use crate::functionals::{FunctionalSpec, ResponseMap};
use crate::mave::MaveOptions;
use crate::numerics::{subspace_distance, Basis};

/// Predictor dimension of every model.
pub const P: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    I,
    II,
    III,
    IV,
    V,
    VI,
    VII,
}

impl ModelId {
    pub const ALL: [ModelId; 7] = [
        ModelId::I,
        ModelId::II,
        ModelId::III,
        ModelId::IV,
        ModelId::V,
        ModelId::VI,
        ModelId::VII,
    ];

    fn index(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown model {s:?}; expected I..VII")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    Identity,
    /// `cov(X_i, X_j) = 0.5^|i−j|`.
    ArHalf,
}

impl Covariance {
    pub fn matrix(self, p: usize) -> DMatrix<f64> {
        match self {
            Covariance::Identity => DMatrix::identity(p, p),
            Covariance::ArHalf => DMatrix::from_fn(p, p, |i, j| 0.5f64.powi(i.abs_diff(j) as i32)),
        }
    }
}

impl fmt::Display for Covariance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Covariance::Identity => write!(f, "identity"),
            Covariance::ArHalf => write!(f, "ar_half"),
        }
    }
}

impl FromStr for Covariance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" => Ok(Covariance::Identity),
            "ar_half" => Ok(Covariance::ArHalf),
            other => Err(Error::InvalidInput(format!("unknown covariance {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: ModelId,
    pub n: usize,
    pub covariance: Covariance,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(id: ModelId, n: usize, covariance: Covariance, seed: u64) -> Result<Self> {
        if n < 20 {
            return Err(Error::InvalidInput(format!("n = {n} is below the minimum of 20")));
        }
        Ok(Self {
            id,
            n,
            covariance,
            seed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub model: ModelId,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Sample {
    pub fn truth(&self, spec: &FunctionalSpec) -> Option<Basis> {
        truth(self.model, spec)
    }
}

/// Splitmix64 finalizer; derives independent stream seeds from a base seed
/// and a list of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut z = base;
    for &t in tags {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Lower breakpoint of the skewed-Laplace density.
fn laplace_break() -> f64 {
    -0.4 * (4.0f64 / 3.0).ln()
}

/// Density `(5/4)e^{−5ε/2}` above `−(2/5)log(4/3)` and `(80/27)e^{5ε}` below.
pub fn skewed_laplace_pdf(e: f64) -> f64 {
    if e >= laplace_break() {
        1.25 * (-2.5 * e).exp()
    } else {
        80.0 / 27.0 * (5.0 * e).exp()
    }
}

/// Inverse CDF of the skewed Laplace; the lower piece carries mass 1/3.
pub fn skewed_laplace_quantile(u: f64) -> f64 {
    if u < 1.0 / 3.0 {
        (27.0 * u / 16.0).ln() / 5.0
    } else {
        -0.4 * (2.0 * (1.0 - u)).ln()
    }
}

pub fn sample_skewed_laplace_with<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // open interval keeps both logarithms finite
    let u: f64 = loop {
        let u = rng.random::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    skewed_laplace_quantile(u)
}

pub fn sample_skewed_laplace(m: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    DVector::from_fn(m, |_, _| sample_skewed_laplace_with(&mut rng))
}

/// Draws `(X, Y)` from the model.
pub fn generate_model(spec: &ModelSpec) -> Result<Sample> {
    if spec.n < 20 {
        return Err(Error::InvalidInput(format!("n = {} is below the minimum of 20", spec.n)));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let z = DMatrix::from_fn(spec.n, P, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = match spec.covariance {
        Covariance::Identity => z,
        Covariance::ArHalf => {
            let chol = spec
                .covariance
                .matrix(P)
                .cholesky()
                .ok_or_else(|| Error::InvalidInput("covariance is not positive definite".into()))?;
            z * chol.l().transpose()
        }
    };
    let t3 = StudentT::new(3.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut y = DVector::zeros(spec.n);
    for i in 0..spec.n {
        let (x1, x2) = (x[(i, 0)], x[(i, 1)]);
        y[i] = match spec.id {
            ModelId::I => x1 + (1.0 + x2.abs()) * rng.sample::<f64, _>(StandardNormal),
            ModelId::II => x1 * (x1 + x2 + 1.0) + 0.5 * rng.sample::<f64, _>(StandardNormal),
            ModelId::III => x1 + (1.0 + x1.abs()) * rng.sample::<f64, _>(StandardNormal),
            ModelId::IV => {
                let lambda = (x1 + x2).abs();
                if lambda > 0.0 {
                    Poisson::new(lambda)
                        .map_err(|e| Error::InvalidInput(e.to_string()))?
                        .sample(&mut rng)
                } else {
                    0.0
                }
            }
            ModelId::V => x1 * x1 + x2 * sample_skewed_laplace_with(&mut rng),
            ModelId::VI => 3.0 * x1 + x2 + t3.sample(&mut rng),
            ModelId::VII => 1.0 + x1 + (1.0 + 0.4 * x2) * rng.sample::<f64, _>(StandardNormal),
        };
    }
    Ok(Sample {
        model: spec.id,
        x,
        y,
    })
}

fn span(columns: &[&[f64]]) -> Basis {
    let padded: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| {
            let mut v = c.to_vec();
            v.resize(P, 0.0);
            v
        })
        .collect();
    let refs: Vec<&[f64]> = padded.iter().map(|v| v.as_slice()).collect();
    Basis::orthonormalized(Basis::from_columns(P, &refs).expect("fixed truth basis").into_matrix())
        .expect("fixed truth basis")
}

fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// The true functional-targeted central subspace, when the model defines it
/// for `spec`. Constant functionals (e.g. the variance in Models II and VI)
/// have no subspace and return `None`.
pub fn truth(model: ModelId, spec: &FunctionalSpec) -> Option<Basis> {
    let e1: &[f64] = &[1.0];
    let e2: &[f64] = &[0.0, 1.0];
    let e12 = || span(&[e1, e2]);
    match (model, *spec) {
        (_, FunctionalSpec::Mean { f: map }) if map != ResponseMap::Identity => None,
        (_, FunctionalSpec::Moment { .. }) => None,

        (ModelId::I, FunctionalSpec::Mean { .. }) => Some(span(&[e1])),
        (ModelId::I, FunctionalSpec::Variance) => Some(span(&[e2])),
        (ModelId::I, FunctionalSpec::Quantile { p }) if p == 0.5 => Some(span(&[e1])),
        (ModelId::I, FunctionalSpec::Quantile { .. }) => Some(e12()),

        (ModelId::II, FunctionalSpec::Variance) => None,
        (ModelId::II, _) => Some(e12()),

        (ModelId::III, _) => Some(span(&[e1])),

        (ModelId::IV, _) => Some(span(&[&[1.0, 1.0]])),

        (ModelId::V, FunctionalSpec::Mean { .. }) => Some(e12()),
        (ModelId::V, FunctionalSpec::Variance) => Some(span(&[e2])),
        (ModelId::V, FunctionalSpec::Quantile { p }) if p == 0.5 => Some(span(&[e1])),
        (ModelId::V, FunctionalSpec::Quantile { .. }) => Some(e12()),

        (ModelId::VI, FunctionalSpec::Variance) => None,
        (ModelId::VI, _) => Some(span(&[&[3.0, 1.0]])),

        (ModelId::VII, FunctionalSpec::Mean { .. }) => Some(span(&[e1])),
        (ModelId::VII, FunctionalSpec::Variance) => Some(span(&[e2])),
        (ModelId::VII, FunctionalSpec::Quantile { p }) => {
            Some(span(&[&[1.0, 0.4 * standard_normal_quantile(p)]]))
        }
    }
}

/// Which estimate a benchmark row summarizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    See,
    /// The step-3 MAVE initializer of the same run.
    Initial,
    Rmave,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::See => write!(f, "SEE"),
            Estimator::Initial => write!(f, "initial"),
            Estimator::Rmave => write!(f, "RMAVE"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkPlan {
    pub models: Vec<ModelId>,
    pub functionals: Vec<FunctionalSpec>,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub covariance: Covariance,
    pub working_dim: usize,
    pub seed: u64,
    pub see: SeeConfig,
    /// Constant of the RMAVE bandwidth on the raw predictors; RMAVE rows are
    /// produced for the identity-mean functional only.
    pub rmave_constant: f64,
    /// Maximum tolerated fraction of failed replicates per row.
    pub max_failure_rate: f64,
}

impl BenchmarkPlan {
    pub fn new(models: Vec<ModelId>, functionals: Vec<FunctionalSpec>, sizes: Vec<usize>, replicates: usize, seed: u64) -> Self {
        Self {
            models,
            functionals,
            sizes,
            replicates,
            covariance: Covariance::Identity,
            working_dim: 3,
            seed,
            see: SeeConfig::default(),
            rmave_constant: 2.0,
            max_failure_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub model: ModelId,
    pub covariance: Covariance,
    pub functional: String,
    pub estimator: Estimator,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over `√replicates`.
    pub se: f64,
    pub replicates: usize,
    pub failures: usize,
    /// Per-replicate distances in replicate order; `None` marks a failure.
    pub distances: Vec<Option<f64>>,
    pub wall_time_secs: f64,
}

impl BenchmarkRow {
    pub fn sd(&self) -> f64 {
        self.se * (self.replicates as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub failure_messages: Vec<String>,
}

impl BenchmarkReport {
    pub fn row(&self, model: ModelId, estimator: Estimator, n: usize) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.estimator == estimator && r.n == n)
    }

    /// CSV payload without timing, so reruns compare byte for byte.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,covariance,functional,estimator,n,mean,se,replicates,failures\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},\"{}\",{},{},{},{},{},{}\n",
                r.model, r.covariance, r.functional, r.estimator, r.n, r.mean, r.se, r.replicates, r.failures
            ));
        }
        out
    }

    /// Text table with `mean (sd)` entries.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<6} {:<10} {:<14} {:<8} {:<6} {:<18} {:>9}\n",
            "n", "cov", "functional", "model", "est", "distance", "failures"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<6} {:<10} {:<14} {:<8} {:<6} {:<18} {:>9}\n",
                r.n,
                r.covariance.to_string(),
                r.functional,
                r.model.to_string(),
                r.estimator.to_string(),
                format!("{:.3} ({:.3})", r.mean, r.sd()),
                r.failures
            ));
        }
        out
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

struct ReplicateOutcome {
    see: std::result::Result<(f64, f64), String>,
    rmave: Option<std::result::Result<f64, String>>,
}

fn run_replicate(
    plan: &BenchmarkPlan,
    model: ModelId,
    spec: &FunctionalSpec,
    truth: &Basis,
    n: usize,
    rep: usize,
    functional_index: usize,
) -> ReplicateOutcome {
    let data_seed = derive_seed(plan.seed, &[model.index(), n as u64, rep as u64]);
    let fit_seed = derive_seed(data_seed, &[functional_index as u64]);
    let sample = match ModelSpec::new(model, n, plan.covariance, data_seed).and_then(|m| generate_model(&m)) {
        Ok(s) => s,
        Err(e) => {
            return ReplicateOutcome {
                see: Err(e.to_string()),
                rmave: None,
            }
        }
    };
    let s = truth.d();
    let config = SeeConfig {
        seed: fit_seed,
        ..plan.see.clone()
    };
    let see = see_estimate(&sample.x, &sample.y, spec, s, plan.working_dim, &config)
        .and_then(|r| {
            Ok((
                subspace_distance(&r.beta_hat, truth)?,
                subspace_distance(&r.beta_init, truth)?,
            ))
        })
        .map_err(|e| e.to_string());
    let rmave = (*spec == FunctionalSpec::mean()).then(|| {
        rmave_estimate(&sample.x, &sample.y, s, plan.rmave_constant, &MaveOptions::default())
            .and_then(|b| subspace_distance(&b, truth))
            .map_err(|e| e.to_string())
    });
    ReplicateOutcome { see, rmave }
}

fn summarize(
    plan: &BenchmarkPlan,
    model: ModelId,
    functional: &str,
    estimator: Estimator,
    n: usize,
    distances: Vec<Option<f64>>,
    secs: f64,
) -> Result<BenchmarkRow> {
    let ok: Vec<f64> = distances.iter().flatten().copied().collect();
    let failures = distances.len() - ok.len();
    if failures as f64 > plan.max_failure_rate * distances.len() as f64 {
        return Err(Error::TooManyFailures {
            failed: failures,
            total: distances.len(),
        });
    }
    let (mean, se) = mean_and_se(&ok);
    Ok(BenchmarkRow {
        model,
        covariance: plan.covariance,
        functional: functional.to_string(),
        estimator,
        n,
        mean,
        se,
        replicates: ok.len(),
        failures,
        distances,
        wall_time_secs: secs,
    })
}

/// Monte-Carlo comparison of SEE, its MAVE initializer and RMAVE against the
/// known truth. Replicates run in parallel; every reduction is in replicate
/// order so the payload does not depend on the thread count.
pub fn run_benchmark(plan: &BenchmarkPlan) -> Result<BenchmarkReport> {
    if plan.replicates < 2 {
        return Err(Error::InvalidInput("a benchmark needs at least 2 replicates".into()));
    }
    if plan.models.is_empty() || plan.functionals.is_empty() || plan.sizes.is_empty() {
        return Err(Error::InvalidInput("benchmark plan has nothing to run".into()));
    }
    plan.see.validate()?;
    let mut rows = Vec::new();
    let mut failure_messages = Vec::new();
    for &n in &plan.sizes {
        for (fi, spec) in plan.functionals.iter().enumerate() {
            spec.validate()?;
            for &model in &plan.models {
                let Some(truth) = truth(model, spec) else {
                    return Err(Error::InvalidInput(format!("{spec} is constant in Model {model}")));
                };
                let start = Instant::now();
                let outcomes: Vec<ReplicateOutcome> = (0..plan.replicates)
                    .into_par_iter()
                    .map(|rep| run_replicate(plan, model, spec, &truth, n, rep, fi))
                    .collect();
                let secs = start.elapsed().as_secs_f64();
                let label = spec.to_string();
                let mut see = Vec::with_capacity(outcomes.len());
                let mut init = Vec::with_capacity(outcomes.len());
                let mut rmave = Vec::new();
                for (rep, o) in outcomes.into_iter().enumerate() {
                    match o.see {
                        Ok((a, b)) => {
                            see.push(Some(a));
                            init.push(Some(b));
                        }
                        Err(m) => {
                            failure_messages.push(format!("Model {model} {label} n={n} replicate {rep}: {m}"));
                            see.push(None);
                            init.push(None);
                        }
                    }
                    if let Some(r) = o.rmave {
                        rmave.push(r.map_err(|m| failure_messages.push(format!("Model {model} RMAVE n={n} replicate {rep}: {m}"))).ok());
                    }
                }
                rows.push(summarize(plan, model, &label, Estimator::See, n, see, secs)?);
                rows.push(summarize(plan, model, &label, Estimator::Initial, n, init, secs)?);
                if !rmave.is_empty() {
                    rows.push(summarize(plan, model, &label, Estimator::Rmave, n, rmave, secs)?);
                }
            }
        }
    }
    Ok(BenchmarkReport { rows, failure_messages })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    /// `1 − mean |ρ_b|` over the resamples used.
    pub error: f64,
    /// `|ρ_b|` per resample in order; `None` for a skipped resample.
    pub correlations: Vec<Option<f64>>,
    pub skipped: usize,
}

/// Mean canonical correlation between the columns of `a` and `b`; the
/// absolute Pearson correlation when both have one column. `None` when
/// either set is constant.
pub fn mean_canonical_correlation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    let center = |m: &DMatrix<f64>| {
        let mut c = m.clone();
        for mut col in c.column_iter_mut() {
            let mu = col.mean();
            col.add_scalar_mut(-mu);
        }
        c
    };
    let (ca, cb) = (center(a), center(b));
    let scale = ca.amax().max(cb.amax());
    if !(scale > 0.0) {
        return None;
    }
    let qa = ca.clone().qr();
    let qb = cb.clone().qr();
    let tol = 1e-10 * scale * (a.nrows() as f64).sqrt();
    if qa.r().diagonal().iter().any(|v| v.abs() <= tol) || qb.r().diagonal().iter().any(|v| v.abs() <= tol) {
        return None;
    }
    let m = qa.q().transpose() * qb.q();
    let sv = m.singular_values();
    let k = a.ncols().min(b.ncols());
    Some((sv.iter().take(k).map(|v| v.min(1.0)).sum::<f64>() / k as f64).clamp(0.0, 1.0))
}

/// Bootstrap error of `estimator`: resample rows with replacement `b` times,
/// re-estimate, and correlate the resulting sufficient predictors with the
/// full-sample ones over the full sample.
pub fn bootstrap_error<F>(estimator: F, x: &DMatrix<f64>, y: &DVector<f64>, b: usize, seed: u64) -> Result<BootstrapReport>
where
    F: Fn(&DMatrix<f64>, &DVector<f64>, u64) -> Result<Basis> + Sync,
{
    if b < 2 {
        return Err(Error::InvalidInput("bootstrap needs at least 2 resamples".into()));
    }
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::Dimension(format!("{n} predictor rows, {} responses", y.len())));
    }
    let full = estimator(x, y, seed)?;
    let reference = x * full.matrix();
    let correlations: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|k| {
            let rs = derive_seed(seed, &[k as u64 + 1]);
            let mut rng = ChaCha20Rng::seed_from_u64(rs);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let xb = x.select_rows(&idx);
            let yb = y.select_rows(&idx);
            let basis = estimator(&xb, &yb, rs).ok()?;
            mean_canonical_correlation(&(x * basis.matrix()), &reference)
        })
        .collect();
    let used: Vec<f64> = correlations.iter().flatten().copied().collect();
    if used.is_empty() {
        return Err(Error::TooManyFailures { failed: b, total: b });
    }
    let error = (1.0 - used.iter().sum::<f64>() / used.len() as f64).clamp(0.0, 1.0);
    Ok(BootstrapReport {
        error,
        skipped: b - used.len(),
        correlations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_names_roundtrip() {
        for m in ModelId::ALL {
            assert_eq!(m.to_string().parse::<ModelId>().unwrap(), m);
        }
        assert!("VIII".parse::<ModelId>().is_err());
    }

    #[test]
    fn small_n_is_rejected() {
        assert!(ModelSpec::new(ModelId::I, 19, Covariance::Identity, 0).is_err());
    }

    #[test]
    fn poisson_model_has_count_responses() {
        let s = generate_model(&ModelSpec::new(ModelId::IV, 300, Covariance::Identity, 4).unwrap()).unwrap();
        assert!(s.y.iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn generation_is_seeded() {
        let spec = ModelSpec::new(ModelId::VI, 50, Covariance::ArHalf, 17).unwrap();
        let a = generate_model(&spec).unwrap();
        let b = generate_model(&spec).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn truth_bases_are_exact() {
        let t = truth(ModelId::VI, &FunctionalSpec::median()).unwrap();
        let expected = [3.0 / 10f64.sqrt(), 1.0 / 10f64.sqrt()];
        assert!((t.matrix()[(0, 0)].abs() - expected[0]).abs() < 1e-15);
        assert!((t.matrix()[(1, 0)].abs() - expected[1]).abs() < 1e-15);
        assert_eq!(subspace_distance(&t, &t).unwrap(), 0.0);
        assert!(truth(ModelId::II, &FunctionalSpec::Variance).is_none());
        assert_eq!(truth(ModelId::V, &FunctionalSpec::mean()).unwrap().d(), 2);
    }

    #[test]
    fn upper_quartile_direction_of_model_vii() {
        let t = truth(ModelId::VII, &FunctionalSpec::Quantile { p: 0.75 }).unwrap();
        let ratio = t.matrix()[(1, 0)] / t.matrix()[(0, 0)];
        // 0.4 × Φ⁻¹(0.75)
        assert!((ratio - 0.269_795_900_095_872).abs() < 1e-9);
    }

    #[test]
    fn skewed_laplace_pieces() {
        let a = laplace_break();
        assert!((skewed_laplace_quantile(1.0 / 3.0) - a).abs() < 1e-14);
        assert!(skewed_laplace_quantile(0.5).abs() < 1e-15);
        assert!((skewed_laplace_pdf(a) - 1.25 * (4.0f64 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[1]), derive_seed(1, &[2]));
        assert_ne!(derive_seed(1, &[1, 2]), derive_seed(1, &[2, 1]));
        assert_eq!(derive_seed(5, &[3]), derive_seed(5, &[3]));
    }

    #[test]
    fn canonical_correlation_cases() {
        let a = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 5.0]);
        assert!((mean_canonical_correlation(&a, &(&a * -2.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(mean_canonical_correlation(&a, &DMatrix::from_element(4, 1, 1.0)).is_none());
    }

    #[test]
    fn bootstrap_of_fixed_estimator_is_zero() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = DMatrix::from_fn(30, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(30, |i, _| x[(i, 0)]);
        let fixed = |_: &DMatrix<f64>, _: &DVector<f64>, _: u64| Basis::coordinate(3, &[0]);
        let r = bootstrap_error(fixed, &x, &y, 5, 2).unwrap();
        assert!(r.error.abs() < 1e-12);
        assert_eq!(r.skipped, 0);
    }
}
