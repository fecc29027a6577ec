//! Command execution and output writers. Every file starts with the config
//! echo line; numbers use the shortest round-trip formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use tcentral::efficient::{rmave_estimate, EstimateResult};
use tcentral::simgen::{bootstrap_error, generate_model, run_benchmark, ModelSpec};
use tcentral::smoothing::nadaraya_watson_at_samples;
use tcentral::{see_estimate, FunctionalSpec, KernelSpec, SeeConfig};

use crate::config::{
    BenchmarkConfig, BootstrapConfig, BootstrapEstimator, DataConfig, EstimateConfig, FitConfig, RunConfig,
    SimulateConfig, TuneConfig,
};
use crate::dataset::{parse_dataset, Dataset};
use crate::CliError;

pub fn execute(config: &RunConfig) -> Result<(), CliError> {
    match config {
        RunConfig::Estimate(c) => estimate(config, c),
        RunConfig::Simulate(c) => simulate(config, c),
        RunConfig::Benchmark(c) => benchmark(config, c),
        RunConfig::Tune(c) => tune(config, c),
        RunConfig::BootstrapError(c) => bootstrap(config, c),
    }
}

fn write_file(path: &Path, config: &RunConfig, body: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format!("{}{body}", config.echo_line()))?;
    Ok(())
}

fn load(data: &DataConfig) -> Result<(Dataset, Dataset), CliError> {
    let full = parse_dataset(&data.path, &data.response, data.predictors.as_deref(), &data.parsed_filters()?)?;
    let train = match data.train_rows {
        Some(k) if k > full.n() => {
            return Err(CliError::Usage(format!("train_rows = {k} exceeds the {} available rows", full.n())))
        }
        Some(k) => full.head(k),
        None => full.clone(),
    };
    eprintln!(
        "read {} rows x {} predictors from {} (fitting on {})",
        full.n(),
        full.x.ncols(),
        data.path.display(),
        train.n()
    );
    Ok((full, train))
}

fn fit(train: &Dataset, fit: &FitConfig, see: &SeeConfig) -> Result<EstimateResult, CliError> {
    if fit.working_dim > train.x.ncols() {
        return Err(CliError::Usage(format!(
            "working dimension {} exceeds the {} predictors",
            fit.working_dim,
            train.x.ncols()
        )));
    }
    Ok(see_estimate(&train.x, &train.y, &fit.functional, fit.s, fit.working_dim, see)?)
}

#[derive(Serialize)]
struct DiagnosticsFile<'a> {
    config: &'a RunConfig,
    n_rows: usize,
    n_train: usize,
    predictors: &'a [String],
    diagnostics: &'a tcentral::efficient::Diagnostics,
    score_mean: Vec<f64>,
}

fn estimate(config: &RunConfig, c: &EstimateConfig) -> Result<(), CliError> {
    let (full, train) = load(&c.data)?;
    let result = fit(&train, &c.fit, &c.fit.see)?;
    let s = c.fit.s;
    let dir = &c.out_dir;

    let mut basis = String::from("predictor");
    for k in 1..=s {
        write!(basis, ",see_{k}").unwrap();
    }
    for k in 1..=s {
        write!(basis, ",init_{k}").unwrap();
    }
    basis.push('\n');
    for (j, name) in full.predictor_names.iter().enumerate() {
        basis.push_str(name);
        for m in [result.beta_hat.matrix(), result.beta_init.matrix()] {
            for k in 0..s {
                write!(basis, ",{}", m[(j, k)]).unwrap();
            }
        }
        basis.push('\n');
    }
    write_file(&dir.join("basis.csv"), config, &basis)?;

    let sp = result.sufficient_predictors(&full.x);
    let mut preds = String::from("row,set,y");
    for k in 1..=s {
        write!(preds, ",sp_{k}").unwrap();
    }
    preds.push('\n');
    for i in 0..full.n() {
        let set = if i < train.n() { "train" } else { "test" };
        write!(preds, "{},{set},{}", full.source_rows[i], full.y[i]).unwrap();
        for k in 0..s {
            write!(preds, ",{}", sp[(i, k)]).unwrap();
        }
        preds.push('\n');
    }
    write_file(&dir.join("predictors.csv"), config, &preds)?;

    write_file(&dir.join("plot.csv"), config, &plot_data(&full, &sp, &c.fit.functional, &result)?)?;

    let diag = DiagnosticsFile {
        config,
        n_rows: full.n(),
        n_train: train.n(),
        predictors: &full.predictor_names,
        diagnostics: &result.diagnostics,
        score_mean: result.score_mean.iter().copied().collect(),
    };
    let json = serde_json::to_string_pretty(&diag).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(dir.join("diagnostics.json"), json + "\n")?;
    for w in &result.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("wrote basis.csv, predictors.csv, plot.csv, diagnostics.json to {}", dir.display());
    Ok(())
}

/// Tidy scatter data: the response against each sufficient predictor, and for
/// the variance functional the absolute mean-regression residual against the
/// first sufficient predictor.
fn plot_data(full: &Dataset, sp: &DMatrix<f64>, spec: &FunctionalSpec, result: &EstimateResult) -> Result<String, CliError> {
    let mut out = String::from("x,y,series\n");
    for k in 0..sp.ncols() {
        for i in 0..full.n() {
            writeln!(out, "{},{},response_vs_sp_{}", sp[(i, k)], full.y[i], k + 1).unwrap();
        }
    }
    if matches!(spec, FunctionalSpec::Variance) {
        let z = &full.x * result.central_subspace.matrix();
        let h = tcentral::numerics::bandwidth(&KernelSpec::new(result.diagnostics.constants[1], z.ncols(), full.n())?);
        let fitted: DVector<f64> = nadaraya_watson_at_samples(&z, &full.y, h)?;
        for i in 0..full.n() {
            writeln!(out, "{},{},abs_residual_vs_sp_1", sp[(i, 0)], (full.y[i] - fitted[i]).abs()).unwrap();
        }
    }
    Ok(out)
}

fn simulate(config: &RunConfig, c: &SimulateConfig) -> Result<(), CliError> {
    let sample = generate_model(&ModelSpec::new(c.model, c.n, c.covariance, c.seed)?)?;
    let p = sample.x.ncols();
    let mut body = (1..=p).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    body.push_str(",y\n");
    for i in 0..c.n {
        for j in 0..p {
            write!(body, "{},", sample.x[(i, j)]).unwrap();
        }
        writeln!(body, "{}", sample.y[i]).unwrap();
    }
    write_file(&c.out, config, &body)?;
    eprintln!("wrote {} rows of Model {} to {}", c.n, c.model, c.out.display());
    Ok(())
}

fn benchmark(config: &RunConfig, c: &BenchmarkConfig) -> Result<(), CliError> {
    let report = run_benchmark(&c.plan)?;
    for m in &report.failure_messages {
        eprintln!("replicate failure: {m}");
    }
    for r in &report.rows {
        eprintln!(
            "timing: Model {} {} {} n={}: {:.2}s",
            r.model, r.functional, r.estimator, r.n, r.wall_time_secs
        );
    }
    write_file(&c.out_dir.join("report.csv"), config, &report.to_csv())?;
    write_file(&c.out_dir.join("report.txt"), config, &report.to_table())?;
    print!("{}", report.to_table());
    Ok(())
}

fn tune(config: &RunConfig, c: &TuneConfig) -> Result<(), CliError> {
    let (_, train) = load(&c.data)?;
    let result = fit(&train, &c.fit, &c.fit.see)?;
    let mut body = String::from("stage,c\n");
    for (k, v) in result.diagnostics.constants.iter().enumerate() {
        writeln!(body, "step{},{v}", k + 1).unwrap();
    }
    write_file(&c.out, config, &body)?;
    print!("{body}");
    Ok(())
}

fn bootstrap(config: &RunConfig, c: &BootstrapConfig) -> Result<(), CliError> {
    let (_, train) = load(&c.data)?;
    let fitc = &c.fit;
    let report = match c.estimator {
        BootstrapEstimator::See => bootstrap_error(
            |x, y, seed| {
                let see = SeeConfig { seed, ..fitc.see.clone() };
                Ok(see_estimate(x, y, &fitc.functional, fitc.s, fitc.working_dim, &see)?.beta_hat)
            },
            &train.x,
            &train.y,
            c.resamples,
            fitc.see.seed,
        )?,
        BootstrapEstimator::Rmave => {
            let f = fitc.functional;
            let yt = match f.linear_transform(0.0) {
                Some(_) => train.y.map(|v| f.linear_transform(v).unwrap_or(v)),
                None => train.y.clone(),
            };
            bootstrap_error(
                |x, y, _| rmave_estimate(x, y, fitc.s, c.rmave_constant, &fitc.see.mave),
                &train.x,
                &yt,
                c.resamples,
                fitc.see.seed,
            )?
        }
    };
    let summary = format!(
        "error,resamples,skipped\n{},{},{}\n",
        report.error, c.resamples, report.skipped
    );
    write_file(&c.out_dir.join("bootstrap_summary.csv"), config, &summary)?;
    let mut body = String::from("resample,correlation\n");
    for (k, r) in report.correlations.iter().enumerate() {
        match r {
            Some(v) => writeln!(body, "{},{v}", k + 1).unwrap(),
            None => writeln!(body, "{},", k + 1).unwrap(),
        }
    }
    write_file(&c.out_dir.join("bootstrap_correlations.csv"), config, &body)?;
    println!("bootstrap error {} ({} resamples, {} skipped)", report.error, c.resamples, report.skipped);
    Ok(())
}
