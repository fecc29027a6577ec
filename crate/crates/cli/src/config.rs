//! Resolved run configuration. Every output file starts with a `# ` line
//! holding this configuration as JSON; feeding that line (or the whole file)
//! back through `--config` reruns the command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tcentral::simgen::{BenchmarkPlan, Covariance, ModelId};
use tcentral::{FunctionalSpec, SeeConfig};

use crate::dataset::Filter;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub response: String,
    pub predictors: Option<Vec<String>>,
    /// Applied in order: `col==value`, `col!=value`, `row!=k`.
    pub filters: Vec<String>,
    /// Fit on the first rows only; the rest form the test set.
    pub train_rows: Option<usize>,
}

impl DataConfig {
    pub fn parsed_filters(&self) -> Result<Vec<Filter>, CliError> {
        self.filters.iter().map(|f| Filter::parse(f)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub functional: FunctionalSpec,
    /// Dimension of the target subspace.
    pub s: usize,
    /// Working dimension of the central subspace.
    pub working_dim: usize,
    pub see: SeeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub data: DataConfig,
    pub fit: FitConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: ModelId,
    pub n: usize,
    pub covariance: Covariance,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub plan: BenchmarkPlan,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    pub data: DataConfig,
    pub fit: FitConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapEstimator {
    See,
    Rmave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub data: DataConfig,
    pub fit: FitConfig,
    pub estimator: BootstrapEstimator,
    pub rmave_constant: f64,
    pub resamples: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Estimate(EstimateConfig),
    Simulate(SimulateConfig),
    Benchmark(BenchmarkConfig),
    Tune(TuneConfig),
    BootstrapError(BootstrapConfig),
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configuration serializes")
    }

    /// The `# {json}` line heading every output file.
    pub fn echo_line(&self) -> String {
        format!("# {}\n", self.to_json())
    }

    /// Reads a configuration from a JSON file, from `diagnostics.json` or from
    /// the echo line of any output file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let json = match text.strip_prefix("# ") {
            Some(rest) => rest.lines().next().unwrap_or(""),
            None => text.as_str(),
        };
        let bad = |e: serde_json::Error| CliError::Usage(format!("{}: {e}", path.display()));
        let value: serde_json::Value = serde_json::from_str(json).map_err(bad)?;
        // diagnostics.json nests the config under "config"
        let value = match value.get("config") {
            Some(inner) if value.get("command").is_none() => inner.clone(),
            _ => value,
        };
        let config: RunConfig = serde_json::from_value(value).map_err(bad)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fit = match self {
            RunConfig::Estimate(c) => Some(&c.fit),
            RunConfig::Tune(c) => Some(&c.fit),
            RunConfig::BootstrapError(c) => {
                if c.resamples < 2 {
                    return Err(CliError::Usage("bootstrap needs at least 2 resamples".into()));
                }
                Some(&c.fit)
            }
            RunConfig::Simulate(c) => {
                if c.n < 20 {
                    return Err(CliError::Usage(format!("n = {} is below the minimum of 20", c.n)));
                }
                None
            }
            RunConfig::Benchmark(c) => {
                c.plan.see.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                if c.plan.replicates < 2 {
                    return Err(CliError::Usage("a benchmark needs at least 2 replicates".into()));
                }
                None
            }
        };
        if let Some(fit) = fit {
            fit.functional.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            fit.see.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            if fit.s == 0 || fit.s > fit.working_dim {
                return Err(CliError::Usage(format!(
                    "need 1 <= s <= working dimension, got s={} d={}",
                    fit.s, fit.working_dim
                )));
            }
        }
        if let Some(data) = self.data() {
            data.parsed_filters()?;
        }
        Ok(())
    }

    fn data(&self) -> Option<&DataConfig> {
        match self {
            RunConfig::Estimate(c) => Some(&c.data),
            RunConfig::Tune(c) => Some(&c.data),
            RunConfig::BootstrapError(c) => Some(&c.data),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simulate() -> RunConfig {
        RunConfig::Simulate(SimulateConfig {
            model: ModelId::III,
            n: 50,
            covariance: Covariance::Identity,
            seed: 3,
            out: "x.csv".into(),
        })
    }

    #[test]
    fn json_roundtrip() {
        let c = simulate();
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&simulate().to_json()).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_str::<RunConfig>(&v.to_string()).is_err());
    }

    #[test]
    fn echo_line_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let c = simulate();
        std::fs::write(&path, format!("{}x1,y\n1,2\n", c.echo_line())).unwrap();
        assert_eq!(RunConfig::load(&path).unwrap(), c);
    }
}
