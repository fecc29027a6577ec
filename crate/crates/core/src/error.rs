use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage that produced an error, used to tag failures coming out of
/// [`crate::efficient::see_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    CentralSubspace,
    Proxy,
    Initial,
    Newton,
    Tuning,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::CentralSubspace => "step1-central-subspace",
            Stage::Proxy => "step2-proxy",
            Stage::Initial => "step3-initial",
            Stage::Newton => "step4-newton",
            Stage::Tuning => "tuning",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate basis: numerical rank {rank} < {expected} columns")]
    DegenerateBasis { rank: usize, expected: usize },

    #[error("degenerate neighborhood at center {center}: {effective} points carry weight, need {required}")]
    DegenerateNeighborhood {
        center: usize,
        effective: usize,
        required: usize,
    },

    #[error("empty kernel neighborhood (denominator {denominator:e})")]
    EmptyNeighborhood { denominator: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("bandwidth tuning failed for every candidate: {}", format_failures(.failures))]
    Tuning { failures: Vec<(f64, String)> },

    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at(self, stage: Stage) -> Error {
        match self {
            // keep the innermost tag
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

fn format_failures(failures: &[(f64, String)]) -> String {
    failures
        .iter()
        .map(|(c, msg)| format!("c={c}: {msg}"))
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
