use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Pipeline stage, used to label propagated failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Lasso,
    Pilot,
    Weights,
    Solve,
    Variance,
    Selection,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Stage::Lasso => "lasso",
            Stage::Pilot => "pilot",
            Stage::Weights => "weights",
            Stage::Solve => "solve",
            Stage::Variance => "variance",
            Stage::Selection => "selection",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite argument to {0}")]
    NonFinite(&'static str),

    #[error("density underflow at y={y}, u={u}")]
    DensityUnderflow { y: f64, u: f64 },

    #[error("no observed responses")]
    NoObserved,

    #[error("bracket expansion failed after {0} doublings")]
    Bracket(usize),

    #[error("weight program infeasible up to c={c_max}: smallest achievable imbalance {min_imbalance:.6e} exceeds delta {delta:.6e}")]
    Infeasible { c_max: f64, delta: f64, min_imbalance: f64 },

    #[error(
        "balance constraints infeasible: smallest achievable imbalance {min_imbalance:.6e} exceeds delta {delta:.6e}"
    )]
    InfeasibleAtDelta { delta: f64, min_imbalance: f64 },

    #[error("quadratic program did not converge after {iterations} iterations (violation {violation:.3e})")]
    QpNotConverged { iterations: usize, violation: f64 },

    #[error("density mass vanishes at the pilot quantile (T = {0:.3e})")]
    VanishingDensity(f64),

    #[error("{failed} of {total} replications failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("{stage} stage: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// The stage a failure originated in, if it was labeled.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// True when the failure comes from the caller's data or arguments rather
    /// than a numerical routine.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::InvalidInput(_) | Error::NonFinite(_) | Error::NoObserved => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
