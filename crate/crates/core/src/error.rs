use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("capacity exceeded: {what} requires {requested}, cap is {cap}")]
    Capacity {
        what: String,
        requested: u128,
        cap: u128,
    },

    #[error("not found: {0}")]
    NotFound(String),

    #[error("Picard iteration did not converge at step {step} after {iterations} iterations (last update {last_update:e})")]
    SolverDivergence {
        step: usize,
        iterations: usize,
        last_update: f64,
    },

    #[error("regression basis is degenerate at step {step}: {detail}")]
    DegenerateBasis { step: usize, detail: String },

    #[error("exponential moment failure: {0}")]
    MomentFailure(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("scenario cache: {0}")]
    Cache(String),

    #[error("configuration invalid: {}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("io: {0}")]
    Io(String),

    #[error("experiment `{experiment}`: {source}")]
    Experiment {
        experiment: String,
        #[source]
        source: Box<LabError>,
    },
}

/// One problem found while validating an experiment configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ConfigIssue {
    /// Dotted path to the offending key, e.g. `driver.options.n`.
    pub path: String,
    pub message: String,
    /// 1-based line in the source text, when it could be located.
    pub line: Option<usize>,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(line) => write!(f, "{} (line {}): {}", self.path, line, self.message),
            None => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl LabError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidArgument(msg.into())
    }

    /// Wraps an error with the name of the experiment that produced it.
    pub fn in_experiment(self, experiment: &str) -> Self {
        LabError::Experiment {
            experiment: experiment.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;
