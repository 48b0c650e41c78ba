use thiserror::Error;

/// Errors produced anywhere in the simulation and analysis stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    Dimension(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid subsystem selection: {0}")]
    Subsystem(String),

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid device configuration: {0}")]
    Config(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("invalid pulse schedule: {0}")]
    Schedule(String),

    #[error("integrator step size underflow (dt = {0:e} s)")]
    StepUnderflow(f64),

    #[error("invalid probability vector: {0}")]
    Probability(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("fit is not identifiable: {0}")]
    Identifiability(String),

    #[error("reconstruction did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NoConvergence { iterations: usize, gradient_norm: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn at_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
