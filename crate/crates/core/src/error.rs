use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("integration blew up at t = {time} h")]
    Blowup { time: f64 },

    #[error("member {member} failed: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("pseudo-time {t} is below the lower clamp {eps}")]
    PseudoTimeDomain { t: f64, eps: f64 },

    #[error("reverse sampler diverged at pseudo-time {t}")]
    SamplerDiverged { t: f64 },

    #[error("unsupported observation operator: {0}")]
    UnsupportedOperator(String),

    #[error("singular local analysis at grid point ({i}, {j})")]
    SingularAnalysis { i: usize, j: usize },

    #[error("not enough snapshots: need {need}, have {have}")]
    InsufficientSnapshots { need: usize, have: usize },

    #[error("spectrum undefined for zero field")]
    ZeroField,

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("cycle {cycle}: {source}")]
    Cycle {
        cycle: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
