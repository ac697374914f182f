use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration diverged at step {step}")]
    Diverged { step: usize },

    #[error("unstable time step: dt = {dt} exceeds limit {limit}")]
    Unstable { dt: f64, limit: f64 },

    #[error("states outside world bounds at indices {indices:?}")]
    OutOfFrame { indices: Vec<usize> },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("non-finite library value at row {row}, term {term}")]
    Eval { row: usize, term: String },

    #[error("singular design, collinear terms: {terms:?}")]
    SingularDesign { terms: Vec<String> },

    #[error("target has zero total variance")]
    DegenerateTarget,

    #[error("detection failed: {missing} of {total} frames missing")]
    DetectionFailed { missing: usize, total: usize },

    #[error("discovery failed: no iteration produced an equation")]
    DiscoveryFailed,

    #[error("training diverged at epoch {epoch}")]
    DivergedTraining { epoch: usize },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("replay mismatch at entry {index}: expected digest {expected}, got {actual}")]
    ReplayMismatch {
        index: usize,
        expected: String,
        actual: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("template error: unbound placeholder `{0}`")]
    Template(String),

    #[error("unbalanced delimiter at byte {offset}")]
    Extract { offset: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
