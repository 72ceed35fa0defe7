use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sequence of length {len} is too short for Hankel order {order} (need at least {needed})")]
    SequenceTooShort { len: usize, order: usize, needed: usize },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: String,
        expected: String,
        got: String,
    },

    #[error("window length {t} is below the minimum 2N-1 = {min} (N = {n_min})")]
    WindowTooShort { t: usize, min: usize, n_min: usize },

    #[error("mode {label:?} is not controllable (controllability matrix rank {rank} < {n})")]
    Uncontrollable { label: String, rank: usize, n: usize },

    #[error("rank condition fails: rank [U; X] = {rank} < {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("no excitation candidate restores persistence of excitation at step {k} (best Hankel rank {best_rank} of {target})")]
    ExcitationFailure {
        k: i64,
        best_rank: usize,
        target: usize,
    },

    #[error("closed loop is not Schur stable (spectral radius {radius})")]
    Unstable { radius: f64 },

    #[error("Riccati iteration did not converge after {iterations} iterations (last change {change:e})")]
    RiccatiDivergence { iterations: usize, change: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("feasibility tuple construction failed: {0}")]
    Construction(String),

    #[error("scenario schema error: {0}")]
    Schema(String),

    #[error("solver failed {count} consecutive steps (last status {status})")]
    SolverFailure { count: usize, status: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(what: impl Into<String>, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
