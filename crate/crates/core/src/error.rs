use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate top eigenvalue (gap {gap:.3e}); nearest pure state is ill-defined")]
    Degenerate { gap: f64 },

    #[error("conditional state has near-zero norm ({norm:.3e}); the conditioning outcome never occurs")]
    DegenerateConditional { norm: f64 },

    #[error("entanglement too weak for basis correction: concurrence {concurrence:.4} < {threshold}")]
    WeakEntanglement { concurrence: f64, threshold: f64 },

    #[error("solver did not converge; best residual {best_residual:.3e}")]
    NonConvergence { best_residual: f64 },

    #[error("matrix is not unitary (deviation {deviation:.3e})")]
    NonUnitary { deviation: f64 },

    #[error("infeasible source targets (fidelity {fidelity}, concurrence {concurrence}): {region}")]
    Infeasible {
        fidelity: f64,
        concurrence: f64,
        region: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no significant correlation peak (peak {peak}, accidental floor {floor:.2})")]
    NoPeak { peak: u64, floor: f64 },

    #[error("QBER undefined: no sifted coincidences")]
    UndefinedQber,

    #[error("empty timestamp stream")]
    EmptyStreams,

    #[error("unknown scenario preset `{name}`; available: {available}")]
    UnknownPreset { name: String, available: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Innermost error, skipping pipeline stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for numeric or model failures.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_) | Error::UnknownPreset { .. } | Error::Parse(_) => 2,
            Error::Io { .. } => 1,
            _ => 3,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
