use thiserror::Error;

/// Crate-wide error type.
///
/// Errors fall into families (configuration, data, fitting, numeric domain,
/// io); the command-line tool maps each family to a distinct exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("transverse linear dynamics not Hurwitz (max eigenvalue real part {max_re:.3e})")]
    NotHurwitz { max_re: f64 },
    #[error("bad shape parameter: {0}")]
    BadShapeParameter(String),

    #[error("dataset parse error: {0}")]
    Parse(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("too few samples: need {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("no circulation: {0}")]
    NoCirculation(String),
    #[error("dataset has no velocity columns and no smoother was configured")]
    MissingVelocities,
    #[error("dataset has no true-phase column")]
    MissingTruth,
    #[error("segment {index} too short: {len} samples")]
    SegmentTooShort { index: usize, len: usize },
    #[error("too few spikes detected ({got}, need at least 3)")]
    TooFewSpikes { got: usize },
    #[error("timestamp mismatch: {0}")]
    MismatchedTimestamps(String),

    #[error("underdetermined fit: {rows} rows for {cols} unknowns")]
    Underdetermined { rows: usize, cols: usize },
    #[error("ill-conditioned design matrix (condition {cond:.3e})")]
    IllConditioned { cond: f64 },
    #[error("fitted cycle radius not positive everywhere (min {min:.3e})")]
    NonPositiveRadius { min: f64 },

    #[error("point on the cylindrical axis: angle undefined")]
    OriginSingularity,
    #[error("rectification map not invertible: angle remap is not monotone")]
    NotInvertible,
    #[error("affine map is not invertible")]
    NonInvertibleAffine,
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("no grid point in the window is rectifiable")]
    EmptyWindow,
    #[error("polyline is not closed (endpoint gap {gap:.3e})")]
    NotClosed { gap: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    ModelFormat(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the command-line tool: 2 configuration, 3 data,
    /// 4 fitting, 5 numeric domain, 6 io.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            InvalidConfig(_) | NotHurwitz { .. } | BadShapeParameter(_) => 2,
            Parse(_) | DegenerateData(_) | TooFewSamples { .. } | NoCirculation(_)
            | MissingVelocities | MissingTruth | SegmentTooShort { .. } | TooFewSpikes { .. }
            | MismatchedTimestamps(_) => 3,
            Underdetermined { .. } | IllConditioned { .. } | NonPositiveRadius { .. } => 4,
            OriginSingularity | NotInvertible | NonInvertibleAffine | NonFinite { .. }
            | EmptyWindow | NotClosed { .. } => 5,
            Io(_) | ModelFormat(_) => 6,
        }
    }
}
