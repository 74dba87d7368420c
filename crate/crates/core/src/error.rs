use thiserror::Error;

use crate::dyadic::CubeKey;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("candidate set for the symmetrized dominating function is empty")]
    EmptyCandidates,

    #[error("doubling constant must be at least 1, got {0}")]
    DoublingConstant(f64),

    #[error("generation {generation} outside the tracked range [{min}, {max}]")]
    GenerationOutOfRange { generation: i32, min: i32, max: i32 },

    #[error("kernel evaluated at non-positive scale t = {0}")]
    NonPositiveScale(f64),

    #[error("Hölder sample violates |y - z| < t/2 (|y - z| = {separation}, t = {t})")]
    HolderSample { separation: f64, t: f64 },

    #[error("empty integration interval ({t_lo}, {t_hi})")]
    EmptyInterval { t_lo: f64, t_hi: f64 },

    #[error("cube {0} has zero mass")]
    ZeroMass(CubeKey),

    #[error("b has vanishing average {average:e} on cube {cube}")]
    Accretivity { cube: CubeKey, average: f64 },

    #[error("empty cube corpus")]
    EmptyCorpus,

    #[error("sample count must be positive")]
    NoSamples,

    #[error("too many shift bits to enumerate ({bits} > {limit})")]
    EnumerationTooLarge { bits: u32, limit: u32 },

    #[error("power iteration did not converge after {0} iterations")]
    PowerIteration(usize),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
