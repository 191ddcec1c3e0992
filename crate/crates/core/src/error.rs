use thiserror::Error;

pub type Result<T, E = LssError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LssError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("mode {letter} out of range 1..={n_q}")]
    LetterOutOfRange { letter: usize, n_q: usize },

    #[error("invalid word string {0:?}")]
    WordSyntax(String),

    #[error("invalid switching distribution: {0}")]
    Distribution(String),

    #[error("invalid signal specification: {0}")]
    Signal(String),

    #[error("sequence length mismatch: {0}")]
    LengthMismatch(String),

    #[error("state blow-up at step {step} (|x|_inf = {norm:.3e}); the configuration is unstable")]
    Unstable { step: usize, norm: f64 },

    #[error("time index {t} out of range for word of length {len} on a trajectory of {samples} samples")]
    IndexOutOfRange { t: usize, len: usize, samples: usize },

    #[error("trajectory too short: N = {n} but word length {len} needs N > |w| + 1")]
    TooShort { n: usize, len: usize },

    #[error("input covariance is singular or not positive definite")]
    SingularCovariance,

    #[error("Markov map has no entry for word {0:?}")]
    MissingWord(String),

    #[error("invalid selection: {0}")]
    Selection(String),

    #[error("Hankel matrix is singular: sigma_n = {sigma_n:.3e}, sigma_1 = {sigma_1:.3e}")]
    SingularHankel { sigma_n: f64, sigma_1: f64 },

    #[error("no rank-{n} selection exists (largest attainable rank {rank}); the model is not minimal")]
    NoSelection { n: usize, rank: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("P does not certify quadratic stability (gamma = {gamma:.6} >= 1)")]
    NotQuadraticallyStable { gamma: f64 },

    #[error(
        "no stability certificate found (inconclusive, not a proof of instability); \
         mean-square spectral radius = {schur_radius:.6}"
    )]
    NoCertificate { schur_radius: f64 },

    #[error("trajectory length N = {n} must exceed 2(2n+1) = {min}")]
    InsufficientSamples { n: usize, min: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LssError {
    /// True for refusals caused by the numbers (singularity, instability)
    /// rather than by malformed input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            LssError::Unstable { .. }
                | LssError::SingularCovariance
                | LssError::SingularHankel { .. }
                | LssError::NoSelection { .. }
                | LssError::NotPositiveDefinite
                | LssError::NotQuadraticallyStable { .. }
                | LssError::NoCertificate { .. }
                | LssError::InsufficientSamples { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, LssError::Io(_))
    }
}
