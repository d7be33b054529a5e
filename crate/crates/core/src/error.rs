use thiserror::Error;

/// Errors surfaced by model construction and the simulation engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error(
        "Fock truncation at n_max={n_max} retains {retained:.12} of the thermal weight \
         (need >= {required:.12}); increase n_max"
    )]
    TruncationWeight {
        n_max: usize,
        retained: f64,
        required: f64,
    },

    #[error("probability {value:.3e} outside [0, 1] beyond clip tolerance {tol:.1e} for outcome {outcome}")]
    ProbabilityOutOfRange {
        value: f64,
        tol: f64,
        outcome: String,
    },

    #[error(
        "reduced map at t={t} is ill-conditioned for inversion \
         (smallest singular value {sigma_min:.3e} < {threshold:.1e})"
    )]
    IllConditioned {
        t: f64,
        sigma_min: f64,
        threshold: f64,
    },
}
