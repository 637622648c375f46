use thiserror::Error;

/// Errors raised by the reconstruction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A solver produced NaN or infinity. `stage` names the sub-step.
    #[error("non-finite value produced in stage `{stage}` at iteration {iteration}")]
    NonFinite { stage: &'static str, iteration: usize },

    /// Conjugate gradients hit a direction with non-positive curvature.
    #[error("conjugate gradient breakdown at iteration {iteration} (curvature {curvature:e})")]
    Breakdown { iteration: usize, curvature: f64 },

    #[error("zero entry in Fourier-domain diagonal at frequency index {0}")]
    SingularDiagonal(usize),

    /// The inverse transform of a spectrum that should be conjugate-symmetric
    /// left an imaginary part larger than the allowed fraction of the real part.
    #[error("imaginary residue {ratio:e} of real norm exceeds bound {bound:e}")]
    ImaginaryResidue { ratio: f64, bound: f64 },

    #[error("reference image has zero norm")]
    ZeroReference,

    #[error("graph invariant violated: {0}")]
    Graph(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_finite(values: &[f64], stage: &'static str, iteration: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, iteration })
    }
}
