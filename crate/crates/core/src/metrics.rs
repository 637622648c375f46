//! Reconstruction quality metrics.

use crate::error::{Error, Result};
use crate::grid::Image;

/// SNR reported when the estimate matches the reference to rounding.
pub const DEFAULT_SNR_CAP_DB: f64 = 300.0;

/// `20 log10(|reference| / |reference - estimate|)`, capped at
/// [`DEFAULT_SNR_CAP_DB`].
pub fn snr_db(reference: &Image, estimate: &Image) -> Result<f64> {
    snr_db_capped(reference, estimate, DEFAULT_SNR_CAP_DB)
}

/// As [`snr_db`] with an explicit cap, returned whenever the error norm is
/// below `1e-15 * |reference|`.
pub fn snr_db_capped(reference: &Image, estimate: &Image, cap_db: f64) -> Result<f64> {
    reference.ensure_same_dims(estimate, "snr")?;
    let ref_norm = reference.norm();
    if ref_norm == 0.0 {
        return Err(Error::ZeroReference);
    }
    let err_norm = reference.sub(estimate).norm();
    if err_norm < 1e-15 * ref_norm {
        return Ok(cap_db);
    }
    Ok((20.0 * (ref_norm / err_norm).log10()).min(cap_db))
}
