//! Shepp-Logan head phantom, in the modified-contrast variant whose values
//! lie in `[0, 1]`.

use crate::error::{Error, Result};
use crate::grid::Image;

/// One ellipse: intensity, semi-axes `a` (x) and `b` (y), center, rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub intensity: f64,
    pub a: f64,
    pub b: f64,
    pub x0: f64,
    pub y0: f64,
    pub phi_deg: f64,
}

impl Ellipse {
    /// Whether `(x, y)` (in `[-1, 1]^2`, y up) lies inside or on the ellipse.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.phi_deg.to_radians().sin_cos();
        let (dx, dy) = (x - self.x0, y - self.y0);
        let xr = dx * c + dy * s;
        let yr = -dx * s + dy * c;
        (xr / self.a).powi(2) + (yr / self.b).powi(2) <= 1.0
    }
}

const fn ellipse(intensity: f64, a: f64, b: f64, x0: f64, y0: f64, phi_deg: f64) -> Ellipse {
    Ellipse { intensity, a, b, x0, y0, phi_deg }
}

/// The ten ellipses of the modified Shepp-Logan phantom.
pub const SHEPP_LOGAN_ELLIPSES: [Ellipse; 10] = [
    ellipse(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    ellipse(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    ellipse(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    ellipse(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    ellipse(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    ellipse(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    ellipse(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    ellipse(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    ellipse(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    ellipse(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Normalized coordinates of a pixel center: `x` to the right, `y` up.
pub fn pixel_center(width: usize, height: usize, row: usize, col: usize) -> (f64, f64) {
    let x = (2 * col + 1) as f64 / width as f64 - 1.0;
    let y = 1.0 - (2 * row + 1) as f64 / height as f64;
    (x, y)
}

/// Phantom sampled at pixel centers; sums are clamped to `[0, 1]` to remove
/// rounding residue of the cancelling intensities.
pub fn shepp_logan(width: usize, height: usize) -> Result<Image> {
    if width < 16 || height < 16 {
        return Err(Error::Dimension(format!("phantom needs at least 16x16, got {width}x{height}")));
    }
    Ok(Image::from_fn(width, height, |r, c| {
        let (x, y) = pixel_center(width, height, r, c);
        let v: f64 = SHEPP_LOGAN_ELLIPSES
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum();
        v.clamp(0.0, 1.0)
    }))
}
