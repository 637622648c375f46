//! Unitary 2D discrete Fourier transform and Fourier-diagonal solves.
//!
//! Both directions are scaled by `1/sqrt(n)`, so the transform preserves
//! Euclidean norms and `F^T R^T R F` stays a 0/1 diagonal for row selections.
//! Coefficients use the standard DFT layout (DC at index 0, row-major).

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::Image;

/// Imaginary-part bound (relative to the real norm) tolerated when a spectrum
/// that should be conjugate-symmetric is brought back to the image domain.
pub const IMAGINARY_RESIDUE_BOUND: f64 = 1e-9;

/// Complex coefficients of a `width x height` image in DFT layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    width: usize,
    height: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(width: usize, height: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} coefficients for a {width}x{height} spectrum",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![Complex64::new(0.0, 0.0); width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Planned forward/inverse transforms for one grid size.
#[derive(Clone)]
pub struct FourierTransform {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FourierTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierTransform")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

impl FourierTransform {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn check(&self, w: usize, h: usize) -> Result<()> {
        if (w, h) == (self.width, self.height) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "transform planned for {}x{}, got {w}x{h}",
                self.width, self.height
            )))
        }
    }

    fn transform(&self, data: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        let (w, h) = (self.width, self.height);
        row.process(data);
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = data[r * w + c];
            }
            col.process(&mut column);
            for r in 0..h {
                data[r * w + c] = column[r];
            }
        }
        let scale = 1.0 / ((w * h) as f64).sqrt();
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward(&self, u: &Image) -> Result<Spectrum> {
        self.check(u.width(), u.height())?;
        let mut data: Vec<Complex64> = u.as_slice().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.row_fwd, &self.col_fwd);
        Ok(Spectrum {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Inverse transform keeping the full complex result (as a spectrum-shaped buffer).
    pub fn inverse_complex(&self, s: &Spectrum) -> Result<Vec<Complex64>> {
        self.check(s.width, s.height)?;
        let mut data = s.data.clone();
        self.transform(&mut data, &self.row_inv, &self.col_inv);
        Ok(data)
    }

    /// Inverse transform that discards the imaginary part, after checking that
    /// it is below [`IMAGINARY_RESIDUE_BOUND`] of the real norm.
    pub fn inverse(&self, s: &Spectrum) -> Result<Image> {
        let data = self.inverse_complex(s)?;
        let re_norm = data.iter().map(|c| c.re * c.re).sum::<f64>().sqrt();
        let im_norm = data.iter().map(|c| c.im * c.im).sum::<f64>().sqrt();
        if im_norm > IMAGINARY_RESIDUE_BOUND * re_norm && im_norm > f64::MIN_POSITIVE {
            return Err(Error::ImaginaryResidue {
                ratio: im_norm / re_norm.max(f64::MIN_POSITIVE),
                bound: IMAGINARY_RESIDUE_BOUND,
            });
        }
        Image::new(self.width, self.height, data.into_iter().map(|c| c.re).collect())
    }

    /// Inverse transform returning only the real part, with no residue check.
    /// This is the real adjoint of the forward transform.
    pub fn inverse_real_part(&self, s: &Spectrum) -> Result<Image> {
        let data = self.inverse_complex(s)?;
        Image::new(self.width, self.height, data.into_iter().map(|c| c.re).collect())
    }

    /// Solves `F^T diag(symbol) F x = rhs` for a real, conjugate-symmetric,
    /// strictly positive `symbol` by pointwise division.
    pub fn solve_diagonal(&self, symbol: &[f64], rhs: &Image) -> Result<Image> {
        if symbol.len() != self.width * self.height {
            return Err(Error::Dimension("diagonal symbol length".into()));
        }
        if let Some(k) = symbol.iter().position(|&c| c == 0.0 || !c.is_finite()) {
            return Err(Error::SingularDiagonal(k));
        }
        let mut spec = self.forward(rhs)?;
        for (v, &c) in spec.data.iter_mut().zip(symbol) {
            *v /= c;
        }
        self.inverse(&spec)
    }
}

/// Unitary forward transform; plans a fresh transform each call.
pub fn forward_fft(u: &Image) -> Spectrum {
    FourierTransform::new(u.width(), u.height())
        .forward(u)
        .expect("dimensions match by construction")
}

/// Unitary inverse transform (see [`FourierTransform::inverse`]).
pub fn inverse_fft(s: &Spectrum) -> Result<Image> {
    FourierTransform::new(s.width, s.height).inverse(s)
}
