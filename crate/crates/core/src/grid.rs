//! Regular-grid images, 2-vector fields and the periodic finite-difference
//! operators used by every local solver.
//!
//! Pixels are stored row-major: index `row * width + col`. The x component of
//! a gradient differences along a row (towards the next column), the y
//! component along a column (towards the next row). Both differences wrap
//! periodically at the last column/row so that the operators are circulant
//! and diagonalize under the 2D DFT.
//!
//! All reductions (`dot`, `norm`, `sum`) accumulate sequentially in row-major
//! order, so results do not depend on thread count.

use crate::error::{Error, Result};

/// Real-valued scalar field on a `width x height` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    /// Wraps row-major samples. Both dimensions must be at least 2.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Dimension(format!(
                "image must be at least 2x2, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} samples for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width >= 2 && height >= 2, "image must be at least 2x2");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Builds an image from `f(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(width, height);
        for row in 0..height {
            for col in 0..width {
                img.data[row * width + col] = f(row, col);
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_dims(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pixel-wise combination of two images of equal size.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert!(self.same_dims(other), "zip_map on images of different size");
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Image {
        self.map(|v| v * factor)
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &Image) {
        assert!(self.same_dims(other), "axpy on images of different size");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    pub fn sub(&self, other: &Image) -> Image {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn dot(&self, other: &Image) -> f64 {
        assert!(self.same_dims(other), "dot on images of different size");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `max - min` over all samples.
    pub fn dynamic_range(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Cyclic shift: output(row, col) = self(row - drow, col - dcol) (mod size).
    pub fn shifted(&self, drow: usize, dcol: usize) -> Image {
        let (w, h) = self.dims();
        Image::from_fn(w, h, |row, col| {
            self.get((row + h - drow % h) % h, (col + w - dcol % w) % w)
        })
    }

    /// Rescales samples linearly so that min maps to 0 and max to 1.
    /// A constant image maps to all zeros.
    pub fn normalized_unit_range(&self) -> Image {
        let (lo, hi) = (self.min(), self.max());
        let span = hi - lo;
        if span <= 0.0 {
            return Image::zeros(self.width, self.height);
        }
        self.map(|v| (v - lo) / span)
    }
}

/// Per-pixel 2-vector field; both components share the grid size.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: Image,
    pub y: Image,
}

impl VectorField {
    pub fn new(x: Image, y: Image) -> Result<Self> {
        x.ensure_same_dims(&y, "vector field components")?;
        Ok(Self { x, y })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            x: Image::zeros(width, height),
            y: Image::zeros(width, height),
        }
    }

    /// Same vector `(vx, vy)` at every pixel.
    pub fn constant(width: usize, height: usize, vx: f64, vy: f64) -> Self {
        Self {
            x: Image::filled(width, height, vx),
            y: Image::filled(width, height, vy),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.x.dims()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        self.x.dot(&other.x) + self.y.dot(&other.y)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, factor: f64) -> VectorField {
        VectorField {
            x: self.x.scaled(factor),
            y: self.y.scaled(factor),
        }
    }

    pub fn axpy(&mut self, factor: f64, other: &VectorField) {
        self.x.axpy(factor, &other.x);
        self.y.axpy(factor, &other.y);
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            x: self.x.sub(&other.x),
            y: self.y.sub(&other.y),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Forward differences with periodic wrap.
pub fn grad_forward(u: &Image) -> VectorField {
    let (w, h) = u.dims();
    let s = u.as_slice();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for row in 0..h {
        let down = if row + 1 == h { 0 } else { row + 1 };
        for col in 0..w {
            let right = if col + 1 == w { 0 } else { col + 1 };
            let here = s[row * w + col];
            gx[row * w + col] = s[row * w + right] - here;
            gy[row * w + col] = s[down * w + col] - here;
        }
    }
    VectorField {
        x: Image { width: w, height: h, data: gx },
        y: Image { width: w, height: h, data: gy },
    }
}

/// Backward-difference divergence, the negative adjoint of [`grad_forward`].
pub fn div_backward(d: &VectorField) -> Image {
    let (w, h) = d.dims();
    let dx = d.x.as_slice();
    let dy = d.y.as_slice();
    let mut out = vec![0.0; w * h];
    for row in 0..h {
        let up = if row == 0 { h - 1 } else { row - 1 };
        for col in 0..w {
            let left = if col == 0 { w - 1 } else { col - 1 };
            let i = row * w + col;
            out[i] = (dx[i] - dx[row * w + left]) + (dy[i] - dy[up * w + col]);
        }
    }
    Image { width: w, height: h, data: out }
}

/// Euclidean length of the vector at each pixel.
pub fn pixel_norm(d: &VectorField) -> Image {
    d.x.zip_map(&d.y, f64::hypot)
}

/// Isotropic discrete TV seminorm: sum of `pixel_norm(grad_forward(u))`.
pub fn total_variation(u: &Image) -> f64 {
    pixel_norm(&grad_forward(u)).sum()
}

/// Eigenvalues of `Dx^T Dx + Dy^T Dy` in the DFT layout of a `width x height`
/// image: `4 sin^2(pi k / W) + 4 sin^2(pi l / H)`.
pub fn laplacian_symbol(width: usize, height: usize) -> Vec<f64> {
    let sx: Vec<f64> = (0..width)
        .map(|k| {
            let s = (std::f64::consts::PI * k as f64 / width as f64).sin();
            4.0 * s * s
        })
        .collect();
    let mut out = Vec::with_capacity(width * height);
    for l in 0..height {
        let s = (std::f64::consts::PI * l as f64 / height as f64).sin();
        let sy = 4.0 * s * s;
        out.extend(sx.iter().map(|&v| v + sy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(Image::new(1, 4, vec![0.0; 4]).is_err());
        assert!(Image::new(3, 3, vec![0.0; 8]).is_err());
        assert!(VectorField::new(Image::zeros(3, 3), Image::zeros(3, 4)).is_err());
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = grad_forward(&Image::filled(5, 7, 3.25));
        assert!(g.x.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.y.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_column_ramp_wraps() {
        let u = Image::from_fn(4, 4, |_, col| col as f64);
        let g = grad_forward(&u);
        for row in 0..4 {
            for col in 0..4 {
                let expected = if col == 3 { -3.0 } else { 1.0 };
                assert_eq!(g.x.get(row, col), expected);
                assert_eq!(g.y.get(row, col), 0.0);
            }
        }
    }

    #[test]
    fn divergence_of_impulse_gradient_is_laplacian_stencil() {
        let mut u = Image::zeros(8, 8);
        u.set(4, 4, 1.0);
        let lap = div_backward(&grad_forward(&u));
        for row in 0..8 {
            for col in 0..8 {
                let expected = match (row, col) {
                    (4, 4) => -4.0,
                    (3, 4) | (5, 4) | (4, 3) | (4, 5) => 1.0,
                    _ => 0.0,
                };
                assert_eq!(lap.get(row, col), expected, "at ({row},{col})");
            }
        }
    }

    #[test]
    fn divergence_of_zero_field() {
        assert!(div_backward(&VectorField::zeros(6, 5)).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjointness_on_random_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(w, h) in &[(8, 8), (16, 16), (5, 9), (2, 2)] {
            let u = random_image(&mut rng, w, h);
            let d = VectorField {
                x: random_image(&mut rng, w, h),
                y: random_image(&mut rng, w, h),
            };
            let lhs = grad_forward(&u).dot(&d);
            let rhs = u.dot(&div_backward(&d));
            let scale = grad_forward(&u).norm() * d.norm();
            assert!((lhs + rhs).abs() <= 1e-12 * scale, "{w}x{h}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn pixel_norm_three_four_five() {
        let n = pixel_norm(&VectorField::constant(3, 3, 3.0, 4.0));
        assert!(n.as_slice().iter().all(|&v| v == 5.0));
        assert!(pixel_norm(&VectorField::zeros(3, 3)).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tv_of_periodic_column_step() {
        // Column 3 raised by one: two jump columns of eight pixels each.
        let u = Image::from_fn(8, 8, |_, col| if col == 3 { 1.0 } else { 0.0 });
        assert_eq!(total_variation(&u), 16.0);
    }

    #[test]
    fn operators_commute_with_cyclic_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_image(&mut rng, 7, 5);
        let shifted_then_grad = grad_forward(&u.shifted(2, 3));
        let g = grad_forward(&u);
        assert_eq!(shifted_then_grad.x, g.x.shifted(2, 3));
        assert_eq!(shifted_then_grad.y, g.y.shifted(2, 3));
        let d = VectorField {
            x: random_image(&mut rng, 7, 5),
            y: random_image(&mut rng, 7, 5),
        };
        let lhs = div_backward(&VectorField {
            x: d.x.shifted(1, 4),
            y: d.y.shifted(1, 4),
        });
        assert_eq!(lhs, div_backward(&d).shifted(1, 4));
    }

    #[test]
    fn laplacian_symbol_matches_operator_on_plane_wave() {
        // cos(2 pi (k col / W + l row / H)) is an eigenvector of -div grad.
        let (w, h, k, l) = (8usize, 6usize, 3usize, 2usize);
        let u = Image::from_fn(w, h, |row, col| {
            (2.0 * std::f64::consts::PI * (k as f64 * col as f64 / w as f64 + l as f64 * row as f64 / h as f64)).cos()
        });
        let lap = div_backward(&grad_forward(&u)).scaled(-1.0);
        let lambda = laplacian_symbol(w, h)[l * w + k];
        let err = lap.sub(&u.scaled(lambda)).norm();
        assert!(err < 1e-12, "err {err}");
    }

    proptest::proptest! {
        #[test]
        fn gradient_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_image(&mut rng, 6, 4);
            let v = random_image(&mut rng, 6, 4);
            let mut comb = u.scaled(a);
            comb.axpy(b, &v);
            let lhs = grad_forward(&comb);
            let mut rhs = grad_forward(&u).scaled(a);
            rhs.axpy(b, &grad_forward(&v));
            proptest::prop_assert!(lhs.sub(&rhs).norm() <= 1e-12 * (1.0 + rhs.norm()));
        }
    }
}
