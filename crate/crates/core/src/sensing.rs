//! Radial partial-Fourier sampling and the measurement operator `A = R F`.
//!
//! Measurements are the unitary DFT coefficients of an image at the cells of
//! a boolean mask, listed in row-major scan order of the mask. The adjoint
//! zero-fills the unsampled coefficients, inverts, and keeps the real part,
//! which is the minimum-norm (back-projection) solution for real images.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{FourierTransform, Spectrum};
use crate::grid::Image;

/// Where Gaussian noise is injected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDomain {
    /// Complex noise on the Fourier measurements.
    #[default]
    Measurement,
    /// Real noise on the image before measuring.
    Image,
}

/// Boolean Fourier-domain mask in DFT layout, plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    width: usize,
    height: usize,
    mask: Vec<bool>,
    indices: Vec<usize>,
    line_count: usize,
    rng_seed: u64,
}

impl SamplingPlan {
    /// Wraps an explicit mask. The DC cell must be sampled.
    pub fn from_mask(width: usize, height: usize, mask: Vec<bool>, line_count: usize, rng_seed: u64) -> Result<Self> {
        if width < 2 || height < 2 || mask.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask of {} cells for a {width}x{height} grid",
                mask.len()
            )));
        }
        if !mask[0] {
            return Err(Error::InvalidParameter("mask must sample the DC frequency".into()));
        }
        let indices = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        Ok(Self {
            width,
            height,
            mask,
            indices,
            line_count,
            rng_seed,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::from_mask(width, height, vec![true; width * height], 0, 0).expect("valid full mask")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Row-major indices of the sampled cells; measurement `k` lives at `indices()[k]`.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn sample_count(&self) -> usize {
        self.indices.len()
    }

    pub fn sample_ratio(&self) -> f64 {
        self.indices.len() as f64 / self.mask.len() as f64
    }

    pub fn line_count(&self) -> usize {
        self.line_count
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// `(M(k) + M(-k)) / 2` per frequency: the Fourier symbol of `A^T A`
    /// restricted to real images. Equals the mask itself when the mask is
    /// conjugate-symmetric.
    pub fn real_normal_symbol(&self) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let mut out = vec![0.0; w * h];
        for row in 0..h {
            let mrow = (h - row) % h;
            for col in 0..w {
                let mcol = (w - col) % w;
                let a = self.mask[row * w + col] as u8 as f64;
                let b = self.mask[mrow * w + mcol] as u8 as f64;
                out[row * w + col] = 0.5 * (a + b);
            }
        }
        out
    }

    pub fn is_conjugate_symmetric(&self) -> bool {
        self.real_normal_symbol().iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Line count at which [`radial_mask`] returns the full mask outright.
pub fn saturating_line_count(width: usize, height: usize) -> usize {
    2 * (width + height)
}

/// Union of `line_count` lines through the DC frequency at angles
/// `k pi / line_count`, rasterized symmetrically about the origin in centered
/// frequency coordinates and wrapped into DFT layout.
///
/// The rasterization steps one cell at a time along the dominant axis and
/// rounds the other coordinate half away from zero, so a cell and its
/// negation are always both present and the mask is conjugate-symmetric.
pub fn radial_mask(width: usize, height: usize, line_count: usize, rng_seed: u64) -> Result<SamplingPlan> {
    if line_count == 0 {
        return Err(Error::InvalidParameter("line_count must be at least 1".into()));
    }
    if width < 2 || height < 2 {
        return Err(Error::Dimension(format!("mask must be at least 2x2, got {width}x{height}")));
    }
    if line_count >= saturating_line_count(width, height) {
        return SamplingPlan::from_mask(width, height, vec![true; width * height], line_count, rng_seed);
    }
    let (w, h) = (width as i64, height as i64);
    let (half_w, half_h) = (w / 2, h / 2);
    let mut mask = vec![false; width * height];
    let mut mark = |x: i64, y: i64| {
        let col = x.rem_euclid(w) as usize;
        let row = y.rem_euclid(h) as usize;
        mask[row * width + col] = true;
    };
    for k in 0..line_count {
        let theta = k as f64 * std::f64::consts::PI / line_count as f64;
        let (s, c) = theta.sin_cos();
        if c.abs() >= s.abs() {
            let slope = s / c;
            for t in -half_w..=half_w {
                let y = (t as f64 * slope).round() as i64;
                if y.abs() <= half_h {
                    mark(t, y);
                }
            }
        } else {
            let slope = c / s;
            for t in -half_h..=half_h {
                let x = (t as f64 * slope).round() as i64;
                if x.abs() <= half_w {
                    mark(x, t);
                }
            }
        }
    }
    mask[0] = true;
    SamplingPlan::from_mask(width, height, mask, line_count, rng_seed)
}

/// Smallest line count whose radial mask samples at least `target_ratio` of
/// the grid.
pub fn lines_for_ratio(width: usize, height: usize, target_ratio: f64) -> Result<usize> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::InvalidParameter(format!("sampling ratio {target_ratio} not in (0, 1]")));
    }
    let max = saturating_line_count(width, height);
    for lines in 1..max {
        if radial_mask(width, height, lines, 0)?.sample_ratio() >= target_ratio {
            return Ok(lines);
        }
    }
    Ok(max)
}

/// Fourier coefficients observed at the sampled cells of a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub values: Vec<Complex64>,
    pub plan: SamplingPlan,
    /// Per-component standard deviation of the injected noise (0 if clean).
    pub noise_sigma: f64,
    /// Seed of the injected noise, if any.
    pub noise_seed: Option<u64>,
}

impl Measurements {
    pub fn new(values: Vec<Complex64>, plan: SamplingPlan) -> Result<Self> {
        if values.len() != plan.sample_count() {
            return Err(Error::Dimension(format!(
                "{} measurement values for a plan with {} samples",
                values.len(),
                plan.sample_count()
            )));
        }
        Ok(Self {
            values,
            plan,
            noise_sigma: 0.0,
            noise_seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Root mean square of the complex values.
    pub fn rms(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.norm() / (self.values.len() as f64).sqrt()
        }
    }

    /// Real part of the Hermitian inner product `<self, other>`.
    pub fn real_inner(&self, other: &Measurements) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }
}

/// `A = R F` and its real adjoint for a fixed plan, with the transform planned once.
#[derive(Debug, Clone)]
pub struct SensingOperator {
    plan: SamplingPlan,
    fft: FourierTransform,
}

impl SensingOperator {
    pub fn new(plan: SamplingPlan) -> Self {
        let fft = FourierTransform::new(plan.width, plan.height);
        Self { plan, fft }
    }

    pub fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    pub fn transform(&self) -> &FourierTransform {
        &self.fft
    }

    pub fn apply(&self, u: &Image) -> Result<Measurements> {
        if u.dims() != (self.plan.width, self.plan.height) {
            return Err(Error::Dimension(format!(
                "image {}x{} vs plan {}x{}",
                u.width(),
                u.height(),
                self.plan.width,
                self.plan.height
            )));
        }
        let spec = self.fft.forward(u)?;
        let values = self.plan.indices.iter().map(|&i| spec.as_slice()[i]).collect();
        Measurements::new(values, self.plan.clone())
    }

    /// Real part of the inverse transform of the zero-filled spectrum.
    pub fn adjoint(&self, f: &Measurements) -> Result<Image> {
        if f.plan.mask != self.plan.mask || f.values.len() != self.plan.sample_count() {
            return Err(Error::Dimension("measurements do not match sensing plan".into()));
        }
        let mut spec = Spectrum::zeros(self.plan.width, self.plan.height);
        let buf = spec.as_mut_slice();
        for (&i, &v) in self.plan.indices.iter().zip(&f.values) {
            buf[i] = v;
        }
        self.fft.inverse_real_part(&spec)
    }
}

/// Masked unitary DFT coefficients of `u`, in mask scan order.
pub fn measure(u: &Image, plan: &SamplingPlan) -> Result<Measurements> {
    SensingOperator::new(plan.clone()).apply(u)
}

/// Back-projection `A^T f`.
pub fn adjoint(f: &Measurements) -> Result<Image> {
    SensingOperator::new(f.plan.clone()).adjoint(f)
}

/// Adds i.i.d. complex Gaussian noise with per-component standard deviation
/// `sigma_fraction * rms(f)`.
pub fn add_noise(f: &Measurements, sigma_fraction: f64, rng_seed: u64) -> Result<Measurements> {
    if !(sigma_fraction >= 0.0) || !sigma_fraction.is_finite() {
        return Err(Error::InvalidParameter(format!("noise fraction {sigma_fraction} must be >= 0")));
    }
    let sigma = sigma_fraction * f.rms();
    let mut out = f.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for v in out.values.iter_mut() {
        let re = normal.sample(&mut rng);
        let im = normal.sample(&mut rng);
        *v += Complex64::new(re, im);
    }
    out.noise_sigma = sigma;
    out.noise_seed = Some(rng_seed);
    Ok(out)
}

/// Adds i.i.d. real Gaussian noise with standard deviation
/// `sigma_fraction * rms(u)` to an image. Returns the image and the absolute sigma.
pub fn add_image_noise(u: &Image, sigma_fraction: f64, rng_seed: u64) -> Result<(Image, f64)> {
    if !(sigma_fraction >= 0.0) || !sigma_fraction.is_finite() {
        return Err(Error::InvalidParameter(format!("noise fraction {sigma_fraction} must be >= 0")));
    }
    let sigma = sigma_fraction * u.norm() / (u.len() as f64).sqrt();
    if sigma == 0.0 {
        return Ok((u.clone(), 0.0));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = u.clone();
    for v in out.as_mut_slice() {
        *v += normal.sample(&mut rng);
    }
    Ok((out, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_measurements(seed: u64, plan: &SamplingPlan) -> Measurements {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..plan.sample_count())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Measurements::new(values, plan.clone()).unwrap()
    }

    #[test]
    fn dc_is_always_sampled() {
        for lines in [1, 3, 7, 20] {
            let plan = radial_mask(16, 12, lines, 9).unwrap();
            assert!(plan.mask()[0]);
        }
    }

    #[test]
    fn many_lines_saturate_small_grid() {
        let plan = radial_mask(4, 4, saturating_line_count(4, 4), 0).unwrap();
        assert_eq!(plan.sample_ratio(), 1.0);
        // Rasterization alone also covers a 4x4 grid once enough angles are drawn.
        let plan = radial_mask(4, 4, 15, 0).unwrap();
        assert_eq!(plan.sample_ratio(), 1.0);
    }

    #[test]
    fn zero_lines_rejected() {
        assert!(radial_mask(8, 8, 0, 0).is_err());
    }

    #[test]
    fn ratio_matches_count() {
        let plan = radial_mask(32, 32, 6, 0).unwrap();
        let count = plan.mask().iter().filter(|&&m| m).count();
        assert_eq!(plan.sample_ratio(), count as f64 / 1024.0);
        assert_eq!(plan.sample_count(), count);
    }

    #[test]
    fn radial_masks_are_conjugate_symmetric() {
        for &(w, h, l) in &[(128, 128, 17), (33, 20, 5), (64, 48, 9)] {
            assert!(radial_mask(w, h, l, 0).unwrap().is_conjugate_symmetric(), "{w}x{h} {l}");
        }
    }

    #[test]
    fn twelve_percent_operating_point() {
        let lines = lines_for_ratio(128, 128, 0.12).unwrap();
        let ratio = radial_mask(128, 128, lines, 0).unwrap().sample_ratio();
        assert!((0.10..=0.14).contains(&ratio), "ratio {ratio} with {lines} lines");
        assert!(ratio >= 0.12);
        let fewer = radial_mask(128, 128, lines - 1, 0).unwrap().sample_ratio();
        assert!(fewer < 0.12);
    }

    #[test]
    fn ratio_lookup_edges() {
        assert_eq!(lines_for_ratio(16, 16, 1e-9).unwrap(), 1);
        let full = lines_for_ratio(16, 16, 1.0).unwrap();
        assert_eq!(radial_mask(16, 16, full, 0).unwrap().sample_ratio(), 1.0);
        assert!(lines_for_ratio(16, 16, 0.0).is_err());
        assert!(lines_for_ratio(16, 16, 1.5).is_err());
    }

    #[test]
    fn zero_image_measures_zero() {
        let plan = radial_mask(16, 16, 4, 0).unwrap();
        let f = measure(&Image::zeros(16, 16), &plan).unwrap();
        assert!(f.values.iter().all(|v| v.norm() == 0.0));
        assert!(adjoint(&f).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_image_has_only_dc() {
        let plan = radial_mask(16, 8, 5, 0).unwrap();
        let f = measure(&Image::filled(16, 8, 0.75), &plan).unwrap();
        assert!((f.values[0].re - 0.75 * (128f64).sqrt()).abs() < 1e-12);
        assert!(f.values[1..].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn full_mask_adjoint_inverts() {
        let u = random_image(1, 12, 10);
        let plan = SamplingPlan::full(12, 10);
        let back = adjoint(&measure(&u, &plan).unwrap()).unwrap();
        assert!(back.sub(&u).norm() <= 1e-12 * u.norm());
    }

    #[test]
    fn adjoint_identity() {
        let plan = radial_mask(16, 16, 5, 0).unwrap();
        for seed in 0..10 {
            let u = random_image(seed, 16, 16);
            let f = random_measurements(seed + 100, &plan);
            let lhs = f.real_inner(&measure(&u, &plan).unwrap());
            let rhs = adjoint(&f).unwrap().dot(&u);
            assert!((lhs - rhs).abs() <= 1e-12 * f.norm() * u.norm(), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn a_at_is_identity_on_the_range() {
        let plan = radial_mask(20, 16, 6, 0).unwrap();
        let f = measure(&random_image(4, 20, 16), &plan).unwrap();
        let again = measure(&adjoint(&f).unwrap(), &plan).unwrap();
        let err: f64 = f
            .values
            .iter()
            .zip(&again.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-12 * f.norm());
    }

    #[test]
    fn real_normal_symbol_of_asymmetric_mask() {
        let mut mask = vec![false; 16];
        mask[0] = true;
        mask[1] = true; // (0,1) without its partner (0,3)
        let plan = SamplingPlan::from_mask(4, 4, mask, 0, 0).unwrap();
        let sym = plan.real_normal_symbol();
        assert_eq!(sym[0], 1.0);
        assert_eq!(sym[1], 0.5);
        assert_eq!(sym[3], 0.5);
        assert!(!plan.is_conjugate_symmetric());
        // A^T A u equals the symbol applied in Fourier for real u.
        let u = random_image(2, 4, 4);
        let ata = adjoint(&measure(&u, &plan).unwrap()).unwrap();
        let t = FourierTransform::new(4, 4);
        let mut s = t.forward(&u).unwrap();
        for (v, &c) in s.as_mut_slice().iter_mut().zip(&sym) {
            *v *= c;
        }
        let via_symbol = t.inverse(&s).unwrap();
        assert!(ata.sub(&via_symbol).norm() < 1e-12);
    }

    #[test]
    fn mask_without_dc_is_rejected() {
        assert!(SamplingPlan::from_mask(2, 2, vec![false, true, true, true], 0, 0).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let plan = radial_mask(16, 16, 4, 0).unwrap();
        let f = measure(&random_image(3, 16, 16), &plan).unwrap();
        assert_eq!(add_noise(&f, 0.0, 7).unwrap(), f);
        assert!(add_noise(&f, -0.1, 7).is_err());
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let plan = SamplingPlan::full(128, 128);
        let f = measure(&random_image(9, 128, 128), &plan).unwrap();
        let frac = 0.1;
        let a = add_noise(&f, frac, 42).unwrap();
        let b = add_noise(&f, frac, 42).unwrap();
        assert_eq!(a.values, b.values);
        let rms = f.rms();
        let mut sq = 0.0;
        for (n, c) in a.values.iter().zip(&f.values) {
            let d = n - c;
            sq += d.re * d.re + d.im * d.im;
        }
        let std = (sq / (2.0 * f.len() as f64)).sqrt();
        let rel = std / rms;
        assert!((rel - frac).abs() <= 0.05 * frac, "empirical {rel}");
        assert_eq!(a.noise_seed, Some(42));
        assert!((a.noise_sigma - frac * rms).abs() < 1e-15);
    }

    proptest::proptest! {
        #[test]
        fn measurement_is_non_expansive(seed in 0u64..500, lines in 1usize..12) {
            let plan = radial_mask(16, 16, lines, 0).unwrap();
            let u = random_image(seed, 16, 16);
            let f = measure(&u, &plan).unwrap();
            proptest::prop_assert!(f.norm() <= u.norm() * (1.0 + 1e-12));
        }
    }
}
