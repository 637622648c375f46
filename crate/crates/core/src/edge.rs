//! Robust edge-stopping function (Tukey biweight) with a MAD-estimated scale.

use crate::grid::Image;

/// Consistency constant of the median absolute deviation for Gaussian data.
pub const MAD_CONSISTENCY: f64 = 1.4826;

/// Soft threshold on gradient magnitude separating noise from edges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeScale {
    sigma: f64,
}

impl EdgeScale {
    /// Explicit scale; must be positive and finite.
    pub fn new(sigma: f64) -> Option<Self> {
        (sigma > 0.0 && sigma.is_finite()).then_some(Self { sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Lower median: for an even count the smaller of the two middle values.
pub fn lower_median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut v = values.to_vec();
    let mid = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// `1.4826 * median(| |grad u| - median(|grad u|) |)` over all pixels, floored
/// at `1e-8 * (max |grad u| + 1e-30)`.
pub fn mad_sigma(grad_mag: &Image) -> EdgeScale {
    mad_sigma_of(grad_mag.as_slice())
}

/// [`mad_sigma`] on a bare sample slice.
pub fn mad_sigma_of(samples: &[f64]) -> EdgeScale {
    let med = lower_median(samples);
    let deviations: Vec<f64> = samples.iter().map(|&v| (v - med).abs()).collect();
    let raw = MAD_CONSISTENCY * lower_median(&deviations);
    let max = samples.iter().copied().fold(0.0, f64::max);
    let floor = 1e-8 * (max + 1e-30);
    EdgeScale { sigma: raw.max(floor) }
}

/// Tukey edge-stopping weight `1/2 (1 - (x/sigma)^2)^2` on `[0, sigma]`, zero beyond.
#[inline]
pub fn tukey_g(x: f64, scale: EdgeScale) -> f64 {
    let t = x / scale.sigma;
    if t.abs() <= 1.0 {
        let a = 1.0 - t * t;
        0.5 * a * a
    } else {
        0.0
    }
}

/// Pixel-wise edge weights `g(|grad u|)` using the MAD scale of the same image.
/// With `max_one` the weights are doubled so flat regions get weight 1.
pub fn edge_weights(grad_mag: &Image, max_one: bool) -> Image {
    let scale = mad_sigma(grad_mag);
    let factor = if max_one { 2.0 } else { 1.0 };
    grad_mag.map(|x| factor * tukey_g(x, scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(values: &[f64]) -> Image {
        // pad into a 2-row image; padding values repeat the slice
        let w = values.len();
        let mut data = values.to_vec();
        data.extend_from_slice(values);
        Image::new(w, 2, data).unwrap()
    }

    #[test]
    fn constant_input_hits_floor() {
        let s = mad_sigma(&Image::filled(4, 4, 2.0));
        assert!((s.sigma() - 1e-8 * 2.0).abs() < 1e-20);
    }

    #[test]
    fn sparse_outlier_has_zero_mad() {
        let s = mad_sigma_of(&[0.0, 0.0, 0.0, 0.0, 10.0]);
        assert!((s.sigma() - 1e-8 * 10.0).abs() < 1e-20);
    }

    #[test]
    fn one_to_five() {
        let s = mad_sigma_of(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!((s.sigma() - 1.4826).abs() < 1e-15);
        // doubling the samples leaves the median chain unchanged
        assert!((mad_sigma(&img(&[1.0, 2.0, 3.0, 4.0, 5.0])).sigma() - 1.4826).abs() < 1e-15);
    }

    #[test]
    fn even_count_uses_lower_median() {
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&[7.0]), 7.0);
    }

    #[test]
    fn tukey_values() {
        let s = EdgeScale::new(2.0).unwrap();
        assert_eq!(tukey_g(0.0, s), 0.5);
        assert_eq!(tukey_g(2.0, s), 0.0);
        assert_eq!(tukey_g(4.0, s), 0.0);
        assert!((tukey_g(1.0, s) - 0.28125).abs() < 1e-15);
    }

    #[test]
    fn scale_rejects_nonpositive() {
        assert!(EdgeScale::new(0.0).is_none());
        assert!(EdgeScale::new(f64::NAN).is_none());
    }

    #[test]
    fn max_one_doubles() {
        let g = Image::from_fn(4, 4, |r, c| (r * 4 + c) as f64);
        let a = edge_weights(&g, false);
        let b = edge_weights(&g, true);
        assert_eq!(b, a.scaled(2.0));
        assert!(a.max() <= 0.5);
    }

    proptest::proptest! {
        #[test]
        fn tukey_is_nonincreasing_and_bounded(a in 0.0f64..10.0, b in 0.0f64..10.0, sigma in 0.01f64..5.0) {
            let s = EdgeScale::new(sigma).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (glo, ghi) = (tukey_g(lo, s), tukey_g(hi, s));
            proptest::prop_assert!(ghi <= glo);
            proptest::prop_assert!((0.0..=0.5).contains(&glo));
        }

        #[test]
        fn mad_is_permutation_invariant_and_scale_equivariant(
            mut v in proptest::collection::vec(0.0f64..10.0, 1..60),
            c in 0.1f64..10.0,
            rot in 0usize..60,
        ) {
            let s = mad_sigma_of(&v).sigma();
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            let s_scaled = mad_sigma_of(&scaled).sigma();
            let len = v.len();
            v.rotate_left(rot % len);
            proptest::prop_assert_eq!(mad_sigma_of(&v).sigma(), s);
            proptest::prop_assert!((s_scaled - c * s).abs() <= 1e-12 * (1.0 + c * s));
        }
    }

    #[test]
    fn continuous_at_sigma() {
        let s = EdgeScale::new(1.0).unwrap();
        assert!(tukey_g(1.0 - 1e-9, s) < 1e-17);
    }
}
