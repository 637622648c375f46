//! Augmented-Lagrangian (ADMM) solver for the local TV family:
//!
//! ```text
//! min_u  J_w(u) + gamma <v, u> + alpha/2 |A u - f|^2
//! ```
//!
//! with the split `d = grad u`. The u-step is a Fourier-diagonal solve, the
//! d-step an isotropic (optionally weighted) shrinkage, followed by a
//! multiplier step with the penalty `r`. `gamma = 0` with no weights is plain
//! TV compressed sensing; re-weighting with the edge detector gives the
//! edge-guided variant.

use serde::{Deserialize, Serialize};

use crate::edge::edge_weights;
use crate::error::{check_finite, Error, Result};
use crate::fourier::FourierTransform;
use crate::grid::{div_backward, grad_forward, laplacian_symbol, pixel_norm, Image, VectorField};
use crate::sensing::{Measurements, SensingOperator};

/// Parameters of the local ADMM solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalSolverConfig {
    /// Data-fidelity weight.
    pub alpha: f64,
    /// Weight of the linear normal-matching term.
    pub gamma: f64,
    /// Penalty of the `d = grad u` constraint.
    pub r: f64,
    /// Proximal shift of the u-system; `None` means `1e-3 * alpha`.
    pub epsilon_reg: Option<f64>,
    /// Stop when `|u^l - u^{l-1}| / |u^l|` drops below this.
    pub tol: f64,
    pub max_inner: usize,
}

impl Default for LocalSolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1000.0,
            gamma: 0.0,
            r: 10.0,
            epsilon_reg: None,
            tol: 1e-4,
            max_inner: 300,
        }
    }
}

impl LocalSolverConfig {
    pub fn epsilon(&self) -> f64 {
        self.epsilon_reg.unwrap_or(1e-3 * self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        positive(self.alpha, "alpha")?;
        positive(self.r, "r")?;
        positive(self.epsilon(), "epsilon_reg")?;
        positive(self.tol, "tol")?;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.max_inner == 0 {
            return Err(Error::InvalidParameter("max_inner must be >= 1".into()));
        }
        Ok(())
    }
}

/// Quadratic data term `1/2 u^T Q u - <rhs, u> + constant` whose Hessian `Q`
/// is diagonal in the Fourier domain with the given symbol.
///
/// For CS data `alpha/2 |A u - f|^2` the symbol is `alpha` times the
/// real-image normal symbol of the mask and `rhs = alpha A^T f`. For ROF
/// denoising with identity sensing the symbol is the constant `mu`.
#[derive(Debug, Clone)]
pub struct QuadraticData {
    pub symbol: Vec<f64>,
    pub rhs: Image,
    pub constant: f64,
}

impl QuadraticData {
    pub fn from_measurements(sensing: &SensingOperator, f: &Measurements, alpha: f64) -> Result<Self> {
        let symbol = sensing
            .plan()
            .real_normal_symbol()
            .into_iter()
            .map(|m| alpha * m)
            .collect();
        let rhs = sensing.adjoint(f)?.scaled(alpha);
        let constant = 0.5 * alpha * f.norm().powi(2);
        Ok(Self { symbol, rhs, constant })
    }

    /// `mu/2 |u - target|^2`.
    pub fn identity(target: &Image, mu: f64) -> Self {
        Self {
            symbol: vec![mu; target.len()],
            rhs: target.scaled(mu),
            constant: 0.5 * mu * target.norm().powi(2),
        }
    }

    /// Value of the data term at `u`.
    ///
    /// For measurements whose conjugate-paired entries disagree (noise on an
    /// asymmetric mask) this is the data term up to a u-independent constant.
    pub fn value(&self, fft: &FourierTransform, u: &Image) -> Result<f64> {
        let spec = fft.forward(u)?;
        let quad: f64 = spec
            .as_slice()
            .iter()
            .zip(&self.symbol)
            .map(|(c, &s)| s * c.norm_sqr())
            .sum();
        Ok(0.5 * quad - self.rhs.dot(u) + self.constant)
    }
}

/// Per-pixel shrinkage threshold.
#[derive(Debug, Clone, Copy)]
pub enum Threshold<'a> {
    Uniform(f64),
    PerPixel(&'a Image),
}

/// Isotropic shrinkage `max(|z| - t, 0) z / |z|` at each pixel, 0 where `z = 0`.
pub fn shrink_isotropic(z: &VectorField, threshold: Threshold<'_>) -> VectorField {
    let (w, h) = z.dims();
    let mut out = VectorField::zeros(w, h);
    let zx = z.x.as_slice();
    let zy = z.y.as_slice();
    let (ox, oy) = (out.x.as_mut_slice(), out.y.as_mut_slice());
    for i in 0..zx.len() {
        let t = match threshold {
            Threshold::Uniform(t) => t,
            Threshold::PerPixel(img) => img.as_slice()[i],
        };
        let norm = zx[i].hypot(zy[i]);
        if norm > t && norm > 0.0 {
            let s = (norm - t) / norm;
            ox[i] = s * zx[i];
            oy[i] = s * zy[i];
        }
    }
    out
}

/// Prebuilt Fourier-domain u-step for fixed data, penalty and shift.
#[derive(Debug, Clone)]
pub struct FourierUSolver {
    fft: FourierTransform,
    symbol: Vec<f64>,
    epsilon: f64,
}

impl FourierUSolver {
    /// Symbol `data + r (Dx^T Dx + Dy^T Dy) + epsilon`.
    pub fn new(fft: FourierTransform, data: &QuadraticData, r: f64, epsilon: f64) -> Result<Self> {
        let (w, h) = fft.dims();
        if data.symbol.len() != w * h {
            return Err(Error::Dimension("data symbol does not match transform".into()));
        }
        let lap = laplacian_symbol(w, h);
        let symbol: Vec<f64> = data
            .symbol
            .iter()
            .zip(&lap)
            .map(|(&q, &l)| q + r * l + epsilon)
            .collect();
        if let Some(k) = symbol.iter().position(|&c| c <= 0.0 || !c.is_finite()) {
            return Err(Error::SingularDiagonal(k));
        }
        Ok(Self { fft, symbol, epsilon })
    }

    pub fn symbol(&self) -> &[f64] {
        &self.symbol
    }

    /// Solves `H_eps u = b + eps u_prev` with
    /// `b = data.rhs + D^T (r d + lambda) - gamma v`.
    pub fn solve(
        &self,
        data: &QuadraticData,
        r: f64,
        d: &VectorField,
        lambda: &VectorField,
        gamma_v: Option<&Image>,
        u_prev: &Image,
    ) -> Result<Image> {
        let mut p = d.scaled(r);
        p.axpy(1.0, lambda);
        // D^T p = -div p
        let mut b = data.rhs.sub(&div_backward(&p));
        if let Some(gv) = gamma_v {
            b.axpy(-1.0, gv);
        }
        b.axpy(self.epsilon, u_prev);
        self.fft.solve_diagonal(&self.symbol, &b)
    }
}

/// One-shot u-step: solve `(alpha A^T A + r D^T D + eps I) u = b + eps u_prev`
/// with `b = alpha A^T f + D^T(r d + lambda) - gamma v`.
pub fn solve_u_fourier(
    f: &Measurements,
    d: &VectorField,
    lambda: &VectorField,
    v: &Image,
    cfg: &LocalSolverConfig,
    u_prev: &Image,
) -> Result<Image> {
    cfg.validate()?;
    let (w, h) = (f.plan.width(), f.plan.height());
    for img in [&d.x, &d.y, &lambda.x, &lambda.y, v, u_prev] {
        if img.dims() != (w, h) {
            return Err(Error::Dimension(format!(
                "u-step input is {}x{}, measurements are {w}x{h}",
                img.width(),
                img.height()
            )));
        }
    }
    let sensing = SensingOperator::new(f.plan.clone());
    let data = QuadraticData::from_measurements(&sensing, f, cfg.alpha)?;
    let solver = FourierUSolver::new(sensing.transform().clone(), &data, cfg.r, cfg.epsilon())?;
    let gv = v.scaled(cfg.gamma);
    solver.solve(&data, cfg.r, d, lambda, Some(&gv), u_prev)
}

/// Diagnostics of one ADMM sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub iteration: usize,
    pub rel_change: f64,
    /// `|d - grad u| / |grad u|`
    pub constraint_residual: f64,
    /// Objective at the current u.
    pub objective: f64,
    /// Augmented Lagrangian at the current (u, d, lambda).
    pub augmented_lagrangian: f64,
    /// Conjugate-gradient iterations spent in this sweep (non-local solvers only).
    pub cg_iterations: usize,
}

/// Final state of a local ADMM run.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub u: Image,
    pub d: VectorField,
    pub lambda: VectorField,
    pub iterations_run: usize,
    pub final_rel_change: f64,
    pub constraint_residual: f64,
    pub trace: Vec<SweepRecord>,
}

/// Generic local ADMM on `J_w(u) + <gamma_v, u> + data(u)`.
pub fn admm_tv(
    fft: &FourierTransform,
    data: &QuadraticData,
    gamma_v: Option<&Image>,
    weights: Option<&Image>,
    cfg: &LocalSolverConfig,
    u_init: &Image,
) -> Result<AdmmState> {
    cfg.validate()?;
    let (w, h) = fft.dims();
    if u_init.dims() != (w, h) {
        return Err(Error::Dimension("initial image does not match transform".into()));
    }
    if let Some(gv) = gamma_v {
        u_init.ensure_same_dims(gv, "normal-matching term")?;
    }
    let thresholds = match weights {
        Some(wts) => {
            u_init.ensure_same_dims(wts, "TV weights")?;
            if wts.as_slice().iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidParameter("TV weights must be non-negative".into()));
            }
            Some(wts.map(|x| x / cfg.r))
        }
        None => None,
    };
    let threshold = match &thresholds {
        Some(t) => Threshold::PerPixel(t),
        None => Threshold::Uniform(1.0 / cfg.r),
    };

    let solver = FourierUSolver::new(fft.clone(), data, cfg.r, cfg.epsilon())?;
    let mut u = u_init.clone();
    let mut d = grad_forward(&u);
    let mut lambda = VectorField::zeros(w, h);
    let mut trace = Vec::new();
    let mut rel_change = f64::INFINITY;
    let mut residual = 0.0;
    let mut iterations = 0;

    for l in 1..=cfg.max_inner {
        let u_new = solver.solve(data, cfg.r, &d, &lambda, gamma_v, &u)?;
        check_finite(u_new.as_slice(), "u-step", l)?;

        let grad_u = grad_forward(&u_new);
        let mut z = grad_u.clone();
        z.axpy(-1.0 / cfg.r, &lambda);
        d = shrink_isotropic(&z, threshold);
        check_finite(d.x.as_slice(), "shrinkage", l)?;
        check_finite(d.y.as_slice(), "shrinkage", l)?;

        let gap = d.sub(&grad_u);
        lambda.axpy(cfg.r, &gap);
        check_finite(lambda.x.as_slice(), "multiplier update", l)?;
        check_finite(lambda.y.as_slice(), "multiplier update", l)?;

        let u_norm = u_new.norm();
        let change = u_new.sub(&u).norm();
        rel_change = if u_norm > 0.0 { change / u_norm } else if change == 0.0 { 0.0 } else { f64::INFINITY };
        let grad_norm = grad_u.norm();
        residual = if grad_norm > 0.0 { gap.norm() / grad_norm } else { gap.norm() };
        u = u_new;
        iterations = l;

        let tv_u = weighted_tv(&grad_u, weights);
        let tv_d = weighted_tv(&d, weights);
        let linear = gamma_v.map_or(0.0, |gv| gv.dot(&u));
        let data_val = data.value(fft, &u)?;
        let al = tv_d + linear + data_val + lambda.dot(&gap) - 0.5 * cfg.r * gap.norm().powi(2);
        trace.push(SweepRecord {
            iteration: l,
            rel_change,
            constraint_residual: residual,
            objective: tv_u + linear + data_val,
            augmented_lagrangian: al,
            cg_iterations: 0,
        });
        log::trace!("local admm sweep {l}: rel {rel_change:.3e} residual {residual:.3e}");

        // with d = grad u0 and lambda = 0 the first u-step returns u0 itself
        if l > 1 && rel_change < cfg.tol {
            break;
        }
    }

    Ok(AdmmState {
        u,
        d,
        lambda,
        iterations_run: iterations,
        final_rel_change: rel_change,
        constraint_residual: residual,
        trace,
    })
}

// The multiplier was already advanced when the AL is evaluated, so
// lambda_old^T gap + r/2 |gap|^2 = lambda_new^T gap - r/2 |gap|^2.

fn weighted_tv(field: &VectorField, weights: Option<&Image>) -> f64 {
    let mag = pixel_norm(field);
    match weights {
        Some(w) => mag.dot(w),
        None => mag.sum(),
    }
}

/// TV-regularized reconstruction from Fourier measurements, optionally with
/// the normal-matching term `gamma <v, u>` and per-pixel TV weights in `[0, 1]`.
pub fn reconstruct_local(
    f: &Measurements,
    v: Option<&Image>,
    weights: Option<&Image>,
    cfg: &LocalSolverConfig,
    u_init: &Image,
) -> Result<AdmmState> {
    let sensing = SensingOperator::new(f.plan.clone());
    reconstruct_local_with(&sensing, f, v, weights, cfg, u_init)
}

/// As [`reconstruct_local`], reusing a planned sensing operator.
pub fn reconstruct_local_with(
    sensing: &SensingOperator,
    f: &Measurements,
    v: Option<&Image>,
    weights: Option<&Image>,
    cfg: &LocalSolverConfig,
    u_init: &Image,
) -> Result<AdmmState> {
    cfg.validate()?;
    let data = QuadraticData::from_measurements(sensing, f, cfg.alpha)?;
    let gamma_v = match v {
        Some(v) if cfg.gamma != 0.0 => Some(v.scaled(cfg.gamma)),
        _ => None,
    };
    admm_tv(sensing.transform(), &data, gamma_v.as_ref(), weights, cfg, u_init)
}

/// Plain TV compressed sensing started from the back-projection.
pub fn tv_cs(f: &Measurements, cfg: &LocalSolverConfig) -> Result<AdmmState> {
    let sensing = SensingOperator::new(f.plan.clone());
    let u0 = sensing.adjoint(f)?;
    let plain = LocalSolverConfig { gamma: 0.0, ..*cfg };
    reconstruct_local_with(&sensing, f, None, None, &plain, &u0)
}

/// Result of an iterated outer loop: the final image plus every outer iterate.
#[derive(Debug, Clone)]
pub struct OuterResult {
    pub u: Image,
    pub iterates: Vec<Image>,
    pub inner: Vec<AdmmState>,
}

/// Edge-guided re-weighted TV: start from plain TV (`w = 1`), then
/// repeatedly solve the weighted problem with `w = g(|grad u_k|)`.
pub fn edge_guided_outer(
    f: &Measurements,
    cfg: &LocalSolverConfig,
    outer_iters: usize,
    g_max_one: bool,
) -> Result<OuterResult> {
    if outer_iters == 0 {
        return Err(Error::InvalidParameter("outer_iters must be >= 1".into()));
    }
    let sensing = SensingOperator::new(f.plan.clone());
    let u0 = sensing.adjoint(f)?;
    let plain = LocalSolverConfig { gamma: 0.0, ..*cfg };
    let mut weights: Option<Image> = None;
    let mut iterates = Vec::with_capacity(outer_iters);
    let mut inner = Vec::with_capacity(outer_iters);
    for _ in 0..outer_iters {
        let state = reconstruct_local_with(&sensing, f, None, weights.as_ref(), &plain, &u0)?;
        weights = Some(edge_weights(&pixel_norm(&grad_forward(&state.u)), g_max_one));
        iterates.push(state.u.clone());
        inner.push(state);
    }
    Ok(OuterResult {
        u: iterates.last().expect("at least one outer iteration").clone(),
        iterates,
        inner,
    })
}
