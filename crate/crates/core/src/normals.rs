//! Level-set normals: estimation from an image, weighted vectorial ROF
//! regularization inside the unit ball, and the two-step normal-guided
//! reconstruction loop.
//!
//! The regularized normals solve
//!
//! ```text
//! min_{|n| <= 1}  sum_i w(i) |(grad n_x(i), grad n_y(i))| + mu/2 |n - n_hat|^2
//! ```
//!
//! by ADMM with splits `d = grad n_x`, `e = grad n_y` and `m = n` (the ball
//! constraint is carried by `m`).

use serde::{Deserialize, Serialize};

use crate::edge::edge_weights;
use crate::error::{check_finite, Error, Result};
use crate::fourier::FourierTransform;
use crate::grid::{div_backward, grad_forward, laplacian_symbol, pixel_norm, Image, VectorField};
use crate::local::{reconstruct_local_with, shrink_isotropic, AdmmState, LocalSolverConfig, Threshold};
use crate::metrics::snr_db;
use crate::sensing::{Measurements, SensingOperator};

/// Parameters of the normal regularization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalSolverConfig {
    pub mu: f64,
    pub r_d: f64,
    pub r_e: f64,
    pub r_m: f64,
    pub tol: f64,
    pub max_inner: usize,
    /// Normalization guard relative to the dynamic range of u.
    pub grad_floor: f64,
}

impl Default for NormalSolverConfig {
    fn default() -> Self {
        Self {
            mu: 10.0,
            r_d: 10.0,
            r_e: 10.0,
            r_m: 10.0,
            tol: 1e-4,
            max_inner: 300,
            grad_floor: 1e-8,
        }
    }
}

impl NormalSolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.mu, "mu"),
            (self.r_d, "r_d"),
            (self.r_e, "r_e"),
            (self.r_m, "r_m"),
            (self.tol, "tol"),
            (self.grad_floor, "grad_floor"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_inner == 0 {
            return Err(Error::InvalidParameter("max_inner must be >= 1".into()));
        }
        Ok(())
    }
}

/// `grad u / max(|grad u|, floor)`.
pub fn estimate_normals(u: &Image, floor: f64) -> VectorField {
    let g = grad_forward(u);
    let mag = pixel_norm(&g);
    let denom = mag.map(|m| m.max(floor));
    VectorField {
        x: g.x.zip_map(&denom, |a, b| a / b),
        y: g.y.zip_map(&denom, |a, b| a / b),
    }
}

/// Pixel-wise projection onto the closed unit ball.
pub fn project_ball(z: &VectorField) -> VectorField {
    let mut out = z.clone();
    let (ox, oy) = (out.x.as_mut_slice(), out.y.as_mut_slice());
    for i in 0..ox.len() {
        let norm = ox[i].hypot(oy[i]);
        if norm > 1.0 {
            ox[i] /= norm;
            oy[i] /= norm;
        }
    }
    out
}

/// Value of the regularization objective (without the ball constraint).
pub fn normals_objective(n: &VectorField, n_hat: &VectorField, weights: &Image, mu: f64) -> f64 {
    let gx = grad_forward(&n.x);
    let gy = grad_forward(&n.y);
    let tv: f64 = (0..weights.len())
        .map(|i| {
            let s = gx.x.as_slice()[i].powi(2)
                + gx.y.as_slice()[i].powi(2)
                + gy.x.as_slice()[i].powi(2)
                + gy.y.as_slice()[i].powi(2);
            weights.as_slice()[i] * s.sqrt()
        })
        .sum();
    tv + 0.5 * mu * n.sub(n_hat).norm().powi(2)
}

/// Shrinkage of the per-pixel 4-vector `(a.x, a.y, b.x, b.y)`.
fn shrink_joint(a: &VectorField, b: &VectorField, thresholds: &Image) -> (VectorField, VectorField) {
    let (w, h) = a.dims();
    let mut da = VectorField::zeros(w, h);
    let mut db = VectorField::zeros(w, h);
    for i in 0..thresholds.len() {
        let v = [a.x.as_slice()[i], a.y.as_slice()[i], b.x.as_slice()[i], b.y.as_slice()[i]];
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        let t = thresholds.as_slice()[i];
        if norm > t && norm > 0.0 {
            let s = (norm - t) / norm;
            da.x.as_mut_slice()[i] = s * v[0];
            da.y.as_mut_slice()[i] = s * v[1];
            db.x.as_mut_slice()[i] = s * v[2];
            db.y.as_mut_slice()[i] = s * v[3];
        }
    }
    (da, db)
}

/// Regularized normals with sweep diagnostics.
#[derive(Debug, Clone)]
pub struct NormalsResult {
    pub n: VectorField,
    pub iterations_run: usize,
    pub final_rel_change: f64,
}

/// Weighted vectorial ROF of `n_hat` constrained to the unit ball.
///
/// With `r_d == r_e` the two gradient splits are shrunk jointly, which is the
/// exact minimizer of the coupled per-pixel norm. Otherwise `d` and `e` are
/// shrunk separately with thresholds `w/r_d` and `w/r_e`.
pub fn regularize_normals(n_hat: &VectorField, weights: &Image, cfg: &NormalSolverConfig) -> Result<NormalsResult> {
    cfg.validate()?;
    let (w, h) = n_hat.dims();
    n_hat.x.ensure_same_dims(weights, "normal weights")?;
    if weights.as_slice().iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidParameter("normal weights must be non-negative".into()));
    }
    let fft = FourierTransform::new(w, h);
    let lap = laplacian_symbol(w, h);
    let sym_d: Vec<f64> = lap.iter().map(|&l| cfg.mu + cfg.r_m + cfg.r_d * l).collect();
    let sym_e: Vec<f64> = if cfg.r_e == cfg.r_d {
        sym_d.clone()
    } else {
        lap.iter().map(|&l| cfg.mu + cfg.r_m + cfg.r_e * l).collect()
    };
    let joint = cfg.r_d == cfg.r_e;
    let thr_d = weights.map(|x| x / cfg.r_d);
    let thr_e = weights.map(|x| x / cfg.r_e);

    let mut n = project_ball(n_hat);
    let mut m = n.clone();
    let mut d = grad_forward(&n.x);
    let mut e = grad_forward(&n.y);
    let mut lambda = VectorField::zeros(w, h);
    let mut nu = VectorField::zeros(w, h);
    let mut xi = VectorField::zeros(w, h);
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;

    for l in 1..=cfg.max_inner {
        // n-step: ((mu + r_m) I + r D^T D) n = mu n_hat + r_m m - xi + D^T(r d + lambda)
        let solve = |sym: &[f64], hat: &Image, mm: &Image, x: &Image, split: &VectorField, mult: &VectorField, r: f64| {
            let mut p = split.scaled(r);
            p.axpy(1.0, mult);
            let mut b = hat.scaled(cfg.mu);
            b.axpy(cfg.r_m, mm);
            b.axpy(-1.0, x);
            b.axpy(-1.0, &div_backward(&p));
            fft.solve_diagonal(sym, &b)
        };
        let nx = solve(&sym_d, &n_hat.x, &m.x, &xi.x, &d, &lambda, cfg.r_d)?;
        let ny = solve(&sym_e, &n_hat.y, &m.y, &xi.y, &e, &nu, cfg.r_e)?;
        check_finite(nx.as_slice(), "normal n-step", l)?;
        check_finite(ny.as_slice(), "normal n-step", l)?;
        let n_new = VectorField { x: nx, y: ny };

        // m-step: projection of n + xi / r_m
        let mut z = n_new.clone();
        z.axpy(1.0 / cfg.r_m, &xi);
        m = project_ball(&z);

        // d, e-step
        let gx = grad_forward(&n_new.x);
        let gy = grad_forward(&n_new.y);
        let mut zd = gx.clone();
        zd.axpy(-1.0 / cfg.r_d, &lambda);
        let mut ze = gy.clone();
        ze.axpy(-1.0 / cfg.r_e, &nu);
        if joint {
            (d, e) = shrink_joint(&zd, &ze, &thr_d);
        } else {
            d = shrink_isotropic(&zd, Threshold::PerPixel(&thr_d));
            e = shrink_isotropic(&ze, Threshold::PerPixel(&thr_e));
        }
        check_finite(d.x.as_slice(), "normal shrinkage", l)?;
        check_finite(e.x.as_slice(), "normal shrinkage", l)?;

        lambda.axpy(cfg.r_d, &d.sub(&gx));
        nu.axpy(cfg.r_e, &e.sub(&gy));
        xi.axpy(cfg.r_m, &n_new.sub(&m));
        check_finite(lambda.x.as_slice(), "normal multiplier update", l)?;
        check_finite(xi.x.as_slice(), "normal multiplier update", l)?;

        let norm = n_new.norm();
        let change = n_new.sub(&n).norm();
        rel_change = if norm > 0.0 { change / norm } else if change == 0.0 { 0.0 } else { f64::INFINITY };
        n = n_new;
        iterations = l;
        if l > 1 && rel_change < cfg.tol {
            break;
        }
    }

    Ok(NormalsResult {
        // n and m agree at convergence; projecting n keeps the output feasible
        n: project_ball(&n),
        iterations_run: iterations,
        final_rel_change: rel_change,
    })
}

/// Settings of the two-step normal-guided reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalGuidedConfig {
    pub local: LocalSolverConfig,
    pub normals: NormalSolverConfig,
    pub outer_iters: usize,
    /// Stop when `|u_k - u_{k-1}| / |u_k|` falls below this.
    pub outer_tol: f64,
    /// Double the edge weights so flat regions get weight 1.
    pub g_max_one: bool,
}

impl Default for NormalGuidedConfig {
    fn default() -> Self {
        Self {
            local: LocalSolverConfig { gamma: 1.0, ..Default::default() },
            normals: NormalSolverConfig::default(),
            outer_iters: 4,
            outer_tol: 1e-3,
            g_max_one: false,
        }
    }
}

/// Fields of one outer iteration, kept when dumps are requested.
#[derive(Debug, Clone)]
pub struct NormalFields {
    pub n_hat: VectorField,
    pub n: VectorField,
    pub weights: Image,
}

/// Per-outer-iteration record.
#[derive(Debug, Clone)]
pub struct OuterRecord {
    pub iteration: usize,
    pub rel_change: f64,
    pub snr_db: Option<f64>,
    pub max_normal_norm: f64,
    pub inner_iterations: usize,
    pub normal_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct NormalGuidedResult {
    pub u: Image,
    /// Plain TV solution the loop started from.
    pub u_tv: Image,
    pub records: Vec<OuterRecord>,
    pub fields: Vec<NormalFields>,
    pub last_inner: AdmmState,
}

/// Alternates normal regularization and normal-matching TV reconstruction,
/// starting from the plain TV solution. Every inner solve starts from the
/// back-projection, so `gamma = 0` reproduces plain TV exactly.
pub fn normal_guided_cs(
    f: &Measurements,
    cfg: &NormalGuidedConfig,
    ground_truth: Option<&Image>,
    keep_fields: bool,
) -> Result<NormalGuidedResult> {
    if cfg.outer_iters == 0 {
        return Err(Error::InvalidParameter("outer_iters must be >= 1".into()));
    }
    cfg.local.validate()?;
    cfg.normals.validate()?;
    let sensing = SensingOperator::new(f.plan.clone());
    let u0 = sensing.adjoint(f)?;
    let plain = LocalSolverConfig { gamma: 0.0, ..cfg.local };
    let tv = reconstruct_local_with(&sensing, f, None, None, &plain, &u0)?;
    let u_tv = tv.u.clone();
    let mut u = tv.u.clone();
    let mut last_inner = tv;
    let mut records = Vec::new();
    let mut fields = Vec::new();

    for k in 1..=cfg.outer_iters {
        let floor = cfg.normals.grad_floor * u.dynamic_range().max(f64::MIN_POSITIVE);
        let n_hat = estimate_normals(&u, floor);
        let weights = edge_weights(&pixel_norm(&grad_forward(&u)), cfg.g_max_one);
        let reg = regularize_normals(&n_hat, &weights, &cfg.normals)?;
        let v = div_backward(&reg.n);
        let state = reconstruct_local_with(&sensing, f, Some(&v), None, &cfg.local, &u0)?;
        let norm = state.u.norm();
        let rel_change = if norm > 0.0 { state.u.sub(&u).norm() / norm } else { 0.0 };
        let snr = ground_truth.map(|g| snr_db(g, &state.u)).transpose()?;
        records.push(OuterRecord {
            iteration: k,
            rel_change,
            snr_db: snr,
            max_normal_norm: pixel_norm(&reg.n).max(),
            inner_iterations: state.iterations_run,
            normal_iterations: reg.iterations_run,
        });
        log::debug!("normal-guided outer {k}: rel change {rel_change:.3e} snr {snr:?}");
        if keep_fields {
            fields.push(NormalFields { n_hat, n: reg.n, weights });
        }
        u = state.u.clone();
        last_inner = state;
        if rel_change < cfg.outer_tol {
            break;
        }
    }

    Ok(NormalGuidedResult { u, u_tv, records, fields, last_inner })
}
