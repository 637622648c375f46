//! Non-local reconstruction on a patch graph.
//!
//! The reconstruction minimizes `NLTV(u) + gamma <v, u> + alpha/2 |A u - f|^2`
//! with two splits: `d = D u` (graph gradient) and `s = u`. The u-step is a
//! sparse SPD system solved by preconditioned conjugate gradients, the s-step
//! is Fourier-diagonal, and the d-step is node-wise shrinkage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::edge::{mad_sigma, tukey_g};
use crate::error::{check_finite, Error, Result};
use crate::fourier::FourierTransform;
use crate::graph::{
    build_graph, nl_divergence, nl_dtd, nl_gradient, nl_node_norm, nl_shrink, nl_tv, GraphField, GraphParams,
    PatchGraph,
};
use crate::grid::Image;
use crate::local::{admm_tv, LocalSolverConfig, QuadraticData, SweepRecord};
use crate::metrics::snr_db;
use crate::sensing::{Measurements, SensingOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    #[default]
    Jacobi,
    IncompleteCholesky,
}

/// Stopping rule of the conjugate-gradient solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct CgResult {
    pub x: Image,
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// The operator `a I + c D^T D` of a graph.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedGraphLaplacian<'g> {
    pub graph: &'g PatchGraph,
    pub shift: f64,
    pub scale: f64,
}

impl ShiftedGraphLaplacian<'_> {
    pub fn apply(&self, x: &Image) -> Result<Image> {
        let mut out = nl_dtd(x, self.graph)?.scaled(self.scale);
        out.axpy(self.shift, x);
        Ok(out)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.graph
            .dtd_diagonal()
            .into_iter()
            .map(|d| self.shift + self.scale * d)
            .collect()
    }

    /// Lower-triangular CSR rows `(column, value)` of the explicit matrix,
    /// diagonal last in each row.
    fn lower_rows(&self) -> Vec<Vec<(usize, f64)>> {
        let n = self.graph.node_count();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let nbrs = self.graph.neighbors();
        let wts = self.graph.weights();
        for i in 0..n {
            for slot in self.graph.edges_of(i) {
                let j = nbrs[slot] as usize;
                let v = -self.scale * wts[slot];
                let (hi, lo) = if i > j { (i, j) } else { (j, i) };
                rows[hi].push((lo, v));
            }
        }
        let diag = self.diagonal();
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len() + 1);
            for &(c, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == c => last.1 += v,
                    _ => merged.push((c, v)),
                }
            }
            merged.push((i, diag[i]));
            *row = merged;
        }
        rows
    }

    /// Verifies `<K x, y> = <x, K y>` on seeded random vectors.
    pub fn check_symmetry(&self, seed: u64) -> Result<()> {
        let (w, h) = (self.graph.width(), self.graph.height());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Image::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0));
        let y = Image::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0));
        let kx = self.apply(&x)?;
        let ky = self.apply(&y)?;
        let (a, b) = (kx.dot(&y), x.dot(&ky));
        let scale = kx.norm() * y.norm();
        if (a - b).abs() > 1e-10 * scale {
            return Err(Error::Graph(format!("system matrix is not symmetric: {a} vs {b}")));
        }
        Ok(())
    }
}

/// Preconditioner for the shifted graph Laplacian.
#[derive(Debug, Clone)]
pub enum Preconditioner {
    Jacobi(Vec<f64>),
    /// Row-stored lower factor `L` with `L L^T ~ K`; diagonal last per row.
    IncompleteCholesky(Vec<Vec<(usize, f64)>>),
}

impl Preconditioner {
    pub fn build(kind: PreconditionerKind, op: &ShiftedGraphLaplacian<'_>) -> Result<Self> {
        match kind {
            PreconditionerKind::Jacobi => {
                let diag = op.diagonal();
                if let Some(k) = diag.iter().position(|&d| !(d > 0.0)) {
                    return Err(Error::SingularDiagonal(k));
                }
                Ok(Self::Jacobi(diag.into_iter().map(|d| 1.0 / d).collect()))
            }
            PreconditionerKind::IncompleteCholesky => {
                let rows = op.lower_rows();
                let mut shift = 0.0;
                loop {
                    match incomplete_cholesky(&rows, shift) {
                        Some(l) => return Ok(Self::IncompleteCholesky(l)),
                        None => {
                            shift = if shift == 0.0 { 1e-3 } else { shift * 2.0 };
                            log::warn!("incomplete Cholesky broke down, retrying with diagonal shift {shift}");
                            if shift > 1e3 {
                                return Err(Error::InvalidParameter("incomplete Cholesky failed".into()));
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn apply(&self, r: &Image) -> Image {
        match self {
            Self::Jacobi(inv) => {
                let mut z = r.clone();
                for (v, d) in z.as_mut_slice().iter_mut().zip(inv) {
                    *v *= d;
                }
                z
            }
            Self::IncompleteCholesky(l) => {
                let mut y = r.clone().into_vec();
                // forward: L y = r
                for (i, row) in l.iter().enumerate() {
                    let (diag, off) = row.split_last().expect("diagonal present");
                    let mut acc = y[i];
                    for &(c, v) in off {
                        acc -= v * y[c];
                    }
                    y[i] = acc / diag.1;
                }
                // backward: L^T z = y
                for i in (0..l.len()).rev() {
                    let (diag, off) = l[i].split_last().expect("diagonal present");
                    y[i] /= diag.1;
                    let yi = y[i];
                    for &(c, v) in off {
                        y[c] -= v * yi;
                    }
                }
                Image::new(r.width(), r.height(), y).expect("same size")
            }
        }
    }
}

/// IC(0) on the sparsity pattern of `rows`, with `diag *= 1 + shift`.
fn incomplete_cholesky(rows: &[Vec<(usize, f64)>], shift: f64) -> Option<Vec<Vec<(usize, f64)>>> {
    let mut l: Vec<Vec<(usize, f64)>> = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for &(k, a) in &row[..row.len() - 1] {
            // sum over j < k of L_ij L_kj, both rows sorted
            let lk = &l[k];
            let mut s = 0.0;
            let (mut p, mut q) = (0, 0);
            while p < out.len() && q + 1 < lk.len() {
                match out[p].0.cmp(&lk[q].0) {
                    std::cmp::Ordering::Less => p += 1,
                    std::cmp::Ordering::Greater => q += 1,
                    std::cmp::Ordering::Equal => {
                        s += out[p].1 * lk[q].1;
                        p += 1;
                        q += 1;
                    }
                }
            }
            let lkk = lk.last().expect("diagonal").1;
            out.push((k, (a - s) / lkk));
        }
        let diag = row.last().expect("diagonal").1 * (1.0 + shift);
        let sq: f64 = out.iter().map(|e| e.1 * e.1).sum();
        let pivot = diag - sq;
        if !(pivot > 0.0) || !pivot.is_finite() {
            return None;
        }
        out.push((i, pivot.sqrt()));
        l.push(out);
    }
    Some(l)
}

/// Preconditioned conjugate gradients for an SPD operator.
///
/// Returns the iterate once `|K x - b| / |b| <= tol`, or after `max_iter`
/// iterations with `converged = false`. A non-positive curvature `p^T K p`
/// is reported as a breakdown.
pub fn cg_solve(
    apply: impl Fn(&Image) -> Result<Image>,
    b: &Image,
    x0: &Image,
    precond: &Preconditioner,
    cfg: &CgConfig,
) -> Result<CgResult> {
    b.ensure_same_dims(x0, "cg initial guess")?;
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Ok(CgResult {
            x: Image::zeros(b.width(), b.height()),
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }
    let mut x = x0.clone();
    let mut r = b.sub(&apply(&x)?);
    let mut rel = r.norm() / b_norm;
    if rel <= cfg.tol {
        return Ok(CgResult { x, iterations: 0, rel_residual: rel, converged: true });
    }
    let mut z = precond.apply(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for it in 1..=cfg.max_iter {
        let kp = apply(&p)?;
        let curvature = p.dot(&kp);
        if !(curvature > 0.0) || !curvature.is_finite() {
            return Err(Error::Breakdown { iteration: it, curvature });
        }
        let step = rz / curvature;
        x.axpy(step, &p);
        r.axpy(-step, &kp);
        rel = r.norm() / b_norm;
        if rel <= cfg.tol {
            return Ok(CgResult { x, iterations: it, rel_residual: rel, converged: true });
        }
        z = precond.apply(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        let mut next = z.clone();
        next.axpy(beta, &p);
        p = next;
    }
    log::warn!("cg stopped after {} iterations at relative residual {rel:.3e}", cfg.max_iter);
    Ok(CgResult { x, iterations: cfg.max_iter, rel_residual: rel, converged: false })
}

/// Parameters of the non-local ADMM solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlSolverConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub r_d: f64,
    pub r_u: f64,
    pub cg: CgConfig,
    pub preconditioner: PreconditionerKind,
    pub tol: f64,
    pub max_inner: usize,
}

impl Default for NlSolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1000.0,
            gamma: 0.0,
            r_d: 10.0,
            r_u: 10.0,
            cg: CgConfig::default(),
            preconditioner: PreconditionerKind::Jacobi,
            tol: 1e-4,
            max_inner: 300,
        }
    }
}

impl NlSolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.alpha, "alpha"),
            (self.r_d, "r_d"),
            (self.r_u, "r_u"),
            (self.tol, "tol"),
            (self.cg.tol, "cg.tol"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if self.max_inner == 0 || self.cg.max_iter == 0 {
            return Err(Error::InvalidParameter("iteration limits must be >= 1".into()));
        }
        Ok(())
    }
}

/// Final state of a non-local ADMM run.
#[derive(Debug, Clone)]
pub struct NlState {
    pub u: Image,
    pub iterations_run: usize,
    pub final_rel_change: f64,
    pub cg_iterations: usize,
    pub trace: Vec<SweepRecord>,
}

fn rel_change(new: &Image, old: &Image) -> f64 {
    let norm = new.norm();
    let change = new.sub(old).norm();
    if norm > 0.0 {
        change / norm
    } else if change == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Non-local TV reconstruction, optionally with the linear term `gamma <v, u>`.
pub fn nl_reconstruct(
    f: &Measurements,
    v: Option<&Image>,
    graph: &PatchGraph,
    cfg: &NlSolverConfig,
    u_init: &Image,
) -> Result<NlState> {
    cfg.validate()?;
    let (w, h) = (f.plan.width(), f.plan.height());
    if graph.width() != w || graph.height() != h || u_init.dims() != (w, h) {
        return Err(Error::Dimension("graph, measurements and initial image must agree in size".into()));
    }
    let sensing = SensingOperator::new(f.plan.clone());
    let fft: &FourierTransform = sensing.transform();
    let data = QuadraticData::from_measurements(&sensing, f, cfg.alpha)?;
    let s_symbol: Vec<f64> = data.symbol.iter().map(|&q| q + cfg.r_u).collect();
    let gamma_v = match v {
        Some(v) if cfg.gamma != 0.0 => {
            u_init.ensure_same_dims(v, "normal-matching term")?;
            Some(v.scaled(cfg.gamma))
        }
        _ => None,
    };

    let op = ShiftedGraphLaplacian { graph, shift: cfg.r_u, scale: cfg.r_d };
    op.check_symmetry(0)?;
    let precond = Preconditioner::build(cfg.preconditioner, &op)?;

    let mut u = u_init.clone();
    let mut s = u.clone();
    let mut d = nl_gradient(&u, graph)?;
    let mut lambda_d = GraphField::zeros(graph);
    let mut lambda_u = Image::zeros(w, h);
    let mut trace = Vec::new();
    let mut rel = f64::INFINITY;
    let mut iterations = 0;
    let mut cg_total = 0;

    for l in 1..=cfg.max_inner {
        // u-step: (r_u I + r_d D^T D) u = -gamma v - lambda_u + r_u s + D^T(lambda_d + r_d d)
        let mut p = d.scaled(cfg.r_d);
        p.axpy(1.0, &lambda_d);
        let mut b = nl_divergence(&p, graph)?.scaled(-1.0);
        b.axpy(cfg.r_u, &s);
        b.axpy(-1.0, &lambda_u);
        if let Some(gv) = &gamma_v {
            b.axpy(-1.0, gv);
        }
        let cg = cg_solve(|x| op.apply(x), &b, &u, &precond, &cfg.cg)?;
        cg_total += cg.iterations;
        check_finite(cg.x.as_slice(), "nl u-step", l)?;
        let u_new = cg.x;

        // s-step: (alpha A^T A + r_u I) s = alpha A^T f + lambda_u + r_u u
        let mut bs = data.rhs.clone();
        bs.axpy(1.0, &lambda_u);
        bs.axpy(cfg.r_u, &u_new);
        s = fft.solve_diagonal(&s_symbol, &bs)?;
        check_finite(s.as_slice(), "nl s-step", l)?;

        // d-step
        let du = nl_gradient(&u_new, graph)?;
        let mut z = du.clone();
        z.axpy(-1.0 / cfg.r_d, &lambda_d);
        d = nl_shrink(&z, 1.0 / cfg.r_d, graph)?;
        check_finite(&d.values, "nl shrinkage", l)?;

        let gap = d.sub(&du);
        lambda_d.axpy(cfg.r_d, &gap);
        lambda_u.axpy(cfg.r_u, &u_new.sub(&s));
        check_finite(&lambda_d.values, "nl multiplier update", l)?;
        check_finite(lambda_u.as_slice(), "nl multiplier update", l)?;

        rel = rel_change(&u_new, &u);
        u = u_new;
        iterations = l;

        let du_norm = du.norm();
        let residual = if du_norm > 0.0 { gap.norm() / du_norm } else { gap.norm() };
        let linear = gamma_v.as_ref().map_or(0.0, |gv| gv.dot(&u));
        let objective = nl_tv(&u, graph)? + linear + data.value(fft, &u)?;
        trace.push(SweepRecord {
            iteration: l,
            rel_change: rel,
            constraint_residual: residual,
            objective,
            augmented_lagrangian: f64::NAN,
            cg_iterations: cg.iterations,
        });
        log::trace!("nl sweep {l}: rel {rel:.3e} cg {}", cg.iterations);
        // the first u-step reproduces u_init because d = D u_init and s = u_init
        if l > 1 && rel < cfg.tol {
            break;
        }
    }

    Ok(NlState {
        u,
        iterations_run: iterations,
        final_rel_change: rel,
        cg_iterations: cg_total,
        trace,
    })
}

/// Node-normalized graph gradient `D u / max(|D u|_G, floor)`.
pub fn nl_normals(u: &Image, graph: &PatchGraph, floor: f64) -> Result<GraphField> {
    let du = nl_gradient(u, graph)?;
    let norms = nl_node_norm(&du, graph)?;
    let mut out = du;
    for i in 0..graph.node_count() {
        let denom = norms.as_slice()[i].max(floor);
        for slot in graph.edges_of(i) {
            out.values[slot] /= denom;
        }
    }
    Ok(out)
}

/// Rough non-local divergence of the normals, `(1 - g(|D u|_G)) Div_G n_G`.
pub fn estimate_nl_divergence(u_prev: &Image, graph: &PatchGraph, floor: f64) -> Result<Image> {
    if !(floor > 0.0) {
        return Err(Error::InvalidParameter("normalization floor must be positive".into()));
    }
    let n = nl_normals(u_prev, graph, floor)?;
    let mag = nl_node_norm(&nl_gradient(u_prev, graph)?, graph)?;
    let scale = mad_sigma(&mag);
    let div = nl_divergence(&n, graph)?;
    Ok(div.zip_map(&mag, |dv, m| (1.0 - tukey_g(m, scale)) * dv))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceMode {
    #[default]
    LocalRof,
    NlRof,
}

/// Parameters of the scalar regularization of the estimated divergence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DivergenceConfig {
    pub mu: f64,
    pub mode: DivergenceMode,
    pub r: f64,
    pub tol: f64,
    pub max_inner: usize,
    pub cg: CgConfig,
    pub preconditioner: PreconditionerKind,
}

impl Default for DivergenceConfig {
    fn default() -> Self {
        Self {
            mu: 10.0,
            mode: DivergenceMode::LocalRof,
            r: 10.0,
            tol: 1e-4,
            max_inner: 300,
            cg: CgConfig::default(),
            preconditioner: PreconditionerKind::Jacobi,
        }
    }
}

/// TV denoising `min TV(v) + mu/2 |v - v_hat|^2`, with the local TV or the
/// non-local TV of `graph`.
pub fn regularize_divergence(v_hat: &Image, graph: Option<&PatchGraph>, cfg: &DivergenceConfig) -> Result<Image> {
    if !(cfg.mu > 0.0 && cfg.mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("mu must be positive, got {}", cfg.mu)));
    }
    match cfg.mode {
        DivergenceMode::LocalRof => {
            let (w, h) = v_hat.dims();
            let fft = FourierTransform::new(w, h);
            let data = QuadraticData::identity(v_hat, cfg.mu);
            let local = LocalSolverConfig {
                alpha: cfg.mu,
                gamma: 0.0,
                r: cfg.r,
                epsilon_reg: None,
                tol: cfg.tol,
                max_inner: cfg.max_inner,
            };
            Ok(admm_tv(&fft, &data, None, None, &local, v_hat)?.u)
        }
        DivergenceMode::NlRof => {
            let graph = graph.ok_or_else(|| Error::InvalidParameter("non-local ROF needs a graph".into()))?;
            nl_rof(v_hat, graph, cfg)
        }
    }
}

/// Non-local ROF by ADMM with the split `d = D v`.
pub fn nl_rof(v_hat: &Image, graph: &PatchGraph, cfg: &DivergenceConfig) -> Result<Image> {
    if graph.width() != v_hat.width() || graph.height() != v_hat.height() {
        return Err(Error::Dimension("graph and image differ in size".into()));
    }
    let op = ShiftedGraphLaplacian { graph, shift: cfg.mu, scale: cfg.r };
    let precond = Preconditioner::build(cfg.preconditioner, &op)?;
    let mut v = v_hat.clone();
    let mut d = nl_gradient(&v, graph)?;
    let mut lambda = GraphField::zeros(graph);
    for l in 1..=cfg.max_inner {
        let mut p = d.scaled(cfg.r);
        p.axpy(1.0, &lambda);
        let mut b = nl_divergence(&p, graph)?.scaled(-1.0);
        b.axpy(cfg.mu, v_hat);
        let v_new = cg_solve(|x| op.apply(x), &b, &v, &precond, &cfg.cg)?.x;
        check_finite(v_new.as_slice(), "nl-rof v-step", l)?;
        let dv = nl_gradient(&v_new, graph)?;
        let mut z = dv.clone();
        z.axpy(-1.0 / cfg.r, &lambda);
        d = nl_shrink(&z, 1.0 / cfg.r, graph)?;
        lambda.axpy(cfg.r, &d.sub(&dv));
        let rel = rel_change(&v_new, &v);
        v = v_new;
        if l > 1 && rel < cfg.tol {
            break;
        }
    }
    Ok(v)
}

/// Settings of the non-local outer loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlGuidedConfig {
    /// Solver of the initial local TV reconstruction.
    pub local: LocalSolverConfig,
    pub nl: NlSolverConfig,
    pub graph: GraphParams,
    pub divergence: DivergenceConfig,
    pub outer_iters: usize,
    /// Normalization guard relative to the dynamic range of u.
    pub grad_floor: f64,
}

impl Default for NlGuidedConfig {
    fn default() -> Self {
        Self {
            local: LocalSolverConfig::default(),
            nl: NlSolverConfig { gamma: 1.0, ..Default::default() },
            graph: GraphParams::default(),
            divergence: DivergenceConfig::default(),
            outer_iters: 3,
            grad_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NlOuterRecord {
    pub iteration: usize,
    pub rel_change: f64,
    pub snr_db: Option<f64>,
    pub edge_count: usize,
    pub h: f64,
    /// Largest node norm of the normalized normals; `None` when `gamma == 0`.
    pub max_normal_norm: Option<f64>,
    pub inner_iterations: usize,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct NlResult {
    pub u: Image,
    pub u_tv: Image,
    pub records: Vec<NlOuterRecord>,
    pub last_inner: NlState,
    pub last_graph: PatchGraph,
}

/// Iterated non-local reconstruction starting from local TV. Each outer
/// iteration rebuilds the graph from the previous iterate and, when
/// `gamma > 0`, estimates and regularizes the non-local divergence of the
/// normals. Inner solves are warm-started from the previous iterate.
pub fn nl_normal_guided_cs(f: &Measurements, cfg: &NlGuidedConfig, ground_truth: Option<&Image>) -> Result<NlResult> {
    if cfg.outer_iters == 0 {
        return Err(Error::InvalidParameter("outer_iters must be >= 1".into()));
    }
    cfg.nl.validate()?;
    let u_tv = crate::local::tv_cs(f, &cfg.local)?.u;
    let mut u = u_tv.clone();
    let mut records = Vec::new();
    let mut last = None;
    for k in 1..=cfg.outer_iters {
        let graph = build_graph(&u, &cfg.graph)?;
        let mut max_normal_norm = None;
        let v = if cfg.nl.gamma != 0.0 {
            let floor = cfg.grad_floor * u.dynamic_range().max(f64::MIN_POSITIVE);
            let n = nl_normals(&u, &graph, floor)?;
            max_normal_norm = Some(nl_node_norm(&n, &graph)?.as_slice().iter().copied().fold(0.0, f64::max));
            let v_hat = estimate_nl_divergence(&u, &graph, floor)?;
            Some(regularize_divergence(&v_hat, Some(&graph), &cfg.divergence)?)
        } else {
            None
        };
        let state = nl_reconstruct(f, v.as_ref(), &graph, &cfg.nl, &u)?;
        let rel = rel_change(&state.u, &u);
        let snr = ground_truth.map(|g| snr_db(g, &state.u)).transpose()?;
        records.push(NlOuterRecord {
            iteration: k,
            rel_change: rel,
            snr_db: snr,
            edge_count: graph.edge_count(),
            h: graph.h(),
            max_normal_norm,
            inner_iterations: state.iterations_run,
            cg_iterations: state.cg_iterations,
        });
        log::debug!("nl outer {k}: rel change {rel:.3e} snr {snr:?}");
        u = state.u.clone();
        last = Some((state, graph));
    }
    let (last_inner, last_graph) = last.expect("at least one outer iteration");
    Ok(NlResult { u, u_tv, records, last_inner, last_graph })
}

/// Iterated non-local TV (the `gamma = 0` case of [`nl_normal_guided_cs`]).
pub fn nl_tv_cs(f: &Measurements, cfg: &NlGuidedConfig, ground_truth: Option<&Image>) -> Result<NlResult> {
    let plain = NlGuidedConfig {
        nl: NlSolverConfig { gamma: 0.0, ..cfg.nl },
        ..*cfg
    };
    nl_normal_guided_cs(f, &plain, ground_truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::local_stencil_graph;
    use crate::grid::total_variation;
    use crate::local::reconstruct_local;
    use crate::sensing::{adjoint, measure, radial_mask, SamplingPlan};

    fn random_image(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random_range(-1.0..1.0))
    }

    fn small_graph(seed: u64, w: usize, h: usize) -> PatchGraph {
        let params = GraphParams { patch_radius: 1, window_radius: 3, k_neighbors: 5, ..Default::default() };
        build_graph(&random_image(seed, w, h), &params).unwrap()
    }

    #[test]
    fn cg_recovers_constructed_solution() {
        let g = small_graph(1, 16, 16);
        let op = ShiftedGraphLaplacian { graph: &g, shift: 0.5, scale: 3.0 };
        let x_star = random_image(2, 16, 16);
        let b = op.apply(&x_star).unwrap();
        for kind in [PreconditionerKind::Jacobi, PreconditionerKind::IncompleteCholesky] {
            let pre = Preconditioner::build(kind, &op).unwrap();
            let res = cg_solve(|x| op.apply(x), &b, &Image::zeros(16, 16), &pre, &CgConfig { tol: 1e-10, max_iter: 1000 }).unwrap();
            assert!(res.converged);
            assert!(res.x.sub(&x_star).norm() <= 1e-6 * x_star.norm(), "{kind:?}");
        }
    }

    #[test]
    fn incomplete_cholesky_needs_fewer_iterations() {
        let g = small_graph(3, 24, 24);
        let op = ShiftedGraphLaplacian { graph: &g, shift: 0.1, scale: 10.0 };
        let b = random_image(4, 24, 24);
        let cfg = CgConfig { tol: 1e-8, max_iter: 2000 };
        let it = |kind| {
            let pre = Preconditioner::build(kind, &op).unwrap();
            cg_solve(|x| op.apply(x), &b, &Image::zeros(24, 24), &pre, &cfg).unwrap().iterations
        };
        assert!(it(PreconditionerKind::IncompleteCholesky) <= it(PreconditionerKind::Jacobi));
    }

    #[test]
    fn cg_zero_rhs_and_diagonal_system() {
        let g = local_stencil_graph(6, 6).unwrap();
        let op = ShiftedGraphLaplacian { graph: &g, shift: 4.0, scale: 0.0 };
        let pre = Preconditioner::build(PreconditionerKind::Jacobi, &op).unwrap();
        let zero = cg_solve(|x| op.apply(x), &Image::zeros(6, 6), &random_image(5, 6, 6), &pre, &CgConfig::default()).unwrap();
        assert!(zero.x.norm() == 0.0);
        let b = random_image(6, 6, 6);
        let res = cg_solve(|x| op.apply(x), &b, &Image::zeros(6, 6), &pre, &CgConfig::default()).unwrap();
        assert!(res.x.sub(&b.scaled(0.25)).norm() <= 1e-12 * b.norm());
    }

    #[test]
    fn cg_reports_breakdown() {
        let pre = Preconditioner::Jacobi(vec![1.0; 16]);
        let err = cg_solve(|x| Ok(x.scaled(-1.0)), &Image::filled(4, 4, 1.0), &Image::zeros(4, 4), &pre, &CgConfig::default());
        assert!(matches!(err, Err(Error::Breakdown { iteration: 1, .. })));
    }

    #[test]
    fn system_is_symmetric_on_stencil_graph() {
        let g = local_stencil_graph(10, 7).unwrap();
        ShiftedGraphLaplacian { graph: &g, shift: 1.0, scale: 2.0 }.check_symmetry(3).unwrap();
    }

    #[test]
    fn full_mask_inversion() {
        let truth = random_image(7, 16, 16);
        let f = measure(&truth, &SamplingPlan::full(16, 16)).unwrap();
        let g = small_graph(8, 16, 16);
        let cfg = NlSolverConfig { alpha: 1e7, r_u: 1e5, tol: 1e-10, max_inner: 200, ..Default::default() };
        let state = nl_reconstruct(&f, None, &g, &cfg, &adjoint(&f).unwrap()).unwrap();
        let snr = snr_db(&truth, &state.u).unwrap();
        assert!(snr >= 60.0, "snr {snr}");
    }

    #[test]
    fn stencil_graph_tracks_local_solver() {
        let truth = Image::from_fn(32, 32, |r, c| {
            let d = (r as f64 - 15.0).hypot(c as f64 - 17.0);
            if d < 9.0 { 1.0 } else if r < 6 { 0.5 } else { 0.0 }
        });
        let f = measure(&truth, &radial_mask(32, 32, 10, 0).unwrap()).unwrap();
        let u0 = adjoint(&f).unwrap();
        let local = LocalSolverConfig { alpha: 200.0, r: 10.0, tol: 1e-7, max_inner: 3000, ..Default::default() };
        let u_local = reconstruct_local(&f, None, None, &local, &u0).unwrap().u;
        let g = local_stencil_graph(32, 32).unwrap();
        let nl = NlSolverConfig { alpha: 200.0, r_d: 10.0, r_u: 1e3, tol: 1e-7, max_inner: 3000, ..Default::default() };
        let u_nl = nl_reconstruct(&f, None, &g, &nl, &u0).unwrap().u;
        let (a, b) = (snr_db(&truth, &u_local).unwrap(), snr_db(&truth, &u_nl).unwrap());
        assert!((a - b).abs() <= 0.1, "local {a} nl {b}");
    }

    #[test]
    fn nl_divergence_estimate_basics() {
        let g = small_graph(9, 16, 16);
        assert!(estimate_nl_divergence(&Image::filled(16, 16, 2.0), &g, 1e-8).unwrap().norm() == 0.0);
        let u = random_image(10, 16, 16);
        let n = nl_normals(&u, &g, 1e-8).unwrap();
        assert!(nl_node_norm(&n, &g).unwrap().max() <= 1.0 + 1e-12);
        let v = estimate_nl_divergence(&u, &g, 1e-8).unwrap();
        let bound = g.max_degree() as f64 * g.weights().iter().copied().fold(0.0, f64::max).sqrt();
        let sup = v.as_slice().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(sup <= bound, "{sup} > {bound}");
        assert!(estimate_nl_divergence(&u, &g, 0.0).is_err());
    }

    #[test]
    fn divergence_regularization_limits() {
        let g = small_graph(11, 16, 16);
        let v_hat = random_image(12, 16, 16);
        for mode in [DivergenceMode::LocalRof, DivergenceMode::NlRof] {
            let cfg = DivergenceConfig { mu: 1e6, mode, ..Default::default() };
            let out = regularize_divergence(&v_hat, Some(&g), &cfg).unwrap();
            assert!(out.sub(&v_hat).norm() <= 1e-3 * v_hat.norm(), "{mode:?}");
            let cfg = DivergenceConfig { mode, ..Default::default() };
            assert!(regularize_divergence(&Image::zeros(16, 16), Some(&g), &cfg).unwrap().norm() == 0.0);
        }
        let cfg = DivergenceConfig { mode: DivergenceMode::NlRof, ..Default::default() };
        assert!(regularize_divergence(&v_hat, None, &cfg).is_err());
    }

    fn box3(u: &Image) -> Image {
        let (w, h) = u.dims();
        Image::from_fn(w, h, |r, c| {
            let mut acc = 0.0;
            for dr in [h - 1, 0, 1] {
                for dc in [w - 1, 0, 1] {
                    acc += u.get((r + dr) % h, (c + dc) % w);
                }
            }
            acc / 9.0
        })
    }

    #[test]
    fn local_rof_beats_input_and_box_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let v_hat = Image::from_fn(16, 16, |_, c| if c < 8 { 0.0 } else { 1.0 } + rng.random_range(-0.2..0.2));
        let mu = 5.0;
        let cfg = DivergenceConfig { mu, tol: 1e-9, max_inner: 3000, ..Default::default() };
        let out = regularize_divergence(&v_hat, None, &cfg).unwrap();
        let objective = |v: &Image| total_variation(v) + 0.5 * mu * v.sub(&v_hat).norm().powi(2);
        assert!(objective(&out) <= objective(&v_hat));
        assert!(objective(&out) <= objective(&box3(&v_hat)));
    }

    #[test]
    fn zero_gamma_matches_nl_tv() {
        let truth = Image::from_fn(16, 16, |r, c| if (r + c) % 7 < 3 { 1.0 } else { 0.0 });
        let f = measure(&truth, &radial_mask(16, 16, 6, 0).unwrap()).unwrap();
        let mut cfg = NlGuidedConfig { outer_iters: 2, ..Default::default() };
        cfg.graph = GraphParams { patch_radius: 1, window_radius: 3, k_neighbors: 5, ..Default::default() };
        cfg.local.max_inner = 40;
        cfg.nl.max_inner = 40;
        cfg.nl.gamma = 0.0;
        let a = nl_normal_guided_cs(&f, &cfg, Some(&truth)).unwrap();
        let b = nl_tv_cs(&f, &cfg, Some(&truth)).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.records.len(), 2);
    }
}
