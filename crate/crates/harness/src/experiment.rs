//! Single-experiment pipeline: image, mask, measurements, noise, solve,
//! metrics and output files.

use std::path::Path;
use std::time::Instant;

use normalcs_core::io::{write_graph, write_measurements, write_pbm, write_pgm, write_raw};
use normalcs_core::local::{edge_guided_outer, tv_cs, SweepRecord};
use normalcs_core::metrics::snr_db;
use normalcs_core::nonlocal::{nl_normal_guided_cs, nl_tv_cs};
use normalcs_core::normals::normal_guided_cs;
use normalcs_core::phantom::shepp_logan;
use normalcs_core::sensing::{
    add_image_noise, add_noise, lines_for_ratio, measure, radial_mask, NoiseDomain, SensingOperator,
};
use normalcs_core::{Image, Measurements, SamplingPlan};
use serde::{Deserialize, Serialize};

use crate::config::{BuiltinImage, ExperimentSpec, ImageSource, Method};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// One outer iteration of an iterated method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterTrace {
    pub iteration: usize,
    pub snr_db: f64,
    /// Relative change from the previous outer iterate (`None` for the first
    /// edge-guided iterate, which is plain TV).
    pub rel_change: Option<f64>,
    pub inner_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normal_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_normal_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cg_iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_edges: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_h: Option<f64>,
}

/// Convergence of the last inner solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub inner_iterations: usize,
    pub final_rel_change: f64,
    /// `|d - grad u| / |grad u|` at the last sweep.
    pub constraint_residual: f64,
    pub cg_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    /// Against the ground truth normalized to `[0, 1]`.
    pub snr_db: f64,
    pub backprojection_snr_db: f64,
    /// The plain TV solution the iterated methods start from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tv_snr_db: Option<f64>,
    pub width: usize,
    pub height: usize,
    pub line_count: usize,
    pub sample_count: usize,
    pub sample_ratio: f64,
    pub sampling_seed: u64,
    /// Absolute noise standard deviation in the noise domain.
    pub noise_sigma: f64,
    pub noise_domain: NoiseDomain,
    pub noise_seed: Option<u64>,
    pub outer: Vec<OuterTrace>,
    pub diagnostics: Diagnostics,
    /// Wall clock per stage; excluded from reproducibility comparisons.
    pub timings: Vec<StageTiming>,
    pub config_hash: String,
    pub config: ExperimentSpec,
}

impl MetricsReport {
    /// JSON of every field except the timings. Identical seeds and configs
    /// give identical strings.
    pub fn reproducible_json(&self) -> String {
        let mut copy = self.clone();
        copy.timings.clear();
        copy.config.output = Default::default();
        serde_json::to_string(&copy).expect("report serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: MetricsReport,
    pub truth: Image,
    pub reconstruction: Image,
    pub plan: SamplingPlan,
    pub measurements: Measurements,
    /// Sweeps of the last inner solve.
    pub sweeps: Vec<SweepRecord>,
}

struct Timer {
    timings: Vec<StageTiming>,
    start: Instant,
}

impl Timer {
    fn new() -> Self {
        Self { timings: Vec::new(), start: Instant::now() }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming { stage: stage.into(), seconds: (now - self.start).as_secs_f64() });
        self.start = now;
    }
}

/// Crops the centered `w x h` window.
fn center_crop(img: &Image, w: usize, h: usize) -> Option<Image> {
    if img.width() < w || img.height() < h {
        return None;
    }
    let (c0, r0) = ((img.width() - w) / 2, (img.height() - h) / 2);
    Some(Image::from_fn(w, h, |r, c| img.get(r0 + r, c0 + c)))
}

fn load_truth(spec: &ExperimentSpec) -> normalcs_core::Result<Image> {
    let [w, h] = spec.size;
    let img = match &spec.image {
        ImageSource::Builtin(BuiltinImage::SheppLogan) => shepp_logan(w, h)?,
        ImageSource::Path(path) => {
            let raw = read_image(path)?;
            center_crop(&raw, w, h).ok_or_else(|| {
                normalcs_core::Error::Dimension(format!(
                    "image {} is {}x{}, smaller than {w}x{h}",
                    path.display(),
                    raw.width(),
                    raw.height()
                ))
            })?
        }
    };
    Ok(img.normalized_unit_range())
}

fn read_image(path: &Path) -> normalcs_core::Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("raw") => normalcs_core::io::read_raw(path),
        _ => normalcs_core::io::read_pgm(path),
    }
}

/// Runs one experiment and writes the configured output files.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Experiment> {
    spec.validate()?;
    let hash = spec.config_hash();
    let context = format!("method {}, config {}", spec.method, &hash[..12]);
    let stage = |stage: &'static str| {
        let context = context.clone();
        move |source: normalcs_core::Error| HarnessError::Stage { stage, context, source }
    };
    let mut timer = Timer::new();

    let truth = load_truth(spec).map_err(stage("load"))?;
    timer.lap("load");

    let [w, h] = spec.size;
    let lines = match (spec.sampling.lines, spec.sampling.ratio) {
        (Some(l), _) => l,
        (None, Some(r)) => lines_for_ratio(w, h, r).map_err(stage("mask"))?,
        (None, None) => unreachable!("validated"),
    };
    let plan = radial_mask(w, h, lines, spec.sampling.seed).map_err(stage("mask"))?;
    timer.lap("mask");

    let sigma_fraction = spec.noise.sigma_fraction;
    let noisy = sigma_fraction > 0.0;
    let (f, noise_sigma) = match spec.noise.domain {
        NoiseDomain::Measurement => {
            let clean = measure(&truth, &plan).map_err(stage("measure"))?;
            timer.lap("measure");
            let f = add_noise(&clean, sigma_fraction, spec.noise.seed).map_err(stage("noise"))?;
            let sigma = f.noise_sigma;
            (f, sigma)
        }
        NoiseDomain::Image => {
            let (u, sigma) = add_image_noise(&truth, sigma_fraction, spec.noise.seed).map_err(stage("noise"))?;
            timer.lap("noise");
            let mut f = measure(&u, &plan).map_err(stage("measure"))?;
            f.noise_sigma = sigma;
            f.noise_seed = noisy.then_some(spec.noise.seed);
            (f, sigma)
        }
    };
    timer.lap(if spec.noise.domain == NoiseDomain::Measurement { "noise" } else { "measure" });

    let sensing = SensingOperator::new(plan.clone());
    let back = sensing.adjoint(&f).map_err(stage("solve"))?;
    let snr = |u: &Image| snr_db(&truth, u);

    let solved = solve(spec, &f, &truth, back.clone()).map_err(stage("solve"))?;
    timer.lap("solve");

    let backprojection_snr_db = snr(&back).map_err(stage("metrics"))?;
    let final_snr = snr(&solved.u).map_err(stage("metrics"))?;
    let tv_snr_db = solved.u_tv.as_ref().map(snr).transpose().map_err(stage("metrics"))?;
    timer.lap("metrics");

    let report = MetricsReport {
        method: spec.method,
        snr_db: final_snr,
        backprojection_snr_db,
        tv_snr_db,
        width: w,
        height: h,
        line_count: plan.line_count(),
        sample_count: plan.sample_count(),
        sample_ratio: plan.sample_ratio(),
        sampling_seed: plan.rng_seed(),
        noise_sigma,
        noise_domain: spec.noise.domain,
        noise_seed: noisy.then_some(spec.noise.seed),
        outer: solved.outer,
        diagnostics: solved.diagnostics,
        timings: Vec::new(),
        config_hash: hash,
        config: spec.clone(),
    };
    let mut experiment = Experiment {
        report,
        truth,
        reconstruction: solved.u,
        plan,
        measurements: f,
        sweeps: solved.sweeps,
    };
    write_outputs(spec, &experiment, &solved.extras)?;
    timer.lap("output");
    experiment.report.timings = timer.timings;
    if let Some(path) = &spec.output.report {
        std::fs::write(path, experiment.report.to_json_pretty())
            .map_err(|e| HarnessError::Output { path: path.clone(), message: e.to_string() })?;
    }
    Ok(experiment)
}

#[derive(Default)]
struct Extras {
    graph: Option<normalcs_core::graph::PatchGraph>,
    fields: Vec<normalcs_core::normals::NormalFields>,
}

struct Solved {
    u: Image,
    u_tv: Option<Image>,
    outer: Vec<OuterTrace>,
    diagnostics: Diagnostics,
    sweeps: Vec<SweepRecord>,
    extras: Extras,
}

fn solve(spec: &ExperimentSpec, f: &Measurements, truth: &Image, back: Image) -> normalcs_core::Result<Solved> {
    let snr = |u: &Image| snr_db(truth, u);
    let diag = |iters, rel, resid, cg| Diagnostics {
        inner_iterations: iters,
        final_rel_change: rel,
        constraint_residual: resid,
        cg_iterations: cg,
    };
    Ok(match spec.method {
        Method::Backprojection => Solved {
            u: back,
            u_tv: None,
            outer: Vec::new(),
            diagnostics: Diagnostics::default(),
            sweeps: Vec::new(),
            extras: Extras::default(),
        },
        Method::Tv => {
            let s = tv_cs(f, &spec.local)?;
            Solved {
                diagnostics: diag(s.iterations_run, s.final_rel_change, s.constraint_residual, 0),
                u: s.u,
                u_tv: None,
                outer: Vec::new(),
                sweeps: s.trace,
                extras: Extras::default(),
            }
        }
        Method::EdgeCs => {
            let r = edge_guided_outer(f, &spec.local, spec.edge.outer_iters, spec.edge.g_max_one)?;
            let mut outer = Vec::new();
            for (k, (u, state)) in r.iterates.iter().zip(&r.inner).enumerate() {
                let rel = (k > 0).then(|| {
                    let prev = &r.iterates[k - 1];
                    u.sub(prev).norm() / u.norm().max(f64::MIN_POSITIVE)
                });
                outer.push(OuterTrace {
                    iteration: k + 1,
                    snr_db: snr(u)?,
                    rel_change: rel,
                    inner_iterations: state.iterations_run,
                    normal_iterations: None,
                    max_normal_norm: None,
                    cg_iterations: None,
                    graph_edges: None,
                    graph_h: None,
                });
            }
            let last = r.inner.last().expect("at least one outer iteration");
            Solved {
                diagnostics: diag(last.iterations_run, last.final_rel_change, last.constraint_residual, 0),
                sweeps: last.trace.clone(),
                u_tv: Some(r.iterates[0].clone()),
                u: r.u,
                outer,
                extras: Extras::default(),
            }
        }
        Method::NormalCs => {
            let keep = spec.output.fields_dir.is_some();
            let r = normal_guided_cs(f, &spec.normal_guided(), Some(truth), keep)?;
            let outer = r
                .records
                .iter()
                .map(|rec| OuterTrace {
                    iteration: rec.iteration,
                    snr_db: rec.snr_db.expect("ground truth supplied"),
                    rel_change: Some(rec.rel_change),
                    inner_iterations: rec.inner_iterations,
                    normal_iterations: Some(rec.normal_iterations),
                    max_normal_norm: Some(rec.max_normal_norm),
                    cg_iterations: None,
                    graph_edges: None,
                    graph_h: None,
                })
                .collect();
            let last = &r.last_inner;
            Solved {
                diagnostics: diag(last.iterations_run, last.final_rel_change, last.constraint_residual, 0),
                sweeps: last.trace.clone(),
                u: r.u,
                u_tv: Some(r.u_tv),
                outer,
                extras: Extras { graph: None, fields: r.fields },
            }
        }
        Method::NlTv | Method::NlNormalCs => {
            let cfg = spec.nl_guided();
            let r = if spec.method == Method::NlTv {
                nl_tv_cs(f, &cfg, Some(truth))?
            } else {
                nl_normal_guided_cs(f, &cfg, Some(truth))?
            };
            let outer = r
                .records
                .iter()
                .map(|rec| OuterTrace {
                    iteration: rec.iteration,
                    snr_db: rec.snr_db.expect("ground truth supplied"),
                    rel_change: Some(rec.rel_change),
                    inner_iterations: rec.inner_iterations,
                    normal_iterations: None,
                    max_normal_norm: rec.max_normal_norm,
                    cg_iterations: Some(rec.cg_iterations),
                    graph_edges: Some(rec.edge_count),
                    graph_h: Some(rec.h),
                })
                .collect();
            let last = &r.last_inner;
            let resid = last.trace.last().map_or(0.0, |s| s.constraint_residual);
            Solved {
                diagnostics: diag(last.iterations_run, last.final_rel_change, resid, last.cg_iterations),
                sweeps: last.trace.clone(),
                u: r.u,
                u_tv: Some(r.u_tv),
                outer,
                extras: Extras { graph: Some(r.last_graph), fields: Vec::new() },
            }
        }
    })
}

/// Per-sweep CSV: iteration, relative change, constraint residual, objective,
/// augmented Lagrangian, CG iterations.
pub fn write_trace_csv(path: &Path, sweeps: &[SweepRecord]) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for s in sweeps {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

fn write_outputs(spec: &ExperimentSpec, exp: &Experiment, extras: &Extras) -> Result<()> {
    let out = &spec.output;
    let fail = |path: &Path| {
        let path = path.to_path_buf();
        move |e: normalcs_core::Error| HarnessError::Output { path, message: e.to_string() }
    };
    if let Some(p) = &out.image {
        write_pgm(p, &exp.reconstruction, 16).map_err(fail(p))?;
    }
    if let Some(p) = &out.raw {
        write_raw(p, &exp.reconstruction).map_err(fail(p))?;
    }
    if let Some(p) = &out.mask {
        write_pbm(p, &exp.plan).map_err(fail(p))?;
    }
    if let Some(p) = &out.measurements {
        write_measurements(p, &exp.measurements).map_err(fail(p))?;
    }
    if let Some(p) = &out.trace {
        write_trace_csv(p, &exp.sweeps).map_err(|e| HarnessError::Output { path: p.clone(), message: e.to_string() })?;
    }
    if let (Some(p), Some(g)) = (&out.graph, &extras.graph) {
        write_graph(p, g).map_err(fail(p))?;
    }
    if let Some(dir) = &out.fields_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Output { path: dir.clone(), message: e.to_string() })?;
        for (k, fields) in extras.fields.iter().enumerate() {
            let k = k + 1;
            let files = [
                (format!("n_hat_x_{k}.raw"), &fields.n_hat.x),
                (format!("n_hat_y_{k}.raw"), &fields.n_hat.y),
                (format!("n_x_{k}.raw"), &fields.n.x),
                (format!("n_y_{k}.raw"), &fields.n.y),
                (format!("weights_{k}.raw"), &fields.weights),
            ];
            for (name, img) in files {
                let p = dir.join(name);
                write_raw(&p, img).map_err(fail(&p))?;
            }
        }
    }
    Ok(())
}
