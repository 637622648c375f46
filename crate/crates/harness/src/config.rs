//! Experiment configuration documents.
//!
//! A document is one JSON object:
//!
//! ```json
//! {
//!   "name": "phantom 12%",
//!   "method": "normal_cs",
//!   "defaults": { "sampling": { "ratio": 0.12, "seed": 0 }, "local": { "alpha": 1e4 } },
//!   "tv": {},
//!   "normal_cs": { "local": { "gamma": 0.5 }, "normals": { "mu": 0.03 } }
//! }
//! ```
//!
//! Resolving a method starts from [`ExperimentSpec::default`], merges the
//! `defaults` block, then the method's own block. Objects merge key by key,
//! except the one-key `image` source, which is replaced whole;
//! any other value replaces what was there. Inside `sampling`, setting one of
//! `lines` or `ratio` clears the other. Without a top-level `method` the
//! document describes every method that has a block.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use normalcs_core::graph::GraphParams;
use normalcs_core::local::LocalSolverConfig;
use normalcs_core::nonlocal::{DivergenceConfig, NlGuidedConfig, NlSolverConfig};
use normalcs_core::normals::{NormalGuidedConfig, NormalSolverConfig};
use normalcs_core::sensing::NoiseDomain;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Backprojection,
    Tv,
    EdgeCs,
    NormalCs,
    NlTv,
    NlNormalCs,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Backprojection,
        Method::Tv,
        Method::EdgeCs,
        Method::NormalCs,
        Method::NlTv,
        Method::NlNormalCs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Backprojection => "backprojection",
            Method::Tv => "tv",
            Method::EdgeCs => "edge_cs",
            Method::NormalCs => "normal_cs",
            Method::NlTv => "nl_tv",
            Method::NlNormalCs => "nl_normal_cs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinImage {
    SheppLogan,
}

/// Where the ground-truth image comes from. Files are PGM or raw float
/// images, center-cropped to the configured size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageSource {
    Builtin(BuiltinImage),
    Path(PathBuf),
}

/// Radial sampling: an explicit line count or a target ratio, which selects
/// the smallest line count reaching it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Standard deviation relative to the RMS of the noised quantity.
    pub sigma_fraction: f64,
    pub seed: u64,
    pub domain: NoiseDomain,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { sigma_fraction: 0.0, seed: 0, domain: NoiseDomain::Measurement }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EdgeSettings {
    pub outer_iters: usize,
    pub g_max_one: bool,
}

impl Default for EdgeSettings {
    fn default() -> Self {
        Self { outer_iters: 4, g_max_one: false }
    }
}

/// Outer loop of the local normal-guided method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterSettings {
    pub outer_iters: usize,
    pub outer_tol: f64,
    pub g_max_one: bool,
}

impl Default for OuterSettings {
    fn default() -> Self {
        let d = NormalGuidedConfig::default();
        Self { outer_iters: d.outer_iters, outer_tol: d.outer_tol, g_max_one: d.g_max_one }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlOuterSettings {
    pub outer_iters: usize,
    pub grad_floor: f64,
}

impl Default for NlOuterSettings {
    fn default() -> Self {
        let d = NlGuidedConfig::default();
        Self { outer_iters: d.outer_iters, grad_floor: d.grad_floor }
    }
}

/// Files written after a run. None of these affect the numbers, so they are
/// left out of the config hash.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Reconstruction as a 16-bit PGM.
    pub image: Option<PathBuf>,
    /// Reconstruction in the lossless raw float format.
    pub raw: Option<PathBuf>,
    /// Metrics report as JSON.
    pub report: Option<PathBuf>,
    /// Per-sweep CSV of the last inner solve.
    pub trace: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
    /// Final patch graph of the non-local methods.
    pub graph: Option<PathBuf>,
    /// Directory for per-iteration normal and weight fields of `normal_cs`.
    pub fields_dir: Option<PathBuf>,
}

impl OutputSpec {
    pub fn is_empty(&self) -> bool {
        *self == OutputSpec::default()
    }
}

/// A fully resolved single-method experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub method: Method,
    pub image: ImageSource,
    /// `[width, height]`
    pub size: [usize; 2],
    pub sampling: SamplingSpec,
    pub noise: NoiseSpec,
    /// TV solver settings. `gamma` weights the normal-matching term of `normal_cs`.
    pub local: LocalSolverConfig,
    pub edge: EdgeSettings,
    pub normals: NormalSolverConfig,
    pub outer: OuterSettings,
    /// Non-local solver settings. `gamma` applies to `nl_normal_cs` only.
    pub nl: NlSolverConfig,
    pub graph: GraphParams,
    pub divergence: DivergenceConfig,
    pub nl_outer: NlOuterSettings,
    pub output: OutputSpec,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let normal = NormalGuidedConfig::default();
        let nl = NlGuidedConfig::default();
        Self {
            method: Method::Tv,
            image: ImageSource::Builtin(BuiltinImage::SheppLogan),
            size: [128, 128],
            sampling: SamplingSpec { lines: None, ratio: Some(0.12), seed: 0 },
            noise: NoiseSpec::default(),
            local: normal.local,
            edge: EdgeSettings::default(),
            normals: normal.normals,
            outer: OuterSettings::default(),
            nl: nl.nl,
            graph: nl.graph,
            divergence: nl.divergence,
            nl_outer: NlOuterSettings::default(),
            output: OutputSpec::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        match (self.sampling.lines, self.sampling.ratio) {
            (Some(_), Some(_)) => return bad("sampling: give either `lines` or `ratio`, not both".into()),
            (None, None) => return bad("sampling: one of `lines` or `ratio` is required".into()),
            (Some(0), None) => return bad("sampling: `lines` must be at least 1".into()),
            (None, Some(r)) if !(r > 0.0 && r <= 1.0) => return bad(format!("sampling: ratio {r} not in (0, 1]")),
            _ => {}
        }
        if !(self.noise.sigma_fraction >= 0.0 && self.noise.sigma_fraction.is_finite()) {
            return bad(format!("noise: sigma_fraction {} must be >= 0", self.noise.sigma_fraction));
        }
        if self.size[0] == 0 || self.size[1] == 0 {
            return bad(format!("size {}x{} is empty", self.size[0], self.size[1]));
        }
        let iters = match self.method {
            Method::EdgeCs => self.edge.outer_iters,
            Method::NormalCs => self.outer.outer_iters,
            Method::NlTv | Method::NlNormalCs => self.nl_outer.outer_iters,
            _ => 1,
        };
        if iters == 0 {
            return bad(format!("{}: outer_iters must be at least 1", self.method));
        }
        let checks = [
            self.local.validate(),
            self.nl.validate(),
            self.normals.validate(),
            self.graph.validate(),
        ];
        for check in checks {
            check.map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn normal_guided(&self) -> NormalGuidedConfig {
        NormalGuidedConfig {
            local: self.local,
            normals: self.normals,
            outer_iters: self.outer.outer_iters,
            outer_tol: self.outer.outer_tol,
            g_max_one: self.outer.g_max_one,
        }
    }

    pub fn nl_guided(&self) -> NlGuidedConfig {
        NlGuidedConfig {
            local: self.local,
            nl: self.nl,
            graph: self.graph,
            divergence: self.divergence,
            outer_iters: self.nl_outer.outer_iters,
            grad_floor: self.nl_outer.grad_floor,
        }
    }

    /// SHA-256 over the canonical JSON of everything except output paths.
    pub fn config_hash(&self) -> String {
        let mut numeric = self.clone();
        numeric.output = OutputSpec::default();
        let bytes = serde_json::to_vec(&numeric).expect("spec serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// A parsed configuration document, before resolution.
#[derive(Debug, Clone, Default)]
pub struct ConfigDocument {
    pub name: Option<String>,
    pub method: Option<Method>,
    defaults: Map<String, Value>,
    blocks: BTreeMap<Method, Map<String, Value>>,
}

impl ConfigDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("invalid JSON: {e}")))?;
        let Value::Object(top) = value else {
            return Err(HarnessError::Config("top level must be a JSON object".into()));
        };
        let mut doc = ConfigDocument::default();
        for (key, value) in top {
            match key.as_str() {
                "name" => match value {
                    Value::String(s) => doc.name = Some(s),
                    _ => return Err(HarnessError::Config("`name` must be a string".into())),
                },
                "method" => match value {
                    Value::String(s) => doc.method = Some(s.parse()?),
                    _ => return Err(HarnessError::Config("`method` must be a string".into())),
                },
                "defaults" => doc.defaults = into_object(value, "defaults")?,
                other => {
                    let method: Method = other
                        .parse()
                        .map_err(|_| HarnessError::Config(format!("unknown top-level key {other:?}")))?;
                    doc.blocks.insert(method, into_object(value, other)?);
                }
            }
        }
        Ok(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::ConfigIo { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// Methods with a block in this document, in canonical order.
    pub fn block_methods(&self) -> Vec<Method> {
        self.blocks.keys().copied().collect()
    }

    /// The selected method, or every method with a block.
    pub fn methods(&self) -> Vec<Method> {
        match self.method {
            Some(m) => vec![m],
            None => self.block_methods(),
        }
    }

    pub fn resolve(&self, method: Method) -> Result<ExperimentSpec> {
        let block = self
            .blocks
            .get(&method)
            .ok_or_else(|| HarnessError::Config(format!("no `{method}` block in config")))?;
        let mut merged = serde_json::to_value(ExperimentSpec::default()).expect("spec serializes");
        merge(&mut merged, &Value::Object(self.defaults.clone()), "");
        merge(&mut merged, &Value::Object(block.clone()), "");
        merged["method"] = Value::String(method.name().into());
        let spec: ExperimentSpec = serde_json::from_value(merged.clone())
            .map_err(|e| HarnessError::Config(format!("{method}: {e}")))?;
        let echoed = serde_json::to_value(&spec).expect("spec serializes");
        if let Some(key) = first_unknown_key(&merged, &echoed, "") {
            return Err(HarnessError::Config(format!("{method}: unknown key `{key}`")));
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn into_object(value: Value, what: &str) -> Result<Map<String, Value>> {
    match value {
        Value::Object(m) => Ok(m),
        _ => Err(HarnessError::Config(format!("`{what}` must be an object"))),
    }
}

fn merge(base: &mut Value, overlay: &Value, path: &str) {
    // an image source is a one-key tagged value; a new tag replaces the old
    if path == "image" {
        *base = overlay.clone();
        return;
    }
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            if path == "sampling" {
                if o.contains_key("lines") {
                    b.remove("ratio");
                }
                if o.contains_key("ratio") {
                    b.remove("lines");
                }
            }
            for (key, value) in o {
                let child = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                match b.get_mut(key) {
                    Some(slot) => merge(slot, value, &child),
                    None => {
                        b.insert(key.clone(), value.clone());
                    }
                }
            }
        }
        (slot, value) => *slot = value.clone(),
    }
}

/// Keys present in the merged input but dropped by deserialization.
fn first_unknown_key(input: &Value, echoed: &Value, path: &str) -> Option<String> {
    let (Value::Object(i), Value::Object(e)) = (input, echoed) else {
        return None;
    };
    for (key, value) in i {
        let child = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
        match e.get(key) {
            None if !value.is_null() => return Some(child),
            Some(inner) => {
                if let Some(found) = first_unknown_key(value, inner, &child) {
                    return Some(found);
                }
            }
            None => {}
        }
    }
    None
}

/// Parses `WxH`.
pub fn parse_size(text: &str) -> std::result::Result<[usize; 2], String> {
    let (w, h) = text.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {text:?}"))?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| format!("bad dimension {s:?} in {text:?}"));
    let size = [parse(w)?, parse(h)?];
    if size[0] == 0 || size[1] == 0 {
        return Err(format!("size {text:?} is empty"));
    }
    Ok(size)
}
