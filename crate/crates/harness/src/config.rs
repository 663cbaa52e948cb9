//! Experiment configuration documents.
//!
//! A config is one JSON object. Names are resolved and every parameter is
//! checked up front by [`ExperimentConfig::resolve`], so a run never fails
//! halfway on a typo.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use noisesearch_core::search::{FirstOrderConfig, PathsConfig, SearchBudget, ZeroOrderConfig};
use noisesearch_core::{MixtureModel, SamplerSettings};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{HarnessError, Result};

pub const ALGORITHMS: &[&str] = &["random_search", "zero_order", "first_order", "paths"];
pub const VERIFIERS: &[&str] = &[
    "class_confidence",
    "likelihood",
    "self_supervised",
    "ensemble",
    "frechet_greedy",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelSpec,
    pub algorithm: NamedParams,
    pub verifier: NamedParams,
    #[serde(default)]
    pub budget: BudgetSpec,
    #[serde(default)]
    pub sweep_axis: SweepAxis,
    pub sweep: Vec<u64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_guidance")]
    pub guidance_weight: f64,
    #[serde(default = "default_samples")]
    pub samples_per_point: usize,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default = "default_k")]
    pub knn_k: usize,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

fn default_guidance() -> f64 {
    1.0
}

fn default_samples() -> usize {
    256
}

fn default_k() -> usize {
    noisesearch_core::metrics::DEFAULT_K
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// `"default"`, `{"path": ...}`, or an inline model document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Named(String),
    File { path: PathBuf },
    Inline(ModelDocument),
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::Named("default".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub dim: usize,
    pub components: Vec<ComponentDocument>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDocument {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

/// Row-major flat list or list of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Matrix {
    Flat(Vec<f64>),
    Rows(Vec<Vec<f64>>),
}

impl Matrix {
    fn flatten(&self) -> Vec<f64> {
        match self {
            Matrix::Flat(v) => v.clone(),
            Matrix::Rows(r) => r.concat(),
        }
    }
}

impl ModelDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::config("model", format!("{}: {e}", path.display())))
    }

    pub fn to_model(&self) -> Result<MixtureModel> {
        let parts = self
            .components
            .iter()
            .map(|c| (c.weight, c.mean.clone(), c.covariance.flatten()))
            .collect();
        MixtureModel::new(self.dim, parts).map_err(|e| HarnessError::config("model", e.to_string()))
    }

    pub fn from_model(model: &MixtureModel) -> Self {
        Self {
            dim: model.dim(),
            components: model
                .components()
                .iter()
                .map(|c| ComponentDocument {
                    weight: c.weight(),
                    mean: c.mean().to_vec(),
                    covariance: Matrix::Flat(c.covariance().to_vec()),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedParams {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSpec {
    #[serde(default = "default_nfe_per_iter")]
    pub nfe_per_iter: u64,
    #[serde(default = "default_max_search")]
    pub max_search_nfe: u64,
    #[serde(default = "default_final_steps")]
    pub final_denoise_steps: usize,
}

fn default_nfe_per_iter() -> u64 {
    50
}

fn default_max_search() -> u64 {
    1 << 40
}

fn default_final_steps() -> usize {
    125
}

impl Default for BudgetSpec {
    fn default() -> Self {
        Self {
            nfe_per_iter: default_nfe_per_iter(),
            max_search_nfe: default_max_search(),
            final_denoise_steps: default_final_steps(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rho: f64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        let s = SamplerSettings::default();
        Self {
            sigma_max: s.sigma_max,
            sigma_min: s.sigma_min,
            rho: s.rho,
        }
    }
}

/// What the sweep points set: the algorithm's scaling parameter, or NFEs/iter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    Search,
    NfePerIter,
}

/// Parsed algorithm with its scaling parameter left open where the sweep
/// supplies it.
#[derive(Debug, Clone, PartialEq)]
pub enum Algorithm {
    Random {
        candidates: Option<usize>,
    },
    ZeroOrder {
        iterations: Option<usize>,
        neighbors: usize,
        lambda: f64,
    },
    FirstOrder {
        iterations: Option<usize>,
        learning_rate: f64,
        norm_target: Option<f64>,
        fd_step: f64,
    },
    Paths {
        initial_paths: usize,
        width: Option<usize>,
        path_length: usize,
        search_start: f64,
        forward_delta: f64,
        backward_delta: f64,
    },
}

/// One sweep point's runnable algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum PointAlgorithm {
    Random(usize),
    ZeroOrder(ZeroOrderConfig),
    FirstOrder(FirstOrderConfig),
    Paths(PathsConfig),
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Random { .. } => "random_search",
            Self::ZeroOrder { .. } => "zero_order",
            Self::FirstOrder { .. } => "first_order",
            Self::Paths { .. } => "paths",
        }
    }

    fn scale(&self) -> Option<usize> {
        match self {
            Self::Random { candidates } => *candidates,
            Self::ZeroOrder { iterations, .. } | Self::FirstOrder { iterations, .. } => *iterations,
            Self::Paths { width, .. } => *width,
        }
    }

    fn scale_key(&self) -> &'static str {
        match self {
            Self::Random { .. } => "algorithm.params.candidates",
            Self::ZeroOrder { .. } | Self::FirstOrder { .. } => "algorithm.params.iterations",
            Self::Paths { .. } => "algorithm.params.width",
        }
    }

    /// Concrete configuration with scaling parameter `scale`.
    pub fn at(&self, scale: usize) -> Result<PointAlgorithm> {
        let bad = |e: noisesearch_core::Error| HarnessError::config("algorithm.params", e.to_string());
        if scale == 0 {
            return Err(HarnessError::config(self.scale_key(), "scaling parameter must be positive"));
        }
        Ok(match *self {
            Self::Random { .. } => PointAlgorithm::Random(scale),
            Self::ZeroOrder { neighbors, lambda, .. } => {
                PointAlgorithm::ZeroOrder(ZeroOrderConfig::new(scale, neighbors, lambda).map_err(bad)?)
            }
            Self::FirstOrder {
                learning_rate,
                norm_target,
                fd_step,
                ..
            } => {
                let mut c = FirstOrderConfig::new(scale, learning_rate).map_err(bad)?;
                if let Some(t) = norm_target {
                    c = c.with_norm_target(t);
                }
                if !(fd_step > 0.0) {
                    return Err(HarnessError::config("algorithm.params.fd_step", "must be positive"));
                }
                c.fd_step = fd_step;
                PointAlgorithm::FirstOrder(c)
            }
            Self::Paths {
                initial_paths,
                path_length,
                search_start,
                forward_delta,
                backward_delta,
                ..
            } => PointAlgorithm::Paths(
                PathsConfig::new(
                    initial_paths,
                    scale,
                    search_start,
                    forward_delta,
                    backward_delta,
                    path_length,
                )
                .map_err(bad)?,
            ),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VerifierKind {
    ClassConfidence,
    Likelihood,
    SelfSupervised { feature_seed: u64 },
    Ensemble(Vec<VerifierKind>),
    FrechetGreedy { warmup: usize },
}

impl VerifierKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ClassConfidence => "class_confidence",
            Self::Likelihood => "likelihood",
            Self::SelfSupervised { .. } => "self_supervised",
            Self::Ensemble(_) => "ensemble",
            Self::FrechetGreedy { .. } => "frechet_greedy",
        }
    }

    pub fn needs_trajectory(&self) -> bool {
        match self {
            Self::SelfSupervised { .. } => true,
            Self::Ensemble(m) => m.iter().any(Self::needs_trajectory),
            _ => false,
        }
    }

    /// Label used in reports, e.g. `ensemble(likelihood+class_confidence)`.
    pub fn label(&self) -> String {
        match self {
            Self::Ensemble(m) => {
                let names: Vec<String> = m.iter().map(Self::label).collect();
                format!("ensemble({})", names.join("+"))
            }
            other => other.name().to_string(),
        }
    }
}

/// Fully checked experiment.
#[derive(Debug, Clone)]
pub struct Plan {
    pub model: MixtureModel,
    pub algorithm: Algorithm,
    pub verifier: VerifierKind,
    pub budget: SearchBudget,
    pub sampler: SamplerSettings,
    pub sweep_axis: SweepAxis,
    pub sweep: Vec<u64>,
    pub seeds: Vec<u64>,
    pub guidance_weight: f64,
    pub samples_per_point: usize,
    pub knn_k: usize,
    pub output_dir: PathBuf,
}

impl Plan {
    /// Algorithm and budget at one sweep point.
    pub fn point(&self, point: u64) -> Result<(PointAlgorithm, SearchBudget)> {
        match self.sweep_axis {
            SweepAxis::Search => Ok((self.algorithm.at(to_usize(point, "sweep")?)?, self.budget)),
            SweepAxis::NfePerIter => {
                let scale = self.algorithm.scale().ok_or_else(|| {
                    HarnessError::config(self.algorithm.scale_key(), "required when sweeping nfe_per_iter")
                })?;
                let budget = SearchBudget {
                    nfe_per_iter: point,
                    ..self.budget
                };
                Ok((self.algorithm.at(scale)?, budget))
            }
        }
    }
}

fn to_usize(v: u64, key: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| HarnessError::config(key, format!("{v} does not fit in usize")))
}

fn params<T: DeserializeOwned>(value: &Value, key: &str) -> Result<T> {
    let v = if value.is_null() {
        Value::Object(Default::default())
    } else {
        value.clone()
    };
    serde_json::from_value(v).map_err(|e| HarnessError::config(key, e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomParams {
    candidates: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ZeroOrderParams {
    iterations: Option<usize>,
    #[serde(default = "zo_neighbors")]
    neighbors: usize,
    #[serde(default = "zo_lambda")]
    lambda: f64,
}

fn zo_neighbors() -> usize {
    2
}

fn zo_lambda() -> f64 {
    0.95
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FirstOrderParams {
    iterations: Option<usize>,
    #[serde(default = "fo_rate")]
    learning_rate: f64,
    norm_target: Option<f64>,
    #[serde(default = "fo_fd")]
    fd_step: f64,
}

fn fo_rate() -> f64 {
    0.01
}

fn fo_fd() -> f64 {
    1e-2
}

/// Levels are absolute; unset ones default to 0.11, 0.78, 0.81 of `sigma_max`.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsParams {
    #[serde(default = "paths_n")]
    initial_paths: usize,
    width: Option<usize>,
    #[serde(default = "paths_l")]
    path_length: usize,
    search_start: Option<f64>,
    forward_delta: Option<f64>,
    backward_delta: Option<f64>,
}

fn paths_n() -> usize {
    2
}

// the last round integrates from near sigma_max to zero in these steps
fn paths_l() -> usize {
    8
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelfSupervisedParams {
    #[serde(default)]
    feature_seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleParams {
    members: Vec<NamedParams>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrechetParams {
    #[serde(default = "fg_warmup")]
    warmup: usize,
}

fn fg_warmup() -> usize {
    64
}

fn empty(value: &Value, key: &str) -> Result<()> {
    match value {
        Value::Null => Ok(()),
        Value::Object(m) if m.is_empty() => Ok(()),
        _ => Err(HarnessError::config(key, "takes no parameters")),
    }
}

fn parse_verifier(spec: &NamedParams, key: &str) -> Result<VerifierKind> {
    let pkey = format!("{key}.params");
    Ok(match spec.name.as_str() {
        "class_confidence" => {
            empty(&spec.params, &pkey)?;
            VerifierKind::ClassConfidence
        }
        "likelihood" => {
            empty(&spec.params, &pkey)?;
            VerifierKind::Likelihood
        }
        "self_supervised" => {
            let p: SelfSupervisedParams = params(&spec.params, &pkey)?;
            VerifierKind::SelfSupervised {
                feature_seed: p.feature_seed,
            }
        }
        "ensemble" => {
            let p: EnsembleParams = params(&spec.params, &pkey)?;
            if p.members.is_empty() {
                return Err(HarnessError::config(format!("{pkey}.members"), "needs at least one member"));
            }
            let members = p
                .members
                .iter()
                .enumerate()
                .map(|(i, m)| {
                    let k = format!("{pkey}.members[{i}]");
                    let v = parse_verifier(m, &k)?;
                    if matches!(v, VerifierKind::Ensemble(_) | VerifierKind::FrechetGreedy { .. }) {
                        return Err(HarnessError::config(k, "ensemble members must be point-wise verifiers"));
                    }
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()?;
            VerifierKind::Ensemble(members)
        }
        "frechet_greedy" => {
            let p: FrechetParams = params(&spec.params, &pkey)?;
            VerifierKind::FrechetGreedy { warmup: p.warmup }
        }
        other => {
            return Err(HarnessError::config(
                format!("{key}.name"),
                format!("unknown verifier `{other}` (known: {})", VERIFIERS.join(", ")),
            ))
        }
    })
}

fn parse_algorithm(spec: &NamedParams, sigma_max: f64) -> Result<Algorithm> {
    let key = "algorithm.params";
    Ok(match spec.name.as_str() {
        "random_search" => {
            let p: RandomParams = params(&spec.params, key)?;
            Algorithm::Random {
                candidates: p.candidates,
            }
        }
        "zero_order" => {
            let p: ZeroOrderParams = params(&spec.params, key)?;
            Algorithm::ZeroOrder {
                iterations: p.iterations,
                neighbors: p.neighbors,
                lambda: p.lambda,
            }
        }
        "first_order" => {
            let p: FirstOrderParams = params(&spec.params, key)?;
            Algorithm::FirstOrder {
                iterations: p.iterations,
                learning_rate: p.learning_rate,
                norm_target: p.norm_target,
                fd_step: p.fd_step,
            }
        }
        "paths" => {
            let p: PathsParams = params(&spec.params, key)?;
            Algorithm::Paths {
                initial_paths: p.initial_paths,
                width: p.width,
                path_length: p.path_length,
                search_start: p.search_start.unwrap_or(0.11 * sigma_max),
                forward_delta: p.forward_delta.unwrap_or(0.78 * sigma_max),
                backward_delta: p.backward_delta.unwrap_or(0.81 * sigma_max),
            }
        }
        other => {
            return Err(HarnessError::config(
                "algorithm.name",
                format!("unknown algorithm `{other}` (known: {})", ALGORITHMS.join(", ")),
            ))
        }
    })
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::config("(document)", format!("{}: {e}", path.display())))
    }

    /// Checks everything and builds the typed plan. Relative model paths are
    /// taken from `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Plan> {
        let model = match &self.model {
            ModelSpec::Named(n) if n == "default" => MixtureModel::default_toy(),
            ModelSpec::Named(n) => {
                return Err(HarnessError::config("model", format!("unknown model `{n}` (known: default)")))
            }
            ModelSpec::File { path } => ModelDocument::load(&base_dir.join(path))?.to_model()?,
            ModelSpec::Inline(doc) => doc.to_model()?,
        };
        let s = self.sampler;
        noisesearch_core::SigmaSchedule::new(1, s.sigma_max, s.sigma_min, s.rho)
            .map_err(|e| HarnessError::config("sampler", e.to_string()))?;
        let sampler = SamplerSettings {
            sigma_max: s.sigma_max,
            sigma_min: s.sigma_min,
            rho: s.rho,
        };
        let b = self.budget;
        let budget = SearchBudget::new(b.nfe_per_iter, b.max_search_nfe, b.final_denoise_steps)
            .map_err(|e| HarnessError::config("budget", e.to_string()))?;
        let algorithm = parse_algorithm(&self.algorithm, sampler.sigma_max)?;
        let verifier = parse_verifier(&self.verifier, "verifier")?;

        if self.sweep.is_empty() {
            return Err(HarnessError::config("sweep", "needs at least one point"));
        }
        if self.sweep[0] == 0 || self.sweep.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HarnessError::config("sweep", "points must be positive and strictly increasing"));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::config("seeds", "needs at least one seed"));
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return Err(HarnessError::config("seeds", "seeds must be distinct"));
        }
        if !(self.guidance_weight >= 0.0) || !self.guidance_weight.is_finite() {
            return Err(HarnessError::config("guidance_weight", "must be finite and >= 0"));
        }
        if self.knn_k == 0 {
            return Err(HarnessError::config("knn_k", "must be positive"));
        }
        if self.samples_per_point < 2 || self.samples_per_point <= self.knn_k {
            return Err(HarnessError::config(
                "samples_per_point",
                format!("needs at least max(2, knn_k + 1) = {} samples", (self.knn_k + 1).max(2)),
            ));
        }
        if let VerifierKind::FrechetGreedy { warmup } = verifier {
            if !matches!(algorithm, Algorithm::Random { .. }) {
                return Err(HarnessError::config(
                    "verifier.name",
                    "frechet_greedy selects among random candidates; use algorithm random_search",
                ));
            }
            if warmup < 2 || warmup >= self.samples_per_point {
                return Err(HarnessError::config(
                    "verifier.params.warmup",
                    "must be at least 2 and below samples_per_point",
                ));
            }
        }
        if let Algorithm::Paths { search_start, .. } = algorithm {
            if !(search_start < sampler.sigma_max) {
                return Err(HarnessError::config(
                    "algorithm.params.search_start",
                    format!("must lie below sigma_max = {}", sampler.sigma_max),
                ));
            }
        }
        if matches!(algorithm, Algorithm::Paths { .. }) && verifier.needs_trajectory() {
            return Err(HarnessError::config(
                "verifier",
                "paths scores intermediate x-predictions, which self_supervised cannot judge",
            ));
        }

        let plan = Plan {
            model,
            algorithm,
            verifier,
            budget,
            sampler,
            sweep_axis: self.sweep_axis,
            sweep: self.sweep.clone(),
            seeds: self.seeds.clone(),
            guidance_weight: self.guidance_weight,
            samples_per_point: self.samples_per_point,
            knn_k: self.knn_k,
            output_dir: self.output_dir.clone(),
        };
        for &p in &plan.sweep {
            plan.point(p)?;
        }
        Ok(plan)
    }
}
