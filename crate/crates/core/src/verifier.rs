//! Verifiers score generated samples, higher is better.
//!
//! Point-wise verifiers implement [`Verifier`]. Search drivers consume the
//! more general [`Judge`], which also covers the rank-based [`Ensemble`]:
//! its scores only make sense relative to the candidate set being compared.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure_dim, Error, Result};
use crate::metrics::{frechet_distance, GaussianStats, COVARIANCE_EPS};
use crate::rng::{standard_normal, substream, tag};
use crate::sampler::Trajectory;
use crate::scorefield::MixtureModel;

/// Noise level at which the self-supervised verifier reads the x-prediction.
pub const SELF_SUPERVISED_SIGMA: f64 = 0.4;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifierScore {
    pub value: f64,
    pub verifier_id: String,
}

/// What a verifier may look at: the clean sample, optionally the trajectory
/// that produced it.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub sample: &'a [f64],
    pub trajectory: Option<&'a Trajectory>,
}

impl<'a> Candidate<'a> {
    pub fn new(sample: &'a [f64]) -> Self {
        Self { sample, trajectory: None }
    }

    pub fn with_trajectory(trajectory: &'a Trajectory) -> Self {
        Self {
            sample: trajectory.final_state(),
            trajectory: Some(trajectory),
        }
    }
}

pub trait Verifier: Send + Sync {
    fn id(&self) -> &str;
    fn evaluate(&self, candidate: &Candidate<'_>) -> Result<VerifierScore>;

    /// Whether `evaluate` requires `candidate.trajectory`.
    fn needs_trajectory(&self) -> bool {
        false
    }
}

impl<V: Verifier + ?Sized> Verifier for Box<V> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn evaluate(&self, candidate: &Candidate<'_>) -> Result<VerifierScore> {
        (**self).evaluate(candidate)
    }
    fn needs_trajectory(&self) -> bool {
        (**self).needs_trajectory()
    }
}

fn finite_score(value: f64, id: &str) -> Result<VerifierScore> {
    if value.is_finite() {
        Ok(VerifierScore {
            value,
            verifier_id: id.to_string(),
        })
    } else {
        Err(Error::Numerical(format!("verifier {id} produced {value}")))
    }
}

/// Exact posterior probability of the conditioned component.
#[derive(Debug, Clone)]
pub struct ClassConfidence<'a> {
    model: &'a MixtureModel,
    condition: usize,
}

impl<'a> ClassConfidence<'a> {
    pub fn new(model: &'a MixtureModel, condition: usize) -> Result<Self> {
        if condition >= model.num_components() {
            return Err(Error::invalid(format!(
                "condition {condition} out of range for {} components",
                model.num_components()
            )));
        }
        Ok(Self { model, condition })
    }
}

impl Verifier for ClassConfidence<'_> {
    fn id(&self) -> &str {
        "class_confidence"
    }

    fn evaluate(&self, candidate: &Candidate<'_>) -> Result<VerifierScore> {
        let p = self.model.posterior(candidate.sample, 0.0)?;
        finite_score(p[self.condition], Verifier::id(self))
    }
}

/// Log-density of the clean data distribution.
#[derive(Debug, Clone)]
pub struct Likelihood<'a> {
    model: &'a MixtureModel,
}

impl<'a> Likelihood<'a> {
    pub fn new(model: &'a MixtureModel) -> Self {
        Self { model }
    }
}

impl Verifier for Likelihood<'_> {
    fn id(&self) -> &str {
        "likelihood"
    }

    fn evaluate(&self, candidate: &Candidate<'_>) -> Result<VerifierScore> {
        finite_score(self.model.log_density(candidate.sample, 0.0)?, Verifier::id(self))
    }
}

/// Fixed affine feature map `x -> W (x - c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    center: Vec<f64>,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
    out_dim: usize,
}

impl FeatureMap {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self {
            center: vec![0.0; dim],
            weights,
            out_dim: dim,
        }
    }

    /// Seeded Gaussian projection to `max(d, 8)` features after centering.
    pub fn random_projection(center: Vec<f64>, seed: u64) -> Self {
        let d = center.len();
        let out_dim = d.max(8);
        let mut rng = substream(seed, &[tag::FEATURES]);
        let scale = 1.0 / libm::sqrt(out_dim as f64);
        let weights = standard_normal(&mut rng, out_dim * d)
            .into_iter()
            .map(|w| w * scale)
            .collect();
        Self { center, weights, out_dim }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.center.len();
        ensure_dim(x, d, "feature input")?;
        let centered: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        Ok(self
            .weights
            .chunks_exact(d)
            .map(|row| row.iter().zip(&centered).map(|(w, v)| w * v).sum())
            .collect())
    }
}

/// Cosine similarity; errors on a zero-norm input.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>());
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum::<f64>());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Agreement between the low-noise x-prediction and the final sample in
/// feature space. Needs no condition and no data statistics beyond the map.
#[derive(Debug, Clone)]
pub struct SelfSupervised {
    features: FeatureMap,
    sigma_lo: f64,
}

impl SelfSupervised {
    pub fn new(features: FeatureMap, sigma_lo: f64) -> Self {
        Self { features, sigma_lo }
    }

    /// Projection centered at the mixture mean, read at `sigma = 0.4`.
    pub fn for_model(model: &MixtureModel, seed: u64) -> Self {
        Self::new(FeatureMap::random_projection(model.mean(), seed), SELF_SUPERVISED_SIGMA)
    }

    pub fn sigma_lo(&self) -> f64 {
        self.sigma_lo
    }
}

impl Verifier for SelfSupervised {
    fn id(&self) -> &str {
        "self_supervised"
    }

    fn needs_trajectory(&self) -> bool {
        true
    }

    fn evaluate(&self, candidate: &Candidate<'_>) -> Result<VerifierScore> {
        let traj = candidate
            .trajectory
            .ok_or_else(|| Error::invalid("self-supervised verifier needs the sampling trajectory"))?;
        if !traj.is_complete() {
            return Err(Error::invalid("self-supervised verifier needs a completed trajectory"));
        }
        let early = traj.x_prediction_at_or_below(self.sigma_lo).ok_or_else(|| {
            Error::invalid(format!("trajectory has no x-prediction at or below sigma = {}", self.sigma_lo))
        })?;
        let a = self.features.apply(early)?;
        let b = self.features.apply(candidate.sample)?;
        finite_score(cosine_similarity(&a, &b)?, Verifier::id(self))
    }
}

/// Average ranks of one score column: rank 1 is the highest score, tied
/// scores share the mean of their positions.
pub fn average_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = mean_rank;
        }
        i = j;
    }
    ranks
}

/// Candidates x verifiers score table with per-column average ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    scores: Vec<Vec<f64>>,
    ranks: Vec<Vec<f64>>,
}

impl RankMatrix {
    pub fn new(scores: Vec<Vec<f64>>) -> Result<Self> {
        let n = scores.len();
        if n == 0 {
            return Err(Error::invalid("rank matrix needs at least one candidate"));
        }
        let v = scores[0].len();
        if v == 0 || scores.iter().any(|r| r.len() != v) {
            return Err(Error::invalid("rank matrix rows must share a positive width"));
        }
        if scores.iter().flatten().any(|s| !s.is_finite()) {
            return Err(Error::invalid("rank matrix contains a non-finite score"));
        }
        let mut ranks = vec![vec![0.0; v]; n];
        for col in 0..v {
            let column: Vec<f64> = scores.iter().map(|r| r[col]).collect();
            for (row, r) in ranks.iter_mut().zip(average_ranks(&column)) {
                row[col] = r;
            }
        }
        Ok(Self { scores, ranks })
    }

    pub fn scores(&self) -> &[Vec<f64>] {
        &self.scores
    }

    pub fn ranks(&self) -> &[Vec<f64>] {
        &self.ranks
    }

    /// Negative mean rank per candidate.
    pub fn ensemble_scores(&self) -> Vec<f64> {
        self.ranks
            .iter()
            .map(|r| -r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutcome {
    pub scores: Vec<f64>,
    pub winner: usize,
}

/// Unweighted average-rank aggregation; winner is the lowest mean rank, ties
/// to the lowest index.
pub fn ensemble_rank(scores: &[Vec<f64>]) -> Result<EnsembleOutcome> {
    let scores = RankMatrix::new(scores.to_vec())?.ensemble_scores();
    let winner = argmax(&scores);
    Ok(EnsembleOutcome { scores, winner })
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// How a search compares candidates.
///
/// `measure` records raw per-candidate numbers once; `combine` turns the
/// rows of one comparison set into comparable higher-is-better scores.
pub trait Judge: Send + Sync {
    fn id(&self) -> String;
    fn measure(&self, candidate: &Candidate<'_>) -> Result<Vec<f64>>;
    fn combine(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>>;

    fn needs_trajectory(&self) -> bool {
        false
    }
}

impl<V: Verifier + ?Sized> Judge for V {
    fn id(&self) -> String {
        Verifier::id(self).to_string()
    }

    fn measure(&self, candidate: &Candidate<'_>) -> Result<Vec<f64>> {
        Ok(vec![self.evaluate(candidate)?.value])
    }

    fn combine(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(rows.iter().map(|r| r[0]).collect())
    }

    fn needs_trajectory(&self) -> bool {
        Verifier::needs_trajectory(self)
    }
}

/// Rank-averaging ensemble over point-wise members.
pub struct Ensemble<'a> {
    members: Vec<Box<dyn Verifier + 'a>>,
}

impl<'a> Ensemble<'a> {
    pub fn new(members: Vec<Box<dyn Verifier + 'a>>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::invalid("ensemble needs at least one member"));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Box<dyn Verifier + 'a>] {
        &self.members
    }
}

impl Judge for Ensemble<'_> {
    fn id(&self) -> String {
        let names: Vec<&str> = self.members.iter().map(|m| Verifier::id(m.as_ref())).collect();
        format!("ensemble({})", names.join("+"))
    }

    fn measure(&self, candidate: &Candidate<'_>) -> Result<Vec<f64>> {
        self.members
            .iter()
            .map(|m| m.evaluate(candidate).map(|s| s.value))
            .collect()
    }

    fn combine(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(ensemble_rank(rows)?.scores)
    }

    fn needs_trajectory(&self) -> bool {
        self.members.iter().any(|m| Verifier::needs_trajectory(m.as_ref()))
    }
}

/// Streaming mean and covariance (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningGaussianStats {
    count: u64,
    mean: Vec<f64>,
    /// Row-major sum of outer products of deviations.
    m2: Vec<f64>,
}

impl RunningGaussianStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim * dim],
        }
    }

    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::invalid("no samples"))?;
        let mut s = Self::new(first.len());
        for x in samples {
            s.push(x)?;
        }
        Ok(s)
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        let d = self.dim();
        ensure_dim(x, d, "sample")?;
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        for i in 0..d {
            for j in 0..d {
                self.m2[i * d + j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
        Ok(())
    }

    /// Unbiased covariance; needs at least two samples.
    pub fn covariance(&self) -> Result<Vec<f64>> {
        if self.count < 2 {
            return Err(Error::invalid("covariance needs at least two samples"));
        }
        let denom = (self.count - 1) as f64;
        let d = self.dim();
        let mut c = self.m2.clone();
        // symmetrize accumulated rounding
        for i in 0..d {
            for j in 0..i {
                let v = 0.5 * (c[i * d + j] + c[j * d + i]);
                c[i * d + j] = v;
                c[j * d + i] = v;
            }
        }
        c.iter_mut().for_each(|v| *v /= denom);
        Ok(c)
    }

    pub fn stats(&self) -> Result<GaussianStats> {
        GaussianStats::new(self.mean.clone(), self.covariance()?)
    }
}

/// Returns `running` with `sample` merged in.
pub fn update_running_stats(running: &RunningGaussianStats, sample: &[f64]) -> Result<RunningGaussianStats> {
    let mut next = running.clone();
    next.push(sample)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrechetSelection {
    pub index: usize,
    /// Staged Fréchet distance per candidate.
    pub distances: Vec<f64>,
}

/// Picks the candidate whose inclusion keeps the running statistics closest
/// to `reference` in Fréchet distance. The caller commits the winner.
pub fn frechet_greedy_select(
    candidates: &[Vec<f64>],
    running: &RunningGaussianStats,
    reference: &GaussianStats,
) -> Result<FrechetSelection> {
    if candidates.is_empty() {
        return Err(Error::invalid("no candidates to select from"));
    }
    if running.count() < 1 {
        return Err(Error::invalid("running statistics must be seeded before greedy selection"));
    }
    let distances = candidates
        .iter()
        .map(|c| {
            let staged = update_running_stats(running, c)?.stats()?.regularized(COVARIANCE_EPS);
            frechet_distance(&staged, reference)
        })
        .collect::<Result<Vec<f64>>>()?;
    let negated: Vec<f64> = distances.iter().map(|d| -d).collect();
    Ok(FrechetSelection {
        index: argmax(&negated),
        distances,
    })
}
