//! Population metrics: Fréchet distance between Gaussians, an Inception-Score
//! analog over exact posteriors, k-NN precision/recall, and per-axis variance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scorefield::MixtureModel;

/// Diagonal regularizer added to estimated covariances.
pub const COVARIANCE_EPS: f64 = 1e-6;
/// Floor for k-NN radii of duplicated points.
pub const RADIUS_FLOOR: f64 = 1e-12;
pub const DEFAULT_K: usize = 3;

/// Mean and row-major covariance of a Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.len() != d * d {
            return Err(Error::invalid(format!(
                "covariance has {} entries for a {d}-dimensional mean",
                covariance.len()
            )));
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Exact moments of a mixture.
    pub fn of_mixture(model: &MixtureModel) -> Self {
        Self {
            mean: model.mean(),
            covariance: model.covariance(),
        }
    }

    /// Copy with `eps I` added to the covariance.
    pub fn regularized(&self, eps: f64) -> Self {
        let d = self.dim();
        let mut out = self.clone();
        for i in 0..d {
            out.covariance[i * d + i] += eps;
        }
        out
    }
}

fn check_samples(samples: &[Vec<f64>], min: usize) -> Result<usize> {
    if samples.len() < min {
        return Err(Error::invalid(format!(
            "need at least {min} samples, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(Error::invalid("samples have inconsistent dimensions"));
    }
    Ok(d)
}

/// Unbiased sample mean and covariance.
pub fn estimate_stats(samples: &[Vec<f64>]) -> Result<GaussianStats> {
    let d = check_samples(samples, 2)?;
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    for s in samples {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += di * (s[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n - 1.0);
    Ok(GaussianStats { mean, covariance: cov })
}

/// Per-coordinate unbiased variance.
pub fn diversity_variance(samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    let stats = estimate_stats(samples)?;
    let d = stats.dim();
    Ok((0..d).map(|i| stats.covariance[i * d + i]).collect())
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("matrix square root did not converge".into()))?;
    let roots = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Squared Fréchet distance `|mu_a - mu_b|^2 + tr(A + B - 2 (A B)^{1/2})`.
///
/// The trace of `(A B)^{1/2}` is taken from the eigenvalues of the symmetric
/// product `A^{1/2} B A^{1/2}`, which shares its spectrum with `A B`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d || a.covariance.len() != d * d || b.covariance.len() != d * d {
        return Err(Error::invalid("Fréchet distance between stats of different dimension"));
    }
    if a.mean.iter().chain(&a.covariance).chain(&b.mean).chain(&b.covariance).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite Gaussian statistics"));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let ca = DMatrix::from_row_slice(d, d, &a.covariance);
    let cb = DMatrix::from_row_slice(d, d, &b.covariance);
    let root_a = symmetric_sqrt(&ca)?;
    let inner = &root_a * &cb * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(inner, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("covariance product eigensolve did not converge".into()))?;
    let tr_root: f64 = eig.eigenvalues.iter().map(|l| libm::sqrt(l.max(0.0))).sum();
    let value = mean_term + ca.trace() + cb.trace() - 2.0 * tr_root;
    if !value.is_finite() {
        return Err(Error::Numerical("Fréchet distance is not finite".into()));
    }
    Ok(value)
}

/// `exp(mean_x KL(p(c|x) || p_bar))` over exact posteriors at `sigma = 0`.
pub fn is_analog(model: &MixtureModel, samples: &[Vec<f64>]) -> Result<f64> {
    check_samples(samples, 2)?;
    let posts = samples
        .iter()
        .map(|s| model.posterior(s, 0.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(is_from_posteriors(&posts))
}

/// Inception-Score formula over precomputed class-probability rows.
pub fn is_from_posteriors(posts: &[Vec<f64>]) -> f64 {
    let c = posts[0].len();
    let n = posts.len() as f64;
    let mut marginal = vec![0.0; c];
    for p in posts {
        for (m, v) in marginal.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mean_kl: f64 = posts
        .iter()
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .filter(|(pi, _)| **pi > 0.0)
                .map(|(pi, mi)| pi * (libm::log(*pi) - libm::log(*mi)))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    libm::exp(mean_kl)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance from each point to its `k`-th nearest other point.
fn knn_sq_radii(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    let floor = RADIUS_FLOOR * RADIUS_FLOOR;
    let mut dists = Vec::with_capacity(points.len());
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            dists.clear();
            dists.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| sq_dist(p, q)),
            );
            let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
            kth.max(floor)
        })
        .collect()
}

fn coverage(manifold: &[Vec<f64>], radii: &[f64], queries: &[Vec<f64>]) -> f64 {
    let inside = queries
        .iter()
        .filter(|q| manifold.iter().zip(radii).any(|(m, r)| sq_dist(q, m) <= *r))
        .count();
    inside as f64 / queries.len() as f64
}

/// k-NN manifold precision and recall.
///
/// Precision is the fraction of generated points inside some real point's
/// k-NN ball; recall swaps the roles.
pub fn knn_precision_recall(real: &[Vec<f64>], generated: &[Vec<f64>], k: usize) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let d = check_samples(real, k + 1)?;
    if check_samples(generated, k + 1)? != d {
        return Err(Error::invalid("real and generated sets differ in dimension"));
    }
    let real_radii = knn_sq_radii(real, k);
    let gen_radii = knn_sq_radii(generated, k);
    Ok((coverage(real, &real_radii, generated), coverage(generated, &gen_radii, real)))
}

/// Population-level evaluation of one generated set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frechet: f64,
    pub is_analog: f64,
    pub precision: f64,
    pub recall: f64,
    pub variance: Vec<f64>,
}

impl EvalReport {
    /// Compares `generated` with the exact mixture moments (Fréchet) and with a
    /// reference draw `real` (precision/recall).
    pub fn evaluate(model: &MixtureModel, real: &[Vec<f64>], generated: &[Vec<f64>], k: usize) -> Result<Self> {
        let stats = estimate_stats(generated)?.regularized(COVARIANCE_EPS);
        let frechet = frechet_distance(&stats, &GaussianStats::of_mixture(model))?;
        let (precision, recall) = knn_precision_recall(real, generated, k)?;
        Ok(Self {
            frechet,
            is_analog: is_analog(model, generated)?,
            precision,
            recall,
            variance: diversity_variance(generated)?,
        })
    }
}
