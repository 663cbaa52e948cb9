//! Analytic score fields of Gaussian mixtures.
//!
//! A mixture `sum_k w_k N(mu_k, S_k)` mollified by `N(0, sigma^2 I)` is again
//! a mixture with covariances `S_k + sigma^2 I`. Each covariance is
//! eigendecomposed once at construction, so densities, scores, and posteriors
//! at any noise level cost `O(K d^2)` with no further factorization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{ensure_dim, ensure_finite, Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

/// Anything that can report `grad_x log p(x; sigma)`.
///
/// One call is one function evaluation (NFE).
pub trait ScoreField: Sync {
    fn dim(&self) -> usize;
    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>>;
}

impl<F: ScoreField + ?Sized> ScoreField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        (**self).score(x, sigma)
    }
}

/// One weighted Gaussian component, kept in eigenbasis form.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    weight: f64,
    log_weight: f64,
    mean: Vec<f64>,
    /// Row-major `d x d`.
    covariance: Vec<f64>,
    eigenvalues: Vec<f64>,
    /// Row `i` is the `i`-th eigenvector.
    eigenvectors: Vec<f64>,
}

impl Component {
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major covariance.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `log N(x; mu, S + sigma^2 I)` and, optionally, its gradient.
    fn log_normal(&self, x: &[f64], sigma: f64, grad: Option<&mut [f64]>) -> f64 {
        let d = self.mean.len();
        let var = sigma * sigma;
        let mut quad = 0.0;
        let mut log_det = 0.0;
        let mut coeffs = vec![0.0; d];
        for i in 0..d {
            let row = &self.eigenvectors[i * d..(i + 1) * d];
            let proj: f64 = row
                .iter()
                .zip(x.iter().zip(&self.mean))
                .map(|(q, (xi, mi))| q * (xi - mi))
                .sum();
            let lambda = self.eigenvalues[i] + var;
            quad += proj * proj / lambda;
            log_det += libm::log(lambda);
            coeffs[i] = proj / lambda;
        }
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..d {
                let row = &self.eigenvectors[i * d..(i + 1) * d];
                for (gj, q) in g.iter_mut().zip(row) {
                    *gj -= q * coeffs[i];
                }
            }
        }
        -0.5 * (d as f64 * libm::log(2.0 * PI) + log_det + quad)
    }
}

/// Weighted Gaussian mixture: the ground-truth data distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    dim: usize,
    components: Vec<Component>,
    data_std: f64,
}

impl MixtureModel {
    /// Builds a mixture from `(weight, mean, row-major covariance)` triples.
    pub fn new(dim: usize, parts: Vec<(f64, Vec<f64>, Vec<f64>)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("mixture dimension must be positive"));
        }
        if parts.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let total: f64 = parts.iter().map(|p| p.0).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
        }
        let mut components = Vec::with_capacity(parts.len());
        let mut max_eig: f64 = 0.0;
        for (k, (weight, mean, covariance)) in parts.into_iter().enumerate() {
            if !(weight > 0.0) || !weight.is_finite() {
                return Err(Error::invalid(format!("component {k} has weight {weight}")));
            }
            ensure_dim(&mean, dim, "component mean")?;
            ensure_finite(&mean, "component mean")?;
            if covariance.len() != dim * dim {
                return Err(Error::invalid(format!(
                    "component {k} covariance has {} entries, expected {}",
                    covariance.len(),
                    dim * dim
                )));
            }
            ensure_finite(&covariance, "component covariance")?;
            for i in 0..dim {
                for j in 0..i {
                    if (covariance[i * dim + j] - covariance[j * dim + i]).abs() > SYMMETRY_TOL {
                        return Err(Error::invalid(format!(
                            "component {k} covariance is not symmetric"
                        )));
                    }
                }
            }
            let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &covariance));
            if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
                return Err(Error::invalid(format!(
                    "component {k} covariance is not positive definite"
                )));
            }
            let eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            let mut eigenvectors = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    eigenvectors[i * dim + j] = eig.eigenvectors[(j, i)];
                }
            }
            max_eig = eigenvalues.iter().copied().fold(max_eig, f64::max);
            components.push(Component {
                weight,
                log_weight: libm::log(weight),
                mean,
                covariance,
                eigenvalues,
                eigenvectors,
            });
        }
        Ok(Self {
            dim,
            components,
            data_std: libm::sqrt(max_eig),
        })
    }

    /// Four unit-covariance components at `(+-4, +-4)` with equal weights.
    pub fn default_toy() -> Self {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let parts = [(4.0, 4.0), (-4.0, 4.0), (-4.0, -4.0), (4.0, -4.0)]
            .iter()
            .map(|&(a, b)| (0.25, vec![a, b], eye.clone()))
            .collect();
        Self::new(2, parts).expect("default toy mixture is valid")
    }

    /// Single isotropic Gaussian `N(mean, s^2 I)`.
    pub fn isotropic(mean: Vec<f64>, s: f64) -> Result<Self> {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = s * s;
        }
        Self::new(d, vec![(1.0, mean, cov)])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Largest component standard deviation.
    pub fn data_std(&self) -> f64 {
        self.data_std
    }

    /// Mixture mean `sum_k w_k mu_k`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            for (mi, ci) in m.iter_mut().zip(&c.mean) {
                *mi += c.weight * ci;
            }
        }
        m
    }

    /// Mixture covariance `sum_k w_k (S_k + mu_k mu_k^T) - m m^T`, row-major.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let m = self.mean();
        let mut cov = vec![0.0; d * d];
        for c in &self.components {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += c.weight * (c.covariance[i * d + j] + c.mean[i] * c.mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= m[i] * m[j];
            }
        }
        cov
    }

    /// One draw from the clean mixture.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = k;
                break;
            }
        }
        let c = &self.components[pick];
        let d = self.dim;
        let z = crate::rng::standard_normal(rng, d);
        let mut x = c.mean.clone();
        for i in 0..d {
            let scale = libm::sqrt(c.eigenvalues[i]) * z[i];
            for (xj, q) in x.iter_mut().zip(&c.eigenvectors[i * d..(i + 1) * d]) {
                *xj += scale * q;
            }
        }
        x
    }

    /// `n` draws from the substream keyed by `seed` and `tags`.
    pub fn sample_n(&self, n: usize, seed: u64, tags: &[u64]) -> Vec<Vec<f64>> {
        let mut rng = crate::rng::substream(seed, tags);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }

    fn check_point(&self, x: &[f64], sigma: f64) -> Result<()> {
        ensure_dim(x, self.dim, "x")?;
        ensure_finite(x, "x")?;
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(())
    }

    fn check_condition(&self, c: usize) -> Result<()> {
        if c < self.components.len() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "condition {c} out of range for {} components",
                self.components.len()
            )))
        }
    }

    /// Per-component `log w_k + log N(x; mu_k, S_k + sigma^2 I)`, with
    /// gradients of the Gaussian terms when requested.
    fn joint_terms(&self, x: &[f64], sigma: f64, grads: Option<&mut Vec<f64>>) -> Vec<f64> {
        let d = self.dim;
        match grads {
            Some(g) => {
                g.clear();
                g.resize(d * self.components.len(), 0.0);
                self.components
                    .iter()
                    .zip(g.chunks_exact_mut(d))
                    .map(|(c, gk)| c.log_weight + c.log_normal(x, sigma, Some(gk)))
                    .collect()
            }
            None => self
                .components
                .iter()
                .map(|c| c.log_weight + c.log_normal(x, sigma, None))
                .collect(),
        }
    }

    /// `log p(x; sigma)` of the mollified mixture.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        self.check_point(x, sigma)?;
        Ok(log_sum_exp(&self.joint_terms(x, sigma, None)))
    }

    /// Bayes posterior `p(c | x; sigma)` over components.
    pub fn posterior(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_point(x, sigma)?;
        Ok(softmax(&self.joint_terms(x, sigma, None)))
    }

    /// Unconditional score of the mollified mixture.
    pub fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.check_point(x, sigma)?;
        Ok(self.mixture_score(x, sigma))
    }

    fn mixture_score(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let d = self.dim;
        let mut grads = Vec::new();
        let post = softmax(&self.joint_terms(x, sigma, Some(&mut grads)));
        let mut s = vec![0.0; d];
        for (p, gk) in post.iter().zip(grads.chunks_exact(d)) {
            for (si, gi) in s.iter_mut().zip(gk) {
                *si += p * gi;
            }
        }
        s
    }

    fn component_score(&self, c: usize, x: &[f64], sigma: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        self.components[c].log_normal(x, sigma, Some(&mut g));
        g
    }

    fn component_log_density(&self, c: usize, x: &[f64], sigma: f64) -> f64 {
        self.components[c].log_normal(x, sigma, None)
    }
}

/// `log sum_i exp(v_i)` with max subtraction.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    let mut p: Vec<f64> = values.iter().map(|v| libm::exp(v - lse)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// A mixture optionally conditioned on a component, with classifier-free
/// guidance weight `w`: `s_uncond + w (s_cond - s_uncond)`.
#[derive(Debug, Clone, Copy)]
pub struct ConditionedField<'a> {
    model: &'a MixtureModel,
    condition: Option<usize>,
    guidance_weight: f64,
}

impl<'a> ConditionedField<'a> {
    pub fn unconditional(model: &'a MixtureModel) -> Self {
        Self {
            model,
            condition: None,
            guidance_weight: 1.0,
        }
    }

    pub fn conditional(model: &'a MixtureModel, condition: usize, guidance_weight: f64) -> Result<Self> {
        model.check_condition(condition)?;
        if !(guidance_weight >= 0.0) || !guidance_weight.is_finite() {
            return Err(Error::invalid(format!(
                "guidance weight must be finite and >= 0, got {guidance_weight}"
            )));
        }
        Ok(Self {
            model,
            condition: Some(condition),
            guidance_weight,
        })
    }

    pub fn model(&self) -> &'a MixtureModel {
        self.model
    }

    pub fn condition(&self) -> Option<usize> {
        self.condition
    }

    pub fn guidance_weight(&self) -> f64 {
        self.guidance_weight
    }

    /// Log-density whose gradient is [`ScoreField::score`]. For guided fields
    /// with `w != 1` this is the unnormalized `(1-w) log p + w log p_c`.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        self.model.check_point(x, sigma)?;
        match self.condition {
            None => self.model.log_density(x, sigma),
            Some(c) if self.guidance_weight == 1.0 => Ok(self.model.component_log_density(c, x, sigma)),
            Some(c) => {
                let w = self.guidance_weight;
                let lu = self.model.log_density(x, sigma)?;
                let lc = self.model.component_log_density(c, x, sigma);
                Ok(lu + w * (lc - lu))
            }
        }
    }
}

impl ScoreField for ConditionedField<'_> {
    fn dim(&self) -> usize {
        self.model.dim
    }

    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.model.check_point(x, sigma)?;
        Ok(match self.condition {
            None => self.model.mixture_score(x, sigma),
            Some(c) if self.guidance_weight == 1.0 => self.model.component_score(c, x, sigma),
            Some(c) => {
                let w = self.guidance_weight;
                let su = self.model.mixture_score(x, sigma);
                let sc = self.model.component_score(c, x, sigma);
                su.iter().zip(&sc).map(|(u, c)| u + w * (c - u)).collect()
            }
        })
    }
}

impl ScoreField for MixtureModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        MixtureModel::score(self, x, sigma)
    }
}

/// Tweedie estimate `x + sigma^2 score(x, sigma)`; returns `x` at `sigma = 0`
/// without evaluating the field.
pub fn x_prediction<F: ScoreField + ?Sized>(field: &F, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if sigma == 0.0 {
        ensure_dim(x, field.dim(), "x")?;
        ensure_finite(x, "x")?;
        return Ok(x.to_vec());
    }
    let s = field.score(x, sigma)?;
    let v = sigma * sigma;
    Ok(x.iter().zip(&s).map(|(xi, si)| xi + v * si).collect())
}

/// Counts every score evaluation that passes through it.
#[derive(Debug)]
pub struct CountingField<F> {
    inner: F,
    calls: AtomicU64,
}

impl<F: ScoreField> CountingField<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }
}

impl<F: ScoreField> ScoreField for CountingField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.score(x, sigma)
    }
}
