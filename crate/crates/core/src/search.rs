//! Search over sampling noise guided by a verifier.
//!
//! Every algorithm maps a seed to a result through per-candidate random
//! substreams and charges each score evaluation to the shared [`NfeLedger`].
//! The returned [`SearchResult::ledger`] holds this search's own cost.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{gaussian, standard_normal, substream, tag};
use crate::sampler::{
    forward_noise, heun_cost, heun_solve, heun_steps_for_nfe, partial_cost, partial_solve, Charge, LedgerSnapshot,
    NfeLedger, SamplerSettings, Trajectory,
};
use crate::scorefield::{x_prediction, ScoreField};
use crate::verifier::{argmax, Candidate, Judge, VerifierScore};

/// NFE budget of a search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBudget {
    /// Denoising budget for turning one candidate noise into a scoreable
    /// sample. Heun solves use the largest step count whose cost fits.
    pub nfe_per_iter: u64,
    pub max_search_nfe: u64,
    pub final_denoise_steps: usize,
}

impl SearchBudget {
    pub fn new(nfe_per_iter: u64, max_search_nfe: u64, final_denoise_steps: usize) -> Result<Self> {
        if nfe_per_iter == 0 || max_search_nfe == 0 || final_denoise_steps == 0 {
            return Err(Error::invalid("search budget entries must all be positive"));
        }
        Ok(Self {
            nfe_per_iter,
            max_search_nfe,
            final_denoise_steps,
        })
    }

    pub fn search_steps(&self) -> usize {
        heun_steps_for_nfe(self.nfe_per_iter)
    }

    /// NFEs actually spent simulating one candidate.
    pub fn candidate_cost(&self) -> u64 {
        heun_cost(self.search_steps())
    }

    pub fn final_cost(&self) -> u64 {
        heun_cost(self.final_denoise_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroOrderConfig {
    pub iterations: usize,
    pub neighbors: usize,
    pub lambda: f64,
}

impl ZeroOrderConfig {
    pub fn new(iterations: usize, neighbors: usize, lambda: f64) -> Result<Self> {
        if iterations == 0 || neighbors == 0 {
            return Err(Error::invalid("zero-order search needs positive iterations and neighbors"));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::invalid(format!("lambda must lie in (0, 1], got {lambda}")));
        }
        Ok(Self {
            iterations,
            neighbors,
            lambda,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstOrderConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Target noise norm in units of `sigma_max`; `None` means `sqrt(d)`.
    pub norm_target: Option<f64>,
    /// Forward-difference step in noise units.
    pub fd_step: f64,
}

impl FirstOrderConfig {
    pub fn new(iterations: usize, learning_rate: f64) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::invalid("first-order search needs at least one iteration"));
        }
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {learning_rate}")));
        }
        Ok(Self {
            iterations,
            learning_rate,
            norm_target: None,
            fd_step: 1e-2,
        })
    }

    pub fn with_norm_target(mut self, target: f64) -> Self {
        self.norm_target = Some(target);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathsConfig {
    pub initial_paths: usize,
    pub width: usize,
    pub search_start: f64,
    pub forward_delta: f64,
    pub backward_delta: f64,
    /// Heun steps per backward segment.
    pub path_length: usize,
}

impl PathsConfig {
    pub fn new(
        initial_paths: usize,
        width: usize,
        search_start: f64,
        forward_delta: f64,
        backward_delta: f64,
        path_length: usize,
    ) -> Result<Self> {
        if initial_paths == 0 || width == 0 || path_length == 0 {
            return Err(Error::invalid("paths, width, and path length must be positive"));
        }
        if !(forward_delta > 0.0) || !(backward_delta > forward_delta) || !backward_delta.is_finite() {
            return Err(Error::invalid(format!(
                "need backward_delta > forward_delta > 0, got {backward_delta} and {forward_delta}"
            )));
        }
        if !(search_start > 0.0) || !search_start.is_finite() {
            return Err(Error::invalid(format!("search start must be positive, got {search_start}")));
        }
        Ok(Self {
            initial_paths,
            width,
            search_start,
            forward_delta,
            backward_delta,
            path_length,
        })
    }

    /// Start 0.11, forward 0.78, backward 0.81, all as fractions of `sigma_max`.
    pub fn scaled_default(initial_paths: usize, width: usize, path_length: usize, sigma_max: f64) -> Result<Self> {
        Self::new(
            initial_paths,
            width,
            0.11 * sigma_max,
            0.78 * sigma_max,
            0.81 * sigma_max,
            path_length,
        )
    }

    /// `ceil(search_start / (backward_delta - forward_delta))`, snapping
    /// ratios within rounding error of an integer.
    pub fn rounds(&self) -> usize {
        let ratio = self.search_start / (self.backward_delta - self.forward_delta);
        let nearest = libm::round(ratio);
        let r = if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
            nearest
        } else {
            libm::ceil(ratio)
        };
        (r as usize).max(1)
    }

    /// Noise level after round `r` (1-based); the last round ends at zero.
    pub fn level_after_round(&self, r: usize) -> f64 {
        if r >= self.rounds() {
            0.0
        } else {
            self.search_start - r as f64 * (self.backward_delta - self.forward_delta)
        }
    }
}

/// Selection record for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub iteration: usize,
    pub scores: Vec<f64>,
    /// Chosen candidate indices, best first.
    pub chosen: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Audit {
    pub entries: Vec<AuditEntry>,
    /// Candidate simulations charged to the search, including the extra
    /// gradient probes of first-order search.
    pub simulations: u64,
}

impl Audit {
    fn record(&mut self, iteration: usize, scores: Vec<f64>, chosen: Vec<usize>) {
        self.entries.push(AuditEntry {
            iteration,
            scores,
            chosen,
        });
    }

    /// Best score of each entry, in order.
    pub fn best_per_iteration(&self) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| e.scores[e.chosen[0]])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStatus {
    Completed,
    /// First-order search saw a zero gradient three times in a row.
    Converged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_noise: Vec<f64>,
    pub best_sample: Vec<f64>,
    /// Winning score in the last audit entry.
    pub best_score: VerifierScore,
    /// Raw verifier measurements of the final sample.
    pub final_measure: Vec<f64>,
    pub final_trajectory: Trajectory,
    pub ledger: LedgerSnapshot,
    pub audit: Audit,
    pub status: SearchStatus,
}

/// Everything a search run needs besides its configuration and seed.
#[derive(Clone, Copy)]
pub struct Search<'a> {
    pub field: &'a (dyn ScoreField + 'a),
    pub judge: &'a (dyn Judge + 'a),
    pub budget: SearchBudget,
    pub sampler: SamplerSettings,
    pub ledger: &'a NfeLedger,
}

struct Spend {
    spent: u64,
    limit: u64,
}

impl Spend {
    fn reserve(&mut self, nfe: u64, audit: &Audit) -> Result<()> {
        if self.spent + nfe > self.limit {
            return Err(Error::BudgetExhausted {
                spent: self.spent,
                needed: nfe,
                limit: self.limit,
                audit: audit.clone(),
            });
        }
        self.spent += nfe;
        Ok(())
    }
}

impl<'a> Search<'a> {
    pub fn new(
        field: &'a (dyn ScoreField + 'a),
        judge: &'a (dyn Judge + 'a),
        budget: SearchBudget,
        sampler: SamplerSettings,
        ledger: &'a NfeLedger,
    ) -> Self {
        Self {
            field,
            judge,
            budget,
            sampler,
            ledger,
        }
    }

    fn spend(&self) -> Spend {
        Spend {
            spent: 0,
            limit: self.budget.max_search_nfe,
        }
    }

    fn fresh_noise(&self, seed: u64, tags: &[u64]) -> Vec<f64> {
        gaussian(&mut substream(seed, tags), self.field.dim(), self.sampler.sigma_max)
    }

    /// Simulates one candidate on the search schedule.
    fn simulate(&self, noise: &[f64], spend: &mut Spend, audit: &mut Audit) -> Result<Trajectory> {
        spend.reserve(self.budget.candidate_cost(), audit)?;
        audit.simulations += 1;
        let schedule = self.sampler.schedule(self.budget.search_steps())?;
        heun_solve(self.field, noise, &schedule, self.ledger, Charge::Search)
    }

    fn measure(&self, traj: &Trajectory) -> Result<Vec<f64>> {
        self.judge.measure(&Candidate::with_trajectory(traj))
    }

    fn finish(
        &self,
        best_noise: Vec<f64>,
        best_score: f64,
        spend: Spend,
        audit: Audit,
        status: SearchStatus,
    ) -> Result<SearchResult> {
        let schedule = self.sampler.schedule(self.budget.final_denoise_steps)?;
        let traj = heun_solve(self.field, &best_noise, &schedule, self.ledger, Charge::Denoise)?;
        let final_measure = self.measure(&traj)?;
        Ok(SearchResult {
            best_noise,
            best_sample: traj.final_state().to_vec(),
            best_score: self.score(best_score),
            final_measure,
            final_trajectory: traj,
            ledger: LedgerSnapshot {
                search_nfe: spend.spent,
                denoise_nfe: self.budget.final_cost(),
            },
            audit,
            status,
        })
    }

    fn score(&self, value: f64) -> VerifierScore {
        VerifierScore {
            value,
            verifier_id: self.judge.id(),
        }
    }

    /// Denoises one fresh noise with no search at all.
    pub fn no_search(&self, seed: u64) -> Result<SearchResult> {
        let noise = self.fresh_noise(seed, &[tag::BASELINE]);
        let schedule = self.sampler.schedule(self.budget.final_denoise_steps)?;
        let traj = heun_solve(self.field, &noise, &schedule, self.ledger, Charge::Denoise)?;
        let row = self.measure(&traj)?;
        let value = self.judge.combine(core::slice::from_ref(&row))?[0];
        Ok(SearchResult {
            best_noise: noise,
            best_sample: traj.final_state().to_vec(),
            best_score: self.score(value),
            final_measure: row,
            final_trajectory: traj,
            ledger: LedgerSnapshot {
                search_nfe: 0,
                denoise_nfe: self.budget.final_cost(),
            },
            audit: Audit::default(),
            status: SearchStatus::Completed,
        })
    }

    /// Best-of-N over i.i.d. `N(0, sigma_max^2 I)` noises.
    ///
    /// Candidate `i` always draws from the same substream, so a run with
    /// more candidates extends the candidate set of a smaller one.
    pub fn random_search(&self, n_candidates: usize, seed: u64) -> Result<SearchResult> {
        if n_candidates == 0 {
            return Err(Error::invalid("random search needs at least one candidate"));
        }
        let mut spend = self.spend();
        let mut audit = Audit::default();
        let mut noises = Vec::with_capacity(n_candidates);
        let mut rows = Vec::with_capacity(n_candidates);
        for i in 0..n_candidates {
            let noise = self.fresh_noise(seed, &[tag::RANDOM_SEARCH, i as u64]);
            let traj = match self.simulate(&noise, &mut spend, &mut audit) {
                Ok(t) => t,
                Err(Error::BudgetExhausted { spent, needed, limit, .. }) => {
                    let scores = self.judge.combine(&rows).unwrap_or_default();
                    let chosen = if scores.is_empty() { vec![] } else { vec![argmax(&scores)] };
                    audit.record(0, scores, chosen);
                    return Err(Error::BudgetExhausted { spent, needed, limit, audit });
                }
                Err(e) => return Err(e),
            };
            rows.push(self.measure(&traj)?);
            noises.push(noise);
        }
        let scores = self.judge.combine(&rows)?;
        let best = argmax(&scores);
        let best_score = scores[best];
        audit.record(0, scores, vec![best]);
        let noise = noises.swap_remove(best);
        self.finish(noise, best_score, spend, audit, SearchStatus::Completed)
    }

    /// Iterative neighborhood search around a pivot noise.
    ///
    /// Neighbors are `lambda * pivot + sqrt(1 - lambda^2) * sigma_max * eps`.
    /// The pivot competes with its neighbors and wins ties.
    pub fn zero_order_search(&self, config: &ZeroOrderConfig, seed: u64) -> Result<SearchResult> {
        let mut spend = self.spend();
        let mut audit = Audit::default();
        let d = self.field.dim();
        let mut pivot = self.fresh_noise(seed, &[tag::ZERO_ORDER_PIVOT]);
        let traj = self.simulate(&pivot, &mut spend, &mut audit)?;
        let mut pivot_row = self.measure(&traj)?;
        let first = self.judge.combine(core::slice::from_ref(&pivot_row))?;
        let mut best_score = first[0];
        audit.record(0, first, vec![0]);

        let mix = libm::sqrt(1.0 - config.lambda * config.lambda) * self.sampler.sigma_max;
        for k in 1..=config.iterations {
            let mut noises = vec![pivot.clone()];
            let mut rows = vec![pivot_row.clone()];
            for j in 0..config.neighbors {
                let eps = standard_normal(
                    &mut substream(seed, &[tag::ZERO_ORDER_NEIGHBOR, k as u64, j as u64]),
                    d,
                );
                let y: Vec<f64> = pivot
                    .iter()
                    .zip(&eps)
                    .map(|(p, e)| config.lambda * p + mix * e)
                    .collect();
                let traj = self.simulate(&y, &mut spend, &mut audit)?;
                rows.push(self.measure(&traj)?);
                noises.push(y);
            }
            let scores = self.judge.combine(&rows)?;
            let best = argmax(&scores);
            best_score = scores[best];
            audit.record(k, scores, vec![best]);
            pivot_row = rows.swap_remove(best);
            pivot = noises.swap_remove(best);
        }
        self.finish(pivot, best_score, spend, audit, SearchStatus::Completed)
    }

    /// Gradient ascent on the verifier score over the noise, with the noise
    /// projected back to a fixed norm after every step.
    ///
    /// Gradients are forward differences over the `d` noise coordinates, so
    /// each iteration simulates `d + 1` noises.
    pub fn first_order_search(&self, config: &FirstOrderConfig, seed: u64) -> Result<SearchResult> {
        let mut spend = self.spend();
        let mut audit = Audit::default();
        let d = self.field.dim();
        let radius = config.norm_target.unwrap_or_else(|| libm::sqrt(d as f64)) * self.sampler.sigma_max;
        let mut noise = rescale(&self.fresh_noise(seed, &[tag::FIRST_ORDER]), radius)?;
        let h = config.fd_step;
        let mut zero_streak = 0;
        let mut status = SearchStatus::Completed;
        let mut last_score = None;

        for k in 0..config.iterations {
            let value = self.pointwise(&noise, &mut spend, &mut audit)?;
            audit.record(k, vec![value], vec![0]);
            let mut grad = vec![0.0; d];
            for i in 0..d {
                let mut probe = noise.clone();
                probe[i] += h;
                grad[i] = (self.pointwise(&probe, &mut spend, &mut audit)? - value) / h;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient at iteration {k}")));
            }
            if grad.iter().all(|g| *g == 0.0) {
                zero_streak += 1;
                if zero_streak == 3 {
                    status = SearchStatus::Converged;
                    last_score = Some(value);
                    break;
                }
            } else {
                zero_streak = 0;
            }
            let stepped: Vec<f64> = noise
                .iter()
                .zip(&grad)
                .map(|(n, g)| n + config.learning_rate * g)
                .collect();
            noise = rescale(&stepped, radius)?;
        }
        let best_score = match last_score {
            Some(v) => v,
            None => {
                let value = self.pointwise(&noise, &mut spend, &mut audit)?;
                audit.record(config.iterations, vec![value], vec![0]);
                value
            }
        };
        self.finish(noise, best_score, spend, audit, status)
    }

    fn pointwise(&self, noise: &[f64], spend: &mut Spend, audit: &mut Audit) -> Result<f64> {
        let traj = self.simulate(noise, spend, audit)?;
        let row = self.measure(&traj)?;
        Ok(self.judge.combine(core::slice::from_ref(&row))?[0])
    }

    /// Branching search along sampling trajectories.
    ///
    /// `N` paths are denoised to `search_start`. Each round re-noises every
    /// survivor `M` times by `forward_delta`, denoises each copy by
    /// `backward_delta` with `path_length` Heun steps, scores the copy's
    /// x-prediction (one extra NFE), and keeps the global top `N`. The round
    /// whose backward step would cross zero ends at zero instead, after which
    /// the best of the `N` clean survivors wins. No final re-generation
    /// happens: the winner is already a clean sample.
    pub fn search_over_paths(&self, config: &PathsConfig, seed: u64) -> Result<SearchResult> {
        if !(config.search_start < self.sampler.sigma_max) {
            return Err(Error::invalid(format!(
                "search start {} must lie below sigma_max {}",
                config.search_start, self.sampler.sigma_max
            )));
        }
        if self.judge.needs_trajectory() && config.rounds() > 1 {
            return Err(Error::invalid(format!(
                "verifier {} needs a finished trajectory, which intermediate path rounds lack",
                self.judge.id()
            )));
        }
        let mut spend = self.spend();
        let mut audit = Audit::default();
        let n = config.initial_paths;
        let init_steps = self.budget.search_steps();

        struct Path {
            root: usize,
            x: Vec<f64>,
            traj: Option<Trajectory>,
            row: Vec<f64>,
        }

        let mut roots = Vec::with_capacity(n);
        let mut paths = Vec::with_capacity(n);
        for i in 0..n {
            let noise = self.fresh_noise(seed, &[tag::PATHS_INIT, i as u64]);
            spend.reserve(partial_cost(config.search_start, init_steps), &audit)?;
            audit.simulations += 1;
            let traj = partial_solve(
                self.field,
                &noise,
                self.sampler.sigma_max,
                config.search_start,
                init_steps,
                &self.sampler,
                self.ledger,
                Charge::Search,
            )?;
            paths.push(Path {
                root: i,
                x: traj.into_final(),
                traj: None,
                row: Vec::new(),
            });
            roots.push(noise);
        }

        let rounds = config.rounds();
        let mut sigma = config.search_start;
        for r in 1..=rounds {
            let target = config.level_after_round(r);
            let high = sigma + config.forward_delta;
            let mut copies = Vec::with_capacity(paths.len() * config.width);
            for (i, p) in paths.iter().enumerate() {
                for j in 0..config.width {
                    let mut rng = substream(seed, &[tag::PATHS_FORWARD, r as u64, i as u64, j as u64]);
                    let noised = forward_noise(&p.x, sigma, high, &mut rng)?;
                    let extra = u64::from(target > 0.0);
                    spend.reserve(partial_cost(target, config.path_length) + extra, &audit)?;
                    audit.simulations += 1;
                    let traj = partial_solve(
                        self.field,
                        &noised,
                        high,
                        target,
                        config.path_length,
                        &self.sampler,
                        self.ledger,
                        Charge::Search,
                    )?;
                    let (x, traj, row) = if target > 0.0 {
                        let x = traj.into_final();
                        let x0 = x_prediction(self.field, &x, target)?;
                        self.ledger.charge(Charge::Search, 1);
                        let row = self.judge.measure(&Candidate::new(&x0))?;
                        (x, None, row)
                    } else {
                        let row = self.measure(&traj)?;
                        (traj.final_state().to_vec(), Some(traj), row)
                    };
                    copies.push(Path {
                        root: p.root,
                        x,
                        traj,
                        row,
                    });
                }
            }
            let rows: Vec<Vec<f64>> = copies.iter().map(|c| c.row.clone()).collect();
            let scores = self.judge.combine(&rows)?;
            let keep = top_k(&scores, n);
            audit.record(r, scores, keep.clone());
            let mut slots: Vec<Option<Path>> = copies.into_iter().map(Some).collect();
            paths = keep
                .iter()
                .map(|&i| slots[i].take().expect("top-k indices are distinct"))
                .collect();
            sigma = target;
        }

        let rows: Vec<Vec<f64>> = paths.iter().map(|p| p.row.clone()).collect();
        let scores = self.judge.combine(&rows)?;
        let best = argmax(&scores);
        let best_score = scores[best];
        audit.record(rounds + 1, scores, vec![best]);
        let winner = paths.swap_remove(best);
        let traj = winner.traj.expect("final round ends at sigma = 0");
        Ok(SearchResult {
            best_noise: roots.swap_remove(winner.root),
            best_sample: winner.x,
            best_score: self.score(best_score),
            final_measure: winner.row,
            final_trajectory: traj,
            ledger: LedgerSnapshot {
                search_nfe: spend.spent,
                denoise_nfe: 0,
            },
            audit,
            status: SearchStatus::Completed,
        })
    }
}

/// Indices of the `k` largest scores, best first, ties to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

fn rescale(v: &[f64], radius: f64) -> Result<Vec<f64>> {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Numerical(format!("cannot rescale a vector of norm {norm}")));
    }
    Ok(v.iter().map(|x| x * radius / norm).collect())
}

/// Closed-form search cost of each algorithm.
pub mod cost {
    use super::*;

    pub fn random_search(budget: &SearchBudget, n_candidates: usize) -> u64 {
        n_candidates as u64 * budget.candidate_cost()
    }

    pub fn zero_order(budget: &SearchBudget, config: &ZeroOrderConfig) -> u64 {
        (config.iterations as u64 * config.neighbors as u64 + 1) * budget.candidate_cost()
    }

    /// Cost when the search runs all iterations.
    pub fn first_order(budget: &SearchBudget, config: &FirstOrderConfig, dim: usize) -> u64 {
        (config.iterations as u64 * (dim as u64 + 1) + 1) * budget.candidate_cost()
    }

    pub fn paths(budget: &SearchBudget, config: &PathsConfig) -> u64 {
        let n = config.initial_paths as u64;
        let m = config.width as u64;
        let l = config.path_length;
        let rounds = config.rounds() as u64;
        n * partial_cost(config.search_start, budget.search_steps())
            + (rounds - 1) * n * m * (partial_cost(1.0, l) + 1)
            + n * m * partial_cost(0.0, l)
    }
}
