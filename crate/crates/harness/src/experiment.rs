//! Sweep execution.
//!
//! One row is one (sweep point, seed) pair: a set of `samples_per_point`
//! searched samples, sample `j` conditioned on component `j mod K`, scored
//! against a reference set drawn from the mixture itself.

use noisesearch_core::metrics::{EvalReport, GaussianStats};
use noisesearch_core::rng::{derive_seed, gaussian, substream, tag};
use noisesearch_core::sampler::heun_solve;
use noisesearch_core::search::SearchResult;
use noisesearch_core::verifier::{
    frechet_greedy_select, ClassConfidence, Judge, Likelihood, SelfSupervised, Verifier,
};
use noisesearch_core::{
    Charge, ConditionedField, CountingField, Ensemble, LedgerSnapshot, MixtureModel, NfeLedger,
    RunningGaussianStats, Search, SearchBudget,
};
use rayon::prelude::*;

use crate::config::{Plan, PointAlgorithm, VerifierKind};
use crate::error::{HarnessError, Result};
use crate::report::Record;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; 0 lets the pool decide.
    pub threads: usize,
    pub seed_offset: u64,
}

/// What a row runs: plain denoising or a search at one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub enum RowTask {
    Baseline,
    Point(PointAlgorithm),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    /// Sweep point, `None` for baseline rows.
    pub point: Option<u64>,
    pub record: Record,
    pub error: Option<String>,
    /// Full search result of the row's first sample.
    pub first: Option<SearchResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<Row>,
    pub seeds: Vec<u64>,
    pub dim: usize,
}

impl SweepReport {
    pub fn records(&self) -> Vec<Record> {
        self.rows.iter().map(|r| r.record.clone()).collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}

/// Builds the judge for a sample conditioned on component `condition`.
pub fn build_judge<'a>(kind: &VerifierKind, model: &'a MixtureModel, condition: usize) -> Result<Box<dyn Judge + 'a>> {
    Ok(match kind {
        VerifierKind::Ensemble(members) => {
            let boxed = members
                .iter()
                .map(|m| build_verifier(m, model, condition))
                .collect::<Result<Vec<_>>>()?;
            Box::new(Ensemble::new(boxed)?)
        }
        other => Box::new(build_verifier(other, model, condition)?),
    })
}

fn build_verifier<'a>(kind: &VerifierKind, model: &'a MixtureModel, condition: usize) -> Result<Box<dyn Verifier + 'a>> {
    Ok(match kind {
        VerifierKind::ClassConfidence => Box::new(ClassConfidence::new(model, condition)?),
        VerifierKind::Likelihood | VerifierKind::FrechetGreedy { .. } => Box::new(Likelihood::new(model)),
        VerifierKind::SelfSupervised { feature_seed } => Box::new(SelfSupervised::for_model(model, *feature_seed)),
        VerifierKind::Ensemble(_) => {
            return Err(HarnessError::config("verifier", "nested ensembles are not supported"))
        }
    })
}

struct SampleOutcome {
    sample: Vec<f64>,
    score: f64,
    ledger: LedgerSnapshot,
    result: SearchResult,
}

fn sample_seed(base: u64, j: usize) -> u64 {
    derive_seed(base, &[tag::SAMPLE, j as u64])
}

fn field_for(plan: &Plan, j: usize) -> Result<CountingField<ConditionedField<'_>>> {
    let c = j % plan.model.num_components();
    Ok(CountingField::new(ConditionedField::conditional(&plan.model, c, plan.guidance_weight)?))
}

fn check_calls(calls: u64, ledger: LedgerSnapshot) -> Result<()> {
    if calls == ledger.total() {
        Ok(())
    } else {
        Err(HarnessError::Numerical(format!(
            "cost accounting mismatch: field saw {calls} evaluations, ledger reports {}",
            ledger.total()
        )))
    }
}

fn run_sample(plan: &Plan, task: &RowTask, budget: SearchBudget, base: u64, j: usize) -> Result<SampleOutcome> {
    let field = field_for(plan, j)?;
    let judge = build_judge(&plan.verifier, &plan.model, j % plan.model.num_components())?;
    let ledger = NfeLedger::new();
    let search = Search::new(&field, judge.as_ref(), budget, plan.sampler, &ledger);
    let seed = sample_seed(base, j);
    let result = match task {
        RowTask::Baseline => search.no_search(seed),
        RowTask::Point(PointAlgorithm::Random(n)) => search.random_search(*n, seed),
        RowTask::Point(PointAlgorithm::ZeroOrder(c)) => search.zero_order_search(c, seed),
        RowTask::Point(PointAlgorithm::FirstOrder(c)) => search.first_order_search(c, seed),
        RowTask::Point(PointAlgorithm::Paths(c)) => search.search_over_paths(c, seed),
    }?;
    check_calls(field.calls(), result.ledger)?;
    check_calls(field.calls(), ledger.snapshot())?;
    Ok(SampleOutcome {
        sample: result.best_sample.clone(),
        score: result.best_score.value,
        ledger: result.ledger,
        result,
    })
}

struct RowOutput {
    samples: Vec<Vec<f64>>,
    ledger: LedgerSnapshot,
    /// Mean verifier score; replaced by `-frechet` for population selection.
    score: Option<f64>,
    first: Option<SearchResult>,
}

fn run_pointwise(plan: &Plan, task: &RowTask, budget: SearchBudget, base: u64) -> Result<RowOutput> {
    let outcomes = (0..plan.samples_per_point)
        .into_par_iter()
        .map(|j| run_sample(plan, task, budget, base, j))
        .collect::<Vec<_>>();
    let mut samples = Vec::with_capacity(outcomes.len());
    let mut ledger = LedgerSnapshot::default();
    let mut total = 0.0;
    let mut first = None;
    for o in outcomes {
        let o = o?;
        total += o.score;
        ledger.search_nfe += o.ledger.search_nfe;
        ledger.denoise_nfe += o.ledger.denoise_nfe;
        samples.push(o.sample);
        if first.is_none() {
            first = Some(o.result);
        }
    }
    Ok(RowOutput {
        samples,
        ledger,
        score: Some(total / plan.samples_per_point as f64),
        first,
    })
}

/// Greedy population selection: the first `warmup` samples are plain
/// denoises, every later sample is the best of `candidates` random noises
/// by staged Fréchet distance to the exact mixture moments.
fn run_frechet_greedy(plan: &Plan, candidates: usize, warmup: usize, budget: SearchBudget, base: u64) -> Result<RowOutput> {
    let reference = GaussianStats::of_mixture(&plan.model);
    let search_schedule = plan.sampler.schedule(budget.search_steps())?;
    let final_schedule = plan.sampler.schedule(budget.final_denoise_steps)?;
    let d = plan.model.dim();
    let mut running = RunningGaussianStats::new(d);
    let mut samples = Vec::with_capacity(plan.samples_per_point);
    let mut ledger = LedgerSnapshot::default();
    for j in 0..plan.samples_per_point {
        let field = field_for(plan, j)?;
        let counter = NfeLedger::new();
        let seed = sample_seed(base, j);
        let noise_of = |i: usize| gaussian(&mut substream(seed, &[tag::RANDOM_SEARCH, i as u64]), d, plan.sampler.sigma_max);
        let winner = if j < warmup {
            noise_of(0)
        } else {
            let noises: Vec<Vec<f64>> = (0..candidates).map(noise_of).collect();
            let finals = noises
                .par_iter()
                .map(|n| Ok(heun_solve(&field, n, &search_schedule, &counter, Charge::Search)?.into_final()))
                .collect::<Result<Vec<_>>>()?;
            let pick = frechet_greedy_select(&finals, &running, &reference)?;
            noises[pick.index].clone()
        };
        let sample = heun_solve(&field, &winner, &final_schedule, &counter, Charge::Denoise)?.into_final();
        check_calls(field.calls(), counter.snapshot())?;
        ledger.search_nfe += counter.search_nfe();
        ledger.denoise_nfe += counter.denoise_nfe();
        running.push(&sample)?;
        samples.push(sample);
    }
    Ok(RowOutput {
        samples,
        ledger,
        score: None,
        first: None,
    })
}

fn row_output(plan: &Plan, task: &RowTask, budget: SearchBudget, base: u64) -> Result<RowOutput> {
    match (&plan.verifier, task) {
        (VerifierKind::FrechetGreedy { warmup }, RowTask::Point(PointAlgorithm::Random(n))) => {
            run_frechet_greedy(plan, *n, *warmup, budget, base)
        }
        _ => run_pointwise(plan, task, budget, base),
    }
}

/// Runs one row. Failures are recorded in the row, not raised. The caller
/// fills in `point`.
pub fn run_row(plan: &Plan, task: &RowTask, budget: SearchBudget, seed: u64, opts: RunOptions) -> Row {
    let base = seed.wrapping_add(opts.seed_offset);
    let algorithm = match task {
        RowTask::Baseline => "none".to_string(),
        RowTask::Point(_) => plan.algorithm.name().to_string(),
    };
    let mut record = Record::failed(base, algorithm, plan.verifier.label(), plan.model.dim());
    let outcome = row_output(plan, task, budget, base).and_then(|out| {
        let real = plan.model.sample_n(plan.samples_per_point, base, &[tag::REFERENCE]);
        let report = EvalReport::evaluate(&plan.model, &real, &out.samples, plan.knn_k)?;
        Ok((out, report))
    });
    match outcome {
        Ok((out, report)) => {
            record.search_nfe = out.ledger.search_nfe;
            record.denoise_nfe = out.ledger.denoise_nfe;
            record.best_score = match (&plan.verifier, out.score) {
                (VerifierKind::FrechetGreedy { .. }, _) | (_, None) => -report.frechet,
                (_, Some(s)) => s,
            };
            record.set_report(&report);
            Row {
                point: None,
                record,
                error: None,
                first: out.first,
            }
        }
        Err(e) => Row {
            point: None,
            record,
            error: Some(e.to_string()),
            first: None,
        },
    }
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| HarnessError::config("threads", e.to_string()))
}

fn run_tasks(plan: &Plan, tasks: Vec<(RowTask, SearchBudget, Option<u64>)>, opts: RunOptions) -> Result<SweepReport> {
    let items: Vec<(usize, u64)> = (0..tasks.len())
        .flat_map(|t| plan.seeds.iter().map(move |&s| (t, s)))
        .collect();
    let rows = pool(opts.threads)?.install(|| {
        items
            .par_iter()
            .map(|&(t, seed)| {
                let (task, budget, point) = &tasks[t];
                let mut row = run_row(plan, task, *budget, seed, opts);
                row.point = *point;
                row
            })
            .collect::<Vec<_>>()
    });
    Ok(SweepReport {
        rows,
        seeds: plan.seeds.clone(),
        dim: plan.model.dim(),
    })
}

/// Every sweep point crossed with every seed, rows ordered by (point, seed).
pub fn run_experiment(plan: &Plan, opts: RunOptions) -> Result<SweepReport> {
    let tasks = plan
        .sweep
        .iter()
        .map(|&p| {
            let (alg, budget) = plan.point(p)?;
            Ok((RowTask::Point(alg), budget, Some(p)))
        })
        .collect::<Result<Vec<_>>>()?;
    run_tasks(plan, tasks, opts)
}

/// Denoise-only rows, one per seed.
pub fn baseline_run(plan: &Plan, opts: RunOptions) -> Result<SweepReport> {
    run_tasks(plan, vec![(RowTask::Baseline, plan.budget, None)], opts)
}

/// The first sweep point only.
pub fn search_run(plan: &Plan, opts: RunOptions) -> Result<SweepReport> {
    let p = plan.sweep[0];
    let (alg, budget) = plan.point(p)?;
    run_tasks(plan, vec![(RowTask::Point(alg), budget, Some(p))], opts)
}
