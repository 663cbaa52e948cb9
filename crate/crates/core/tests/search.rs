use noisesearch_core::search::{cost, top_k};
use noisesearch_core::verifier::{Candidate, ClassConfidence, Likelihood, SelfSupervised, Verifier, VerifierScore};
use noisesearch_core::{
    ConditionedField, CountingField, Ensemble, Error, FirstOrderConfig, MixtureModel, NfeLedger, PathsConfig,
    SamplerSettings, Search, SearchBudget, SearchStatus, ZeroOrderConfig,
};
use noisesearch_core::rng::{gaussian, substream, tag};
use noisesearch_core::sampler::heun_solve;
use noisesearch_core::Charge;

fn budget(nfe: u64) -> SearchBudget {
    SearchBudget::new(nfe, 1 << 40, 9).unwrap()
}

#[test]
fn random_search_single_candidate_is_direct_evaluation() {
    let m = MixtureModel::default_toy();
    let f = ConditionedField::unconditional(&m);
    let v = Likelihood::new(&m);
    let ledger = NfeLedger::new();
    let s = Search::new(&f, &v, budget(9), SamplerSettings::default(), &ledger);
    let r = s.random_search(1, 3).unwrap();
    let noise = gaussian(&mut substream(3, &[tag::RANDOM_SEARCH, 0]), 2, 80.0);
    assert_eq!(r.best_noise, noise);
    let sched = SamplerSettings::default().schedule(5).unwrap();
    let t = heun_solve(&f, &noise, &sched, &NfeLedger::new(), Charge::Search).unwrap();
    let direct = v.evaluate(&Candidate::new(t.final_state())).unwrap().value;
    assert_eq!(r.best_score.value, direct);
}

#[test]
fn random_search_matches_exhaustive_argmax() {
    let m = MixtureModel::default_toy();
    let f = ConditionedField::unconditional(&m);
    let v = ClassConfidence::new(&m, 2).unwrap();
    let settings = SamplerSettings::default();
    let sched = settings.schedule(3).unwrap();
    for seed in 0..8 {
        let ledger = NfeLedger::new();
        let r = Search::new(&f, &v, budget(5), settings, &ledger).random_search(16, seed).unwrap();
        let scores: Vec<f64> = (0..16u64)
            .map(|i| {
                let n = gaussian(&mut substream(seed, &[tag::RANDOM_SEARCH, i]), 2, 80.0);
                let t = heun_solve(&f, &n, &sched, &NfeLedger::new(), Charge::Search).unwrap();
                m.posterior(t.final_state(), 0.0).unwrap()[2]
            })
            .collect();
        let mut best = 0;
        for i in 1..16 {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        assert_eq!(r.audit.entries[0].scores, scores);
        assert_eq!(r.audit.entries[0].chosen, vec![best]);
        assert_eq!(r.best_score.value, scores[best]);
    }
}

#[test]
fn random_search_audit_prefix_maxima_are_monotone() {
    let m = MixtureModel::default_toy();
    let f = ConditionedField::unconditional(&m);
    let v = Likelihood::new(&m);
    let ledger = NfeLedger::new();
    let r = Search::new(&f, &v, budget(7), SamplerSettings::default(), &ledger)
        .random_search(32, 1)
        .unwrap();
    let mut best = f64::NEG_INFINITY;
    let mut seq = Vec::new();
    for s in &r.audit.entries[0].scores {
        best = best.max(*s);
        seq.push(best);
    }
    assert!(seq.windows(2).all(|w| w[1] >= w[0]));
    assert_eq!(*seq.last().unwrap(), r.best_score.value);
}

#[test]
fn random_search_budget_exhaustion_keeps_partial_audit() {
    let m = MixtureModel::default_toy();
    let f = ConditionedField::unconditional(&m);
    let v = Likelihood::new(&m);
    let ledger = NfeLedger::new();
    let b = SearchBudget::new(9, 30, 9).unwrap();
    match Search::new(&f, &v, b, SamplerSettings::default(), &ledger).random_search(8, 0) {
        Err(Error::BudgetExhausted { spent, needed, limit, audit }) => {
            assert_eq!((spent, needed, limit), (27, 9, 30));
            assert_eq!(audit.entries[0].scores.len(), 3);
            assert_eq!(audit.simulations, 3);
        }
        other => panic!("expected budget exhaustion, got {other:?}"),
    }
}

#[test]
fn zero_order_lambda_one_never_moves() {
    let m = MixtureModel::default_toy();
    let f = ConditionedField::unconditional(&m);
    let v = Likelihood::new(&m);
    let ledger = NfeLedger::new();
    let s = Search::new(&f, &v, budget(5), SamplerSettings::default(), &ledger);
    let r = s.zero_order_search(&ZeroOrderConfig::new(5, 3, 1.0).unwrap(), 4).unwrap();
    let pivot = gaussian(&mut substream(4, &[tag::ZERO_ORDER_PIVOT]), 2, 80.0);
    assert_eq!(r.best_noise, pivot);
    let best = r.audit.best_per_iteration();
    assert!(best.iter().all(|b| *b == best[0]));
    assert!(r.audit.entries.iter().skip(1).all(|e| e.chosen == vec![0]));
}

#[test]
fn zero_order_best_is_monotone() {
    let m = MixtureModel::default_toy();
    let f = ConditionedField::unconditional(&m);
    let v = ClassConfidence::new(&m, 0).unwrap();
    for seed in 0..6 {
        let ledger = NfeLedger::new();
        let cfg = ZeroOrderConfig::new(8, 2, 0.95).unwrap();
        let r = Search::new(&f, &v, budget(5), SamplerSettings::default(), &ledger)
            .zero_order_search(&cfg, seed)
            .unwrap();
        let best = r.audit.best_per_iteration();
        assert_eq!(best.len(), 9);
        assert!(best.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(r.ledger.search_nfe, cost::zero_order(&budget(5), &cfg));
        assert_eq!(r.best_score.value, *best.last().unwrap());
    }
}

#[test]
fn zero_order_neighbor_distance_expectation() {
    // y - pivot = (lambda - 1) pivot + sqrt(1 - lambda^2) sigma eps, so
    // E|y - pivot|^2 = ((1-lambda)^2 + 1 - lambda^2) sigma^2 d = 2 (1-lambda) sigma^2 d.
    let (lambda, sigma, d) = (0.95f64, 80.0f64, 2usize);
    let mix = (1.0 - lambda * lambda).sqrt() * sigma;
    let draws = 10_000u64;
    let mut total = 0.0;
    for i in 0..draws {
        let pivot = gaussian(&mut substream(i, &[tag::ZERO_ORDER_PIVOT]), d, sigma);
        let eps = gaussian(&mut substream(i, &[tag::ZERO_ORDER_NEIGHBOR, 1, 0]), d, 1.0);
        total += pivot
            .iter()
            .zip(&eps)
            .map(|(p, e)| {
                let y = lambda * p + mix * e;
                (y - p) * (y - p)
            })
            .sum::<f64>();
    }
    let expected = 2.0 * (1.0 - lambda) * sigma * sigma * d as f64;
    let mean = total / draws as f64;
    assert!((mean - expected).abs() / expected < 0.05, "{mean} vs {expected}");
}

/// `-|x - target|^2`.
struct Quadratic(Vec<f64>);

impl Verifier for Quadratic {
    fn id(&self) -> &str {
        "quadratic"
    }
    fn evaluate(&self, c: &Candidate<'_>) -> noisesearch_core::Result<VerifierScore> {
        let v = -c.sample.iter().zip(&self.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        Ok(VerifierScore {
            value: v,
            verifier_id: "quadratic".into(),
        })
    }
}

#[test]
fn first_order_zero_rate_keeps_noise() {
    let m = MixtureModel::isotropic(vec![3.0, -2.0], 1.0).unwrap();
    let f = ConditionedField::unconditional(&m);
    let v = Quadratic(vec![3.0, -2.0]);
    let ledger = NfeLedger::new();
    let cfg = FirstOrderConfig {
        learning_rate: 0.0,
        ..FirstOrderConfig::new(3, 0.01).unwrap()
    };
    let r = Search::new(&f, &v, budget(7), SamplerSettings::default(), &ledger)
        .first_order_search(&cfg, 5)
        .unwrap();
    let raw = gaussian(&mut substream(5, &[tag::FIRST_ORDER]), 2, 80.0);
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    let radius = 2f64.sqrt() * 80.0;
    for (a, b) in r.best_noise.iter().zip(&raw) {
        assert!((a - b * radius / norm).abs() < 1e-9);
    }
}

#[test]
fn first_order_quadratic_strictly_improves_on_the_sphere() {
    let mu = vec![3.0, -2.0];
    let m = MixtureModel::isotropic(mu.clone(), 1.0).unwrap();
    let f = ConditionedField::unconditional(&m);
    let v = Quadratic(mu);
    for seed in 0..4 {
        let ledger = NfeLedger::new();
        let cfg = FirstOrderConfig::new(10, 0.01).unwrap();
        let r = Search::new(&f, &v, budget(21), SamplerSettings::default(), &ledger)
            .first_order_search(&cfg, seed)
            .unwrap();
        assert_eq!(r.status, SearchStatus::Completed);
        let seq = r.audit.best_per_iteration();
        assert_eq!(seq.len(), 11);
        assert!(seq.windows(2).all(|w| w[1] > w[0]), "{seq:?}");
        let norm = r.best_noise.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 2f64.sqrt() * 80.0).abs() < 1e-9);
        assert_eq!(r.ledger.search_nfe, cost::first_order(&budget(21), &cfg, 2));
    }
}

/// Constant verifier: every gradient is exactly zero.
struct Flat;

impl Verifier for Flat {
    fn id(&self) -> &str {
        "flat"
    }
    fn evaluate(&self, _: &Candidate<'_>) -> noisesearch_core::Result<VerifierScore> {
        Ok(VerifierScore {
            value: 1.0,
            verifier_id: "flat".into(),
        })
    }
}

#[test]
fn first_order_zero_gradient_converges() {
    let m = MixtureModel::default_toy();
    let f = CountingField::new(ConditionedField::unconditional(&m));
    let ledger = NfeLedger::new();
    let r = Search::new(&f, &Flat, budget(5), SamplerSettings::default(), &ledger)
        .first_order_search(&FirstOrderConfig::new(10, 0.01).unwrap(), 0)
        .unwrap();
    assert_eq!(r.status, SearchStatus::Converged);
    assert_eq!(r.ledger.search_nfe, 3 * 3 * 5);
    assert_eq!(f.calls(), ledger.total());
}

#[test]
fn paths_round_counts() {
    let mut grid = 0;
    for &(start, f, b) in &[
        (0.11, 0.78, 0.81),
        (0.12, 0.78, 0.81),
        (0.3, 0.1, 0.2),
        (0.3, 0.1, 0.25),
        (0.5, 0.2, 0.3),
    ] {
        for &scale in &[1.0, 10.0, 80.0, 3.5] {
            let c = PathsConfig::new(2, 2, start * scale, f * scale, b * scale, 1).unwrap();
            let expected = (start / (b - f) - 1e-9).ceil() as usize;
            assert_eq!(c.rounds(), expected, "{start} {f} {b} x{scale}");
            assert_eq!(c.level_after_round(c.rounds()), 0.0);
            grid += 1;
        }
    }
    assert_eq!(grid, 20);
    assert_eq!(PathsConfig::scaled_default(4, 4, 2, 80.0).unwrap().rounds(), 4);
    assert!(PathsConfig::new(2, 2, 1.0, 0.5, 0.5, 1).is_err());
    assert!(PathsConfig::new(2, 2, 1.0, 0.6, 0.5, 1).is_err());
    assert!(PathsConfig::new(2, 2, 1.0, 0.0, 0.5, 1).is_err());
}

#[test]
fn paths_survivors_are_brute_force_top_n() {
    let m = MixtureModel::default_toy();
    let f = ConditionedField::unconditional(&m);
    let v = ClassConfidence::new(&m, 1).unwrap();
    let cfg = PathsConfig::scaled_default(3, 4, 2, 80.0).unwrap();
    let ledger = NfeLedger::new();
    let r = Search::new(&f, &v, budget(9), SamplerSettings::default(), &ledger)
        .search_over_paths(&cfg, 2)
        .unwrap();
    assert_eq!(r.audit.entries.len(), cfg.rounds() + 1);
    for e in &r.audit.entries[..cfg.rounds()] {
        assert_eq!(e.scores.len(), 12);
        let mut order: Vec<usize> = (0..12).collect();
        order.sort_by(|&a, &b| e.scores[b].partial_cmp(&e.scores[a]).unwrap().then(a.cmp(&b)));
        assert_eq!(e.chosen, order[..3].to_vec());
        assert_eq!(top_k(&e.scores, 3), e.chosen);
    }
    assert_eq!(r.ledger.search_nfe, cost::paths(&budget(9), &cfg));
    assert_eq!(r.ledger.denoise_nfe, 0);
    assert_eq!(r.best_sample, r.final_trajectory.final_state());
}

#[test]
fn paths_single_path_has_one_survivor_per_round() {
    let m = MixtureModel::default_toy();
    let f = ConditionedField::unconditional(&m);
    let v = Likelihood::new(&m);
    let cfg = PathsConfig::scaled_default(1, 1, 3, 80.0).unwrap();
    let ledger = NfeLedger::new();
    let r = Search::new(&f, &v, budget(9), SamplerSettings::default(), &ledger)
        .search_over_paths(&cfg, 9)
        .unwrap();
    for e in &r.audit.entries {
        assert_eq!(e.chosen, vec![0]);
        assert_eq!(e.scores.len(), 1);
    }
    assert!(r.final_trajectory.is_complete());
}

#[test]
fn ledger_matches_instrumented_calls() {
    let m = MixtureModel::default_toy();
    let v = Likelihood::new(&m);
    let ss = SelfSupervised::for_model(&m, 1);
    let cc = ClassConfidence::new(&m, 3).unwrap();
    let ens = Ensemble::new(vec![Box::new(v.clone()), Box::new(ss.clone()), Box::new(cc.clone())]).unwrap();
    let b = budget(11);
    let f = CountingField::new(ConditionedField::conditional(&m, 3, 2.0).unwrap());
    let ledger = NfeLedger::new();
    let s = Search::new(&f, &ens, b, SamplerSettings::default(), &ledger);

    let mut expected = 0;
    let r = s.random_search(5, 0).unwrap();
    expected += cost::random_search(&b, 5) + b.final_cost();
    assert_eq!(r.ledger.search_nfe, cost::random_search(&b, 5));
    let zo = ZeroOrderConfig::new(3, 2, 0.9).unwrap();
    s.zero_order_search(&zo, 0).unwrap();
    expected += cost::zero_order(&b, &zo) + b.final_cost();
    let fo = FirstOrderConfig::new(2, 0.5).unwrap();
    s.first_order_search(&fo, 0).unwrap();
    expected += cost::first_order(&b, &fo, 2) + b.final_cost();
    let p = PathsConfig::scaled_default(2, 3, 2, 80.0).unwrap();
    // intermediate x-predictions carry no finished trajectory
    assert!(matches!(s.search_over_paths(&p, 0), Err(Error::InvalidArgument(_))));
    assert_eq!(f.calls(), expected);
    let pointwise = Ensemble::new(vec![Box::new(v.clone()), Box::new(cc.clone())]).unwrap();
    let ledger2 = NfeLedger::new();
    let f2 = CountingField::new(ConditionedField::conditional(&m, 3, 2.0).unwrap());
    Search::new(&f2, &pointwise, b, SamplerSettings::default(), &ledger2).search_over_paths(&p, 0).unwrap();
    assert_eq!(f2.calls(), cost::paths(&b, &p));
    assert_eq!(ledger2.total(), f2.calls());
    s.no_search(0).unwrap();
    expected += b.final_cost();
    assert_eq!(ledger.total(), expected);
    assert_eq!(f.calls(), expected);
}

#[test]
fn searches_are_seed_deterministic() {
    let m = MixtureModel::default_toy();
    let f = ConditionedField::unconditional(&m);
    let v = ClassConfidence::new(&m, 0).unwrap();
    let ledger = NfeLedger::new();
    let s = Search::new(&f, &v, budget(9), SamplerSettings::default(), &ledger);
    let zo = ZeroOrderConfig::new(3, 2, 0.95).unwrap();
    let p = PathsConfig::scaled_default(2, 2, 2, 80.0).unwrap();
    assert_eq!(s.random_search(6, 8).unwrap(), s.random_search(6, 8).unwrap());
    assert_eq!(s.zero_order_search(&zo, 8).unwrap(), s.zero_order_search(&zo, 8).unwrap());
    assert_eq!(s.search_over_paths(&p, 8).unwrap(), s.search_over_paths(&p, 8).unwrap());
    assert_ne!(s.random_search(6, 8).unwrap().best_noise, s.random_search(6, 9).unwrap().best_noise);
}

#[test]
fn best_of_n_mean_is_monotone() {
    let m = MixtureModel::default_toy();
    let f = ConditionedField::unconditional(&m);
    let v = Likelihood::new(&m);
    let ledger = NfeLedger::new();
    let s = Search::new(&f, &v, budget(5), SamplerSettings::default(), &ledger);
    let means: Vec<f64> = [1, 2, 4, 8, 16]
        .iter()
        .map(|&n| (0..32).map(|seed| s.random_search(n, seed).unwrap().best_score.value).sum::<f64>() / 32.0)
        .collect();
    // candidates are nested across n for a fixed seed, so this holds per seed
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}
