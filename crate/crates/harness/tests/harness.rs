use std::path::Path;

use noisesearch::config::ExperimentConfig;
use noisesearch::plot::{plot_scaling, render_svg, series, PlotPoint};
use noisesearch::report::{metric_columns, read_records, strip_comments, write_records};
use noisesearch::summary::{aggregate, group, MeanStd};
use noisesearch::{baseline_run, run_experiment, HarnessError, Plan, Record, RunOptions};
use serde_json::{json, Value};

fn base() -> Value {
    json!({
        "algorithm": {"name": "random_search"},
        "verifier": {"name": "class_confidence"},
        "budget": {"nfe_per_iter": 9, "final_denoise_steps": 10},
        "sweep": [1, 2],
        "seeds": [3, 4],
        "samples_per_point": 32
    })
}

fn plan(v: Value) -> Result<Plan, HarnessError> {
    let cfg: ExperimentConfig = serde_json::from_value(v).expect("config document parses");
    cfg.resolve(Path::new("."))
}

fn config_key(v: Value) -> String {
    match plan(v) {
        Err(HarnessError::Config { key, .. }) => key,
        other => panic!("expected a config error, got {other:?}"),
    }
}

fn with(mut v: Value, path: &[&str], x: Value) -> Value {
    let mut cur = &mut v;
    for p in &path[..path.len() - 1] {
        cur = cur.get_mut(*p).unwrap();
    }
    cur[path[path.len() - 1]] = x;
    v
}

#[test]
fn config_errors_name_the_key() {
    assert_eq!(config_key(with(base(), &["algorithm", "name"], json!("beam"))), "algorithm.name");
    assert_eq!(config_key(with(base(), &["verifier", "name"], json!("clip"))), "verifier.name");
    assert_eq!(config_key(with(base(), &["sweep"], json!([]))), "sweep");
    assert_eq!(config_key(with(base(), &["sweep"], json!([2, 2]))), "sweep");
    assert_eq!(config_key(with(base(), &["sweep"], json!([4, 1]))), "sweep");
    assert_eq!(config_key(with(base(), &["seeds"], json!([]))), "seeds");
    assert_eq!(config_key(with(base(), &["model"], json!("imagenet"))), "model");
    let paths_ss = with(
        with(base(), &["algorithm"], json!({"name": "paths", "params": {"width": 2}})),
        &["verifier"],
        json!({"name": "self_supervised"}),
    );
    assert!(plan(paths_ss).is_err());
    let paths_bad = with(
        base(),
        &["algorithm"],
        json!({"name": "paths", "params": {"width": 2, "forward_delta": 5.0, "backward_delta": 4.0}}),
    );
    assert!(plan(paths_bad).is_err());
    assert!(plan(base()).is_ok());
}

#[test]
fn inline_model_round_trips() {
    let v = with(
        base(),
        &["model"],
        json!({"dim": 1, "components": [
            {"weight": 0.25, "mean": [-2.0], "covariance": [0.5]},
            {"weight": 0.75, "mean": [2.0], "covariance": [[0.5]]}
        ]}),
    );
    let p = plan(v).unwrap();
    assert_eq!(p.model.dim(), 1);
    assert_eq!(p.model.num_components(), 2);
    let bad = with(
        base(),
        &["model"],
        json!({"dim": 2, "components": [{"weight": 1.0, "mean": [0.0, 0.0], "covariance": [1.0, 2.0, 2.0, 1.0]}]}),
    );
    assert_eq!(config_key(bad), "model");
}

#[test]
fn one_point_one_seed_is_one_row() {
    let v = with(with(base(), &["sweep"], json!([4])), &["seeds"], json!([7]));
    let report = run_experiment(&plan(v).unwrap(), RunOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].point, Some(4));
    assert!(report.rows[0].error.is_none());
}

#[test]
fn rows_are_points_times_seeds_in_order() {
    let p = plan(with(base(), &["seeds"], json!([5, 1, 9]))).unwrap();
    let report = run_experiment(&p, RunOptions::default()).unwrap();
    let keys: Vec<(Option<u64>, u64)> = report.rows.iter().map(|r| (r.point, r.record.seed)).collect();
    assert_eq!(
        keys,
        vec![(Some(1), 5), (Some(1), 1), (Some(1), 9), (Some(2), 5), (Some(2), 1), (Some(2), 9)]
    );
}

#[test]
fn rows_are_cost_honest() {
    // the runner checks every sample against an instrumented field and fails
    // the row otherwise, so clean rows plus the closed form are enough here
    let p = plan(base()).unwrap();
    let report = run_experiment(&p, RunOptions::default()).unwrap();
    assert_eq!(report.failures().count(), 0);
    for r in &report.rows {
        let n = r.point.unwrap();
        // 9 NFEs per candidate is 5 Heun steps; 10 final steps cost 19
        assert_eq!(r.record.search_nfe, 32 * 9 * n);
        assert_eq!(r.record.denoise_nfe, 32 * 19);
    }
}

#[test]
fn baseline_spends_nothing_on_search() {
    let report = baseline_run(&plan(base()).unwrap(), RunOptions::default()).unwrap();
    assert_eq!(report.rows.len(), 2);
    for r in &report.rows {
        assert_eq!(r.record.algorithm, "none");
        assert_eq!(r.record.search_nfe, 0);
        assert_eq!(r.record.denoise_nfe, 32 * 19);
    }
}

#[test]
fn identical_configs_write_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = plan(base()).unwrap();
    let mut texts = Vec::new();
    for (i, threads) in [1, 4].into_iter().enumerate() {
        let report = run_experiment(&p, RunOptions { threads, seed_offset: 0 }).unwrap();
        let path = dir.path().join(format!("run{i}.csv"));
        write_records(&path, &report.records(), report.dim).unwrap();
        texts.push(strip_comments(&std::fs::read_to_string(&path).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn seed_offset_shifts_seeds() {
    let p = plan(base()).unwrap();
    let a = run_experiment(&p, RunOptions { threads: 1, seed_offset: 1 }).unwrap();
    let shifted = plan(with(base(), &["seeds"], json!([4, 5]))).unwrap();
    let b = run_experiment(&shifted, RunOptions { threads: 1, seed_offset: 0 }).unwrap();
    assert_eq!(a.records(), b.records());
}

#[test]
fn csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&plan(base()).unwrap(), RunOptions::default()).unwrap();
    let path = dir.path().join("nested/sweep.csv");
    write_records(&path, &report.records(), report.dim).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# generated_unix="));
    let header = text.lines().nth(1).unwrap();
    assert_eq!(
        header,
        "seed,algorithm,verifier,search_nfe,denoise_nfe,frechet,is_analog,precision,recall,var_0,var_1,best_score"
    );
    let (dim, back) = read_records(&path).unwrap();
    assert_eq!(dim, 2);
    assert_eq!(back, report.records());
}

#[test]
fn failed_rows_round_trip_as_nan() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    let r = Record::failed(1, "paths".into(), "likelihood".into(), 3);
    write_records(&path, &[r], 3).unwrap();
    let (dim, back) = read_records(&path).unwrap();
    assert_eq!(dim, 3);
    assert!(back[0].frechet.is_nan() && back[0].variance.iter().all(|v| v.is_nan()));
}

#[test]
fn summary_matches_recomputation_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&plan(with(base(), &["seeds"], json!([3, 4, 8]))).unwrap(), RunOptions::default()).unwrap();
    let path = dir.path().join("s.csv");
    write_records(&path, &report.records(), report.dim).unwrap();
    let (dim, rows) = read_records(&path).unwrap();
    let aggs = aggregate(&rows, dim);
    assert_eq!(aggs.len(), 2);
    for (k, a) in aggs.iter().enumerate() {
        assert_eq!(a.seeds, 3);
        let cols: Vec<&str> = a.columns.iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(cols, metric_columns(dim).iter().map(String::as_str).collect::<Vec<_>>());
        let chunk = &rows[3 * k..3 * k + 3];
        let xs: Vec<f64> = chunk.iter().map(|r| r.recall).collect();
        let mean = xs.iter().sum::<f64>() / 3.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0;
        let got = a.get("recall").unwrap();
        assert!((got.mean - mean).abs() < 1e-12);
        assert!((got.std - var.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn single_seed_mean_is_the_value() {
    assert_eq!(MeanStd::of(&[0.25]), MeanStd { mean: 0.25, std: 0.0 });
    let r = Record::failed(0, "a".into(), "b".into(), 1);
    assert_eq!(group(&[r.clone(), r.clone()]).len(), 2);
    assert!(group(&[]).is_empty());
}

fn parse_svg(text: &str) -> roxmltree::Document<'_> {
    roxmltree::Document::parse(text).expect("well-formed SVG")
}

fn count(doc: &roxmltree::Document, name: &str, class: &str) -> usize {
    doc.descendants()
        .filter(|n| n.has_tag_name(name) && n.attribute("class") == Some(class))
        .count()
}

#[test]
fn svg_is_well_formed_with_band_and_line() {
    let p = plan(base()).unwrap();
    let b = baseline_run(&p, RunOptions::default()).unwrap();
    let s = run_experiment(&p, RunOptions::default()).unwrap();
    let pts = series(&b.records(), &s.records(), 2, "recall").unwrap();
    assert_eq!(pts.len(), 3);
    // baseline first, at denoise-only cost
    assert_eq!(pts[0].total_nfe, (32 * 19) as f64);
    let svg = plot_scaling(&b.records(), &s.records(), 2, "recall").unwrap();
    let doc = parse_svg(&svg);
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(count(&doc, "circle", "marker"), 3);
    assert_eq!(count(&doc, "polyline", "mean"), 1);
    assert_eq!(count(&doc, "polygon", "band"), 1);
    assert!(!svg.contains("href"));
}

#[test]
fn single_point_is_one_marker_without_line() {
    let svg = render_svg(&[PlotPoint { total_nfe: 100.0, mean: 0.5, std: 0.1 }], "a<b&c");
    let doc = parse_svg(&svg);
    assert_eq!(count(&doc, "circle", "marker"), 1);
    assert_eq!(count(&doc, "polyline", "mean"), 0);
    assert!(doc.descendants().any(|n| n.text() == Some("a<b&c")));
}

#[test]
fn equal_values_draw_a_horizontal_segment() {
    let pts = [
        PlotPoint { total_nfe: 10.0, mean: 2.0, std: 0.0 },
        PlotPoint { total_nfe: 1000.0, mean: 2.0, std: 0.0 },
    ];
    let svg = render_svg(&pts, "frechet");
    let doc = parse_svg(&svg);
    let line = doc
        .descendants()
        .find(|n| n.attribute("class") == Some("mean"))
        .unwrap()
        .attribute("points")
        .unwrap()
        .to_string();
    let ys: Vec<&str> = line.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
    assert_eq!(ys.len(), 2);
    assert_eq!(ys[0], ys[1]);
}

#[test]
fn missing_metric_is_a_config_error() {
    let r = Record::failed(0, "none".into(), "likelihood".into(), 2);
    match series(&[r], &[], 2, "fid") {
        Err(HarnessError::Config { key, .. }) => assert_eq!(key, "metric"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn class_confidence_is_nondecreasing_in_candidates() {
    // cheap 3-NFE candidates keep posteriors below saturation
    let seeds: Vec<u64> = (0..32).collect();
    let v = json!({
        "algorithm": {"name": "random_search"},
        "verifier": {"name": "class_confidence"},
        "budget": {"nfe_per_iter": 3, "final_denoise_steps": 10},
        "sweep": [2, 4, 8, 16, 32, 64],
        "seeds": seeds,
        "samples_per_point": 16
    });
    let report = run_experiment(&plan(v).unwrap(), RunOptions::default()).unwrap();
    let aggs = aggregate(&report.records(), report.dim);
    let means: Vec<f64> = aggs.iter().map(|a| a.get("best_score").unwrap().mean).collect();
    for w in means.windows(2) {
        assert!(w[1] >= w[0], "{means:?}");
    }
}
