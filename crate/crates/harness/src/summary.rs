//! Per-sweep-point aggregation over seeds.

use std::fmt::Write;

use crate::report::{metric_columns, Record};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub algorithm: String,
    pub verifier: String,
    pub seeds: usize,
    /// `(column, mean/std)` in CSV order.
    pub columns: Vec<(String, MeanStd)>,
}

impl Aggregate {
    pub fn get(&self, column: &str) -> Option<MeanStd> {
        self.columns.iter().find(|(c, _)| c == column).map(|(_, v)| *v)
    }

    pub fn total_nfe(&self) -> f64 {
        self.get("search_nfe").map_or(0.0, |v| v.mean) + self.get("denoise_nfe").map_or(0.0, |v| v.mean)
    }
}

/// Splits rows into sweep points. Rows are written point by point with the
/// seed list repeated, so a point ends when the first seed comes around
/// again.
pub fn group(records: &[Record]) -> Vec<&[Record]> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut start = 0;
    for (i, r) in records.iter().enumerate().skip(1) {
        if r.seed == first.seed {
            out.push(&records[start..i]);
            start = i;
        }
    }
    out.push(&records[start..]);
    out
}

pub fn aggregate(records: &[Record], dim: usize) -> Vec<Aggregate> {
    group(records)
        .into_iter()
        .map(|g| Aggregate {
            algorithm: g[0].algorithm.clone(),
            verifier: g[0].verifier.clone(),
            seeds: g.len(),
            columns: metric_columns(dim)
                .into_iter()
                .map(|c| {
                    let values: Vec<f64> = g.iter().map(|r| r.metric(&c).unwrap_or(f64::NAN)).collect();
                    let stat = MeanStd::of(&values);
                    (c, stat)
                })
                .collect(),
        })
        .collect()
}

/// Fixed-width text table, one line per sweep point, `mean±std` cells.
pub fn render(aggregates: &[Aggregate]) -> String {
    let mut out = String::new();
    let Some(first) = aggregates.first() else {
        return out;
    };
    let mut head = vec!["algorithm".to_string(), "verifier".to_string(), "seeds".to_string()];
    head.extend(first.columns.iter().map(|(c, _)| c.clone()));
    let rows: Vec<Vec<String>> = aggregates
        .iter()
        .map(|a| {
            let mut r = vec![a.algorithm.clone(), a.verifier.clone(), a.seeds.to_string()];
            r.extend(a.columns.iter().map(|(_, v)| format!("{:.4}±{:.4}", v.mean, v.std)));
            r
        })
        .collect();
    let widths: Vec<usize> = (0..head.len())
        .map(|i| rows.iter().map(|r| r[i].chars().count()).chain([head[i].len()]).max().unwrap_or(0))
        .collect();
    for line in std::iter::once(&head).chain(rows.iter()) {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}", w = *w))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  "));
    }
    out
}
