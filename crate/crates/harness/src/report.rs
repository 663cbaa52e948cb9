//! CSV files: metric rows, search audits, trajectories.
//!
//! Metric files open with a `# generated_unix=...` comment line; everything
//! after it is a pure function of the run.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use noisesearch_core::search::Audit;
use noisesearch_core::{EvalReport, Trajectory};

use crate::error::{HarnessError, Result};

/// One metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub seed: u64,
    pub algorithm: String,
    pub verifier: String,
    pub search_nfe: u64,
    pub denoise_nfe: u64,
    pub frechet: f64,
    pub is_analog: f64,
    pub precision: f64,
    pub recall: f64,
    pub variance: Vec<f64>,
    pub best_score: f64,
}

pub const FIXED_COLUMNS: &[&str] = &[
    "seed",
    "algorithm",
    "verifier",
    "search_nfe",
    "denoise_nfe",
    "frechet",
    "is_analog",
    "precision",
    "recall",
];

impl Record {
    /// A row whose metrics are all NaN.
    pub fn failed(seed: u64, algorithm: String, verifier: String, dim: usize) -> Self {
        Self {
            seed,
            algorithm,
            verifier,
            search_nfe: 0,
            denoise_nfe: 0,
            frechet: f64::NAN,
            is_analog: f64::NAN,
            precision: f64::NAN,
            recall: f64::NAN,
            variance: vec![f64::NAN; dim],
            best_score: f64::NAN,
        }
    }

    pub fn set_report(&mut self, r: &EvalReport) {
        self.frechet = r.frechet;
        self.is_analog = r.is_analog;
        self.precision = r.precision;
        self.recall = r.recall;
        self.variance = r.variance.clone();
    }

    pub fn total_nfe(&self) -> u64 {
        self.search_nfe + self.denoise_nfe
    }

    /// Numeric column by CSV name.
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "seed" => self.seed as f64,
            "search_nfe" => self.search_nfe as f64,
            "denoise_nfe" => self.denoise_nfe as f64,
            "frechet" => self.frechet,
            "is_analog" => self.is_analog,
            "precision" => self.precision,
            "recall" => self.recall,
            "best_score" => self.best_score,
            other => {
                let i: usize = other.strip_prefix("var_")?.parse().ok()?;
                *self.variance.get(i)?
            }
        })
    }

    fn fields(&self) -> Vec<String> {
        let mut out = vec![
            self.seed.to_string(),
            self.algorithm.clone(),
            self.verifier.clone(),
            self.search_nfe.to_string(),
            self.denoise_nfe.to_string(),
            fmt(self.frechet),
            fmt(self.is_analog),
            fmt(self.precision),
            fmt(self.recall),
        ];
        out.extend(self.variance.iter().map(|v| fmt(*v)));
        out.push(fmt(self.best_score));
        out
    }
}

fn fmt(v: f64) -> String {
    // shortest round-trip form
    format!("{v}")
}

/// Column names for samples of dimension `dim`.
pub fn header(dim: usize) -> Vec<String> {
    let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    h.extend((0..dim).map(|i| format!("var_{i}")));
    h.push("best_score".into());
    h
}

/// Metric numeric columns in file order.
pub fn metric_columns(dim: usize) -> Vec<String> {
    header(dim).into_iter().skip(3).collect()
}

pub fn write_records(path: &Path, records: &[Record], dim: usize) -> Result<()> {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut buf = format!("# generated_unix={stamp}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(header(dim))?;
        for r in records {
            w.write_record(r.fields())?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))?;
    }
    write_file(path, &buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }
    }
    let mut f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(bytes).map_err(|e| HarnessError::io(path, e))
}

fn parse<T: std::str::FromStr>(s: &str, col: &str, line: usize) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| HarnessError::config(col, format!("line {line}: cannot parse `{s}`")))
}

/// Reads a metrics file, returning the sample dimension and the rows.
pub fn read_records(path: &Path) -> Result<(usize, Vec<Record>)> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(BufReader::new(f));
    let head: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let dim = head.iter().filter(|h| h.starts_with("var_")).count();
    if head != header(dim) {
        return Err(HarnessError::config(
            path.display().to_string(),
            format!("unexpected header {head:?}"),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |j: usize| rec.get(j).unwrap_or("");
        out.push(Record {
            seed: parse(f(0), "seed", line)?,
            algorithm: f(1).to_string(),
            verifier: f(2).to_string(),
            search_nfe: parse(f(3), "search_nfe", line)?,
            denoise_nfe: parse(f(4), "denoise_nfe", line)?,
            frechet: parse(f(5), "frechet", line)?,
            is_analog: parse(f(6), "is_analog", line)?,
            precision: parse(f(7), "precision", line)?,
            recall: parse(f(8), "recall", line)?,
            variance: (0..dim)
                .map(|k| parse(f(9 + k), "var", line))
                .collect::<Result<Vec<f64>>>()?,
            best_score: parse(f(9 + dim), "best_score", line)?,
        });
    }
    Ok((dim, out))
}

/// File contents with comment lines removed.
pub fn strip_comments(text: &str) -> String {
    BufReader::new(text.as_bytes())
        .lines()
        .map_while(std::result::Result::ok)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l + "\n")
        .collect()
}

/// `iteration,candidate,score,chosen` with `chosen` 1 for kept candidates.
pub fn write_audit(path: &Path, audit: &Audit) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["iteration", "candidate", "score", "chosen"])?;
        for e in &audit.entries {
            for (i, s) in e.scores.iter().enumerate() {
                let chosen = u8::from(e.chosen.contains(&i));
                w.write_record([e.iteration.to_string(), i.to_string(), fmt(*s), chosen.to_string()])?;
            }
        }
        w.flush().map_err(|e| HarnessError::io(path, e))?;
    }
    write_file(path, &buf)
}

/// `step,sigma,x_0..x_{d-1}`.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let d = traj.final_state().len();
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut head = vec!["step".to_string(), "sigma".to_string()];
        head.extend((0..d).map(|i| format!("x_{i}")));
        w.write_record(head)?;
        for (step, (sigma, x)) in traj.states.iter().enumerate() {
            let mut row = vec![step.to_string(), fmt(*sigma)];
            row.extend(x.iter().map(|v| fmt(*v)));
            w.write_record(row)?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))?;
    }
    write_file(path, &buf)
}
