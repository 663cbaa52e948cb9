//! Standalone SVG scaling curves: metric against total NFEs on a log axis,
//! mean line over seeds with a one-std band.

use std::fmt::Write;

use crate::error::{HarnessError, Result};
use crate::report::{metric_columns, Record};
use crate::summary::aggregate;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub total_nfe: f64,
    pub mean: f64,
    pub std: f64,
}

/// Baseline point first (if any), then one point per sweep point.
pub fn series(baseline: &[Record], sweep: &[Record], dim: usize, metric: &str) -> Result<Vec<PlotPoint>> {
    if !metric_columns(dim).iter().any(|c| c == metric) {
        return Err(HarnessError::config(
            "metric",
            format!("no column `{metric}` (known: {})", metric_columns(dim).join(", ")),
        ));
    }
    let mut out = Vec::new();
    for set in [baseline, sweep] {
        for a in aggregate(set, dim) {
            let v = a.get(metric).expect("column checked above");
            out.push(PlotPoint {
                total_nfe: a.total_nfe(),
                mean: v.mean,
                std: v.std,
            });
        }
    }
    if out.is_empty() {
        return Err(HarnessError::config("report", "nothing to plot"));
    }
    if let Some(p) = out.iter().find(|p| !(p.total_nfe > 0.0) || !p.mean.is_finite() || !p.std.is_finite()) {
        return Err(HarnessError::Numerical(format!("cannot plot point {p:?}")));
    }
    Ok(out)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn padded(lo: f64, hi: f64, min_pad: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = (lo.abs() * 0.1).max(min_pad);
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 1e4).round() / 1e4)
    }
}

pub fn render_svg(points: &[PlotPoint], metric: &str) -> String {
    let xs: Vec<f64> = points.iter().map(|p| p.total_nfe.log10()).collect();
    let (x0, x1) = padded(
        xs.iter().copied().fold(f64::INFINITY, f64::min),
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        0.5,
    );
    let (y0, y1) = padded(
        points.iter().map(|p| p.mean - p.std).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.mean + p.std).fold(f64::NEG_INFINITY, f64::max),
        1.0,
    );
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{} vs total NFEs</text>"#,
        WIDTH / 2.0,
        escape(metric)
    );
    let (bx, by) = (LEFT, TOP + plot_h);
    let _ = writeln!(
        s,
        r#"<path class="axes" d="M{LEFT:.2},{TOP:.2} L{bx:.2},{by:.2} L{:.2},{by:.2}" fill="none" stroke="black"/>"#,
        LEFT + plot_w
    );

    for k in (x0.ceil() as i64)..=(x1.floor() as i64) {
        let x = sx(k as f64);
        let _ = writeln!(
            s,
            r#"<line class="tick" x1="{x:.2}" y1="{by:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">10<tspan dy="-6" font-size="9">{k}</tspan></text>"#,
            by + 5.0,
            by + 20.0
        );
    }
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r#"<line class="tick" x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            y + 4.0,
            tick_label(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">total NFEs (log scale)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(metric)
    );

    if points.len() > 1 {
        let upper: Vec<String> = points
            .iter()
            .zip(&xs)
            .map(|(p, x)| format!("{:.2},{:.2}", sx(*x), sy(p.mean + p.std)))
            .collect();
        let lower: Vec<String> = points
            .iter()
            .zip(&xs)
            .rev()
            .map(|(p, x)| format!("{:.2},{:.2}", sx(*x), sy(p.mean - p.std)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polygon class="band" points="{} {}" fill="#1f77b4" fill-opacity="0.2" stroke="none"/>"##,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = points
            .iter()
            .zip(&xs)
            .map(|(p, x)| format!("{:.2},{:.2}", sx(*x), sy(p.mean)))
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline class="mean" points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
            line.join(" ")
        );
    }
    for (p, x) in points.iter().zip(&xs) {
        let _ = writeln!(
            s,
            r##"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3.5" fill="#1f77b4"/>"##,
            sx(*x),
            sy(p.mean)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Series plus rendering in one call.
pub fn plot_scaling(baseline: &[Record], sweep: &[Record], dim: usize, metric: &str) -> Result<String> {
    Ok(render_svg(&series(baseline, sweep, dim, metric)?, metric))
}
