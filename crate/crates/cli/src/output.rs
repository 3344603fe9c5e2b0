//! CSV tables and static SVG regret plots.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use drc_core::regret_lab::{EpisodeSummary, Trace};
use serde::{Deserialize, Serialize};

pub const SUMMARY_COLUMNS: &[&str] = &[
    "block",
    "case",
    "alpha",
    "seed",
    "T",
    "m",
    "h",
    "regret",
    "bound",
    "realized",
    "comparator",
    "burn_in",
    "algorithm_truncation",
    "f_policy",
    "comparator_truncation",
    "policy_gap",
    "worst_drift_excess",
    "solver_converged",
    "restart_spread",
    "exponent",
];

pub const RATE_COLUMNS: &[&str] = &[
    "block",
    "case",
    "alpha",
    "T",
    "seeds",
    "mean_regret",
    "mean_bound",
    "regret_over_log_t",
    "slope",
    "intercept",
    "points",
];

pub const TRACE_COLUMNS: &[&str] = &[
    "t",
    "y",
    "u",
    "ynat",
    "loss",
    "memory_loss",
    "memoryless_loss",
    "eta",
    "curvature",
    "lambda",
    "grad_norm",
    "slack",
    "drift",
    "drift_bound",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub block: String,
    pub case: u32,
    pub alpha: Option<f64>,
    pub seed: u64,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub m: usize,
    pub h: usize,
    pub regret: f64,
    pub bound: f64,
    pub realized: f64,
    pub comparator: f64,
    pub burn_in: f64,
    pub algorithm_truncation: f64,
    pub f_policy: f64,
    pub comparator_truncation: f64,
    pub policy_gap: Option<f64>,
    pub worst_drift_excess: f64,
    pub solver_converged: bool,
    pub restart_spread: f64,
    pub exponent: Option<f64>,
}

impl SummaryRow {
    pub fn new(block: &str, case: u32, alpha: Option<f64>, s: &EpisodeSummary, exponent: Option<f64>) -> Self {
        Self {
            block: block.into(),
            case,
            alpha,
            seed: s.seed,
            horizon: s.horizon,
            m: s.m,
            h: s.h,
            regret: s.regret,
            bound: s.bound,
            realized: s.realized,
            comparator: s.comparator,
            burn_in: s.burn_in,
            algorithm_truncation: s.algorithm_truncation,
            f_policy: s.f_policy,
            comparator_truncation: s.comparator_truncation,
            policy_gap: s.policy_gap,
            worst_drift_excess: s.worst_drift_excess,
            solver_converged: s.solver_converged,
            restart_spread: s.restart_spread,
            exponent,
        }
    }

    /// Sum of the four decomposition terms minus the regret.
    pub fn decomposition_gap(&self) -> f64 {
        self.burn_in + self.algorithm_truncation + self.f_policy + self.comparator_truncation - self.regret
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub block: String,
    pub case: u32,
    pub alpha: Option<f64>,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seeds: usize,
    pub mean_regret: f64,
    pub mean_bound: f64,
    pub regret_over_log_t: f64,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub y: String,
    pub u: String,
    pub ynat: String,
    pub loss: f64,
    pub memory_loss: f64,
    pub memoryless_loss: f64,
    pub eta: f64,
    pub curvature: f64,
    pub lambda: f64,
    pub grad_norm: f64,
    pub slack: f64,
    pub drift: f64,
    pub drift_bound: f64,
}

fn join<'a>(v: impl IntoIterator<Item = &'a f64>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn trace_rows(trace: &Trace) -> Vec<TraceRow> {
    trace
        .steps
        .iter()
        .map(|s| TraceRow {
            t: s.t,
            y: join(s.y.iter()),
            u: join(s.u.iter()),
            ynat: join(s.ynat.iter()),
            loss: s.loss,
            memory_loss: s.memory_loss,
            memoryless_loss: s.memoryless_loss,
            eta: s.eta,
            curvature: s.curvature,
            lambda: s.lambda,
            grad_norm: s.grad_norm,
            slack: s.slack,
            drift: s.drift,
            drift_bound: s.drift_bound,
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, columns: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))?;
    w.write_record(columns)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One log-log curve of mean regret against horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(usize, f64)>,
    pub slope: Option<f64>,
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

/// Log-log SVG 1.1 plot of the curves, each legend entry annotated with
/// its fitted slope. Nonpositive points are skipped.
pub fn regret_svg(title: &str, curves: &[Curve]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 200.0, 40.0, 50.0);
    let pts: Vec<(f64, f64)> = curves
        .iter()
        .flat_map(|c| c.points.iter())
        .filter(|(_, r)| *r > 0.0)
        .map(|&(t, r)| ((t as f64).log2(), r.log10()))
        .collect();
    let span = |f: fn(&(f64, f64)) -> f64| {
        let lo = pts.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(|p| p.0);
    let (y0, y1) = span(|p| p.1);
    let (y0, y1) = (y0.floor(), y1.ceil().max(y0.floor() + 1.0));
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let mut k = x0.ceil() as i64;
    while (k as f64) <= x1 + 1e-9 {
        let x = sx(k as f64);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ddd"/>"##, top, top + ph);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, top + ph + 16.0, 1u64 << k.clamp(0, 62));
        k += 1;
    }
    let mut k = y0 as i64;
    while (k as f64) <= y1 + 1e-9 {
        let y = sy(k as f64);
        let _ = writeln!(s, r##"<line x1="{left}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{k}</text>"#, left - 6.0, y + 4.0);
        k += 1;
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">horizon T</text>"#, left + pw / 2.0, h - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">mean regret</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = c
            .points
            .iter()
            .filter(|(_, r)| *r > 0.0)
            .map(|&(t, r)| format!("{:.2},{:.2}", sx((t as f64).log2()), sy(r.log10())))
            .collect();
        if !coords.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, coords.join(" "));
            for p in &coords {
                let (x, y) = p.split_once(',').expect("formatted pair");
                let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
            }
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let slope = c.slope.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 18.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{} (slope {slope})</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed_enough() {
        let curves = vec![Curve {
            label: "case 1 <a>".into(),
            points: vec![(256, 10.0), (512, 14.0), (1024, -1.0)],
            slope: Some(0.5),
        }];
        let s = regret_svg("t", &curves);
        assert!(s.starts_with("<?xml"));
        assert!(s.contains(r#"version="1.1""#));
        assert!(s.contains("slope 0.500"));
        assert!(s.contains("&lt;a&gt;"));
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_plot_renders() {
        let s = regret_svg("none", &[]);
        assert!(s.contains("</svg>"));
    }
}
