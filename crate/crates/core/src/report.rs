//! Artifacts: trajectory and convergence CSVs, the JSON run report and the
//! SVG tracking plot.
//!
//! Floats are written with 17 significant digits in exponent form so a CSV
//! parses back to the exact logged values. The report holds no timing data
//! and is byte-identical for identical inputs; wall-clock goes to a sidecar.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::pso::StopReason;
use crate::sim::{ArmReport, SearchSummary, Trajectory};

pub const TRAJECTORY_HEADER: &str = "t,y_des,y,u,e1,e2,theta_f_norm,theta_g_norm,P1,P2,x,flags";
pub const CONVERGENCE_HEADER: &str = "iter,gbest,mean";

fn num(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(256 * (traj.rows.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in &traj.rows {
        for v in [r.t, r.y_des, r.y, r.u, r.e1, r.e2, r.theta_f_norm, r.theta_g_norm, r.p1, r.p2, r.x] {
            num(&mut out, v);
            out.push(',');
        }
        let _ = writeln!(out, "{}", r.flags);
    }
    out
}

/// One row per completed iteration: global best and swarm mean fitness.
pub fn convergence_csv(history: &[f64], mean: &[f64]) -> String {
    let mut out = String::from(CONVERGENCE_HEADER);
    out.push('\n');
    for (i, (g, m)) in history.iter().zip(mean).enumerate() {
        let _ = write!(out, "{i},");
        num(&mut out, *g);
        out.push(',');
        num(&mut out, *m);
        out.push('\n');
    }
    out
}

/// Parses a CSV written by [`trajectory_csv`] or [`convergence_csv`] into
/// its header and numeric rows.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().ok_or("empty CSV")?.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|f| f.parse::<f64>().map_err(|e| format!("row {}: {e}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != header.len() {
            return Err(format!("row {} has {} fields, header has {}", i + 1, row.len(), header.len()));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchReport {
    pub dims: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub gbest: f64,
}

impl From<&SearchSummary> for SearchReport {
    fn from(s: &SearchSummary) -> Self {
        Self { dims: s.dims, iterations: s.iterations, stop_reason: s.stop_reason, gbest: s.best_fitness }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<ArmReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimized: Option<ArmReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub improvement_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchReport>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report types serialize infallibly");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
    pub workers: usize,
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_artifact(dir: &Path, name: &str, contents: &str) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), contents)
}

/// A named polyline for [`svg_plot`].
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

/// Line chart of the given series on shared axes.
pub fn svg_plot(title: &str, y_label: &str, series: &[Series<'_>]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 480.0;
    const L: f64 = 70.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;

    let finite = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in finite {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0).max(1e-9);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let sx = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let sy = |y: f64| T + (y1 - y) / (y1 - y0) * (H - T - B);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ =
        writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - L - R,
        H - T - B
    );
    for i in 0..=5 {
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let _ =
            writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(fx), H - B + 18.0, tick(fx));
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, L - 6.0, sy(fy) + 4.0, tick(fy));
        let _ =
            writeln!(out, r##"<line x1="{L}" x2="{}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/>"##, W - R, sy(fy), sy(fy));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#, (L + W - R) / 2.0, H - 10.0);
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let mut pts = String::new();
        for &(x, y) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
            let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y.clamp(y0, y1)));
        }
        let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
            s.color,
            pts.trim_end()
        );
        let ly = T + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" x2="{}" y1="{ly}" y2="{ly}" stroke="{}" stroke-width="2"{dash}/>"#,
            W - R - 170.0,
            W - R - 140.0,
            s.color
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, W - R - 134.0, ly + 4.0, escape(s.label));
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
