//! Flat-file outputs: CSV tables for trial logs and aggregate reports, and
//! self-contained SVG plots.
//!
//! Every number is written as `{:.12e}` (13 significant digits), so a
//! read-back differs from the in-memory value by well under 1e-10 relative,
//! and identical runs produce byte-identical files. Lines always end in
//! `\n` regardless of platform.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use thiserror::Error;

use crate::feasible::ProjectionStatus;
use crate::harness::{AggregateReport, RunLog};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed table {path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

fn fmt_num<T: Real>(v: T) -> String {
    format!("{:.12e}", v.as_f64())
}

fn status_word(s: ProjectionStatus) -> &'static str {
    match s {
        ProjectionStatus::Interior => "interior",
        ProjectionStatus::Projected => "projected",
        ProjectionStatus::Fallback => "fallback",
    }
}

fn push_row<T: Real>(out: &mut String, step: usize, values: &[T]) {
    let _ = write!(out, "{step}");
    for v in values {
        let _ = write!(out, ",{}", fmt_num(*v));
    }
    out.push('\n');
}

fn vector_table<T: Real>(
    header_of: impl Fn(usize) -> String,
    first_step: usize,
    rows: &[DVector<T>],
) -> String {
    let width = rows.first().map_or(0, DVector::len);
    let mut out = String::from("step");
    for j in 0..width {
        let _ = write!(out, ",{}", header_of(j));
    }
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        push_row(&mut out, first_step + i, row.as_slice());
    }
    out
}

/// Renders each series of a trial log as its own CSV table, returned as
/// `(file name, contents)` pairs in a fixed order.
pub fn run_log_csvs<T: Real>(log: &RunLog<T>) -> Vec<(&'static str, String)> {
    let states = vector_table(|j| format!("x{j}"), 0, &log.states);
    let inputs = vector_table(|j| format!("u{j}"), 0, &log.inputs);

    // y and a share a table: both belong to the measurement taken at the
    // step in column one.
    let p = log.measurements.first().map_or(0, DVector::len);
    let mut measurements = String::from("step");
    for j in 0..p {
        let _ = write!(measurements, ",y{j}");
    }
    for j in 0..p {
        let _ = write!(measurements, ",a{j}");
    }
    measurements.push('\n');
    for (i, (y, a)) in log.measurements.iter().zip(&log.attacks).enumerate() {
        let mut vals: Vec<T> = y.as_slice().to_vec();
        vals.extend_from_slice(a.as_slice());
        push_row(&mut measurements, i + 1, &vals);
    }

    let mut readings = String::from("step,z\n");
    for (i, z) in log.scalar_readings.iter().enumerate() {
        push_row(&mut readings, i, &[*z]);
    }

    let n = log.linear_estimates.first().map_or(0, DVector::len);
    let mut estimates = String::from("step");
    for j in 0..n {
        let _ = write!(estimates, ",xl{j}");
    }
    for j in 0..n {
        let _ = write!(estimates, ",xq{j}");
    }
    estimates.push('\n');
    for (i, (xl, xq)) in log
        .linear_estimates
        .iter()
        .zip(&log.quad_estimates)
        .enumerate()
    {
        let mut vals: Vec<T> = xl.as_slice().to_vec();
        vals.extend_from_slice(xq.as_slice());
        push_row(&mut estimates, i, &vals);
    }

    let mut projections = String::from("step,status\n");
    for (i, s) in log.projections.iter().enumerate() {
        let _ = writeln!(projections, "{},{}", i + 1, status_word(*s));
    }

    vec![
        ("states.csv", states),
        ("inputs.csv", inputs),
        ("measurements.csv", measurements),
        ("readings.csv", readings),
        ("estimates.csv", estimates),
        ("projections.csv", projections),
    ]
}

/// Renders the aggregate report as CSV tables plus a key/value metadata
/// table. Extra metadata rows (config digest, paths) are appended after the
/// built-in ones.
pub fn report_csvs<T: Real>(
    report: &AggregateReport<T>,
    extra_metadata: &[(String, String)],
) -> Vec<(&'static str, String)> {
    let mut mse =
        String::from("step,mse_linear_mean,mse_linear_se,mse_quad_mean,mse_quad_se\n");
    for i in 0..report.mse_linear.mean.len() {
        push_row(
            &mut mse,
            i,
            &[
                report.mse_linear.mean[i],
                report.mse_linear.se[i],
                report.mse_quad.mean[i],
                report.mse_quad.se[i],
            ],
        );
    }

    let mut detection = String::from(
        "step,mmd_mean,mmd_se,threshold_mean,threshold_se,rejection_rate\n",
    );
    for i in 0..report.mmd.mean.len() {
        push_row(
            &mut detection,
            report.detector_window + i,
            &[
                report.mmd.mean[i],
                report.mmd.se[i],
                report.threshold.mean[i],
                report.threshold.se[i],
                report.rejection_rate[i],
            ],
        );
    }

    let mut fallbacks = String::from("step,count\n");
    for (i, c) in report.projection_fallbacks.iter().enumerate() {
        let _ = writeln!(fallbacks, "{},{}", i + 1, c);
    }

    let mut metadata = String::from("key,value\n");
    let total_fallbacks: usize = report.projection_fallbacks.iter().sum();
    let rows = [
        ("trials", report.trials.to_string()),
        ("horizon", report.horizon.to_string()),
        ("detector_window", report.detector_window.to_string()),
        ("attack_onset", report.attack_onset.to_string()),
        ("attack_enabled", report.attack_enabled.to_string()),
        ("master_seed", report.master_seed.to_string()),
        ("projection_fallbacks_total", total_fallbacks.to_string()),
    ];
    for (k, v) in rows {
        let _ = writeln!(metadata, "{k},{v}");
    }
    for (k, v) in extra_metadata {
        let _ = writeln!(metadata, "{k},{v}");
    }

    vec![
        ("mse.csv", mse),
        ("detection.csv", detection),
        ("fallbacks.csv", fallbacks),
        ("metadata.csv", metadata),
    ]
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, ExportError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| ExportError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes all trial-log tables into `dir` (created if missing). Returns the
/// paths written.
pub fn write_run_log<T: Real>(log: &RunLog<T>, dir: &Path) -> Result<Vec<PathBuf>, ExportError> {
    fs::create_dir_all(dir).map_err(|source| ExportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    run_log_csvs(log)
        .into_iter()
        .map(|(name, contents)| write_file(dir, name, &contents))
        .collect()
}

/// Writes all report tables into `dir` (created if missing).
pub fn write_report<T: Real>(
    report: &AggregateReport<T>,
    extra_metadata: &[(String, String)],
    dir: &Path,
) -> Result<Vec<PathBuf>, ExportError> {
    fs::create_dir_all(dir).map_err(|source| ExportError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    report_csvs(report, extra_metadata)
        .into_iter()
        .map(|(name, contents)| write_file(dir, name, &contents))
        .collect()
}

/// Reads an all-numeric CSV back as `(header, rows)`.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), ExportError> {
    let text = fs::read_to_string(path).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| ExportError::Malformed {
            path: path.to_path_buf(),
            message: "empty file".into(),
        })?
        .split(',')
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| ExportError::Malformed {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", lineno + 2),
        })?;
        if row.len() != header.len() {
            return Err(ExportError::Malformed {
                path: path.to_path_buf(),
                message: format!("line {}: expected {} columns", lineno + 2, header.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Reads an `estimates.csv` back into the two per-step estimate series
/// (linear first). The state dimension is inferred from the header.
pub fn read_estimates<T: Real>(
    path: &Path,
) -> Result<(Vec<DVector<T>>, Vec<DVector<T>>), ExportError> {
    let (header, rows) = read_table(path)?;
    let bad = |message: String| ExportError::Malformed {
        path: path.to_path_buf(),
        message,
    };
    if header.len() < 3 || header[0] != "step" || header.len() % 2 == 0 {
        return Err(bad("expected header step,xl0..,xq0..".into()));
    }
    let n = (header.len() - 1) / 2;
    for j in 0..n {
        if header[1 + j] != format!("xl{j}") || header[1 + n + j] != format!("xq{j}") {
            return Err(bad(format!("unexpected column name at position {}", 1 + j)));
        }
    }
    let mut linear = Vec::with_capacity(rows.len());
    let mut quad = Vec::with_capacity(rows.len());
    for row in rows {
        linear.push(DVector::from_iterator(n, row[1..1 + n].iter().map(|&v| T::cast(v))));
        quad.push(DVector::from_iterator(
            n,
            row[1 + n..].iter().map(|&v| T::cast(v)),
        ));
    }
    Ok((linear, quad))
}

// ---------------------------------------------------------------------------
// SVG plots
// ---------------------------------------------------------------------------

/// Which figure to render.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    Trajectories,
    Mse,
    Mmd,
}

impl std::str::FromStr for PlotKind {
    type Err = &'static str;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trajectories" => Ok(PlotKind::Trajectories),
            "mse" => Ok(PlotKind::Mse),
            "mmd" => Ok(PlotKind::Mmd),
            _ => Err("expected one of: trajectories, mse, mmd"),
        }
    }
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 46.0;

/// Maps data coordinates onto the pixel frame.
struct Frame {
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn from_ranges(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Self {
        let mut xmin = f64::INFINITY;
        let mut xmax = f64::NEG_INFINITY;
        for v in xs.filter(|v| v.is_finite()) {
            xmin = xmin.min(v);
            xmax = xmax.max(v);
        }
        let mut ymin = f64::INFINITY;
        let mut ymax = f64::NEG_INFINITY;
        for v in ys.filter(|v| v.is_finite()) {
            ymin = ymin.min(v);
            ymax = ymax.max(v);
        }
        if !xmin.is_finite() || !xmax.is_finite() {
            (xmin, xmax) = (0.0, 1.0);
        }
        if !ymin.is_finite() || !ymax.is_finite() {
            (ymin, ymax) = (0.0, 1.0);
        }
        if xmax - xmin < 1e-12 {
            xmin -= 0.5;
            xmax += 0.5;
        }
        if ymax - ymin < 1e-12 {
            ymin -= 0.5;
            ymax += 0.5;
        }
        let pad = (ymax - ymin) * 0.05;
        Self {
            xmin,
            xmax,
            ymin: ymin - pad,
            ymax: ymax + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.xmin) / (self.xmax - self.xmin) * (SVG_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - MARGIN_B - (y - self.ymin) / (self.ymax - self.ymin) * (SVG_H - MARGIN_T - MARGIN_B)
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn svg_head(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{title}</text>",
        SVG_W / 2.0
    );
    s
}

fn svg_axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1) = (f.px(f.xmin), f.px(f.xmax));
    let (y0, y1) = (f.py(f.ymin), f.py(f.ymax));
    let _ = writeln!(
        out,
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        out,
        "<text x=\"{x0:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        y0 + 16.0,
        tick_label(f.xmin)
    );
    let _ = writeln!(
        out,
        "<text x=\"{x1:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        y0 + 16.0,
        tick_label(f.xmax)
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{y0:.1}\" text-anchor=\"end\">{}</text>",
        x0 - 6.0,
        tick_label(f.ymin)
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
        x0 - 6.0,
        y1 + 4.0,
        tick_label(f.ymax)
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{xlabel}</text>",
        (x0 + x1) / 2.0,
        SVG_H - 10.0
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{ylabel}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

fn polyline_points(f: &Frame, pts: &[(f64, f64)]) -> String {
    let mut s = String::new();
    for (x, y) in pts {
        let _ = write!(s, "{:.2},{:.2} ", f.px(*x), f.py(*y));
    }
    s.trim_end().to_owned()
}

fn mean_polyline(out: &mut String, f: &Frame, pts: &[(f64, f64)], stroke: &str, dash: &str) {
    if pts.is_empty() {
        return;
    }
    let dash_attr = if dash.is_empty() {
        String::new()
    } else {
        format!(" stroke-dasharray=\"{dash}\"")
    };
    let _ = writeln!(
        out,
        "<polyline class=\"mean\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.8\"{dash_attr} points=\"{}\"/>",
        polyline_points(f, pts)
    );
}

/// Shaded mean±se band: upper edge followed by the reversed lower edge.
fn se_band(out: &mut String, f: &Frame, xs: &[f64], mean: &[f64], se: &[f64], fill: &str) {
    if xs.is_empty() {
        return;
    }
    let mut pts = String::new();
    for i in 0..xs.len() {
        let _ = write!(pts, "{:.2},{:.2} ", f.px(xs[i]), f.py(mean[i] + se[i]));
    }
    for i in (0..xs.len()).rev() {
        let _ = write!(pts, "{:.2},{:.2} ", f.px(xs[i]), f.py(mean[i] - se[i]));
    }
    let _ = writeln!(
        out,
        "<polygon class=\"band\" fill=\"{fill}\" fill-opacity=\"0.25\" stroke=\"none\" points=\"{}\"/>",
        pts.trim_end()
    );
}

fn onset_line(out: &mut String, f: &Frame, onset: f64) {
    if onset < f.xmin || onset > f.xmax {
        return;
    }
    let _ = writeln!(
        out,
        "<line class=\"onset\" x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
        f.py(f.ymin),
        f.py(f.ymax),
        x = f.px(onset)
    );
}

fn legend(out: &mut String, entries: &[(&str, &str)]) {
    let x = SVG_W - MARGIN_R - 150.0;
    for (i, (color, label)) in entries.iter().enumerate() {
        let y = MARGIN_T + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{x:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            x + 18.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\">{label}</text>",
            x + 24.0,
            y + 4.0
        );
    }
}

/// Planar paths: true evader and pursuer tracks plus both estimated pursuer
/// tracks, with a marker where the attack begins.
pub fn svg_trajectories<T: Real>(
    log: &RunLog<T>,
    attack_onset: usize,
    attack_enabled: bool,
) -> String {
    let seg = |v: &DVector<T>, at: usize| (v[at].as_f64(), v[at + 1].as_f64());
    let evader: Vec<_> = log.states.iter().map(|x| seg(x, 0)).collect();
    let pursuer: Vec<_> = log.states.iter().map(|x| seg(x, 4)).collect();
    let est_lin: Vec<_> = log.linear_estimates.iter().map(|x| seg(x, 4)).collect();
    let est_quad: Vec<_> = log.quad_estimates.iter().map(|x| seg(x, 4)).collect();

    let all = evader
        .iter()
        .chain(&pursuer)
        .chain(&est_lin)
        .chain(&est_quad);
    let f = Frame::from_ranges(all.clone().map(|p| p.0), all.map(|p| p.1));

    let mut out = svg_head("Pursuit trajectories");
    svg_axes(&mut out, &f, "x position", "y position");
    mean_polyline(&mut out, &f, &evader, "#1f77b4", "");
    mean_polyline(&mut out, &f, &pursuer, "#d62728", "");
    mean_polyline(&mut out, &f, &est_lin, "#2ca02c", "5 3");
    mean_polyline(&mut out, &f, &est_quad, "#9467bd", "5 3");
    if attack_enabled && attack_onset < pursuer.len() {
        let (mx, my) = pursuer[attack_onset];
        let _ = writeln!(
            out,
            "<circle class=\"onset\" cx=\"{:.1}\" cy=\"{:.1}\" r=\"5\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>",
            f.px(mx),
            f.py(my)
        );
    }
    legend(
        &mut out,
        &[
            ("#1f77b4", "evader (true)"),
            ("#d62728", "pursuer (true)"),
            ("#2ca02c", "pursuer (vector-channel est.)"),
            ("#9467bd", "pursuer (scalar-channel est.)"),
        ],
    );
    out.push_str("</svg>\n");
    out
}

/// Mean squared error of both observers over time, with SE bands and the
/// attack-onset line.
pub fn svg_mse<T: Real>(report: &AggregateReport<T>) -> String {
    let xs: Vec<f64> = (0..report.mse_linear.mean.len()).map(|i| i as f64).collect();
    let lin_mean: Vec<f64> = report.mse_linear.mean.iter().map(|v| v.as_f64()).collect();
    let lin_se: Vec<f64> = report.mse_linear.se.iter().map(|v| v.as_f64()).collect();
    let quad_mean: Vec<f64> = report.mse_quad.mean.iter().map(|v| v.as_f64()).collect();
    let quad_se: Vec<f64> = report.mse_quad.se.iter().map(|v| v.as_f64()).collect();

    let ys = lin_mean
        .iter()
        .zip(&lin_se)
        .chain(quad_mean.iter().zip(&quad_se))
        .flat_map(|(m, s)| [m + s, m - s]);
    let f = Frame::from_ranges(xs.iter().copied(), ys);

    let mut out = svg_head("Observer mean squared error");
    svg_axes(&mut out, &f, "step", "MSE");
    se_band(&mut out, &f, &xs, &lin_mean, &lin_se, "#d62728");
    se_band(&mut out, &f, &xs, &quad_mean, &quad_se, "#1f77b4");
    let lin_pts: Vec<_> = xs.iter().copied().zip(lin_mean.iter().copied()).collect();
    let quad_pts: Vec<_> = xs.iter().copied().zip(quad_mean.iter().copied()).collect();
    mean_polyline(&mut out, &f, &lin_pts, "#d62728", "");
    mean_polyline(&mut out, &f, &quad_pts, "#1f77b4", "");
    if report.attack_enabled {
        onset_line(&mut out, &f, report.attack_onset as f64);
    }
    legend(
        &mut out,
        &[
            ("#d62728", "vector-channel observer"),
            ("#1f77b4", "scalar-channel observer"),
        ],
    );
    out.push_str("</svg>\n");
    out
}

/// Detector statistic vs. its bootstrap threshold over time: exactly two
/// mean polylines with SE bands, the onset line, and shading over the
/// attacked steps.
pub fn svg_mmd<T: Real>(report: &AggregateReport<T>) -> String {
    let xs: Vec<f64> = (0..report.mmd.mean.len())
        .map(|i| (report.detector_window + i) as f64)
        .collect();
    let stat_mean: Vec<f64> = report.mmd.mean.iter().map(|v| v.as_f64()).collect();
    let stat_se: Vec<f64> = report.mmd.se.iter().map(|v| v.as_f64()).collect();
    let thr_mean: Vec<f64> = report.threshold.mean.iter().map(|v| v.as_f64()).collect();
    let thr_se: Vec<f64> = report.threshold.se.iter().map(|v| v.as_f64()).collect();

    let ys = stat_mean
        .iter()
        .zip(&stat_se)
        .chain(thr_mean.iter().zip(&thr_se))
        .flat_map(|(m, s)| [m + s, m - s]);
    let f = Frame::from_ranges(xs.iter().copied(), ys);

    let mut out = svg_head("Detector statistic vs. threshold");
    if report.attack_enabled {
        let onset = report.attack_onset as f64;
        if onset < f.xmax {
            let x0 = f.px(onset.max(f.xmin));
            let x1 = f.px(f.xmax);
            let _ = writeln!(
                out,
                "<rect class=\"attack-region\" x=\"{x0:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#fdd\" fill-opacity=\"0.5\"/>",
                f.py(f.ymax),
                x1 - x0,
                f.py(f.ymin) - f.py(f.ymax)
            );
        }
    }
    svg_axes(&mut out, &f, "step", "statistic");
    se_band(&mut out, &f, &xs, &stat_mean, &stat_se, "#1f77b4");
    se_band(&mut out, &f, &xs, &thr_mean, &thr_se, "#d62728");
    let stat_pts: Vec<_> = xs.iter().copied().zip(stat_mean.iter().copied()).collect();
    let thr_pts: Vec<_> = xs.iter().copied().zip(thr_mean.iter().copied()).collect();
    mean_polyline(&mut out, &f, &stat_pts, "#1f77b4", "");
    mean_polyline(&mut out, &f, &thr_pts, "#d62728", "6 3");
    if report.attack_enabled {
        onset_line(&mut out, &f, report.attack_onset as f64);
    }
    legend(
        &mut out,
        &[("#1f77b4", "statistic"), ("#d62728", "threshold")],
    );
    out.push_str("</svg>\n");
    out
}

/// Writes an already-rendered SVG to disk.
pub fn write_svg(path: &Path, contents: &str) -> Result<(), ExportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ExportError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SeriesStats;
    use approx::assert_relative_eq;

    fn dvec(vals: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(vals)
    }

    fn tiny_log() -> RunLog<f64> {
        RunLog {
            trial: 3,
            states: vec![
                dvec(&[0.0, 0.1, 0.2, 0.3, 1.0, 1.1, 1.2, 1.3]),
                dvec(&[0.5, 0.6, 0.7, 0.8, 1.5, 1.6, 1.7, 1.8]),
            ],
            inputs: vec![dvec(&[0.25, -0.5, 1.0, -1.0])],
            measurements: vec![dvec(&[0.51, 0.62, 1.53, 1.64])],
            attacks: vec![dvec(&[0.0, 0.0, 4.9, 4.95])],
            scalar_readings: vec![2.0, 2.125],
            linear_estimates: vec![
                dvec(&[0.0, 0.1, 0.2, 0.3, 1.0, 1.1, 1.2, 1.3]),
                dvec(&[0.49, 0.61, 0.71, 0.79, 1.51, 1.59, 1.71, 1.79]),
            ],
            quad_estimates: vec![
                dvec(&[0.0, 0.1, 0.2, 0.3, 1.0, 1.1, 1.2, 1.3]),
                dvec(&[0.5, 0.6, 0.7, 0.8, 1.5, 1.6, 1.7, 1.8]),
            ],
            projections: vec![ProjectionStatus::Projected],
        }
    }

    fn tiny_report() -> AggregateReport<f64> {
        AggregateReport {
            trials: 2,
            horizon: 4,
            detector_window: 2,
            attack_onset: 3,
            attack_enabled: true,
            master_seed: 42,
            mse_linear: SeriesStats {
                mean: vec![0.0, 0.1, 0.2, 0.3, 0.4],
                se: vec![0.0, 0.01, 0.02, 0.03, 0.04],
            },
            mse_quad: SeriesStats {
                mean: vec![0.0, 0.05, 0.1, 0.15, 0.2],
                se: vec![0.0, 0.005, 0.01, 0.015, 0.02],
            },
            mmd: SeriesStats {
                mean: vec![0.1, 0.2, 0.9],
                se: vec![0.01, 0.02, 0.09],
            },
            threshold: SeriesStats {
                mean: vec![0.5, 0.5, 0.5],
                se: vec![0.05, 0.05, 0.05],
            },
            rejection_rate: vec![0.0, 0.5, 1.0],
            projection_fallbacks: vec![0, 1, 0, 2],
        }
    }

    #[test]
    fn formatted_numbers_carry_thirteen_significant_digits() {
        let s = fmt_num(0.1_f64);
        assert_eq!(s, "1.000000000000e-1");
        let v: f64 = s.parse().unwrap();
        assert_relative_eq!(v, 0.1, epsilon = 1e-12);
        assert_eq!(fmt_num(0.0_f64), "0.000000000000e0");
        let pi: f64 = fmt_num(std::f64::consts::PI).parse().unwrap();
        assert_relative_eq!(pi, std::f64::consts::PI, epsilon = 1e-11);
    }

    #[test]
    fn run_log_tables_round_trip_through_disk() {
        let log = tiny_log();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_run_log(&log, dir.path()).unwrap();
        assert_eq!(paths.len(), 6);

        let (header, rows) = read_table(&dir.path().join("states.csv")).unwrap();
        assert_eq!(header[0], "step");
        assert_eq!(header.len(), 9);
        assert_eq!(rows.len(), 2);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row[0], i as f64);
            for j in 0..8 {
                assert_relative_eq!(row[1 + j], log.states[i][j], epsilon = 1e-10);
            }
        }

        let (header, rows) = read_table(&dir.path().join("measurements.csv")).unwrap();
        assert_eq!(
            header,
            ["step", "y0", "y1", "y2", "y3", "a0", "a1", "a2", "a3"]
        );
        assert_eq!(rows[0][0], 1.0);
        assert_relative_eq!(rows[0][5 + 2], 4.9, epsilon = 1e-10);

        let (_, rows) = read_table(&dir.path().join("readings.csv")).unwrap();
        assert_relative_eq!(rows[1][1], 2.125, epsilon = 1e-10);

        let (linear, quad) = read_estimates::<f64>(&dir.path().join("estimates.csv")).unwrap();
        assert_eq!(linear.len(), 2);
        for i in 0..2 {
            assert_relative_eq!(
                (&linear[i] - &log.linear_estimates[i]).norm(),
                0.0,
                epsilon = 1e-10
            );
            assert_relative_eq!(
                (&quad[i] - &log.quad_estimates[i]).norm(),
                0.0,
                epsilon = 1e-10
            );
        }

        let text = fs::read_to_string(dir.path().join("projections.csv")).unwrap();
        assert_eq!(text, "step,status\n1,projected\n");
    }

    #[test]
    fn report_tables_round_trip_through_disk() {
        let report = tiny_report();
        let dir = tempfile::tempdir().unwrap();
        let meta = vec![("config_digest".to_string(), "deadbeefdeadbeef".to_string())];
        write_report(&report, &meta, dir.path()).unwrap();

        let (header, rows) = read_table(&dir.path().join("mse.csv")).unwrap();
        assert_eq!(
            header,
            [
                "step",
                "mse_linear_mean",
                "mse_linear_se",
                "mse_quad_mean",
                "mse_quad_se"
            ]
        );
        assert_eq!(rows.len(), 5);
        assert_relative_eq!(rows[4][1], 0.4, epsilon = 1e-10);
        assert_relative_eq!(rows[4][3], 0.2, epsilon = 1e-10);

        let (header, rows) = read_table(&dir.path().join("detection.csv")).unwrap();
        assert_eq!(header.len(), 6);
        // Detection rows are indexed by absolute step, starting at W.
        assert_eq!(rows[0][0], 2.0);
        assert_eq!(rows[2][0], 4.0);
        assert_relative_eq!(rows[2][5], 1.0, epsilon = 1e-12);

        let text = fs::read_to_string(dir.path().join("metadata.csv")).unwrap();
        assert!(text.starts_with("key,value\n"));
        assert!(text.contains("trials,2\n"));
        assert!(text.contains("projection_fallbacks_total,3\n"));
        assert!(text.contains("config_digest,deadbeefdeadbeef\n"));

        let (_, rows) = read_table(&dir.path().join("fallbacks.csv")).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[3], vec![4.0, 2.0]);
    }

    #[test]
    fn empty_series_produce_header_only_files() {
        let report = AggregateReport::<f64> {
            trials: 0,
            horizon: 0,
            detector_window: 2,
            attack_onset: 10,
            attack_enabled: false,
            master_seed: 1,
            mse_linear: SeriesStats {
                mean: vec![],
                se: vec![],
            },
            mse_quad: SeriesStats {
                mean: vec![],
                se: vec![],
            },
            mmd: SeriesStats {
                mean: vec![],
                se: vec![],
            },
            threshold: SeriesStats {
                mean: vec![],
                se: vec![],
            },
            rejection_rate: vec![],
            projection_fallbacks: vec![],
        };
        let tables = report_csvs(&report, &[]);
        let mse = &tables.iter().find(|(n, _)| *n == "mse.csv").unwrap().1;
        assert_eq!(
            mse,
            "step,mse_linear_mean,mse_linear_se,mse_quad_mean,mse_quad_se\n"
        );
        let det = &tables
            .iter()
            .find(|(n, _)| *n == "detection.csv")
            .unwrap()
            .1;
        assert_eq!(det.lines().count(), 1);
    }

    #[test]
    fn identical_logs_export_identical_bytes() {
        let log = tiny_log();
        let a = run_log_csvs(&log);
        let b = run_log_csvs(&log);
        assert_eq!(a, b);
        let report = tiny_report();
        assert_eq!(report_csvs(&report, &[]), report_csvs(&report, &[]));
    }

    #[test]
    fn estimates_reader_rejects_odd_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("estimates.csv");
        fs::write(&path, "step,xl0,xq0,xq1\n0,1,2,3\n").unwrap();
        assert!(matches!(
            read_estimates::<f64>(&path),
            Err(ExportError::Malformed { .. })
        ));
        fs::write(&path, "step,foo,xq0\n0,1,2\n").unwrap();
        assert!(read_estimates::<f64>(&path).is_err());
    }

    #[test]
    fn mmd_plot_has_exactly_two_mean_polylines_plus_bands() {
        let svg = svg_mmd(&tiny_report());
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("class=\"band\"").count(), 2);
        assert_eq!(svg.matches("class=\"attack-region\"").count(), 1);
        assert_eq!(svg.matches("class=\"onset\"").count(), 1);
    }

    #[test]
    fn mse_plot_has_two_curves_and_onset_line() {
        let svg = svg_mse(&tiny_report());
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("class=\"band\"").count(), 2);
        assert_eq!(svg.matches("class=\"onset\"").count(), 1);
    }

    #[test]
    fn trajectory_plot_draws_all_four_paths_and_marker() {
        let svg = svg_trajectories(&tiny_log(), 1, true);
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert_eq!(svg.matches("<circle class=\"onset\"").count(), 1);
        let unmarked = svg_trajectories(&tiny_log(), 1, false);
        assert_eq!(unmarked.matches("<circle").count(), 0);
    }

    #[test]
    fn empty_report_still_renders_axes_only_svg() {
        let report = AggregateReport::<f64> {
            trials: 0,
            horizon: 0,
            detector_window: 2,
            attack_onset: 10,
            attack_enabled: false,
            master_seed: 1,
            mse_linear: SeriesStats {
                mean: vec![],
                se: vec![],
            },
            mse_quad: SeriesStats {
                mean: vec![],
                se: vec![],
            },
            mmd: SeriesStats {
                mean: vec![],
                se: vec![],
            },
            threshold: SeriesStats {
                mean: vec![],
                se: vec![],
            },
            rejection_rate: vec![],
            projection_fallbacks: vec![],
        };
        for svg in [svg_mse(&report), svg_mmd(&report)] {
            assert!(svg.starts_with("<svg"));
            assert!(svg.trim_end().ends_with("</svg>"));
            assert_eq!(svg.matches("<polyline").count(), 0);
            // Axes are present even with no data.
            assert!(svg.matches("<line").count() >= 2);
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let report = tiny_report();
        assert_eq!(svg_mmd(&report), svg_mmd(&report));
        assert_eq!(svg_mse(&report), svg_mse(&report));
        let log = tiny_log();
        assert_eq!(
            svg_trajectories(&log, 1, true),
            svg_trajectories(&log, 1, true)
        );
    }

    #[test]
    fn plot_kind_parses_from_cli_words() {
        assert_eq!("mse".parse::<PlotKind>().unwrap(), PlotKind::Mse);
        assert_eq!("mmd".parse::<PlotKind>().unwrap(), PlotKind::Mmd);
        assert_eq!(
            "trajectories".parse::<PlotKind>().unwrap(),
            PlotKind::Trajectories
        );
        assert!("pie".parse::<PlotKind>().is_err());
    }
}
