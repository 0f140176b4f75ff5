//! Training-curve plots and summary table for a finished run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use pdforge_core::scoring::{CONSTRAINT_NAMES, NUM_CONSTRAINTS};

use crate::{Failure, Outcome};

/// Columns of `metrics.csv`, one vector per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Metrics {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.columns[i])
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_metrics(path: &Path) -> Outcome<Metrics> {
    let bad = |msg: String| Failure::validation(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut columns = vec![Vec::new(); names.len()];
    for record in reader.records() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        for (col, field) in columns.iter_mut().zip(record.iter()) {
            col.push(field.parse::<f64>().map_err(|e| bad(format!("`{field}`: {e}")))?);
        }
    }
    let metrics = Metrics { names, columns };
    for name in panel_names() {
        if metrics.column(&name).is_none() {
            return Err(bad(format!("missing column `{name}`")));
        }
    }
    if metrics.column("iter").is_none() {
        return Err(bad("missing column `iter`".into()));
    }
    if metrics.is_empty() {
        return Err(bad("no rows".into()));
    }
    Ok(metrics)
}

/// Reward followed by the five constraint expectations.
pub fn panel_names() -> Vec<String> {
    std::iter::once("reward".to_string())
        .chain(CONSTRAINT_NAMES.iter().map(|n| format!("c_{n}")))
        .collect()
}

fn draw_error<E: std::fmt::Debug>(e: E) -> Failure {
    Failure::internal(format!("plot rendering failed: {e:?}"))
}

fn panel(path: &Path, title: &str, xs: &[f64], ys: &[f64], threshold: Option<f64>) -> Outcome<()> {
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_error)?;
    let x_max = xs.last().copied().unwrap_or(0.0).max(1.0);
    let mut lo = ys.iter().copied().chain(threshold).fold(f64::INFINITY, f64::min);
    let mut hi = ys.iter().copied().chain(threshold).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(0.01);
    lo -= pad;
    hi += pad;

    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..x_max, lo..hi)
        .map_err(draw_error)?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc(title)
        .draw()
        .map_err(draw_error)?;
    if let Some(t) = threshold {
        chart
            .draw_series(LineSeries::new([(0.0, t), (x_max, t)], RED.stroke_width(1)))
            .map_err(draw_error)?;
    }
    let points: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    chart
        .draw_series(LineSeries::new(points.iter().copied(), BLUE.stroke_width(2)))
        .map_err(draw_error)?;
    if points.len() == 1 {
        chart
            .draw_series(points.iter().map(|&p| Circle::new(p, 4, BLUE.filled())))
            .map_err(draw_error)?;
    }
    root.present().map_err(draw_error)
}

/// Fixed-width table of initial, final, min and max of every column.
pub fn summary(metrics: &Metrics) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "iterations {}", metrics.len().saturating_sub(1));
    let _ = writeln!(out, "{:<14} {:>14} {:>14} {:>14} {:>14}", "metric", "initial", "final", "min", "max");
    for (name, col) in metrics.names.iter().zip(&metrics.columns) {
        if name == "iter" {
            continue;
        }
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            out,
            "{:<14} {:>14.6} {:>14.6} {:>14.6} {:>14.6}",
            name,
            col[0],
            col[col.len() - 1],
            min,
            max
        );
    }
    out
}

/// Writes `<panel>.svg` for the reward and each constraint, plus
/// `summary.txt`, into `out`. Returns the written paths.
pub fn render(
    metrics: &Metrics,
    thresholds: Option<&[f64; NUM_CONSTRAINTS]>,
    out: &Path,
) -> Outcome<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Failure::io("create", out, e))?;
    let xs = metrics.column("iter").expect("checked when read");
    let mut written = Vec::new();
    for (i, name) in panel_names().iter().enumerate() {
        let path = out.join(format!("{name}.svg"));
        let threshold = if i == 0 { None } else { thresholds.map(|t| t[i - 1]) };
        panel(&path, name, xs, metrics.column(name).expect("checked when read"), threshold)?;
        written.push(path);
    }
    let path = out.join("summary.txt");
    std::fs::write(&path, summary(metrics)).map_err(|e| Failure::io("write", &path, e))?;
    written.push(path);
    Ok(written)
}
