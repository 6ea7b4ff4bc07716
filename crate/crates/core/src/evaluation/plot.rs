//! Trajectory CSV files and stacked SVG time-series plots.
//!
//! The SVG has five panels (q1, q2, qd1, qd2, tau). Within a panel with value
//! range `[y_min, y_max]`, top edge `top` and height `height` (all written as
//! `data-*` attributes on the panel's `<g>`), a value `y` is drawn at
//!
//! ```text
//! py = top + height · (y_max − y) / (y_max − y_min)
//! ```
//!
//! Reference lines (class `ref`, dashed) mark ±π on the angle panels, 0 on the
//! velocity panels and ±torque_limit on the torque panel.

use std::fmt::Write as _;
use std::path::Path;

use super::TrajectoryPoint;
use crate::dynamics::PlantState;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const TRAJECTORY_HEADER: [&str; 6] = ["t", "q1", "q2", "qd1", "qd2", "tau"];

pub fn write_trajectory_csv<T: Real>(points: &[TrajectoryPoint<T>], path: &Path) -> Result<()> {
    let mut out = TRAJECTORY_HEADER.join(",");
    out.push('\n');
    for p in points {
        let s = p.state;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            p.t, s.q1, s.q2, s.qd1, s.qd2, p.torque
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a trajectory CSV. Errors name the first offending line (1-based,
/// header is line 1). `in_goal` is not stored in the file and reads as false.
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryPoint<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedCsv(format!("line 1: {e}")))?
        .clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != TRAJECTORY_HEADER {
        return Err(Error::MalformedCsv(format!(
            "line 1: expected header {}, found {}",
            TRAJECTORY_HEADER.join(","),
            names.join(",")
        )));
    }
    let mut points = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::MalformedCsv(format!("line {line}: {e}")))?;
        if record.len() != TRAJECTORY_HEADER.len() {
            return Err(Error::MalformedCsv(format!(
                "line {line}: expected 6 fields, found {}",
                record.len()
            )));
        }
        let mut v = [0.0f64; 6];
        for (j, field) in record.iter().enumerate() {
            v[j] = field
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| {
                    Error::MalformedCsv(format!(
                        "line {line}: column `{}` is not a finite number: `{field}`",
                        TRAJECTORY_HEADER[j]
                    ))
                })?;
        }
        points.push(TrajectoryPoint {
            t: v[0],
            state: PlantState::new(v[1], v[2], v[3], v[4]),
            torque: v[5],
            in_goal: false,
        });
    }
    if points.is_empty() {
        return Err(Error::MalformedCsv("line 2: no data rows".into()));
    }
    Ok(points)
}

/// Vertical mapping of one panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelAxis {
    pub label: &'static str,
    pub y_min: f64,
    pub y_max: f64,
    pub top: f64,
    pub height: f64,
    pub references: Vec<f64>,
}

impl PanelAxis {
    pub fn to_px(&self, y: f64) -> f64 {
        self.top + self.height * (self.y_max - y) / (self.y_max - self.y_min)
    }

    pub fn from_px(&self, py: f64) -> f64 {
        self.y_max - (py - self.top) / self.height * (self.y_max - self.y_min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotLayout {
    pub width: f64,
    pub left: f64,
    pub right: f64,
    pub top: f64,
    pub panel_height: f64,
    pub gap: f64,
}

impl Default for PlotLayout {
    fn default() -> Self {
        Self {
            width: 900.0,
            left: 80.0,
            right: 20.0,
            top: 20.0,
            panel_height: 130.0,
            gap: 30.0,
        }
    }
}

impl PlotLayout {
    fn height(&self, panels: usize) -> f64 {
        self.top + panels as f64 * (self.panel_height + self.gap) + 20.0
    }
}

fn padded_range(values: impl Iterator<Item = f64>, references: &[f64]) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.chain(references.iter().copied()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return (-1.0, 1.0);
    }
    let span = hi - lo;
    if span <= 0.0 {
        return (lo - 1.0, hi + 1.0);
    }
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Renders the five stacked panels as a standalone SVG document.
pub fn render_svg<T: Real>(
    points: &[TrajectoryPoint<T>],
    torque_limit: f64,
    layout: &PlotLayout,
) -> String {
    use std::f64::consts::PI;
    let series: [(&'static str, Vec<f64>, Vec<f64>); 5] = [
        (
            "q1 [rad]",
            points.iter().map(|p| p.state.q1.as_f64()).collect(),
            vec![-PI, PI],
        ),
        (
            "q2 [rad]",
            points.iter().map(|p| p.state.q2.as_f64()).collect(),
            vec![-PI, PI],
        ),
        (
            "qd1 [rad/s]",
            points.iter().map(|p| p.state.qd1.as_f64()).collect(),
            vec![0.0],
        ),
        (
            "qd2 [rad/s]",
            points.iter().map(|p| p.state.qd2.as_f64()).collect(),
            vec![0.0],
        ),
        (
            "tau [Nm]",
            points.iter().map(|p| p.torque.as_f64()).collect(),
            vec![-torque_limit, torque_limit],
        ),
    ];
    let times: Vec<f64> = points.iter().map(|p| p.t.as_f64()).collect();
    let t0 = times.first().copied().unwrap_or(0.0);
    let t1 = times
        .last()
        .copied()
        .filter(|&t| t > t0)
        .unwrap_or(t0 + 1.0);
    let plot_w = layout.width - layout.left - layout.right;
    let x_px = |t: f64| layout.left + plot_w * (t - t0) / (t1 - t0);

    let height = layout.height(series.len());
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" viewBox="0 0 {w} {height}" font-family="sans-serif" font-size="11">"#,
        w = layout.width
    )
    .unwrap();
    writeln!(
        svg,
        r#"<rect x="0" y="0" width="{}" height="{height}" fill="white"/>"#,
        layout.width
    )
    .unwrap();

    for (k, (label, values, references)) in series.iter().enumerate() {
        let (y_min, y_max) = padded_range(values.iter().copied(), references);
        let axis = PanelAxis {
            label,
            y_min,
            y_max,
            top: layout.top + k as f64 * (layout.panel_height + layout.gap),
            height: layout.panel_height,
            references: references.clone(),
        };
        writeln!(
            svg,
            r#"<g class="panel" data-label="{label}" data-ymin="{y_min}" data-ymax="{y_max}" data-top="{}" data-height="{}">"#,
            axis.top, axis.height
        )
        .unwrap();
        writeln!(
            svg,
            r##"<rect x="{}" y="{}" width="{plot_w}" height="{}" fill="none" stroke="#444"/>"##,
            layout.left, axis.top, axis.height
        )
        .unwrap();
        for &r in references {
            let py = axis.to_px(r);
            writeln!(
                svg,
                r##"<line class="ref" data-value="{r}" x1="{}" y1="{py}" x2="{}" y2="{py}" stroke="#888" stroke-dasharray="6,4"/>"##,
                layout.left,
                layout.left + plot_w
            )
            .unwrap();
        }
        let mut path = String::new();
        for (t, v) in times.iter().zip(values) {
            write!(path, "{:.2},{:.2} ", x_px(*t), axis.to_px(*v)).unwrap();
        }
        writeln!(
            svg,
            r##"<polyline class="series" fill="none" stroke="#1f77b4" stroke-width="1" points="{}"/>"##,
            path.trim_end()
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="8" y="{}">{label}</text>"#,
            axis.top + axis.height / 2.0
        )
        .unwrap();
        for (value, anchor) in [(y_max, axis.top + 10.0), (y_min, axis.top + axis.height)] {
            writeln!(
                svg,
                r#"<text x="{}" y="{anchor}" text-anchor="end">{value:.2}</text>"#,
                layout.left - 4.0
            )
            .unwrap();
        }
        svg.push_str("</g>\n");
    }
    let bottom =
        layout.top + series.len() as f64 * (layout.panel_height + layout.gap) - layout.gap + 15.0;
    writeln!(
        svg,
        r#"<text x="{}" y="{bottom}">{t0:.1} s</text>"#,
        layout.left
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="{bottom}" text-anchor="end">{t1:.1} s</text>"#,
        layout.left + plot_w
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

pub fn write_trajectory_svg<T: Real>(
    points: &[TrajectoryPoint<T>],
    torque_limit: f64,
    path: &Path,
) -> Result<()> {
    std::fs::write(
        path,
        render_svg(points, torque_limit, &PlotLayout::default()),
    )
    .map_err(|e| Error::io(path, e))
}
