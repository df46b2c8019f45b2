//! Deterministic SVG output: soft decision regions over 2-D data and line charts.

use std::fmt::Write as _;

use ndarray::Array2;

use crate::data::Dataset;
use crate::model::SoftmaxModel;
use crate::{Error, Result};

/// Canvas edge length in pixels for decision-region plots.
const CANVAS: f64 = 600.0;

pub const DEFAULT_PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Axis-aligned box `[x_min, x_max] × [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Bounds {
    /// Data extent padded by 10% on each side; a zero-width extent is padded by 1.
    pub fn from_data(x: &Array2<f64>) -> Result<Self> {
        if x.ncols() != 2 {
            return Err(not_2d(x.ncols()));
        }
        if x.nrows() == 0 {
            return Err(Error::Empty("data"));
        }
        let col = |j: usize| {
            x.column(j)
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                })
        };
        let pad = |(lo, hi): (f64, f64)| {
            let span = hi - lo;
            if span > 0.0 {
                (lo - 0.1 * span, hi + 0.1 * span)
            } else {
                (lo - 1.0, hi + 1.0)
            }
        };
        let (x_min, x_max) = pad(col(0));
        let (y_min, y_max) = pad(col(1));
        Ok(Bounds {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate plot bounds {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderSpec {
    /// Grid cells per axis.
    pub grid_resolution: usize,
    /// `None` derives the box from the data.
    pub bounds: Option<Bounds>,
    /// Colors as SVG color strings, cycled when `K` exceeds the palette.
    pub class_palette: Vec<String>,
    /// Point radius in canvas pixels.
    pub point_radius: f64,
}

impl Default for RenderSpec {
    fn default() -> Self {
        RenderSpec {
            grid_resolution: 300,
            bounds: None,
            class_palette: DEFAULT_PALETTE.iter().map(|s| s.to_string()).collect(),
            point_radius: 3.0,
        }
    }
}

fn not_2d(n: usize) -> Error {
    Error::invalid(format!(
        "decision regions need 2-D features, got N={n}; project the data to two dimensions first"
    ))
}

/// `(max σ − 1/K) / (1 − 1/K)`, clamped to `[0, 1]`.
pub fn confidence_alpha(probs: &[f64]) -> f64 {
    let k = probs.len() as f64;
    let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    ((max - 1.0 / k) / (1.0 - 1.0 / k)).clamp(0.0, 1.0)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders argmax regions of `model` on a grid, shaded by confidence, with the data drawn
/// on top in the color of its predicted cluster. Adjacent cells in a row with the same class
/// and (two-decimal) opacity are merged into one rectangle.
pub fn render_decision_regions(
    model: &SoftmaxModel,
    dataset: &Dataset,
    spec: &RenderSpec,
) -> Result<String> {
    if dataset.dim() != 2 {
        return Err(not_2d(dataset.dim()));
    }
    if model.input_dim() != 2 {
        return Err(not_2d(model.input_dim()));
    }
    if spec.grid_resolution < 16 {
        return Err(Error::invalid("grid resolution must be at least 16"));
    }
    if spec.class_palette.is_empty() {
        return Err(Error::invalid("palette is empty"));
    }
    let bounds = match spec.bounds {
        Some(b) => b,
        None => Bounds::from_data(&dataset.features)?,
    };
    bounds.validate()?;
    let res = spec.grid_resolution;
    let cell_w = (bounds.x_max - bounds.x_min) / res as f64;
    let cell_h = (bounds.y_max - bounds.y_min) / res as f64;
    let grid = Array2::from_shape_fn((res * res, 2), |(idx, j)| {
        let (row, col) = (idx / res, idx % res);
        if j == 0 {
            bounds.x_min + (col as f64 + 0.5) * cell_w
        } else {
            bounds.y_max - (row as f64 + 0.5) * cell_h
        }
    });
    let probs = model.predict_proba(grid.view())?;
    let k = model.num_classes();
    let color = |c: usize| spec.class_palette[c % spec.class_palette.len()].as_str();

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {res} {res}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{res}" height="{res}" fill="white"/>"#
    );
    let _ = writeln!(svg, r#"<g shape-rendering="crispEdges">"#);
    for row in 0..res {
        let mut col = 0;
        while col < res {
            let cell = |c: usize| {
                let p = probs.row(row * res + c);
                let p = p.as_slice().expect("contiguous");
                (
                    crate::simplex::argmax(p),
                    format!("{:.2}", confidence_alpha(p)),
                )
            };
            let (class, alpha) = cell(col);
            let mut end = col + 1;
            while end < res && cell(end) == (class, alpha.clone()) {
                end += 1;
            }
            if alpha != "0.00" {
                let _ = writeln!(
                    svg,
                    r#"<rect x="{col}" y="{row}" width="{}" height="1" fill="{}" fill-opacity="{alpha}"/>"#,
                    end - col,
                    color(class)
                );
            }
            col = end;
        }
    }
    let _ = writeln!(svg, "</g>");
    let assignments = model.predict(dataset.features.view())?;
    let radius = spec.point_radius * res as f64 / CANVAS;
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="{:.3}">"#,
        radius * 0.3
    );
    for (point, &c) in dataset.features.rows().into_iter().zip(&assignments) {
        let cx = (point[0] - bounds.x_min) / cell_w;
        let cy = (bounds.y_max - point[1]) / cell_h;
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{radius:.3}" fill="{}"/>"#,
            color(c % k)
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

/// One line of a chart.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect()
}

/// Line chart with axes, five-interval ticks and a legend. A single-point series is drawn as
/// a dot.
pub fn render_accuracy_curve(series: &[Series], x_label: &str, y_label: &str) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Empty("series"));
    }
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();
    if all.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::NonFinite("chart data".into()));
    }
    let range = |vals: Vec<f64>| {
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x_lo, x_hi) = range(all.iter().map(|p| p.0).collect());
    let (y_lo, y_hi) = range(all.iter().map(|p| p.1).collect());
    let (width, height) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 150.0, 20.0, 50.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let px = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| top + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{left},{top} V{} H{}" fill="none" stroke="black"/>"#,
        top + plot_h,
        left + plot_w
    );
    for t in ticks(x_lo, x_hi, 5) {
        let x = px(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + plot_h,
            top + plot_h + 5.0,
            top + plot_h + 18.0,
            format_tick(t)
        );
    }
    for t in ticks(y_lo, y_hi, 5) {
        let y = py(t);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 5.0,
            left - 8.0,
            y + 4.0,
            format_tick(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + plot_w / 2.0,
        height - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = DEFAULT_PALETTE[i % DEFAULT_PALETTE.len()];
        match s.points.len() {
            0 => {}
            1 => {
                let (x, y) = s.points[0];
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                    px(x),
                    py(y)
                );
            }
            _ => {
                let pts: Vec<String> = s
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                    .collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    pts.join(" ")
                );
            }
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + plot_w + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    let _ = writeln!(svg, "</svg>");
    Ok(svg)
}

fn format_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}
