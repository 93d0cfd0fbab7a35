//! Result files: per-variant CSVs, the run manifest, and the comparison SVG.
//!
//! CSV floats use Rust's shortest round-trip formatting, so values read back
//! from a file are bit-identical to the ones written.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{IouTensor, SimConfig};
use crate::stats::BoxPlotStats;

pub const ERRORS_CSV: &str = "errors.csv";
pub const IOU_STATS_CSV: &str = "iou_stats.csv";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const COMPARE_SVG: &str = "compare.svg";
pub const IOU_TENSOR_BIN: &str = "iou.bin";

pub const ERRORS_HEADER: &str = "t,E";
pub const IOU_STATS_HEADER: &str = "t,q1,median,q3,lo,hi,mean";

pub fn errors_csv(errors: &[f64]) -> String {
    let mut out = String::with_capacity(errors.len() * 24);
    out.push_str(ERRORS_HEADER);
    out.push('\n');
    for (i, e) in errors.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, e);
    }
    out
}

pub fn iou_stats_csv(stats: &[BoxPlotStats]) -> String {
    let mut out = String::with_capacity(stats.len() * 96);
    out.push_str(IOU_STATS_HEADER);
    out.push('\n');
    for s in stats {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            s.t, s.q1, s.median, s.q3, s.lo_whisker, s.hi_whisker, s.mean
        );
    }
    out
}

fn parse_rows(text: &str, header: &str, columns: usize) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        other => {
            return Err(Error::Config(format!(
                "expected header `{header}`, found {other:?}"
            )))
        }
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let row: Vec<f64> = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 2)))?;
            if row.len() != columns {
                return Err(Error::Config(format!(
                    "line {}: expected {columns} fields, got {}",
                    i + 2,
                    row.len()
                )));
            }
            Ok(row)
        })
        .collect()
}

/// Parses an `errors.csv` document back into the E series.
pub fn parse_errors_csv(text: &str) -> Result<Vec<f64>> {
    Ok(parse_rows(text, ERRORS_HEADER, 2)?
        .into_iter()
        .map(|r| r[1])
        .collect())
}

pub fn parse_iou_stats_csv(text: &str) -> Result<Vec<BoxPlotStats>> {
    Ok(parse_rows(text, IOU_STATS_HEADER, 7)?
        .into_iter()
        .map(|r| BoxPlotStats {
            t: r[0] as usize,
            q1: r[1],
            median: r[2],
            q3: r[3],
            lo_whisker: r[4],
            hi_whisker: r[5],
            mean: r[6],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorShape {
    pub iterations: usize,
    pub points: usize,
    pub shapes: usize,
    pub targets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: SimConfig,
    pub version: String,
    pub wall_time_secs: f64,
    pub clamp_events: u64,
    /// Set when `iou.bin` was written alongside.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_tensor: Option<TensorShape>,
}

impl RunManifest {
    pub fn new(config: SimConfig, wall_time_secs: f64, clamp_events: u64) -> Self {
        Self {
            config,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            wall_time_secs,
            clamp_events,
            iou_tensor: None,
        }
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Output {
        path: path.to_owned(),
        source,
    })
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Output {
        path: path.to_owned(),
        source,
    })
}

/// Writes `errors.csv`, `iou_stats.csv` and `manifest.json` into `dir`.
pub fn write_variant(
    dir: &Path,
    errors: &[f64],
    stats: &[BoxPlotStats],
    manifest: &RunManifest,
) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join(ERRORS_CSV), errors_csv(errors).as_bytes())?;
    write_file(&dir.join(IOU_STATS_CSV), iou_stats_csv(stats).as_bytes())?;
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    write_file(&dir.join(MANIFEST_JSON), json.as_bytes())
}

/// Raw little-endian `f64` dump in `(t, point, shape, target)` order.
pub fn write_iou_tensor(path: &Path, tensor: &IouTensor) -> Result<()> {
    let bytes: Vec<u8> = tensor.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(path, &bytes)
}

pub fn read_iou_tensor(path: &Path, shape: &TensorShape) -> Result<IouTensor> {
    let bytes = fs::read(path)?;
    let expected = shape.iterations * shape.points * shape.shapes * shape.targets * 8;
    if bytes.len() != expected {
        return Err(Error::Config(format!(
            "{}: expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(IouTensor {
        iterations: shape.iterations,
        points: shape.points,
        shapes: shape.shapes,
        targets: shape.targets,
        data,
    })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 90.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

/// Rounds a span to a 1/2/5 × 10ᵏ tick step giving roughly `target` ticks.
fn tick_step(span: f64, target: usize) -> f64 {
    if span <= 0.0 || !span.is_finite() {
        return 1.0;
    }
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Line chart with one polyline per `(label, series)`; x is the 1-based
/// iteration.
pub fn render_comparison_svg(title: &str, curves: &[(String, Vec<f64>)]) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let n = curves
        .iter()
        .map(|(_, s)| s.len())
        .max()
        .unwrap_or(0)
        .max(1);
    let (mut lo, mut hi) = curves
        .iter()
        .flat_map(|(_, s)| s.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let y_step = tick_step(hi - lo, 6);
    let y_min = (lo / y_step).floor() * y_step;
    let y_max = (hi / y_step).ceil() * y_step;
    let x_max = n.max(2) as f64;
    let sx = |t: f64| MARGIN_LEFT + (t - 1.0) / (x_max - 1.0) * plot_w;
    let sy = |v: f64| MARGIN_TOP + (y_max - v) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    );

    // Axes.
    let (x0, y0, x1, y1) = (
        MARGIN_LEFT,
        MARGIN_TOP + plot_h,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP,
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.2} {y1:.2} L{x0:.2} {y0:.2} L{x1:.2} {y0:.2}" fill="none" stroke="black"/>"#
    );

    let mut v = y_min;
    while v <= y_max + y_step * 1e-9 {
        let y = sy(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            x0 - 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            y + 4.0,
            fmt_tick(v)
        );
        v += y_step;
    }
    let x_step = tick_step(x_max - 1.0, 8).max(1.0);
    let mut t = 0.0;
    while t <= x_max + 1e-9 {
        if t >= 1.0 {
            let x = sx(t);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                y0 + 5.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y0 + 20.0,
                fmt_tick(t)
            );
        }
        t += x_step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 8.0
    );

    for (k, (label, series)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut points = String::new();
        for (i, v) in series.iter().enumerate() {
            if !points.is_empty() {
                points.push(' ');
            }
            let _ = write!(points, "{:.2},{:.2}", sx(i as f64 + 1.0), sy(*v));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>"#
        );
        let ly = MARGIN_TOP + 10.0 + 18.0 * k as f64;
        let lx = x1 + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Rebuilds the comparison chart from `<root>/<variant>/errors.csv` files.
pub fn comparison_svg_from_dirs(root: &Path, variants: &[String]) -> Result<String> {
    let curves = variants
        .iter()
        .map(|name| {
            let path: PathBuf = root.join(name).join(ERRORS_CSV);
            let text = fs::read_to_string(&path)?;
            Ok((name.clone(), parse_errors_csv(&text)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(render_comparison_svg("Regression error sum", &curves))
}

pub fn write_comparison_svg(root: &Path, variants: &[String]) -> Result<()> {
    let svg = comparison_svg_from_dirs(root, variants)?;
    write_file(&root.join(COMPARE_SVG), svg.as_bytes())
}
