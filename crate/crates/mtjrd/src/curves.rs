//! Rate-accuracy curves as CSV (`bpp,accuracy`) or JSON, and SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use mtjrd_core::evaluation::RateAccuracyCurve;
use mtjrd_core::Task;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::responses::{read_json, write_json};

pub const CURVE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFile {
    pub schema_version: u32,
    pub label: String,
    pub task: Task,
    /// `(bpp, accuracy)` in ascending rate.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    bpp: f64,
    accuracy: f64,
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

pub fn write_curve(path: &Path, curve: &RateAccuracyCurve) -> Result<()> {
    if is_json(path) {
        return write_json(
            path,
            &CurveFile {
                schema_version: CURVE_SCHEMA_VERSION,
                label: curve.label.clone(),
                task: curve.task,
                points: curve.points().to_vec(),
            },
        );
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for &(bpp, accuracy) in curve.points() {
        w.serialize(CsvRow { bpp, accuracy }).map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a curve. CSV files carry no metadata, so their label is the
/// file stem and their task is `task`.
pub fn read_curve(path: &Path, task: Task) -> Result<RateAccuracyCurve> {
    if is_json(path) {
        let f: CurveFile = read_json(path)?;
        if f.schema_version != CURVE_SCHEMA_VERSION {
            return Err(Error::format(path, format!("unsupported schema_version {}", f.schema_version)));
        }
        return RateAccuracyCurve::new(f.label, f.task, f.points).map_err(|e| Error::format(path, e.to_string()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let points = r
        .deserialize::<CsvRow>()
        .map(|row| row.map(|r| (r.bpp, r.accuracy)).map_err(|e| Error::format(path, e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    RateAccuracyCurve::new(label, task, points).map_err(|e| Error::format(path, e.to_string()))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line plot of accuracy against bits per pixel, one polyline per curve.
pub fn svg_plot(title: &str, curves: &[RateAccuracyCurve]) -> String {
    let (w, h, m) = (640.0, 420.0, 56.0);
    let pts = curves.iter().flat_map(|c| c.points().iter().copied());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {m} V{} H{}" fill="none" stroke="black"/>"#,
        h - m,
        w - m
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{fx:.3}</text>"#, sx(fx), h - m + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{fy:.3}</text>"#, m - 6.0, sy(fy) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">bpp</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle" font-family="sans-serif" font-size="12">accuracy</text>"#, h / 2.0, h / 2.0);
    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = c.points().iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, d.join(" "));
        for &(x, y) in c.points() {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, sx(x), sy(y));
        }
        let ly = m + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="12" fill="{colour}">{} ({})</text>"#,
            w - m - 150.0,
            escape(&c.label),
            c.task
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
