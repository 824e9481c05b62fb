//! Scatter snapshots of point clouds as standalone SVG.
//!
//! Only the first two coordinates are drawn. Output is a pure function of the
//! inputs, so files diff cleanly.

use std::fmt::Write;

use wassreg_core::EmpiricalMeasure;

pub struct Layer<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub measure: &'a EmpiricalMeasure,
}

pub const SOURCE: &str = "#1f77b4";
pub const PREDICTION: &str = "#2ca02c";
pub const TARGET: &str = "#d62728";

const SIZE: f64 = 400.0;
const MARGIN: f64 = 20.0;
const LEGEND: f64 = 18.0;

fn xy(p: &[f64]) -> (f64, f64) {
    (p[0], p.get(1).copied().unwrap_or(0.0))
}

pub fn scatter(title: &str, layers: &[Layer]) -> String {
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for l in layers {
        for p in l.measure.points().iter_rows() {
            let (x, y) = xy(p);
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
    }
    if !lo.0.is_finite() {
        lo = (-1.0, -1.0);
        hi = (1.0, 1.0);
    }
    // one scale for both axes keeps shapes undistorted
    let span = (hi.0 - lo.0).max(hi.1 - lo.1).max(1e-9);
    let inner = SIZE - 2.0 * MARGIN;
    let scale = inner / span;
    let ox = MARGIN + (inner - (hi.0 - lo.0) * scale) / 2.0;
    let oy = MARGIN + (inner - (hi.1 - lo.1) * scale) / 2.0;
    let height = SIZE + LEGEND * layers.len() as f64;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{height}" viewBox="0 0 {SIZE} {height}">"#
    )
    .unwrap();
    writeln!(s, r#"<title>{}</title>"#, escape(title)).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r##"<rect x="{MARGIN}" y="{MARGIN}" width="{inner}" height="{inner}" fill="none" stroke="#cccccc"/>"##)
        .unwrap();
    for l in layers {
        writeln!(s, r#"<g fill="{}" fill-opacity="0.6">"#, l.color).unwrap();
        let max_w = l.measure.weights().iter().copied().fold(0.0, f64::max);
        for (p, w) in l.measure.points().iter_rows().zip(l.measure.weights()) {
            let (x, y) = xy(p);
            let cx = ox + (x - lo.0) * scale;
            let cy = SIZE - (oy + (y - lo.1) * scale);
            // area proportional to mass, relative to the heaviest point
            let r = 1.0 + 2.0 * (w / max_w).sqrt();
            writeln!(s, r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="{r:.3}"/>"#).unwrap();
        }
        writeln!(s, "</g>").unwrap();
    }
    for (i, l) in layers.iter().enumerate() {
        let y = SIZE + LEGEND * i as f64 + LEGEND / 2.0;
        writeln!(s, r#"<circle cx="{}" cy="{y}" r="4" fill="{}"/>"#, MARGIN + 4.0, l.color).unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{} ({} points)</text>"#,
            MARGIN + 14.0,
            y + 4.0,
            escape(l.label),
            l.measure.len()
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Source, prediction and target of one pair.
pub fn snapshot(
    title: &str,
    source: &EmpiricalMeasure,
    prediction: Option<&EmpiricalMeasure>,
    target: Option<&EmpiricalMeasure>,
) -> String {
    let mut layers = vec![Layer { label: "source", color: SOURCE, measure: source }];
    if let Some(t) = target {
        layers.push(Layer { label: "target", color: TARGET, measure: t });
    }
    if let Some(p) = prediction {
        layers.push(Layer { label: "prediction", color: PREDICTION, measure: p });
    }
    scatter(title, &layers)
}
