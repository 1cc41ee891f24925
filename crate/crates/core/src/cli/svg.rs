//! Minimal SVG scatter plot: source points in reds, target points in blues,
//! one shade per class.

use std::fmt::Write as _;

use crate::data::Domain;

const SIZE: f64 = 480.0;
const PAD: f64 = 24.0;
const SOURCE_SHADES: [&str; 4] = ["#d62728", "#ff9896", "#8c1c13", "#f4a582"];
const TARGET_SHADES: [&str; 4] = ["#1f77b4", "#aec7e8", "#08306b", "#6baed6"];

pub struct Point {
    pub x: f64,
    pub y: f64,
    pub domain: Domain,
    pub label: usize,
}

pub fn scatter_svg(points: &[Point], title: &str) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(x0, x1), span(y0, y1));
    let inner = SIZE - 2.0 * PAD;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for p in points {
        let cx = PAD + (p.x - x0) / sx * inner;
        let cy = SIZE - PAD - (p.y - y0) / sy * inner;
        let shades = match p.domain {
            Domain::Source => &SOURCE_SHADES,
            Domain::Target => &TARGET_SHADES,
        };
        let _ = writeln!(
            out,
            r#"<circle cx="{cx:.3}" cy="{cy:.3}" r="3" fill="{}" fill-opacity="0.75"/>"#,
            shades[p.label % shades.len()]
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="16" font-family="sans-serif" font-size="12"><tspan fill="{}">source</tspan> / <tspan fill="{}">target</tspan></text>"#,
        SOURCE_SHADES[0], TARGET_SHADES[0]
    );
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_circle_per_point() {
        let pts = vec![
            Point { x: 0.0, y: 0.0, domain: Domain::Source, label: 0 },
            Point { x: 1.0, y: 2.0, domain: Domain::Target, label: 1 },
        ];
        let svg = scatter_svg(&pts, "a<b");
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains(SOURCE_SHADES[0]) && svg.contains(TARGET_SHADES[1]));
        assert!(svg.contains("a&lt;b"));
    }
}
