//! Minimal 2D scatter plot.

use std::fmt::Write as _;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 24.0;

/// Plots the first two coordinates of references (squares), baseline samples
/// (hollow circles) and guided samples (filled circles).
pub fn scatter(refs: &[Vec<f64>], baseline: &[Vec<f64>], guided: &[Vec<f64>]) -> String {
    let all = refs.iter().chain(baseline).chain(guided).filter(|p| p.len() >= 2 && p[0].is_finite() && p[1].is_finite());
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in all {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    if !lo[0].is_finite() {
        lo = [-1.0, -1.0];
        hi = [1.0, 1.0];
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |p: &[f64]| (MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale);

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#).unwrap();
    s.push_str("<style>.ref{fill:#222}.baseline{fill:none;stroke:#1f77b4}.guided{fill:#d62728;fill-opacity:0.7}</style>\n");
    writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#).unwrap();
    for p in baseline.iter().filter(|p| p.len() >= 2) {
        let (x, y) = px(p);
        writeln!(s, r#"<circle class="baseline" cx="{x:.2}" cy="{y:.2}" r="3.5"/>"#).unwrap();
    }
    for p in guided.iter().filter(|p| p.len() >= 2) {
        let (x, y) = px(p);
        writeln!(s, r#"<circle class="guided" cx="{x:.2}" cy="{y:.2}" r="3"/>"#).unwrap();
    }
    for p in refs.iter().filter(|p| p.len() >= 2) {
        let (x, y) = px(p);
        writeln!(s, r#"<rect class="ref" x="{:.2}" y="{:.2}" width="6" height="6"/>"#, x - 3.0, y - 3.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
