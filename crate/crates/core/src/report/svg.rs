//! Minimal static SVG renderings of the figure data.

use std::fmt::Write;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Square heatmap with values in [0, 1]; a cross marks the quadrant split.
pub fn heatmap(cells: &[Vec<f64>], title: &str) -> String {
    let n = cells.len();
    let cell = if n > 60 { 6 } else { 10 };
    let size = n * cell;
    let (w, h) = (size + 40, size + 60);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<text x="20" y="20" font-family="sans-serif" font-size="12">{}</text>"#, escape(title));
    let _ = writeln!(s, r#"<g transform="translate(20,40)">"#);
    for (r, row) in cells.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            let shade = (255.0 * (1.0 - v.clamp(0.0, 1.0))).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)"/>"#,
                c * cell,
                r * cell
            );
        }
    }
    let mid = size / 2;
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{size}" height="{size}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{mid}" y1="0" x2="{mid}" y2="{size}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="0" y1="{mid}" x2="{size}" y2="{mid}" stroke="black"/>"#);
    s.push_str("</g>\n</svg>\n");
    s
}

/// Line chart of several series over a shared 1-based index.
pub fn line_chart(series: &[(String, Vec<f64>)], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    let len = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0).max(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in series.iter().flat_map(|(_, v)| v) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi == lo {
        hi = lo + 1.0;
    }
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (len - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / (hi - lo);
    let palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="20" font-family="sans-serif" font-size="12">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="2" y="{}" font-family="sans-serif" font-size="10">{hi:.3}</text>"#, PAD + 4.0);
    let _ = writeln!(s, r#"<text x="2" y="{}" font-family="sans-serif" font-size="10">{lo:.3}</text>"#, H - PAD);
    for (i, (name, values)) in series.iter().enumerate() {
        let color = palette[i % palette.len()];
        let pts: Vec<String> = values.iter().enumerate().map(|(j, &v)| format!("{:.1},{:.1}", x(j), y(v))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" fill="{color}">{}</text>"#,
            W - PAD - 150.0,
            PAD + 12.0 * (i + 1) as f64,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
