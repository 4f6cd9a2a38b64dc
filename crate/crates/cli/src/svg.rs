//! Minimal hand-written SVG figures. Coordinates are printed with fixed
//! precision so the same input always gives the same bytes.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="30" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        W / 2.0
    );
}

fn frame(out: &mut String) {
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
}

fn label(out: &mut String, x: f64, y: f64, anchor: &str, text: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{text}</text>"#
    );
}

/// Semilog scatter of `σ_i` against `i` (1-based); nonpositive values are skipped.
pub fn decay_plot(sigmas: &[f64]) -> String {
    let mut out = String::new();
    header(&mut out, "Singular values of the value matrix");
    frame(&mut out);
    let logs: Vec<(usize, f64)> = sigmas
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > 0.0)
        .map(|(i, s)| (i + 1, s.log10()))
        .collect();
    if !logs.is_empty() {
        let lo = logs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor();
        let hi = logs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil();
        let hi = if hi > lo { hi } else { lo + 1.0 };
        let n = sigmas.len().max(2) as f64;
        let px = |i: usize| MARGIN + (i as f64 - 1.0) / (n - 1.0) * (W - 2.0 * MARGIN);
        let py = |l: f64| H - MARGIN - (l - lo) / (hi - lo) * (H - 2.0 * MARGIN);
        let mut e = lo as i64;
        let step = (((hi - lo) / 8.0).ceil() as i64).max(1);
        while e as f64 <= hi {
            label(&mut out, MARGIN - 6.0, py(e as f64) + 4.0, "end", &format!("1e{e}"));
            e += step;
        }
        label(&mut out, MARGIN, H - MARGIN + 16.0, "middle", "1");
        label(&mut out, W - MARGIN, H - MARGIN + 16.0, "middle", &sigmas.len().to_string());
        for (i, l) in &logs {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="steelblue"/>"#,
                px(*i),
                py(*l)
            );
        }
    }
    label(&mut out, W / 2.0, H - 20.0, "middle", "index i");
    out.push_str("</svg>\n");
    out
}

/// Linear blue-to-red ramp.
fn colour(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs()) * 0.8).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heatmap of `v` over a tensor grid given as `(x1, x2, v)` rows, or a line
/// plot for one-dimensional grids given as `(x1, v)`.
pub fn value_plot(dim: usize, rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    header(&mut out, "Value function");
    frame(&mut out);
    if rows.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let vcol = dim;
    let vmin = rows.iter().map(|r| r[vcol]).fold(f64::INFINITY, f64::min);
    let vmax = rows.iter().map(|r| r[vcol]).fold(f64::NEG_INFINITY, f64::max);
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    let range = |k: usize| {
        let lo = rows.iter().map(|r| r[k]).fold(f64::INFINITY, f64::min);
        let hi = rows.iter().map(|r| r[k]).fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi } else { lo + 1.0 })
    };
    let (x0, x1) = range(0);
    label(&mut out, MARGIN, H - MARGIN + 16.0, "middle", &format!("{x0}"));
    label(&mut out, W - MARGIN, H - MARGIN + 16.0, "middle", &format!("{x1}"));
    if dim == 1 {
        let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
        let py = |v: f64| H - MARGIN - (v - vmin) / span * (H - 2.0 * MARGIN);
        let pts: Vec<String> = rows.iter().map(|r| format!("{:.2},{:.2}", px(r[0]), py(r[1]))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
            pts.join(" ")
        );
    } else {
        let (y0, y1) = range(1);
        let nx = distinct(rows.iter().map(|r| r[0])).max(1);
        let ny = distinct(rows.iter().map(|r| r[1])).max(1);
        let cw = (W - 2.0 * MARGIN) / nx as f64;
        let ch = (H - 2.0 * MARGIN) / ny as f64;
        let cell = |x: f64, lo: f64, hi: f64, n: usize| ((x - lo) / (hi - lo) * (n - 1) as f64).round();
        for r in rows {
            let t = (r[vcol] - vmin) / span;
            let i = cell(r[0], x0, x1, nx);
            let j = cell(r[1], y0, y1, ny);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                MARGIN + i * cw,
                H - MARGIN - (j + 1.0) * ch,
                cw,
                ch,
                colour(t)
            );
        }
        label(&mut out, MARGIN - 6.0, H - MARGIN, "end", &format!("{y0}"));
        label(&mut out, MARGIN - 6.0, MARGIN + 8.0, "end", &format!("{y1}"));
    }
    label(&mut out, W / 2.0, H - 20.0, "middle", &format!("v from {vmin:.3e} to {vmax:.3e}"));
    out.push_str("</svg>\n");
    out
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_marker_per_sigma() {
        let sigmas: Vec<f64> = (1..=60).map(|i| (-(i as f64) / 3.0).exp()).collect();
        let svg = decay_plot(&sigmas);
        assert_eq!(svg.matches("<circle").count(), 60);
        assert_eq!(svg, decay_plot(&sigmas));
    }

    #[test]
    fn heatmap_has_one_cell_per_point() {
        let mut rows = Vec::new();
        for i in 0..5 {
            for j in 0..4 {
                let (x, y) = (i as f64, j as f64);
                rows.push(vec![x, y, x * x + y * y]);
            }
        }
        let svg = value_plot(2, &rows);
        assert_eq!(svg.matches("<rect").count(), 2 + 20);
        assert!(svg.contains("#0000ff") && svg.contains("#ff0000"));
    }
}
