//! Minimal static SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub const MARKER_CLASS: &str = "marker";
pub const BAR_CLASS: &str = "bar";

#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Optional value in [0, 1] mapped to a blue-to-red ramp.
    pub shade: Option<f64>,
    pub label: String,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn ramp(v: f64) -> String {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let r = (40.0 + 200.0 * v).round() as u8;
    let b = (240.0 - 200.0 * v).round() as u8;
    format!("rgb({r},60,{b})")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        esc(title)
    );
    let (x0, y0, x1, y1) = (LEFT, H - BOTTOM, W - RIGHT, TOP);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 15.0,
        esc(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
}

fn ticks(out: &mut String, (xlo, xhi): (f64, f64), (ylo, yhi): (f64, f64)) {
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = LEFT + f * (W - LEFT - RIGHT);
        let y = (H - BOTTOM) - f * (H - BOTTOM - TOP);
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle" font-size="10">{:.3}</text>"#,
            H - BOTTOM + 16.0,
            xlo + f * (xhi - xlo)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{:.3}</text>"#,
            LEFT - 6.0,
            y + 3.0,
            ylo + f * (yhi - ylo)
        );
    }
}

/// Scatter plot with one `<circle class="marker">` per point.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[Point]) -> String {
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label);
    let xr = range(points.iter().map(|p| p.x));
    let yr = range(points.iter().map(|p| p.y));
    ticks(&mut out, xr, yr);
    for p in points {
        let cx = LEFT + (p.x - xr.0) / (xr.1 - xr.0) * (W - LEFT - RIGHT);
        let cy = (H - BOTTOM) - (p.y - yr.0) / (yr.1 - yr.0) * (H - BOTTOM - TOP);
        let fill = p.shade.map_or_else(|| "steelblue".to_string(), ramp);
        let _ = writeln!(
            out,
            r#"<circle class="{MARKER_CLASS}" cx="{cx:.2}" cy="{cy:.2}" r="5" fill="{fill}" fill-opacity="0.8"><title>{}</title></circle>"#,
            esc(&p.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one `<rect class="bar">` per
/// (category, series) pair. Each series is scaled to its own maximum so
/// quantities with different units share the axis.
pub fn grouped_bars(title: &str, y_label: &str, categories: &[String], series: &[(&str, Vec<f64>)]) -> String {
    let mut out = String::new();
    frame(&mut out, title, "", y_label);
    let palette = ["steelblue", "darkorange", "seagreen", "firebrick"];
    let n = categories.len().max(1) as f64;
    let group_w = (W - LEFT - RIGHT) / n;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let plot_h = H - BOTTOM - TOP;
    for (si, (name, values)) in series.iter().enumerate() {
        let max = values.iter().copied().filter(|v| v.is_finite()).fold(0.0_f64, f64::max);
        let scale = if max > 0.0 { plot_h / max } else { 0.0 };
        let color = palette[si % palette.len()];
        for (ci, v) in values.iter().enumerate() {
            let h = (v.max(0.0) * scale).min(plot_h);
            let x = LEFT + ci as f64 * group_w + group_w * 0.1 + si as f64 * bar_w;
            let _ = writeln!(
                out,
                r#"<rect class="{BAR_CLASS}" x="{x:.2}" y="{:.2}" width="{bar_w:.2}" height="{h:.2}" fill="{color}"><title>{}: {v}</title></rect>"#,
                H - BOTTOM - h,
                esc(name)
            );
        }
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{} (max {max:.3})</text>"#,
            W - RIGHT - 170.0,
            TOP + 14.0 * si as f64,
            W - RIGHT - 155.0,
            TOP + 14.0 * si as f64 + 9.0,
            esc(name)
        );
    }
    for (ci, c) in categories.iter().enumerate() {
        let x = LEFT + (ci as f64 + 0.5) * group_w;
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            H - BOTTOM + 16.0,
            esc(c)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn count_class(svg: &str, class: &str) -> usize {
    svg.matches(&format!(r#"class="{class}""#)).count()
}
