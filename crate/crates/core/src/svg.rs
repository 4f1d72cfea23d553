//! Rectangle-grid SVG writer.
//!
//! Colour map: diverging blue–white–red anchored at zero. Negative values
//! interpolate white→`#2166ac`, positive values white→`#b2182b`, both scaled
//! by the largest absolute value in the grid.

const NEG: (f64, f64, f64) = (33.0, 102.0, 172.0);
const POS: (f64, f64, f64) = (178.0, 24.0, 43.0);
const CELL: usize = 4;

fn lerp_white(to: (f64, f64, f64), t: f64) -> String {
    let c = |x: f64| (255.0 + (x - 255.0) * t).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", c(to.0), c(to.1), c(to.2))
}

pub fn diverging_color(value: f64, max_abs: f64) -> String {
    if max_abs <= 0.0 || value == 0.0 || !value.is_finite() {
        return "#ffffff".into();
    }
    let t = (value.abs() / max_abs).min(1.0);
    lerp_white(if value < 0.0 { NEG } else { POS }, t)
}

/// One `<rect>` per cell. `values[row][col]`; row 0 is drawn at the bottom.
pub fn heatmap_svg(title: &str, values: &[Vec<f64>]) -> String {
    let rows = values.len();
    let cols = values.first().map_or(0, Vec::len);
    let max_abs = values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let (w, h) = (cols * CELL, rows * CELL);
    let mut out = String::with_capacity(rows * cols * 64 + 256);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{}\" viewBox=\"0 0 {w} {}\">\n",
        h + 20,
        h + 20
    ));
    out.push_str(&format!(
        "<text x=\"2\" y=\"14\" font-family=\"sans-serif\" font-size=\"12\">{} (max |v| = {:.4})</text>\n",
        escape(title),
        max_abs
    ));
    for (r, row) in values.iter().enumerate() {
        let y = 20 + (rows - 1 - r) * CELL;
        for (c, &v) in row.iter().enumerate() {
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\"/>\n",
                c * CELL,
                diverging_color(v, max_abs)
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
