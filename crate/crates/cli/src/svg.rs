//! Minimal SVG line and bar charts.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"#ffffff\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let m = 0.05 * (hi - lo);
    (lo - m, hi + m)
}

fn axes(s: &mut String, x_label: &str, y_label: &str, y_lo: f64, y_hi: f64) {
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#000000\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"#000000\"/>\n\
         <text x=\"{cx}\" y=\"{xl}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{x}</text>\n\
         <text x=\"14\" y=\"{cy}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {cy})\">{y}</text>\n\
         <text x=\"{tx}\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{lo:.3}</text>\n\
         <text x=\"{tx}\" y=\"{t}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">{hi:.3}</text>",
        b = H - PAD,
        r = W - PAD / 2.0,
        cx = W / 2.0,
        xl = H - PAD / 2.0,
        x = escape(x_label),
        cy = H / 2.0,
        y = escape(y_label),
        tx = PAD - 4.0,
        t = PAD + 4.0,
        lo = y_lo,
        hi = y_hi,
    );
}

/// Named `(x, y)` series.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut s = open(title);
    let (x_lo, x_hi) = range(series.iter().flat_map(|c| c.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = range(series.iter().flat_map(|c| c.points.iter().map(|p| p.1)));
    axes(&mut s, x_label, y_label, y_lo, y_hi);
    let px = |x: f64| PAD + (x - x_lo) / (x_hi - x_lo) * (W - 1.5 * PAD);
    let py = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);
    for (i, c) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>",
            W - 1.5 * PAD,
            PAD + 14.0 * (i as f64 + 1.0),
            escape(&c.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Bars grouped by category; each group holds one bar per member with an
/// optional error half-width.
pub struct BarGroup {
    pub label: String,
    pub bars: Vec<(String, f64, f64)>,
}

pub fn grouped_bar_chart(title: &str, y_label: &str, groups: &[BarGroup]) -> String {
    let mut s = open(title);
    let (mut y_lo, mut y_hi) = range(
        groups
            .iter()
            .flat_map(|g| g.bars.iter().flat_map(|b| [b.1 - b.2, b.1 + b.2])),
    );
    y_lo = y_lo.min(0.0);
    y_hi = y_hi.max(0.0);
    axes(&mut s, "", y_label, y_lo, y_hi);
    let py = |y: f64| H - PAD - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);
    let slot = (W - 1.5 * PAD) / groups.len().max(1) as f64;
    for (gi, g) in groups.iter().enumerate() {
        let n = g.bars.len().max(1) as f64;
        let bw = 0.8 * slot / n;
        let x0 = PAD + gi as f64 * slot + 0.1 * slot;
        for (bi, (name, v, err)) in g.bars.iter().enumerate() {
            let color = PALETTE[bi % PALETTE.len()];
            let x = x0 + bi as f64 * bw;
            let (top, bottom) = (py(v.max(0.0)), py(v.min(0.0)));
            let _ = writeln!(
                s,
                "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"><title>{}</title></rect>",
                0.9 * bw,
                (bottom - top).max(0.5),
                escape(name)
            );
            if *err > 0.0 {
                let cx = x + 0.45 * bw;
                let _ = writeln!(
                    s,
                    "<line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"#000000\"/>",
                    py(v - err),
                    py(v + err)
                );
            }
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            x0 + 0.4 * slot,
            H - PAD + 16.0,
            escape(&g.label)
        );
    }
    s.push_str("</svg>\n");
    s
}
