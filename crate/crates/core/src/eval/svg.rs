//! Dependency-free SVG renderings for reports.

use ndarray::Array2;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Labelled 2-D scatter plot, one colour per distinct label.
pub fn scatter(points: &[[f64; 2]], labels: &[String], title: &str) -> String {
    let size = 480.0;
    let pad = 40.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let sx = if x1 > x0 { (size - 2.0 * pad) / (x1 - x0) } else { 1.0 };
    let sy = if y1 > y0 { (size - 2.0 * pad) / (y1 - y0) } else { 1.0 };
    let mut distinct: Vec<&String> = labels.iter().collect();
    distinct.sort();
    distinct.dedup();
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{size}\" viewBox=\"0 0 {w} {size}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n",
        escape(title),
        w = size + 140.0
    );
    for (p, l) in points.iter().zip(labels) {
        let c = distinct.binary_search(&l).unwrap_or(0) % PALETTE.len();
        let cx = pad + (p[0] - x0) * sx;
        let cy = size - pad - (p[1] - y0) * sy;
        out.push_str(&format!(
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"{}\" fill-opacity=\"0.8\"/>\n",
            PALETTE[c]
        ));
    }
    for (k, l) in distinct.iter().enumerate() {
        let y = pad + 16.0 * k as f64;
        out.push_str(&format!(
            "<circle cx=\"{x:.0}\" cy=\"{y:.0}\" r=\"4\" fill=\"{}\"/><text x=\"{tx:.0}\" y=\"{ty:.0}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            PALETTE[k % PALETTE.len()],
            escape(l),
            x = size + 10.0,
            tx = size + 20.0,
            ty = y + 4.0
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Grey-scale heatmap with row 0 at the bottom.
pub fn heatmap(m: &Array2<f64>, title: &str) -> String {
    let (rows, cols) = m.dim();
    let cell = (400.0 / rows.max(cols).max(1) as f64).max(1.0);
    let (lo, hi) = m
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (cols as f64 * cell, rows as f64 * cell);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{:.0}\" viewBox=\"0 0 {w:.0} {:.0}\">\n\
         <text x=\"2\" y=\"14\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
        h + 20.0,
        h + 20.0,
        escape(title)
    );
    for r in 0..rows {
        for c in 0..cols {
            let shade = (255.0 * (1.0 - (m[[r, c]] - lo) / span)).round() as u8;
            out.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"rgb({shade},{shade},{shade})\"/>\n",
                c as f64 * cell,
                20.0 + (rows - 1 - r) as f64 * cell
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}
