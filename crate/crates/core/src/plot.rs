//! Minimal static SVG output: line charts, histograms and discs on the
//! real axis.

use std::fmt::Write as _;

use crate::lmi::GershgorinDisc;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 48.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn scale_x(&self, d: f64) -> f64 {
        d / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in v.filter(|x| x.is_finite()) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn open(title: &str, f: &Frame) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}" text-anchor="middle">{:.3e}</text>"#, H - PAD + 16.0, f.x0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{:.3e}</text>"#, W - PAD, H - PAD + 16.0, f.x1);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#, PAD - 4.0, H - PAD, f.y0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3e}</text>"#, PAD - 4.0, PAD + 4.0, f.y1);
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One polyline per series, sharing axes. Colors cycle.
pub fn line_chart(title: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let all = series.iter().flat_map(|(_, pts)| pts.iter());
    let f = Frame::fit(all.clone().map(|p| p.0), all.map(|p| p.1));
    let mut s = open(title, &f);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * (k as f64 + 1.0),
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Histogram with `bins` equal-width bins.
pub fn histogram(title: &str, values: &[f64], bins: usize) -> String {
    let bins = bins.max(1);
    let (lo, hi) = bounds(values.iter().copied());
    let mut counts = vec![0usize; bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let k = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
        counts[k.min(bins - 1)] += 1;
    }
    let max = *counts.iter().max().unwrap_or(&1) as f64;
    let f = Frame {
        x0: lo,
        x1: hi,
        y0: 0.0,
        y1: max.max(1.0),
    };
    let mut s = open(title, &f);
    let bw = (hi - lo) / bins as f64;
    for (k, &c) in counts.iter().enumerate() {
        let x = lo + bw * k as f64;
        let top = f.py(c as f64);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#1f77b4" stroke="white"/>"##,
            f.px(x),
            top,
            f.scale_x(bw),
            H - PAD - top
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Discs drawn as circles centred on the real axis.
pub fn discs(title: &str, discs: &[GershgorinDisc]) -> String {
    let lo = discs.iter().map(GershgorinDisc::lower);
    let hi = discs.iter().map(GershgorinDisc::upper);
    let (x0, _) = bounds(lo.chain(std::iter::once(0.0)));
    let (_, x1) = bounds(hi.chain(std::iter::once(0.0)));
    let half = (x1 - x0) / 2.0 * (H - 2.0 * PAD) / (W - 2.0 * PAD);
    let f = Frame {
        x0,
        x1,
        y0: -half,
        y1: half,
    };
    let mut s = open(title, &f);
    let axis_y = f.py(0.0);
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{axis_y:.2}" x2="{}" y2="{axis_y:.2}" stroke="gray"/>"#, W - PAD);
    let zero = f.px(0.0);
    let _ = writeln!(
        s,
        r#"<line x1="{zero:.2}" y1="{PAD}" x2="{zero:.2}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
        H - PAD
    );
    for d in discs {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.2}" cy="{axis_y:.2}" r="{:.2}" fill="none" stroke="#d62728" stroke-opacity="0.6"/>"##,
            f.px(d.center),
            f.scale_x(d.radius)
        );
    }
    s.push_str("</svg>\n");
    s
}
