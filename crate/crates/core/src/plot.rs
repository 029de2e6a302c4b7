//! Minimal SVG line, step and scatter charts.
//!
//! Output is a pure function of the input so files are byte-stable.

use std::fmt::Write as _;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    Line,
    Steps,
    Points,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub mark: Mark,
    pub color: String,
    pub points: Vec<(f64, f64)>,
    /// Stroke or fill opacity.
    pub opacity: f64,
}

impl Series {
    pub fn new(label: impl Into<String>, mark: Mark, color: &str, points: Vec<(f64, f64)>) -> Series {
        Series { label: label.into(), mark, color: color.to_string(), points, opacity: 1.0 }
    }

    pub fn with_opacity(mut self, opacity: f64) -> Series {
        self.opacity = opacity;
        self
    }
}

/// Straight reference line `y = intercept + slope * x`, or vertical at `x`.
#[derive(Clone, Debug)]
pub enum Guide {
    Slope { intercept: f64, slope: f64, label: String },
    Vertical { x: f64, label: String },
}

#[derive(Clone, Debug, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub guides: Vec<Guide>,
    /// Fixed y range; computed from the data when `None`.
    pub y_range: Option<(f64, f64)>,
}

impl Panel {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Panel {
        Panel { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), ..Panel::default() }
    }

    pub fn push(&mut self, s: Series) -> &mut Panel {
        self.series.push(s);
        self
    }

    fn ranges(&self) -> ((f64, f64), (f64, f64)) {
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        for g in &self.guides {
            if let Guide::Vertical { x, .. } = g {
                x0 = x0.min(*x);
                x1 = x1.max(*x);
            }
        }
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if let Some(r) = self.y_range {
            (y0, y1) = r;
        }
        (pad(x0, x1), pad(y0, y1))
    }
}

fn pad(lo: f64, hi: f64) -> (f64, f64) {
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        let d = 0.5 * lo.abs().max(1.0);
        (lo - d, hi + d)
    } else {
        let d = 0.04 * (hi - lo);
        (lo - d, hi + d)
    }
}

/// Roughly `n` round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-3..1e6).contains(&a) {
        format!("{x:.2e}")
    } else {
        let s = format!("{x:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.to_string() }
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 280.0;
const LEFT: f64 = 62.0;
const RIGHT: f64 = 14.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 44.0;

fn draw_panel(out: &mut String, p: &Panel, ox: f64, oy: f64) {
    let ((x0, x1), (y0, y1)) = p.ranges();
    let (w, h) = (PANEL_W - LEFT - RIGHT, PANEL_H - TOP - BOTTOM);
    let sx = |x: f64| ox + LEFT + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| oy + TOP + (1.0 - (y - y0) / (y1 - y0)) * h;
    let clip = format!("c{}_{}", ox as i64, oy as i64);
    let _ = writeln!(
        out,
        r#"<clipPath id="{clip}"><rect x="{:.1}" y="{:.1}" width="{w:.1}" height="{h:.1}"/></clipPath>"#,
        ox + LEFT,
        oy + TOP
    );
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="#444"/>"##,
        ox + LEFT,
        oy + TOP
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"#,
        ox + LEFT + w / 2.0,
        oy + TOP - 10.0,
        esc(&p.title)
    );
    for t in ticks(x0, x1, 5) {
        let x = sx(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#444"/><text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##,
            oy + TOP + h,
            oy + TOP + h + 4.0,
            oy + TOP + h + 15.0,
            num(t)
        );
    }
    for t in ticks(y0, y1, 5) {
        let y = sy(t);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#444"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"##,
            ox + LEFT - 4.0,
            ox + LEFT,
            ox + LEFT - 6.0,
            y + 3.0,
            num(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
        ox + LEFT + w / 2.0,
        oy + PANEL_H - 8.0,
        esc(&p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{}</text>"#,
        ox + 14.0,
        oy + TOP + h / 2.0,
        ox + 14.0,
        oy + TOP + h / 2.0,
        esc(&p.y_label)
    );
    let _ = writeln!(out, r#"<g clip-path="url(#{clip})">"#);
    for s in &p.series {
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        match s.mark {
            Mark::Points => {
                for (x, y) in pts {
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.1}" cy="{:.1}" r="1.6" fill="{}" fill-opacity="{}"/>"#,
                        sx(x),
                        sy(y),
                        s.color,
                        s.opacity
                    );
                }
            }
            Mark::Line | Mark::Steps => {
                if pts.is_empty() {
                    continue;
                }
                let mut d = format!("M{:.1},{:.1}", sx(pts[0].0), sy(pts[0].1));
                for w in pts.windows(2) {
                    if s.mark == Mark::Steps {
                        let _ = write!(d, " L{:.1},{:.1}", sx(w[1].0), sy(w[0].1));
                    }
                    let _ = write!(d, " L{:.1},{:.1}", sx(w[1].0), sy(w[1].1));
                }
                let _ = writeln!(
                    out,
                    r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.2" stroke-opacity="{}"/>"#,
                    s.color, s.opacity
                );
            }
        }
    }
    for g in &p.guides {
        let (a, b) = match g {
            Guide::Slope { intercept, slope, .. } => ((x0, intercept + slope * x0), (x1, intercept + slope * x1)),
            Guide::Vertical { x, .. } => ((*x, y0), (*x, y1)),
        };
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#000" stroke-dasharray="5,3"/>"##,
            sx(a.0),
            sy(a.1),
            sx(b.0),
            sy(b.1)
        );
    }
    let _ = writeln!(out, "</g>");
    let mut labels: Vec<(&str, &str)> = p.series.iter().filter(|s| !s.label.is_empty()).map(|s| (s.label.as_str(), s.color.as_str())).collect();
    labels.dedup();
    labels.extend(p.guides.iter().map(|g| match g {
        Guide::Slope { label, .. } | Guide::Vertical { label, .. } => (label.as_str(), "#000"),
    }));
    for (i, (label, color)) in labels.iter().filter(|l| !l.0.is_empty()).enumerate() {
        let y = oy + TOP + 12.0 + 13.0 * i as f64;
        let x = ox + LEFT + w - 6.0;
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="10" text-anchor="end" fill="{color}">{}</text>"#,
            esc(label)
        );
    }
}

/// Renders `panels` on a grid with `columns` panels per row.
pub fn render(panels: &[Panel], columns: usize) -> String {
    let columns = columns.max(1).min(panels.len().max(1));
    let rows = panels.len().div_ceil(columns).max(1);
    let (w, h) = (PANEL_W * columns as f64, PANEL_H * rows as f64);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, PANEL_W * (i % columns) as f64, PANEL_H * (i / columns) as f64);
    }
    out.push_str("</svg>\n");
    out
}

/// Gaussian kernel density estimate on `n` grid points (Silverman bandwidth).
pub fn kde(samples: &[f64], n: usize) -> Vec<(f64, f64)> {
    let m = samples.len();
    if m == 0 {
        return Vec::new();
    }
    let mean = samples.iter().sum::<f64>() / m as f64;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m.max(2) - 1) as f64).sqrt();
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if sd == 0.0 || !sd.is_finite() {
        return vec![(lo, 1.0)];
    }
    let bw = 1.06 * sd * (m as f64).powf(-0.2);
    let (a, b) = (lo - 3.0 * bw, hi + 3.0 * bw);
    let norm = 1.0 / (m as f64 * bw * (2.0 * std::f64::consts::PI).sqrt());
    (0..n)
        .map(|i| {
            let x = a + (b - a) * i as f64 / (n - 1).max(1) as f64;
            let d: f64 = samples.iter().map(|s| (-0.5 * ((x - s) / bw).powi(2)).exp()).sum();
            (x, d * norm)
        })
        .collect()
}

/// Empirical CDF as step points.
pub fn ecdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n)).collect()
}

/// Histogram as step points over `bins` equal-width bins (density scale).
pub fn histogram(samples: &[f64], bins: usize) -> Vec<(f64, f64)> {
    if samples.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let scale = 1.0 / (samples.len() as f64 * width);
    let mut pts: Vec<(f64, f64)> = counts.iter().enumerate().map(|(k, &c)| (lo + k as f64 * width, c as f64 * scale)).collect();
    pts.push((lo + bins as f64 * width, counts[bins - 1] as f64 * scale));
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(ticks(0.0, 10.0, 5), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(num(0.30000000000000004), "0.3");
        assert_eq!(num(250000.0), "250000");
    }

    #[test]
    fn render_is_deterministic() {
        let mut p = Panel::new("t", "x", "y");
        p.push(Series::new("a", Mark::Line, PALETTE[0], vec![(0.0, 1.0), (1.0, 1.0)]));
        p.push(Series::new("b", Mark::Points, PALETTE[1], vec![(0.5, 0.0)]));
        let a = render(&[p.clone(), p.clone()], 2);
        assert_eq!(a, render(&[p.clone(), p], 2));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<path").count(), 2);
    }

    #[test]
    fn kde_integrates_to_one() {
        let s: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin()).collect();
        let d = kde(&s, 400);
        let dx = d[1].0 - d[0].0;
        let area: f64 = d.iter().map(|p| p.1 * dx).sum();
        assert!((area - 1.0).abs() < 0.01, "{area}");
        let h = histogram(&s, 10);
        let area: f64 = h.windows(2).map(|w| w[0].1 * (w[1].0 - w[0].0)).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }
}
