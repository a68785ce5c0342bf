//! Minimal SVG line plots, histograms and heatmaps. Output is deterministic:
//! numbers are printed with fixed precision and elements in input order.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#555555"];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

/// Maps data coordinates to the plot area.
#[derive(Debug, Clone, Copy)]
pub struct Axes {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub log_x: bool,
    pub log_y: bool,
}

impl Axes {
    fn t(v: f64, log: bool) -> f64 {
        if log {
            v.log10()
        } else {
            v
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        let (a, b) = (Self::t(self.x.0, self.log_x), Self::t(self.x.1, self.log_x));
        LEFT + (Self::t(x, self.log_x) - a) / (b - a) * (W - LEFT - RIGHT)
    }

    pub fn py(&self, y: f64) -> f64 {
        let (a, b) = (Self::t(self.y.0, self.log_y), Self::t(self.y.1, self.log_y));
        H - BOTTOM - (Self::t(y, self.log_y) - a) / (b - a) * (H - TOP - BOTTOM)
    }
}

fn range(values: impl Iterator<Item = f64>, log: bool) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite() && (!log || *v > 0.0))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return if log { (0.1, 1.0) } else { (0.0, 1.0) };
    }
    if hi > lo {
        if log {
            (lo / 1.2, hi * 1.2)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    } else if log {
        (lo / 2.0, lo * 2.0)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn frame(out: &mut String, ax: &Axes, x_label: &str, y_label: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<rect x="{x0}" y="{y0}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    for (lo, hi, log, horizontal) in [(ax.x.0, ax.x.1, ax.log_x, true), (ax.y.0, ax.y.1, ax.log_y, false)] {
        for v in ticks(lo, hi, log) {
            if horizontal {
                let x = ax.px(v);
                let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{:.1}" stroke="black"/>"#, y1 + 5.0);
                let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.1}" text-anchor="middle">{}</text>"#, y1 + 18.0, tick_label(v));
            } else {
                let y = ax.py(v);
                let _ = writeln!(out, r#"<line x1="{:.1}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 5.0);
                let _ = writeln!(out, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, y + 4.0, tick_label(v));
            }
        }
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let (a, b) = (lo.log10().floor() as i32, hi.log10().ceil() as i32);
        let mut t: Vec<f64> = (a..=b).map(|e| 10f64.powi(e)).filter(|v| *v >= lo && *v <= hi).collect();
        if t.len() < 2 {
            t = vec![lo, hi];
        }
        return t;
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn legend(out: &mut String, names: &[(String, &str, bool)]) {
    for (i, (name, color, dashed)) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 10.0;
        let dash = if *dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(out, r#"<line x1="{x}" y1="{y}" x2="{:.1}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>"#, x + 20.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 26.0, y + 4.0, escape(name));
    }
}

impl LinePlot {
    pub fn axes(&self) -> Axes {
        let pts = || self.series.iter().flat_map(|s| s.points.iter().copied());
        Axes {
            x: range(pts().map(|p| p.0), self.log_x),
            y: range(pts().map(|p| p.1), self.log_y),
            log_x: self.log_x,
            log_y: self.log_y,
        }
    }

    pub fn render(&self) -> String {
        let ax = self.axes();
        let mut out = String::new();
        header(&mut out, &self.title);
        frame(&mut out, &ax, &self.x_label, &self.y_label);
        let mut names = Vec::new();
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.log_x || *x > 0.0) && (!self.log_y || *y > 0.0))
                .map(|&(x, y)| format!("{:.2},{:.2}", ax.px(x), ax.py(y)))
                .collect();
            let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#, pts.join(" "));
            if !s.dashed {
                for p in &pts {
                    let (x, y) = p.split_once(',').expect("formatted pair");
                    let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
                }
            }
            names.push((s.name.clone(), color, s.dashed));
        }
        legend(&mut out, &names);
        out.push_str("</svg>\n");
        out
    }
}

/// Bar histogram with an optional overlaid reference curve.
pub fn histogram_svg(
    title: &str,
    x_label: &str,
    edges: (f64, f64),
    density: &[f64],
    reference: Option<(&str, &dyn Fn(f64) -> f64)>,
) -> String {
    let nb = density.len().max(1);
    let width = (edges.1 - edges.0) / nb as f64;
    let mut y_max = density.iter().copied().fold(0.0, f64::max);
    if let Some((_, f)) = &reference {
        for i in 0..=200 {
            y_max = y_max.max(f(edges.0 + (edges.1 - edges.0) * i as f64 / 200.0));
        }
    }
    let ax = Axes { x: edges, y: (0.0, if y_max > 0.0 { y_max * 1.1 } else { 1.0 }), log_x: false, log_y: false };
    let mut out = String::new();
    header(&mut out, title);
    frame(&mut out, &ax, x_label, "density");
    for (i, d) in density.iter().enumerate() {
        let x0 = ax.px(edges.0 + i as f64 * width);
        let x1 = ax.px(edges.0 + (i + 1) as f64 * width);
        let y = ax.py(*d);
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="0.6"/>"#,
            x1 - x0,
            ax.py(0.0) - y,
            PALETTE[0]
        );
    }
    let mut names = vec![("data".to_string(), PALETTE[0], false)];
    if let Some((name, f)) = reference {
        let pts: Vec<String> = (0..=200)
            .map(|i| {
                let x = edges.0 + (edges.1 - edges.0) * i as f64 / 200.0;
                format!("{:.2},{:.2}", ax.px(x), ax.py(f(x)))
            })
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#, PALETTE[1], pts.join(" "));
        names.push((name.to_string(), PALETTE[1], false));
    }
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Viridis-like ramp sampled at `t` in [0, 1].
pub fn colormap(t: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 5] =
        [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * (STOPS.len() - 1) as f64;
    let i = (s.floor() as usize).min(STOPS.len() - 2);
    let f = s - i as f64;
    let lerp = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    (lerp(STOPS[i].0, STOPS[i + 1].0), lerp(STOPS[i].1, STOPS[i + 1].1), lerp(STOPS[i].2, STOPS[i + 1].2))
}

/// Color of pixels without a valid value.
pub const INVALID_COLOR: &str = "#ff00ff";

/// Heatmap of a `height x width` grid with a color bar; `None` cells use
/// [`INVALID_COLOR`].
pub fn heatmap_svg(title: &str, unit: &str, height: usize, width: usize, values: &[Option<f64>]) -> String {
    let (lo, hi) = values.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
    let cell = (360.0 / height.max(width).max(1) as f64).max(1.0);
    let (pw, ph) = (width as f64 * cell, height as f64 * cell);
    let (tw, th) = (pw + 160.0, ph + 80.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{tw:.0}" height="{th:.0}" viewBox="0 0 {tw:.0} {th:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{tw:.0}" height="{th:.0}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, tw / 2.0, escape(title));
    let _ = writeln!(out, r#"<g transform="translate(20 40)" shape-rendering="crispEdges">"#);
    for y in 0..height {
        for x in 0..width {
            let color = match values[y * width + x] {
                Some(v) => {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    let (r, g, b) = colormap(t);
                    format!("#{r:02x}{g:02x}{b:02x}")
                }
                None => INVALID_COLOR.to_string(),
            };
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{color}"/>"#,
                x as f64 * cell,
                y as f64 * cell
            );
        }
    }
    out.push_str("</g>\n");
    // color bar
    let bx = 20.0 + pw + 30.0;
    for i in 0..64 {
        let t = 1.0 - i as f64 / 63.0;
        let (r, g, b) = colormap(t);
        let _ = writeln!(
            out,
            r##"<rect x="{bx:.1}" y="{:.2}" width="20" height="{:.2}" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
            40.0 + ph * i as f64 / 64.0,
            ph / 64.0 + 0.5
        );
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="46">{} {}</text>"#, bx + 26.0, tick_label(hi), escape(unit));
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{} {}</text>"#, bx + 26.0, 40.0 + ph, tick_label(lo), escape(unit));
    let _ = writeln!(
        out,
        r#"<rect x="{bx:.1}" y="{:.1}" width="20" height="12" fill="{INVALID_COLOR}"/><text x="{:.1}" y="{:.1}">invalid</text>"#,
        50.0 + ph,
        bx + 26.0,
        60.0 + ph
    );
    out.push_str("</svg>\n");
    out
}
