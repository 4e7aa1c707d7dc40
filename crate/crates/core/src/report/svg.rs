//! Minimal deterministic SVG plotting: line/scatter plots with linear or
//! log axes, and box-plot panels.

use std::fmt::Write;

use super::stats::LossStats;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

pub const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub log: bool,
    pub label: String,
}

impl Axis {
    /// Axis spanning `values` with 5% padding (in log space for log axes).
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>, log: bool, label: &str) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in values {
            let v = if log { v.log10() } else { v };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let pad = if hi > lo {
            0.05 * (hi - lo)
        } else {
            0.5 * lo.abs().max(1.0)
        };
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            log,
            label: label.to_string(),
        }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let a = self.lo.ceil() as i32;
            let b = self.hi.floor() as i32;
            let step = ((b - a) / 6 + 1).max(1);
            (a..=b)
                .step_by(step as usize)
                .map(|e| (10f64.powi(e), format!("1e{e}")))
                .collect()
        } else {
            let span = self.hi - self.lo;
            let raw = span / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0]
                .iter()
                .map(|m| m * mag)
                .find(|s| *s >= raw)
                .unwrap_or(10.0 * mag);
            let first = (self.lo / step).ceil() as i64;
            let last = (self.hi / step).floor() as i64;
            (first..=last)
                .map(|k| {
                    let v = k as f64 * step;
                    (v, tick_label(v))
                })
                .collect()
        }
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.3e}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub struct Plot {
    x: Axis,
    y: Axis,
    title: String,
    body: String,
    legend: Vec<(String, &'static str)>,
}

impl Plot {
    pub fn new(title: &str, x: Axis, y: Axis) -> Self {
        Plot {
            x,
            y,
            title: title.to_string(),
            body: String::new(),
            legend: Vec::new(),
        }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (
            LEFT + self.x.unit(x) * (W - LEFT - RIGHT),
            H - BOTTOM - self.y.unit(y) * (H - TOP - BOTTOM),
        )
    }

    fn visible(&self, x: f64, y: f64) -> bool {
        x.is_finite() && y.is_finite() && (!self.x.log || x > 0.0) && (!self.y.log || y > 0.0)
    }

    pub fn line(&mut self, pts: &[(f64, f64)], color: &'static str, name: &str) {
        let mut d = String::new();
        for &(x, y) in pts.iter().filter(|p| self.visible(p.0, p.1)) {
            let (a, b) = self.px(x, y);
            let _ = write!(d, "{}{a:.2},{b:.2}", if d.is_empty() { "" } else { " " });
        }
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{d}"/>"#
        );
        self.legend.push((name.to_string(), color));
    }

    pub fn points(&mut self, pts: &[(f64, f64)], color: &'static str, name: &str) {
        for &(x, y) in pts {
            if !self.visible(x, y) {
                continue;
            }
            let (a, b) = self.px(x, y);
            let _ = writeln!(
                self.body,
                r#"<circle cx="{a:.2}" cy="{b:.2}" r="2" fill="{color}"/>"#
            );
        }
        self.legend.push((name.to_string(), color));
    }

    /// Vertical error bars `y ± e`.
    pub fn error_bars(&mut self, pts: &[(f64, f64, f64)], color: &'static str) {
        for &(x, y, e) in pts {
            let lo = if self.y.log {
                (y - e).max(y * 1e-3)
            } else {
                y - e
            };
            if !self.visible(x, lo) || !self.visible(x, y + e) {
                continue;
            }
            let (a, b0) = self.px(x, lo);
            let (_, b1) = self.px(x, y + e);
            let _ = writeln!(
                self.body,
                r#"<line x1="{a:.2}" y1="{b0:.2}" x2="{a:.2}" y2="{b1:.2}" stroke="{color}"/>"#
            );
        }
    }

    pub fn finish(self) -> String {
        let mut s = header(&self.title);
        frame(&mut s, W, H);
        for (v, label) in self.x.ticks() {
            let (a, _) = self.px(
                v,
                if self.y.log {
                    10f64.powf(self.y.lo)
                } else {
                    self.y.lo
                },
            );
            let _ = writeln!(
                s,
                r#"<text x="{a:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
                H - BOTTOM + 16.0,
                esc(&label)
            );
        }
        for (v, label) in self.y.ticks() {
            let (_, b) = self.px(
                if self.x.log {
                    10f64.powf(self.x.lo)
                } else {
                    self.x.lo
                },
                v,
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{b:.2}" font-size="11" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                esc(&label)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            0.5 * (LEFT + W - RIGHT),
            H - 12.0,
            esc(&self.x.label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            0.5 * (TOP + H - BOTTOM),
            0.5 * (TOP + H - BOTTOM),
            esc(&self.y.label)
        );
        s.push_str(&self.body);
        for (i, (name, color)) in self.legend.iter().enumerate() {
            let y = TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
                W - RIGHT - 150.0,
                y - 9.0,
                W - RIGHT - 135.0,
                y,
                esc(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.2}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        esc(title)
    )
}

fn frame(s: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        w - LEFT - RIGHT,
        h - TOP - BOTTOM
    );
}

/// Metric name, log axis, and one `(cohort, stats)` box per cohort.
pub type Panel = (String, bool, Vec<(String, LossStats)>);

/// One box-plot panel per metric; each panel holds one box per cohort.
/// Boxes span p25..p75 with the median marked; whiskers reach min and max.
pub fn box_panels(title: &str, panels: &[Panel]) -> String {
    let panel_w = W / panels.len().max(1) as f64;
    let width = panel_w * panels.len().max(1) as f64;
    let mut s = header(title).replacen(&format!("width=\"{W}\""), &format!("width=\"{width}\""), 1);
    for (k, (metric, log, boxes)) in panels.iter().enumerate() {
        let x0 = k as f64 * panel_w;
        let all: Vec<f64> = boxes
            .iter()
            .flat_map(|(_, st)| st.values.iter().copied())
            .collect();
        let axis = Axis::fit(&all, *log, metric);
        let plot_top = TOP;
        let plot_bot = H - BOTTOM;
        let y = |v: f64| plot_bot - axis.unit(v) * (plot_bot - plot_top);
        let inner_l = x0 + 50.0;
        let inner_w = panel_w - 60.0;
        let _ = writeln!(
            s,
            r#"<rect x="{inner_l:.2}" y="{plot_top}" width="{inner_w:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            plot_bot - plot_top
        );
        for (v, label) in axis.ticks() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">{}</text>"#,
                inner_l - 3.0,
                y(v),
                esc(&label)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            inner_l + inner_w / 2.0,
            H - 12.0,
            esc(metric)
        );
        let slot = inner_w / boxes.len().max(1) as f64;
        for (j, (name, st)) in boxes.iter().enumerate() {
            let color = PALETTE[j % PALETTE.len()];
            let cx = inner_l + slot * (j as f64 + 0.5);
            let bw = slot * 0.5;
            let (mn, mx) = st
                .values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                });
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{color}"/>"#,
                y(mn),
                y(mx)
            );
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="white" stroke="{color}"/>"#,
                cx - bw / 2.0,
                y(st.p75),
                (y(st.p25) - y(st.p75)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{m:.2}" x2="{:.2}" y2="{m:.2}" stroke="{color}" stroke-width="2"/>"#,
                cx - bw / 2.0,
                cx + bw / 2.0,
                m = y(st.median)
            );
            let _ = writeln!(
                s,
                r#"<text x="{cx:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
                H - BOTTOM + 14.0,
                esc(name)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
