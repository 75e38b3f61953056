//! Minimal SVG figures: line/scatter plots and histogram grids.

use std::fmt::Write as _;

use crushgraph::attribution::xml_escape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Line,
    Dots,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub mark: Mark,
}

const COLORS: [&str; 4] = ["#1f5fa8", "#c0392b", "#2e8b57", "#8e44ad"];

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.x0 + (v - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn y(&self, v: f64) -> f64 {
        self.y0 + self.h - (v - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, out: &mut String, font: f64) {
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
            self.x0, self.y0, self.w, self.h
        );
        for t in ticks(self.xr.0, self.xr.1) {
            let x = self.x(t);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" font-size="{font}" text-anchor="middle">{}</text>"##,
                self.y0 + self.h,
                self.y0 + self.h + 4.0,
                self.y0 + self.h + 4.0 + font,
                label(t)
            );
        }
        for t in ticks(self.yr.0, self.yr.1) {
            let y = self.y(t);
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" font-size="{font}" text-anchor="end">{}</text>"##,
                self.x0 - 4.0,
                self.x0,
                self.x0 - 6.0,
                y + font / 3.0,
                label(t)
            );
        }
    }
}

pub fn xy_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (width, height) = (640.0, 440.0);
    let all = || series.iter().flat_map(|s| s.points.iter());
    let xr = range(all().map(|p| p.0));
    let yr = range(all().map(|p| p.1));
    let pad = |(a, b): (f64, f64)| (a - 0.04 * (b - a), b + 0.04 * (b - a));
    let frame = Frame {
        x0: 70.0,
        y0: 40.0,
        w: width - 100.0,
        h: height - 100.0,
        xr: pad(xr),
        yr: pad(yr),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"##
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="24" font-size="15" text-anchor="middle">{}</text>"##,
        width / 2.0,
        xml_escape(title)
    );
    frame.axes(&mut out, 11.0);
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"##,
        frame.x0 + frame.w / 2.0,
        height - 20.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        out,
        r##"<text x="16" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"##,
        frame.y0 + frame.h / 2.0,
        frame.y0 + frame.h / 2.0,
        xml_escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        match s.mark {
            Mark::Line => {
                let pts: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", frame.x(p.0), frame.y(p.1))).collect();
                let _ = writeln!(out, r##"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"##, pts.join(" "));
            }
            Mark::Dots => {
                for p in &s.points {
                    let _ = writeln!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"##, frame.x(p.0), frame.y(p.1));
                }
            }
        }
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="11" fill="{color}">{}</text>"##,
            frame.x0 + 10.0,
            frame.y0 + 16.0 + 14.0 * k as f64,
            xml_escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of(name: &str, values: &[f64], bins: usize) -> Self {
        let (lo, hi) = range(values.iter().copied());
        let mut counts = vec![0; bins];
        for v in values.iter().filter(|v| v.is_finite()) {
            let k = (((v - lo) / (hi - lo)) * bins as f64).floor() as usize;
            counts[k.min(bins - 1)] += 1;
        }
        Self {
            name: name.to_string(),
            lo,
            hi,
            counts,
        }
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * k as f64, self.lo + w * (k + 1) as f64)
    }
}

pub fn histogram_grid(title: &str, panels: &[Histogram]) -> String {
    let cols = 6usize;
    let rows = panels.len().div_ceil(cols).max(1);
    let (pw, ph) = (190.0, 150.0);
    let width = pw * cols as f64;
    let height = 40.0 + ph * rows as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"##
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##);
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="24" font-size="15" text-anchor="middle">{}</text>"##,
        width / 2.0,
        xml_escape(title)
    );
    for (i, hist) in panels.iter().enumerate() {
        let (cx, cy) = ((i % cols) as f64 * pw, 40.0 + (i / cols) as f64 * ph);
        let top = hist.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let frame = Frame {
            x0: cx + 34.0,
            y0: cy + 22.0,
            w: pw - 46.0,
            h: ph - 52.0,
            xr: (hist.lo, hist.hi),
            yr: (0.0, top),
        };
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##,
            cx + pw / 2.0,
            cy + 14.0,
            xml_escape(&hist.name)
        );
        for (k, &c) in hist.counts.iter().enumerate() {
            let (a, b) = hist.edges(k);
            let (x1, x2) = (frame.x(a), frame.x(b));
            let y = frame.y(c as f64);
            let _ = writeln!(
                out,
                r##"<rect x="{x1:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="#1f5fa8" data-count="{c}"/>"##,
                (x2 - x1).max(0.0),
                frame.y0 + frame.h - y
            );
        }
        frame.axes(&mut out, 8.0);
    }
    out.push_str("</svg>\n");
    out
}
