//! Minimal SVG line and scatter charts built from report contents.

use std::fmt::Write;

use crate::metrics::MetricsReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Axis {
    lo: f64,
    hi: f64,
    label: String,
}

impl Axis {
    fn new(lo: f64, hi: f64, label: &str) -> Self {
        let hi = if hi > lo { hi } else { lo + 1.0 };
        Axis {
            lo,
            hi,
            label: label.into(),
        }
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=5).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 5.0).collect()
    }
}

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
}

struct Chart {
    title: String,
    x: Axis,
    y: Axis,
    series: Vec<Series>,
    lines: bool,
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl Chart {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.lo) / (self.x.hi - self.x.lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.lo) / (self.y.hi - self.y.lo) * (HEIGHT - TOP - BOTTOM)
    }

    fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (WIDTH - RIGHT + LEFT) / 2.0,
            escape(&self.title)
        );
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{y0}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            x1 - x0,
            y1 - y0
        );
        for t in self.x.ticks() {
            let px = self.px(t);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.1}" y1="{y0}" x2="{px:.1}" y2="{y1}" stroke="#dddddd"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
                y1 + 16.0,
                fmt_tick(t)
            );
        }
        for t in self.y.ticks() {
            let py = self.py(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x0}" y1="{py:.1}" x2="{x1}" y2="{py:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
                x0 - 6.0,
                py + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 16.0,
            escape(&self.x.label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y.label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if self.lines && series.points.len() > 1 {
                let pts: Vec<String> = series
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                    pts.join(" ")
                );
            }
            if !self.lines || series.points.len() <= 20 {
                for &(x, y) in &series.points {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                        self.px(x),
                        self.py(y)
                    );
                }
            }
            let ly = TOP + 10.0 + 20.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="14" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                x1 + 12.0,
                ly - 2.0,
                x1 + 32.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Frame-level PVAD DET curves (false negative rate against false
/// positive rate). `None` when no report carries a curve.
pub fn det_svg(reports: &[MetricsReport]) -> Option<String> {
    let series: Vec<Series> = reports
        .iter()
        .filter_map(|r| {
            let c = r.det_pvad.as_ref()?.decimated(400);
            Some(Series {
                name: r.system.clone(),
                points: c.points.iter().map(|p| (p.fpr, p.fnr)).collect(),
            })
        })
        .collect();
    if series.is_empty() {
        return None;
    }
    Some(
        Chart {
            title: "Frame-level PVAD DET curves".into(),
            x: Axis::new(0.0, 1.0, "false positive rate"),
            y: Axis::new(0.0, 1.0, "false negative rate"),
            series,
            lines: true,
        }
        .render(),
    )
}

/// Detection accuracy against time since target onset.
pub fn duration_svg(reports: &[MetricsReport]) -> Option<String> {
    let series: Vec<Series> = reports
        .iter()
        .filter(|r| !r.accuracy_vs_duration.is_empty())
        .map(|r| Series {
            name: r.system.clone(),
            points: r
                .accuracy_vs_duration
                .iter()
                .map(|d| (f64::from(d.duration_ms), d.accuracy))
                .collect(),
        })
        .collect();
    if series.is_empty() {
        return None;
    }
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (lo, hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    Some(
        Chart {
            title: "Detection accuracy vs audio duration".into(),
            x: Axis::new(0.0, hi.max(lo), "duration after onset (ms)"),
            y: Axis::new(0.0, 1.0, "detection accuracy"),
            series,
            lines: true,
        }
        .render(),
    )
}

/// Per-user median latency against accuracy.
pub fn users_svg(reports: &[MetricsReport]) -> Option<String> {
    let series: Vec<Series> = reports
        .iter()
        .map(|r| Series {
            name: r.system.clone(),
            points: r
                .users
                .iter()
                .filter_map(|u| Some((u.median_latency_ms? as f64, u.accuracy)))
                .collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    if series.is_empty() {
        return None;
    }
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(
        Chart {
            title: "Per-user latency and accuracy".into(),
            x: Axis::new(lo, hi + 10.0, "median detection latency (ms)"),
            y: Axis::new(0.0, 1.0, "detection accuracy"),
            series,
            lines: false,
        }
        .render(),
    )
}
