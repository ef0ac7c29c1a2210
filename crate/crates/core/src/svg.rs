//! Dependency-free SVG figures drawn from a [`MetricReport`].
//!
//! Output is a pure function of the report: fixed viewport, fixed number
//! formatting, and each plotted series embedded as an XML comment so a
//! figure can be checked by byte comparison.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::io::write_atomic;
use crate::pipeline::ModeKind;
use crate::report::{MetricReport, ModeReport, SignalReport};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

type Renderer = fn(&MetricReport) -> Option<String>;

pub const PLOT_FILES: [&str; 5] = [
    "maturity.svg",
    "learning.svg",
    "norm_ratio.svg",
    "popularity.svg",
    "engagement.svg",
];

fn color(mode: ModeKind) -> &'static str {
    match mode {
        ModeKind::Realtime => "#1f77b4",
        ModeKind::Batch => "#d62728",
    }
}

/// Shortest decimal form, with `-0` folded to `0`.
fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e5) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Plot frame with linear axes.
struct Chart {
    out: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Chart {
    fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Chart {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo, lo + 1.0) };
        let mut c = Chart {
            out: String::new(),
            x: widen(x),
            y: widen(y),
        };
        let _ = writeln!(
            c.out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = WIDTH,
            h = HEIGHT
        );
        let _ = writeln!(c.out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            c.out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        c.axes(x_label, y_label);
        c
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&mut self, x_label: &str, y_label: &str) {
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            self.out,
            r#"<path d="M{x0} {y1}V{y0}H{x1}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let (px, py) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                self.out,
                r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
                y0 + 5.0,
                y0 + 18.0,
                tick_label(xv)
            );
            let _ = writeln!(
                self.out,
                r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            self.out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 20.0,
            escape(x_label)
        );
        let _ = writeln!(
            self.out,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }

    fn data_comment(&mut self, label: &str, points: &[(f64, f64)]) {
        let body: Vec<String> = points.iter().map(|&(x, y)| format!("{},{}", num(x), num(y))).collect();
        let _ = writeln!(self.out, "<!-- data {label}: {} -->", body.join(" "));
    }

    fn polyline(&mut self, label: &str, points: &[(f64, f64)], stroke: &str, dashed: bool) {
        self.data_comment(label, points);
        let coords: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            self.out,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2"{dash}/>"#,
            coords.join(" ")
        );
    }

    fn rect(&mut self, x0: f64, x1: f64, y: f64, fill: &str, opacity: f64) {
        let (l, r) = (self.px(x0), self.px(x1));
        let (top, base) = (self.py(y), self.py(self.y.0));
        let _ = writeln!(
            self.out,
            r#"<rect x="{l:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="{opacity}"/>"#,
            r - l,
            base - top
        );
    }

    fn hline(&mut self, y: f64, label: &str) {
        let py = self.py(y);
        let _ = writeln!(
            self.out,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#777" stroke-dasharray="3 3"/><text x="{}" y="{:.2}" text-anchor="end" fill="#777">{}</text>"##,
            WIDTH - RIGHT,
            WIDTH - RIGHT - 4.0,
            py - 4.0,
            escape(label)
        );
    }

    fn legend(&mut self, entries: &[(String, &str, bool)]) {
        for (i, (label, stroke, dashed)) in entries.iter().enumerate() {
            let y = TOP + 12.0 + 16.0 * i as f64;
            let x = WIDTH - RIGHT - 150.0;
            let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                self.out,
                r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{stroke}" stroke-width="3"{dash}/><text x="{}" y="{}">{}</text>"#,
                x + 24.0,
                x + 30.0,
                y + 4.0,
                escape(label)
            );
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn first_signal(m: &ModeReport) -> Option<&SignalReport> {
    m.signals.first()
}

fn series_range<'a>(series: impl Iterator<Item = &'a [(f64, f64)]>) -> Option<((f64, f64), (f64, f64))> {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (0.0_f64, f64::NEG_INFINITY);
    let mut any = false;
    for s in series {
        for &(x, y) in s {
            any = true;
            xs = (xs.0.min(x), xs.1.max(x));
            ys = (ys.0.min(y), ys.1.max(y));
        }
    }
    any.then_some((xs, ys))
}

fn line_plot(
    report: &MetricReport,
    title: &str,
    y_label: &str,
    extract: impl Fn(&SignalReport) -> Vec<(f64, f64)>,
    reference: Option<(f64, String)>,
) -> Option<String> {
    let series: Vec<(ModeKind, Vec<(f64, f64)>)> = report
        .modes
        .iter()
        .filter_map(|m| first_signal(m).map(|s| (m.mode, extract(s))))
        .filter(|(_, pts)| !pts.is_empty())
        .collect();
    let (x, mut y) = series_range(series.iter().map(|s| s.1.as_slice()))?;
    if let Some((r, _)) = &reference {
        y.1 = y.1.max(*r);
    }
    let mut c = Chart::new(title, "views", y_label, x, (y.0, y.1 * 1.05));
    if let Some((r, label)) = reference {
        c.hline(r, &label);
    }
    let mut legend = Vec::new();
    for (mode, pts) in &series {
        c.polyline(mode.as_str(), pts, color(*mode), false);
        legend.push((mode.to_string(), color(*mode), false));
    }
    c.legend(&legend);
    Some(c.finish())
}

fn maturity_svg(report: &MetricReport) -> Option<String> {
    let alpha = report.manifest.config.metrics.alpha;
    line_plot(
        report,
        "Maturity: mean distance to converged embedding",
        "cosine distance",
        |s| {
            s.maturity
                .mean_curve
                .iter()
                .map(|p| (p.views as f64, p.distance))
                .collect()
        },
        Some((alpha, format!("alpha = {alpha}"))),
    )
}

fn learning_svg(report: &MetricReport) -> Option<String> {
    line_plot(
        report,
        "Information per view L(V)",
        "L(V)",
        |s| s.learning.points.iter().map(|p| (p.views as f64, p.value)).collect(),
        None,
    )
}

fn norm_ratio_svg(report: &MetricReport) -> Option<String> {
    let hists: Vec<(ModeKind, &SignalReport)> = report
        .modes
        .iter()
        .filter_map(|m| first_signal(m).map(|s| (m.mode, s)))
        .filter(|(_, s)| s.norm_ratio.histogram.total() > 0)
        .collect();
    let first = hists.first()?.1;
    let edges = &first.norm_ratio.histogram.edges;
    let x = (edges[0], edges[edges.len() - 1]);
    let ymax = hists
        .iter()
        .flat_map(|(_, s)| s.norm_ratio.histogram.counts.iter().copied())
        .max()
        .unwrap_or(1) as f64;
    let title = format!("Norm ratio at {} views", first.norm_ratio.at_views);
    let mut c = Chart::new(&title, "norm ratio", "items", x, (0.0, ymax * 1.05));
    let mut legend = Vec::new();
    for (mode, s) in &hists {
        let h = &s.norm_ratio.histogram;
        let pts: Vec<(f64, f64)> = h
            .counts
            .iter()
            .enumerate()
            .map(|(i, &n)| (0.5 * (h.edges[i] + h.edges[i + 1]), n as f64))
            .collect();
        c.data_comment(mode.as_str(), &pts);
        let _ = writeln!(c.out, r#"<g class="histogram" data-mode="{mode}">"#);
        for (i, &n) in h.counts.iter().enumerate() {
            if n > 0 {
                c.rect(h.edges[i], h.edges[i + 1], n as f64, color(*mode), 0.45);
            }
        }
        c.out.push_str("</g>\n");
        legend.push((mode.to_string(), color(*mode), false));
    }
    c.legend(&legend);
    Some(c.finish())
}

fn bucket_label(lo: u64, hi: Option<u64>) -> String {
    let k = |v: u64| {
        if v.is_multiple_of(1000) && v > 0 {
            format!("{}k", v / 1000)
        } else {
            v.to_string()
        }
    };
    match hi {
        Some(h) => format!("{}-{}", k(lo), k(h)),
        None => format!("{}+", k(lo)),
    }
}

/// One view bucket: lower edge, optional upper edge, value.
type RateRow = (u64, Option<u64>, Option<f64>);

/// Grouped bars, one group per view bucket and one bar per mode.
fn bucket_bars(
    report: &MetricReport,
    title: &str,
    y_label: &str,
    values: impl Fn(&ModeReport) -> Vec<RateRow>,
) -> Option<String> {
    let rows: Vec<(ModeKind, Vec<RateRow>)> = report
        .modes
        .iter()
        .map(|m| (m.mode, values(m)))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let buckets = rows.first()?.1.len();
    let ymax = rows
        .iter()
        .flat_map(|(_, v)| v.iter().filter_map(|r| r.2))
        .fold(0.0_f64, f64::max);
    let mut c = Chart::new(
        title,
        "view bucket",
        y_label,
        (0.0, buckets as f64),
        (0.0, ymax.max(1e-9) * 1.1),
    );
    // Category labels replace numeric x ticks.
    for (b, &(lo, hi, _)) in rows[0].1.iter().enumerate() {
        let _ = writeln!(
            c.out,
            r##"<text x="{:.2}" y="{}" text-anchor="middle" fill="#444">{}</text>"##,
            c.px(b as f64 + 0.5),
            HEIGHT - BOTTOM + 32.0,
            bucket_label(lo, hi)
        );
    }
    let width = 0.8 / rows.len() as f64;
    let mut legend = Vec::new();
    for (r, (mode, vals)) in rows.iter().enumerate() {
        let pts: Vec<(f64, f64)> = vals
            .iter()
            .enumerate()
            .filter_map(|(b, v)| v.2.map(|y| (b as f64, y)))
            .collect();
        c.data_comment(mode.as_str(), &pts);
        for &(b, y) in &pts {
            let x0 = b + 0.1 + width * r as f64;
            c.rect(x0, x0 + width, y, color(*mode), 0.85);
        }
        legend.push((mode.to_string(), color(*mode), false));
    }
    c.legend(&legend);
    Some(c.finish())
}

fn popularity_svg(report: &MetricReport) -> Option<String> {
    bucket_bars(report, "Share of impressions by view bucket", "share", |m| {
        m.popularity.iter().map(|p| (p.lo, p.hi, Some(p.share))).collect()
    })
}

fn engagement_svg(report: &MetricReport) -> Option<String> {
    let modes: Vec<&ModeReport> = report.modes.iter().filter(|m| !m.engagement.is_empty()).collect();
    let n = modes.first()?.engagement.len();
    let ymax = modes
        .iter()
        .flat_map(|m| m.engagement.iter().flat_map(|e| [e.click_rate, e.svp_rate]))
        .flatten()
        .fold(0.0_f64, f64::max);
    let mut c = Chart::new(
        "Engagement by view bucket (solid: play rate, dashed: click rate)",
        "view bucket",
        "rate",
        (0.0, n as f64),
        (0.0, ymax.max(1e-9) * 1.1),
    );
    for (b, e) in modes[0].engagement.iter().enumerate() {
        let _ = writeln!(
            c.out,
            r##"<text x="{:.2}" y="{}" text-anchor="middle" fill="#444">{}</text>"##,
            c.px(b as f64 + 0.5),
            HEIGHT - BOTTOM + 32.0,
            bucket_label(e.lo, e.hi)
        );
    }
    let mut legend = Vec::new();
    for m in &modes {
        let pick = |f: &dyn Fn(&crate::report::BucketRates) -> Option<f64>| -> Vec<(f64, f64)> {
            m.engagement
                .iter()
                .enumerate()
                .filter_map(|(b, e)| f(e).map(|y| (b as f64 + 0.5, y)))
                .collect()
        };
        let svp = pick(&|e| e.svp_rate);
        let click = pick(&|e| e.click_rate);
        c.polyline(&format!("{} svp", m.mode), &svp, color(m.mode), false);
        c.polyline(&format!("{} click", m.mode), &click, color(m.mode), true);
        legend.push((format!("{} play", m.mode), color(m.mode), false));
        legend.push((format!("{} click", m.mode), color(m.mode), true));
    }
    c.legend(&legend);
    Some(c.finish())
}

/// Renders every figure the report has data for. Returns the figures as
/// `(file name, svg)` plus a notice for each skipped figure.
pub fn render_all(report: &MetricReport) -> (Vec<(&'static str, String)>, Vec<String>) {
    let renderers: [(&'static str, Renderer); 5] = [
        ("maturity.svg", maturity_svg),
        ("learning.svg", learning_svg),
        ("norm_ratio.svg", norm_ratio_svg),
        ("popularity.svg", popularity_svg),
        ("engagement.svg", engagement_svg),
    ];
    let mut figures = Vec::new();
    let mut notices = Vec::new();
    for (name, render) in renderers {
        match render(report) {
            Some(svg) => figures.push((name, svg)),
            None => notices.push(format!("{name}: no data, skipped")),
        }
    }
    (figures, notices)
}

/// Writes every renderable figure into `dir`; returns the skip notices.
pub fn write_plots(report: &MetricReport, dir: &Path) -> Result<Vec<String>> {
    let (figures, notices) = render_all(report);
    for (name, svg) in figures {
        write_atomic(&dir.join(name), svg.as_bytes())?;
    }
    Ok(notices)
}
