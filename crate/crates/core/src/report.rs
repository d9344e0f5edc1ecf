//! SVG line charts of mean squared error against sample size, one chart per
//! setting and one polyline per estimator. Output is a pure function of
//! the input rows.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::simulation::{summarize, ReplicationRecord, SettingId, SummaryRow};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Which summary column to plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MeanSeLambda,
    MeanSeTotal,
}

impl Metric {
    fn pick(self, row: &SummaryRow) -> Option<f64> {
        match self {
            Metric::MeanSeLambda => row.mean_se_lambda,
            Metric::MeanSeTotal => row.mean_se_total,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::MeanSeLambda => "mean SE(Λ)",
            Metric::MeanSeTotal => "mean SE(Λ, Ψ²)",
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: &[f64], force_log: bool) -> Axis {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log = force_log || (min > 0.0 && max / min >= 10.0);
        let (mut lo, mut hi) = if log { (min.log10(), max.log10()) } else { (min, max) };
        if force_log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Axis { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }
}

fn fmt_coord(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if (1e-2..1e4).contains(&v.abs()) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.0e}")
    }
}

/// Chart for one setting. Non-positive or missing values are skipped,
/// since the vertical axis is logarithmic.
pub fn render_setting(setting: SettingId, rows: &[SummaryRow], metric: Metric) -> String {
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.setting == setting) {
        let entry = series.entry(row.estimator.as_str()).or_default();
        if let Some(v) = metric.pick(row).filter(|v| *v > 0.0 && v.is_finite()) {
            entry.push((row.n as f64, v));
        }
    }
    for points in series.values_mut() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let xs: Vec<f64> = series.values().flatten().map(|p| p.0).collect();
    let ys: Vec<f64> = series.values().flatten().map(|p| p.1).collect();

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="13">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16">Setting {setting}: {} vs n</text>"#,
        fmt_coord(LEFT + plot_w / 2.0),
        escape(metric.label())
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        fmt_coord(plot_w),
        fmt_coord(plot_h)
    );

    if !xs.is_empty() {
        let xa = Axis::new(&xs, false);
        let ya = Axis::new(&ys, true);
        let px = |x: f64| LEFT + xa.unit(x) * plot_w;
        let py = |y: f64| TOP + (1.0 - ya.unit(y)) * plot_h;

        let mut grid: Vec<f64> = xs.clone();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        for x in grid {
            let _ = writeln!(
                svg,
                r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/><text x="{0}" y="{3}" text-anchor="middle">{4}</text>"#,
                fmt_coord(px(x)),
                fmt_coord(TOP + plot_h),
                fmt_coord(TOP + plot_h + 5.0),
                fmt_coord(TOP + plot_h + 20.0),
                fmt_tick(x)
            );
        }
        let (lo, hi) = (ya.lo as i32, ya.hi as i32);
        for e in lo..=hi {
            let y = 10f64.powi(e);
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="#dddddd"/><text x="{2}" y="{3}" text-anchor="end">{4}</text>"##,
                fmt_coord(py(y)),
                fmt_coord(LEFT + plot_w),
                fmt_coord(LEFT - 8.0),
                fmt_coord(py(y) + 4.0),
                fmt_tick(y)
            );
        }
        for (i, (name, points)) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let coords: Vec<String> = points
                .iter()
                .map(|&(x, y)| format!("{},{}", fmt_coord(px(x)), fmt_coord(py(y))))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline data-estimator="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                escape(name),
                coords.join(" ")
            );
            for &(x, y) in points {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#,
                    fmt_coord(px(x)),
                    fmt_coord(py(y))
                );
            }
            let ly = TOP + 20.0 + 22.0 * i as f64;
            let lx = LEFT + plot_w + 15.0;
            let _ = writeln!(
                svg,
                r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="2"/><text x="{3}" y="{4}">{5}</text>"#,
                fmt_coord(lx),
                fmt_coord(ly),
                fmt_coord(lx + 25.0),
                fmt_coord(lx + 32.0),
                fmt_coord(ly + 4.0),
                escape(name)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">sample size n{}</text>"#,
            fmt_coord(LEFT + plot_w / 2.0),
            fmt_coord(HEIGHT - 20.0),
            if xa.log { " (log scale)" } else { "" }
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1} (log scale)</text>"#,
        fmt_coord(TOP + plot_h / 2.0),
        escape(metric.label())
    );
    svg.push_str("</svg>\n");
    svg
}

/// One chart per setting present in `records`, in setting order.
pub fn render_report(records: &[ReplicationRecord], metric: Metric) -> Vec<(SettingId, String)> {
    let rows = summarize(records);
    let mut settings: Vec<SettingId> = rows.iter().map(|r| r.setting).collect();
    settings.sort();
    settings.dedup();
    settings
        .into_iter()
        .map(|s| (s, render_setting(s, &rows, metric)))
        .collect()
}
