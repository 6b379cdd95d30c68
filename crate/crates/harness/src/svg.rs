//! Static SVG charts of a report: detection bars, curves and runtime.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::report::EvalReport;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Files written and notices about charts that had nothing to plot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SvgOutput {
    pub files: Vec<PathBuf>,
    pub notices: Vec<String>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Self {
            x: widen(x),
            y: widen(y),
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn axes(s: &mut String, frame: &Frame, x_label: &str, y_label: &str, x_ticks: bool) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
    );
    for t in 0..=4 {
        let v = frame.y.0 + (frame.y.1 - frame.y.0) * f64::from(t) / 4.0;
        let y = frame.py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
        if x_ticks {
            let u = frame.x.0 + (frame.x.1 - frame.x.0) * f64::from(t) / 4.0;
            let x = frame.px(u);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
                y0 + 4.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{}" text-anchor="middle">{u:.3}</text>"#,
                y0 + 18.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(s: &mut String, names: &[&String]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}">{}</text>"#,
            x + 18.0,
            escape(name)
        );
    }
}

fn close(mut s: String) -> String {
    s.push_str("</svg>\n");
    s
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Bars of the mean F1 per valuator, whiskers spanning the seed minimum and
/// maximum.
fn detect_chart(report: &EvalReport) -> Option<String> {
    let mut by: BTreeMap<&String, Vec<f64>> = BTreeMap::new();
    for r in report.summary.iter().filter(|r| r.task == "detect") {
        by.entry(&r.valuator).or_default().push(r.metric_value);
    }
    if by.is_empty() {
        return None;
    }
    let frame = Frame::new((0.0, by.len() as f64), (0.0, 1.0));
    let mut s = open("Noisy data detection");
    axes(&mut s, &frame, "valuator", "F1 score", false);
    let slot = (WIDTH - LEFT - RIGHT) / by.len() as f64;
    for (i, (name, f1)) in by.iter().enumerate() {
        let mean = f1.iter().sum::<f64>() / f1.len() as f64;
        let (lo, hi) = range(f1.iter().copied());
        let x = LEFT + slot * (i as f64 + 0.2);
        let w = slot * 0.6;
        let cx = x + w / 2.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{x:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="{color}"><title>{}: mean {mean:.4}</title></rect>"#,
            frame.py(mean),
            frame.py(0.0) - frame.py(mean),
            escape(name)
        );
        let _ = writeln!(
            s,
            r#"<line class="whisker" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            frame.py(lo),
            frame.py(hi)
        );
        for v in [lo, hi] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
                cx - 5.0,
                frame.py(v),
                cx + 5.0,
                frame.py(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#,
            HEIGHT - BOTTOM + 16.0,
            escape(name)
        );
    }
    Some(close(s))
}

/// One polyline per valuator: performance at each grid point, averaged over
/// seeds.
fn curve_chart(report: &EvalReport, direction: &str) -> Option<String> {
    let mut by: BTreeMap<&String, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in report.curves.iter().filter(|r| r.direction == direction) {
        let cell = by
            .entry(&r.valuator)
            .or_default()
            .entry(r.k)
            .or_insert((0.0, 0));
        cell.0 += r.performance;
        cell.1 += 1;
    }
    if by.is_empty() {
        return None;
    }
    let means: Vec<(&String, Vec<(f64, f64)>)> = by
        .iter()
        .map(|(name, grid)| {
            (
                *name,
                grid.iter()
                    .map(|(&k, &(sum, n))| (k as f64, sum / n as f64))
                    .collect(),
            )
        })
        .collect();
    let xr = range(means.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)));
    let yr = range(means.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1)));
    let frame = Frame::new(xr, yr);
    let title = match direction {
        "removal" => "Point removal",
        _ => "Point addition",
    };
    let x_label = match direction {
        "removal" => "points removed (highest value first)",
        _ => "points added (lowest value first)",
    };
    let mut s = open(title);
    axes(&mut s, &frame, x_label, "test performance", true);
    for (i, (_, pts)) in means.iter().enumerate() {
        let points: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            points.join(" "),
            PALETTE[i % PALETTE.len()]
        );
    }
    legend(&mut s, &means.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    Some(close(s))
}

/// Detection F1 against log10 of the valuation time, one point per
/// (valuator, seed) that has both.
fn runtime_chart(report: &EvalReport) -> Option<String> {
    let f1: BTreeMap<(&String, u64), f64> = report
        .summary
        .iter()
        .filter(|r| r.task == "detect")
        .map(|r| ((&r.valuator, r.seed), r.metric_value))
        .collect();
    let mut by: BTreeMap<&String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in report.summary.iter().filter(|r| r.task == "runtime") {
        if let Some(&f) = f1.get(&(&r.valuator, r.seed)) {
            by.entry(&r.valuator)
                .or_default()
                .push((f, r.metric_value.max(1e-9).log10()));
        }
    }
    if by.is_empty() {
        return None;
    }
    let xr = range(by.values().flatten().map(|p| p.0));
    let yr = range(by.values().flatten().map(|p| p.1));
    let frame = Frame::new(xr, yr);
    let mut s = open("Runtime against detection F1");
    axes(&mut s, &frame, "F1 score", "log10 runtime (s)", true);
    for (i, pts) in by.values().enumerate() {
        for &(x, y) in pts {
            let _ = writeln!(
                s,
                r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
                frame.px(x),
                frame.py(y),
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    legend(&mut s, &by.keys().copied().collect::<Vec<_>>());
    Some(close(s))
}

/// Writes `detect.svg`, `removal.svg`, `addition.svg` and `runtime.svg` for
/// the tasks that have rows; charts without data are skipped with a notice.
pub fn emit_svg(report: &EvalReport, dir: impl AsRef<Path>) -> Result<SvgOutput> {
    let dir = dir.as_ref();
    let mut out = SvgOutput::default();
    let charts = [
        ("detect", detect_chart(report)),
        ("removal", curve_chart(report, "removal")),
        ("addition", curve_chart(report, "addition")),
        ("runtime", runtime_chart(report)),
    ];
    for (task, chart) in charts {
        match chart {
            Some(svg) => {
                std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
                    path: dir.to_path_buf(),
                    source,
                })?;
                let path = dir.join(format!("{task}.svg"));
                std::fs::write(&path, svg).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                out.files.push(path);
            }
            None => out
                .notices
                .push(format!("no plottable {task} rows; {task}.svg not written")),
        }
    }
    Ok(out)
}
