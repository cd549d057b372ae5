use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::{ExperimentSummary, LOG_FILE};
use super::train::{RecordKind, RunRecord};
use crate::error::{Error, Result};
use crate::stats::median;

const EPISODE_BINS: usize = 50;

/// Parsed JSONL logs of every seed under a run directory, in seed order.
pub fn load_run_logs(run_dir: &Path) -> Result<Vec<(u64, Vec<RunRecord>)>> {
    let entries = std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let mut dirs: Vec<(u64, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(run_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name.strip_prefix("seed-").and_then(|s| s.parse().ok()) {
            dirs.push((seed, entry.path()));
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::io(
            run_dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no seed-*/log.jsonl files"),
        ));
    }
    let mut logs = Vec::new();
    let mut bad = Vec::new();
    for (seed, dir) in dirs {
        let path = dir.join(LOG_FILE);
        let parsed = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|text| {
                text.lines()
                    .enumerate()
                    .map(|(i, l)| {
                        serde_json::from_str::<RunRecord>(l).map_err(|e| format!("line {}: {e}", i + 1))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()
            });
        match parsed {
            Ok(records) => logs.push((seed, records)),
            Err(e) => bad.push(format!("{} ({e})", path.display())),
        }
    }
    if !bad.is_empty() {
        return Err(Error::format(run_dir, format!("unreadable logs: {}", bad.join("; "))));
    }
    Ok(logs)
}

/// One metric over a shared x grid: per-seed values (absent where a seed has
/// no data) and the median across present seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSet {
    pub metric: &'static str,
    pub xs: Vec<f64>,
    pub seeds: Vec<(u64, Vec<Option<f64>>)>,
    pub median: Vec<f64>,
}

impl CurveSet {
    fn build(metric: &'static str, xs: Vec<f64>, seeds: Vec<(u64, Vec<Option<f64>>)>) -> Self {
        let median = (0..xs.len())
            .map(|i| {
                let column: Vec<f64> = seeds.iter().filter_map(|(_, v)| v[i]).collect();
                median(&column)
            })
            .collect();
        Self {
            metric,
            xs,
            seeds,
            median,
        }
    }
}

fn eval_curve(
    logs: &[(u64, Vec<RunRecord>)],
    metric: &'static str,
    pick: fn(&RunRecord) -> Option<f64>,
) -> Option<CurveSet> {
    let per_seed: Vec<(u64, BTreeMap<usize, f64>)> = logs
        .iter()
        .map(|(seed, recs)| {
            let points = recs
                .iter()
                .filter(|r| r.kind == RecordKind::Eval)
                .filter_map(|r| pick(r).map(|v| (r.step, v)))
                .collect();
            (*seed, points)
        })
        .collect();
    let steps: Vec<usize> = per_seed
        .iter()
        .flat_map(|(_, m)| m.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if steps.is_empty() {
        return None;
    }
    let seeds = per_seed
        .into_iter()
        .map(|(seed, m)| (seed, steps.iter().map(|s| m.get(s).copied()).collect()))
        .collect();
    Some(CurveSet::build(
        metric,
        steps.iter().map(|&s| s as f64).collect(),
        seeds,
    ))
}

fn episode_curve(logs: &[(u64, Vec<RunRecord>)]) -> Option<CurveSet> {
    let points: Vec<(u64, Vec<(usize, f64)>)> = logs
        .iter()
        .map(|(seed, recs)| {
            let p = recs
                .iter()
                .filter(|r| r.kind == RecordKind::Episode)
                .filter_map(|r| r.episode_return.map(|v| (r.step, v)))
                .collect();
            (*seed, p)
        })
        .collect();
    let max_step = points.iter().flat_map(|(_, p)| p.iter().map(|x| x.0)).max()?;
    let bins = EPISODE_BINS.min(max_step.max(1));
    let width = max_step as f64 / bins as f64;
    let bin_of = |step: usize| (((step as f64) / width).ceil() as usize).clamp(1, bins) - 1;
    let xs = (0..bins).map(|b| (b as f64 + 1.0) * width).collect();
    let seeds = points
        .into_iter()
        .map(|(seed, p)| {
            let mut sums = vec![(0.0, 0usize); bins];
            for (step, v) in p {
                let b = bin_of(step);
                sums[b].0 += v;
                sums[b].1 += 1;
            }
            let values = sums
                .into_iter()
                .map(|(s, n)| (n > 0).then(|| s / n as f64))
                .collect();
            (seed, values)
        })
        .collect();
    Some(CurveSet::build("episode_return", xs, seeds))
}

/// Every metric with data in the run's logs.
pub fn learning_curves(run_dir: &Path) -> Result<Vec<CurveSet>> {
    let logs = load_run_logs(run_dir)?;
    Ok([
        episode_curve(&logs),
        eval_curve(&logs, "eval_return", |r| r.eval_return),
        eval_curve(&logs, "eval_discounted_return", |r| r.eval_discounted_return),
        eval_curve(&logs, "avg_max_q", |r| r.avg_max_q),
    ]
    .into_iter()
    .flatten()
    .collect())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

/// Writes one SVG and one CSV per metric into `output`; returns the SVG
/// paths. Nothing is written when the run has no usable logs.
pub fn emit_learning_curves(run_dir: &Path, output: &Path) -> Result<Vec<PathBuf>> {
    let curves = learning_curves(run_dir)?;
    if curves.is_empty() {
        return Err(Error::format(run_dir, "logs contain no plottable records"));
    }
    let (env, label) = match ExperimentSummary::load(run_dir) {
        Ok(s) => (s.env.clone(), format!("{} on {}", s.algorithm, s.env)),
        Err(_) => ("run".to_string(), run_dir.display().to_string()),
    };
    std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let mut written = Vec::new();
    for c in &curves {
        let stem = format!("{}-{}", sanitize(&env), c.metric);
        let svg_path = output.join(format!("{stem}.svg"));
        std::fs::write(&svg_path, render_svg(c, &label)).map_err(|e| Error::io(&svg_path, e))?;
        let csv_path = output.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, render_csv(c)).map_err(|e| Error::io(&csv_path, e))?;
        written.push(svg_path);
    }
    Ok(written)
}

fn render_csv(c: &CurveSet) -> String {
    let mut s = String::from("x");
    for (seed, _) in &c.seeds {
        let _ = write!(s, ",seed_{seed}");
    }
    s.push_str(",median\n");
    for (i, x) in c.xs.iter().enumerate() {
        let _ = write!(s, "{x}");
        for (_, v) in &c.seeds {
            match v[i] {
                Some(y) => {
                    let _ = write!(s, ",{y}");
                }
                None => s.push(','),
            }
        }
        let _ = writeln!(s, ",{}", c.median[i]);
    }
    s
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else if v.abs() >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn render_svg(c: &CurveSet, title: &str) -> String {
    let (x0, x1) = range(c.xs.iter().copied());
    let ys = c
        .seeds
        .iter()
        .flat_map(|(_, v)| v.iter().flatten().copied())
        .chain(c.median.iter().copied());
    let (y0, y1) = range(ys);
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="13">{} ({})</text>"#,
        W / 2.0,
        escape(title),
        c.metric
    );
    // axes
    let (ax0, ax1, ay0, ay1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        r#"<path d="M{ax0:.1},{ay0:.1} L{ax0:.1},{ay1:.1} L{ax1:.1},{ay1:.1}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(xv),
            ay1 + 16.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            ax0 - 6.0,
            py(yv) + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">step</text>"#,
        (ax0 + ax1) / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (ay0 + ay1) / 2.0,
        (ay0 + ay1) / 2.0,
        c.metric
    );
    let series = |values: Vec<(f64, f64)>, style: &str, out: &mut String| {
        if values.len() == 1 {
            let (x, y) = values[0];
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" {style}/>"#, px(x), py(y));
            return;
        }
        let pts: Vec<String> = values
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, pts.join(" "));
    };
    for (_, v) in &c.seeds {
        let pts: Vec<(f64, f64)> = c
            .xs
            .iter()
            .zip(v)
            .filter_map(|(&x, y)| y.filter(|y| y.is_finite()).map(|y| (x, y)))
            .collect();
        if !pts.is_empty() {
            series(pts, r##"stroke="#1f77b4" stroke-opacity="0.3" fill-opacity="0.3" fill="#1f77b4""##, &mut s);
        }
    }
    let med: Vec<(f64, f64)> = c
        .xs
        .iter()
        .zip(&c.median)
        .filter(|(_, y)| y.is_finite())
        .map(|(&x, &y)| (x, y))
        .collect();
    if !med.is_empty() {
        series(med, r##"stroke="#d62728" stroke-width="2.5" fill="#d62728""##, &mut s);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
