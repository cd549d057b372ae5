use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::plot::load_run_logs;
use super::run::ExperimentSummary;
use super::train::RecordKind;
use crate::agents::Algorithm;
use crate::error::{invalid, Result};
use crate::stats::{iqr, mann_whitney_greater, median, PValueMethod};

/// Fraction of `V*(s0)` a run's median greedy discounted return must reach.
pub const THRESHOLD_FRACTION: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRow {
    pub dir: PathBuf,
    pub algorithm: Algorithm,
    pub seeds: usize,
    pub diverged: usize,
    pub median_final_return: f64,
    pub iqr_final_return: f64,
    /// First evaluation step where the across-seed median discounted return
    /// reaches the threshold; `None` if never, or with no oracle.
    pub steps_to_threshold: Option<usize>,
    /// 1-based position by median final return.
    pub rank: usize,
}

/// One-sided rank test that `better` outperforms `worse` on final return.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairTest {
    pub better: usize,
    pub worse: usize,
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub env: String,
    pub threshold: Option<f64>,
    /// Sorted by rank.
    pub rows: Vec<RunRow>,
    /// Every pair, better-ranked first; indices point into `rows`.
    pub tests: Vec<PairTest>,
}

fn final_returns(summary: &ExperimentSummary) -> Vec<f64> {
    summary.seeds.iter().filter_map(|s| s.final_return).collect()
}

fn steps_to_threshold(dir: &Path, threshold: f64) -> Result<Option<usize>> {
    let logs = load_run_logs(dir)?;
    let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (_, records) in &logs {
        for r in records.iter().filter(|r| r.kind == RecordKind::Eval) {
            if let Some(v) = r.eval_discounted_return {
                by_step.entry(r.step).or_default().push(v);
            }
        }
    }
    Ok(by_step
        .into_iter()
        .find(|(_, vs)| median(vs) >= threshold)
        .map(|(step, _)| step))
}

/// Compares finished runs of the same environment.
pub fn compare_runs(dirs: &[PathBuf]) -> Result<Comparison> {
    if dirs.len() < 2 {
        return Err(invalid("compare needs at least two run directories"));
    }
    let summaries = dirs
        .iter()
        .map(|d| ExperimentSummary::load(d))
        .collect::<Result<Vec<_>>>()?;
    let env = summaries[0].env.clone();
    if let Some((d, s)) = dirs.iter().zip(&summaries).find(|(_, s)| s.env != env) {
        return Err(invalid(format!(
            "run {} is on {} but {} is on {}",
            d.display(),
            s.env,
            dirs[0].display(),
            env
        )));
    }
    let threshold = summaries[0].oracle_v_star_s0.map(|v| THRESHOLD_FRACTION * v);
    let mut rows = Vec::new();
    for (dir, s) in dirs.iter().zip(&summaries) {
        let finals = final_returns(s);
        rows.push((
            RunRow {
                dir: dir.clone(),
                algorithm: s.algorithm,
                seeds: s.seeds.len(),
                diverged: s.diverged_runs,
                median_final_return: median(&finals),
                iqr_final_return: iqr(&finals),
                steps_to_threshold: match threshold {
                    Some(t) => steps_to_threshold(dir, t)?,
                    None => None,
                },
                rank: 0,
            },
            finals,
        ));
    }
    // NaN medians (all seeds diverged) sort last
    rows.sort_by(|a, b| {
        let (x, y) = (a.0.median_final_return, b.0.median_final_return);
        y.partial_cmp(&x)
            .unwrap_or_else(|| x.is_nan().cmp(&y.is_nan()))
    });
    for (i, (row, _)) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    let mut tests = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (x, y) = (&rows[i].1, &rows[j].1);
            if x.is_empty() || y.is_empty() {
                continue;
            }
            let t = mann_whitney_greater(x, y);
            tests.push(PairTest {
                better: i,
                worse: j,
                u: t.u,
                p_value: t.p_value,
                exact: t.method == PValueMethod::Exact,
            });
        }
    }
    Ok(Comparison {
        env,
        threshold,
        rows: rows.into_iter().map(|(r, _)| r).collect(),
        tests,
    })
}

impl Comparison {
    /// Significance marker of the pair test between ranks `i` and `i + 1`.
    fn marker(&self, i: usize) -> &'static str {
        match self.tests.iter().find(|t| t.better == i && t.worse == i + 1) {
            Some(t) if t.p_value < 0.01 => "**",
            Some(t) if t.p_value < 0.05 => "*",
            _ => "",
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "env: {}", self.env);
        if let Some(t) = self.threshold {
            let _ = writeln!(s, "threshold: {t:.4} ({THRESHOLD_FRACTION} x V*(s0))");
        }
        let _ = writeln!(
            s,
            "{:<5} {:<12} {:>6} {:>9} {:>12} {:>10} {:>12}  run",
            "rank", "algorithm", "seeds", "diverged", "median", "iqr", "to-thresh"
        );
        for (i, r) in self.rows.iter().enumerate() {
            let thresh = r
                .steps_to_threshold
                .map_or_else(|| "-".to_string(), |v| v.to_string());
            let _ = writeln!(
                s,
                "{:<5} {:<12} {:>6} {:>9} {:>12.4} {:>10.4} {:>12}  {}",
                format!("{}{}", r.rank, self.marker(i)),
                r.algorithm.name(),
                r.seeds,
                r.diverged,
                r.median_final_return,
                r.iqr_final_return,
                thresh,
                r.dir.display()
            );
        }
        let _ = writeln!(s, "* / **: beats the next rank at p < 0.05 / 0.01 (one-sided Mann-Whitney U)");
        if !self.tests.is_empty() {
            let _ = writeln!(s, "pairwise:");
            for t in &self.tests {
                let _ = writeln!(
                    s,
                    "  {} > {}: U = {}, p = {:.4} ({})",
                    self.rows[t.better].algorithm,
                    self.rows[t.worse].algorithm,
                    t.u,
                    t.p_value,
                    if t.exact { "exact" } else { "normal" }
                );
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "rank,algorithm,run,seeds,diverged,median_final_return,iqr_final_return,steps_to_threshold,p_vs_next\n",
        );
        for (i, r) in self.rows.iter().enumerate() {
            let p = self
                .tests
                .iter()
                .find(|t| t.better == i && t.worse == i + 1)
                .map_or_else(String::new, |t| t.p_value.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.rank,
                r.algorithm,
                r.dir.display(),
                r.seeds,
                r.diverged,
                r.median_final_return,
                r.iqr_final_return,
                r.steps_to_threshold.map_or_else(String::new, |v| v.to_string()),
                p
            );
        }
        s
    }
}
