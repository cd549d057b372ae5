use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::{train_run, RunObserver, RunRecord, RunSeeds};
use super::{EnvSpec, ExperimentConfig};
use crate::agents::{Agent, Algorithm, ValueEstimator};
use crate::diagnostics::{
    compute_true_value_baseline, oracle_baseline, rollout, v_vs_maxq_report, write_trace_csv,
    BiasReport, TraceRow, VvsQReport,
};
use crate::error::{Error, Result};
use crate::stats::{iqr, median};
use crate::tabular::value_iteration;

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const LOG_FILE: &str = "log.jsonl";
pub const AGENT_FILE: &str = "agent.json";

const ORACLE_TOLERANCE: f64 = 1e-10;

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed-{seed}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub steps: usize,
    pub episodes: usize,
    /// Non-finite loss or estimate; the message says where.
    pub diverged: Option<String>,
    /// Mean undiscounted greedy episode return after training.
    pub final_return: Option<f64>,
    /// Mean greedy discounted return from the start state after training.
    pub final_discounted_return: Option<f64>,
    pub final_gap: Option<f64>,
    pub baseline: Option<f64>,
    pub fraction_v_exceeds_maxq: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub env: String,
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub total_steps: usize,
    pub seeds: Vec<SeedSummary>,
    pub median_final_return: f64,
    pub iqr_final_return: f64,
    pub median_final_discounted_return: f64,
    /// Optimal expected discounted return from the start distribution
    /// (tabular environments).
    pub oracle_v_star_s0: Option<f64>,
    pub diverged_runs: usize,
}

impl ExperimentSummary {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e))
    }

    fn write(&self, run_dir: &Path) -> Result<()> {
        write_json(&run_dir.join(SUMMARY_FILE), self)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `V*` averaged over the start distribution.
pub fn oracle_start_value(env: &EnvSpec, gamma: f64) -> Result<Option<f64>> {
    let Some(mdp) = env.mdp() else {
        return Ok(None);
    };
    let sol = value_iteration(mdp, gamma, ORACLE_TOLERANCE)?;
    Ok(Some(
        mdp.initial_distribution()
            .iter()
            .zip(&sol.values.0)
            .map(|(p, v)| p * v)
            .sum(),
    ))
}

struct JsonlLog {
    path: PathBuf,
    out: BufWriter<File>,
    dir: PathBuf,
}

impl RunObserver for JsonlLog {
    fn record(&mut self, record: &RunRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record).map_err(|e| Error::format(&self.path, e))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))
    }

    fn checkpoint(&mut self, step: usize, agent: &Agent) -> Result<()> {
        agent.save(&self.dir.join(format!("agent-{step}.json")))
    }
}

/// Trains every seed (in parallel, one worker per seed), writing per-seed
/// logs, checkpoints and diagnostics under `output_dir`, then a summary.
///
/// Layout:
///
/// ```text
/// output_dir/config.toml
/// output_dir/summary.json
/// output_dir/seed-<n>/log.jsonl
/// output_dir/seed-<n>/agent.json
/// output_dir/seed-<n>/bias.json, trace.csv, v_vs_q.json
/// ```
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    let env = config.env_spec()?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    std::fs::write(out.join(CONFIG_FILE), config.to_toml()?)
        .map_err(|e| Error::io(&out.join(CONFIG_FILE), e))?;
    for &seed in &config.seeds {
        let dir = seed_dir(out, seed);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let oracle = oracle_start_value(&env, config.agent.gamma)?;
    let results: Vec<Result<SeedSummary>> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, &env, seed))
        .collect();
    let seeds = results.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(config, &env, seeds, oracle);
    summary.write(out)?;
    Ok(summary)
}

fn summarize(
    config: &ExperimentConfig,
    env: &EnvSpec,
    seeds: Vec<SeedSummary>,
    oracle: Option<f64>,
) -> ExperimentSummary {
    let finals: Vec<f64> = seeds.iter().filter_map(|s| s.final_return).collect();
    let discounted: Vec<f64> = seeds.iter().filter_map(|s| s.final_discounted_return).collect();
    ExperimentSummary {
        env: env.name().to_string(),
        algorithm: config.agent.algorithm,
        gamma: config.agent.gamma,
        total_steps: config.total_steps,
        diverged_runs: seeds.iter().filter(|s| s.diverged.is_some()).count(),
        seeds,
        median_final_return: median(&finals),
        iqr_final_return: iqr(&finals),
        median_final_discounted_return: median(&discounted),
        oracle_v_star_s0: oracle,
    }
}

fn run_seed(config: &ExperimentConfig, env: &EnvSpec, seed: u64) -> Result<SeedSummary> {
    let dir = seed_dir(&config.output_dir, seed);
    let log_path = dir.join(LOG_FILE);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = JsonlLog {
        path: log_path.clone(),
        out: BufWriter::new(file),
        dir: dir.clone(),
    };
    let run = train_run(env, &config.agent, &config.train_options(), seed, &mut log)?;
    log.out.flush().map_err(|e| Error::io(&log_path, e))?;
    run.agent.save(&dir.join(AGENT_FILE))?;
    if config.dump_replay {
        run.buffer.dump_jsonl(&dir.join("replay.jsonl"))?;
    }
    let mut summary = SeedSummary {
        seed,
        steps: run.steps,
        episodes: run.episodes,
        diverged: run.diverged.clone(),
        final_return: None,
        final_discounted_return: None,
        final_gap: None,
        baseline: None,
        fraction_v_exceeds_maxq: None,
    };
    if let Some(msg) = &run.diverged {
        write_json(&dir.join("diverged.json"), &serde_json::json!({ "seed": seed, "error": msg }))?;
        return Ok(summary);
    }
    let (final_return, discounted) = final_evaluation(config, env, &run.agent, seed)?;
    summary.final_return = Some(final_return);
    summary.final_discounted_return = Some(discounted);
    if config.diagnostics.enabled {
        let diag = seed_diagnostics(config, env, &run.agent, run.trace, seed)?;
        summary.final_gap = diag.0;
        summary.baseline = diag.1;
        summary.fraction_v_exceeds_maxq = diag.2;
    }
    Ok(summary)
}

fn final_evaluation(
    config: &ExperimentConfig,
    env: &EnvSpec,
    agent: &dyn ValueEstimator,
    seed: u64,
) -> Result<(f64, f64)> {
    let seeds = RunSeeds::new(seed);
    let mut eval_env = env.build(seeds.eval_env ^ 0xf1a1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.eval ^ 0xf1a1);
    let stats = rollout(
        agent,
        eval_env.as_mut(),
        config.agent.gamma,
        config.final_eval_episodes,
        0.0,
        &mut rng,
    )?;
    Ok((stats.mean_episode_return(), stats.mean_start_return()))
}

type Diagnostics = (Option<f64>, Option<f64>, Option<f64>);

fn seed_diagnostics(
    config: &ExperimentConfig,
    env: &EnvSpec,
    agent: &Agent,
    trace: crate::diagnostics::EstimateTrace,
    seed: u64,
) -> Result<Diagnostics> {
    let dir = seed_dir(&config.output_dir, seed);
    let seeds = RunSeeds::new(seed);
    let d = &config.diagnostics;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.eval ^ 0xd1a6);
    let mut eval_env = env.build(seeds.eval_env ^ 0xd1a6)?;
    let mut gap = None;
    let mut baseline_value = None;
    if !trace.checkpoints.is_empty() {
        let baseline = compute_true_value_baseline(
            agent,
            eval_env.as_mut(),
            config.agent.gamma,
            d.baseline_episodes,
            &mut rng,
        )?;
        let mut report = BiasReport::new(trace, baseline)?;
        if let Some(mdp) = env.mdp() {
            let sol = value_iteration(mdp, config.agent.gamma, ORACLE_TOLERANCE)?;
            let mut tab = env.build_tabular(seeds.eval_env ^ 0x0dac)?;
            report.oracle_baseline = Some(oracle_baseline(
                agent,
                &mut tab,
                &sol.values.0,
                d.baseline_episodes,
                &mut rng,
            )?);
        }
        let rows: Vec<TraceRow<'_>> = report
            .trace
            .checkpoints
            .iter()
            .map(|p| TraceRow {
                step: p.step,
                avg_max_q: p.avg_max_q,
                baseline: report.true_value_baseline,
                seed,
                algorithm: config.agent.algorithm,
                env: env.name(),
            })
            .collect();
        write_trace_csv(&dir.join("trace.csv"), &rows)?;
        write_json(&dir.join("bias.json"), &report)?;
        gap = Some(report.final_gap);
        baseline_value = Some(report.true_value_baseline);
    }
    let mut fraction = None;
    if d.v_vs_q && config.agent.algorithm.has_v() {
        let report = v_vs_q(agent, env, d.v_vs_q_samples, d.v_vs_q_margin, seed)?;
        write_json(&dir.join("v_vs_q.json"), &report)?;
        fraction = Some(report.fraction_v_exceeds_maxq);
    }
    Ok((gap, baseline_value, fraction))
}

/// V-versus-max-Q check with the seed's dedicated random streams.
pub fn v_vs_q(
    agent: &dyn ValueEstimator,
    env: &EnvSpec,
    samples: usize,
    margin: f64,
    seed: u64,
) -> Result<VvsQReport> {
    let seeds = RunSeeds::new(seed);
    let mut env = env.build(seeds.eval_env ^ 0x7e57)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.eval ^ 0x7e57);
    v_vs_maxq_report(agent, env.as_mut(), samples, margin, &mut rng)
}

/// Evaluation-only run from a saved agent: no training, final greedy
/// evaluation and diagnostics for every configured seed.
pub fn evaluate_checkpoint(config: &ExperimentConfig, checkpoint: &Path) -> Result<ExperimentSummary> {
    config.validate()?;
    let env = config.env_spec()?;
    let agent = Agent::load(checkpoint)?;
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut seeds = Vec::new();
    for &seed in &config.seeds {
        let (final_return, discounted) = final_evaluation(config, &env, &agent, seed)?;
        let fraction = if agent.algorithm().has_v() && config.diagnostics.v_vs_q {
            let d = &config.diagnostics;
            Some(v_vs_q(&agent, &env, d.v_vs_q_samples, d.v_vs_q_margin, seed)?.fraction_v_exceeds_maxq)
        } else {
            None
        };
        seeds.push(SeedSummary {
            seed,
            steps: 0,
            episodes: 0,
            diverged: None,
            final_return: Some(final_return),
            final_discounted_return: Some(discounted),
            final_gap: None,
            baseline: None,
            fraction_v_exceeds_maxq: fraction,
        });
    }
    let oracle = oracle_start_value(&env, agent.config().gamma)?;
    let mut cfg = config.clone();
    cfg.agent = agent.config().clone();
    let summary = summarize(&cfg, &env, seeds, oracle);
    summary.write(out)?;
    Ok(summary)
}

/// Oracle solution as written by `--dump-oracle`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleDump {
    pub env: String,
    pub gamma: f64,
    pub values: Vec<f64>,
    /// Row-major `[state][action]`.
    pub q_values: Vec<Vec<f64>>,
    pub greedy_policy: Vec<usize>,
    pub sweeps: usize,
    pub v_star_s0: f64,
}

pub fn oracle_dump(env: &EnvSpec, gamma: f64) -> Result<OracleDump> {
    let mdp = env
        .mdp()
        .ok_or_else(|| Error::InvalidConfiguration(format!("{} has no tabular oracle", env.name())))?;
    let sol = value_iteration(mdp, gamma, ORACLE_TOLERANCE)?;
    let v_star_s0 = oracle_start_value(env, gamma)?.unwrap_or(f64::NAN);
    Ok(OracleDump {
        env: env.name().to_string(),
        gamma,
        q_values: (0..mdp.num_states())
            .map(|s| sol.q_values.row(s).to_vec())
            .collect(),
        greedy_policy: sol.greedy_policy(),
        values: sol.values.0,
        sweeps: sol.sweeps,
        v_star_s0,
    })
}

pub fn write_oracle_dump(dump: &OracleDump, path: &Path) -> Result<()> {
    write_json(path, dump)
}
