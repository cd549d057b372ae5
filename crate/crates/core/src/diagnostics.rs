//! Overestimation instrumentation: tracked max-Q estimates, the realised
//! discounted-return baseline, V-versus-max-Q checks and the seed-level
//! bias-ordering experiment.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, Algorithm, ValueEstimator};
use crate::error::{invalid, Error, Result};
use crate::harness::{train_run, EnvSpec, TrainOptions};
use crate::mdp::{Environment, MdpSpec};
use crate::replay::select_action;
use crate::stats::{mann_whitney_greater, median, RankTest};

pub const DEFAULT_EVAL_EPSILON: f64 = 0.05;

/// Aggregates of a batch of evaluation episodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutStats {
    pub episodes: usize,
    /// Non-terminal states at which an action was taken.
    pub visited_states: usize,
    /// Sum over visited states of the discounted return realised from there.
    pub visited_return_sum: f64,
    /// Sum over visited states of `max_a Q(s, a)`.
    pub max_q_sum: f64,
    /// Episodes that ended at the step cap instead of a terminal state.
    pub truncations: usize,
    /// Undiscounted return of each episode.
    pub episode_returns: Vec<f64>,
    /// Discounted return from each episode's first state.
    pub start_returns: Vec<f64>,
}

impl RolloutStats {
    pub fn mean_visited_return(&self) -> f64 {
        self.visited_return_sum / self.visited_states.max(1) as f64
    }

    pub fn mean_max_q(&self) -> f64 {
        self.max_q_sum / self.visited_states.max(1) as f64
    }

    pub fn mean_episode_return(&self) -> f64 {
        mean(&self.episode_returns)
    }

    pub fn mean_start_return(&self) -> f64 {
        mean(&self.start_returns)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Runs `episodes` epsilon-greedy episodes of `estimator` on `env`.
pub fn rollout<V, E, R>(
    estimator: &V,
    env: &mut E,
    gamma: f64,
    episodes: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<RolloutStats>
where
    V: ValueEstimator + ?Sized,
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    let mut stats = RolloutStats::default();
    let mut rewards = Vec::new();
    for _ in 0..episodes {
        let mut obs = env.reset();
        rewards.clear();
        loop {
            let q = estimator.q_values(&obs)?;
            stats.max_q_sum += q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let action = select_action(&q, epsilon, rng)?;
            let step = env.step(action)?;
            rewards.push(step.reward);
            if step.truncated {
                stats.truncations += 1;
            }
            if step.done() {
                break;
            }
            obs = step.observation;
        }
        let mut g = 0.0;
        for &r in rewards.iter().rev() {
            g = r + gamma * g;
            stats.visited_return_sum += g;
        }
        stats.visited_states += rewards.len();
        stats.start_returns.push(g);
        stats.episode_returns.push(rewards.iter().sum());
        stats.episodes += 1;
    }
    Ok(stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub avg_max_q: f64,
    pub eval_episodes: usize,
}

/// Average max-Q estimates over training, in increasing step order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateTrace {
    pub checkpoints: Vec<TracePoint>,
}

impl EstimateTrace {
    pub fn push(&mut self, point: TracePoint) -> Result<()> {
        if point.eval_episodes == 0 {
            return Err(invalid("an estimate checkpoint needs at least one episode"));
        }
        if self.checkpoints.last().is_some_and(|p| p.step >= point.step) {
            return Err(invalid(format!(
                "checkpoint step {} does not follow {}",
                point.step,
                self.checkpoints.last().map_or(0, |p| p.step)
            )));
        }
        self.checkpoints.push(point);
        Ok(())
    }

    pub fn last(&self) -> Option<&TracePoint> {
        self.checkpoints.last()
    }
}

/// Rolls out `n_episodes` evaluation episodes, averages `max_a Q` over every
/// visited state and appends the result to `trace` at `step`.
#[allow(clippy::too_many_arguments)]
pub fn record_estimate_checkpoint<V, E, R>(
    trace: &mut EstimateTrace,
    estimator: &V,
    env: &mut E,
    step: usize,
    n_episodes: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<(usize, f64)>
where
    V: ValueEstimator + ?Sized,
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    if n_episodes == 0 {
        return Err(invalid("n_episodes must be positive"));
    }
    let stats = rollout(estimator, env, 1.0, n_episodes, epsilon, rng)?;
    let avg = stats.mean_max_q();
    trace.push(TracePoint {
        step,
        avg_max_q: avg,
        eval_episodes: n_episodes,
    })?;
    Ok((step, avg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
    pub visited_states: usize,
    pub truncations: usize,
}

/// Average realised discounted return over all states visited in
/// `n_episodes` greedy rollouts. Episodes cut by the step cap contribute
/// their truncated returns and are counted.
pub fn compute_true_value_baseline<V, E, R>(
    estimator: &V,
    env: &mut E,
    gamma: f64,
    n_episodes: usize,
    rng: &mut R,
) -> Result<Baseline>
where
    V: ValueEstimator + ?Sized,
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    let stats = rollout(estimator, env, gamma, n_episodes, 0.0, rng)?;
    if stats.truncations > 0 {
        log::warn!(
            "{} of {} baseline episodes hit the step cap",
            stats.truncations,
            stats.episodes
        );
    }
    Ok(Baseline {
        value: stats.mean_visited_return(),
        visited_states: stats.visited_states,
        truncations: stats.truncations,
    })
}

/// Average of a tabular optimal value table over the states visited by
/// greedy rollouts. Needs an environment that reports state ids.
pub fn oracle_baseline<V, E, R>(
    estimator: &V,
    env: &mut E,
    v_star: &[f64],
    n_episodes: usize,
    rng: &mut R,
) -> Result<f64>
where
    V: ValueEstimator + ?Sized,
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    let (mut sum, mut count) = (0.0, 0usize);
    for _ in 0..n_episodes {
        let mut obs = env.reset();
        loop {
            let s = env
                .state_id()
                .ok_or_else(|| invalid("oracle baseline needs a tabular environment"))?;
            sum += v_star[s];
            count += 1;
            let action = select_action(&estimator.q_values(&obs)?, 0.0, rng)?;
            let step = env.step(action)?;
            if step.done() {
                break;
            }
            obs = step.observation;
        }
    }
    Ok(sum / count.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub trace: EstimateTrace,
    pub true_value_baseline: f64,
    /// Last traced `avg_max_q` minus the baseline.
    pub final_gap: f64,
    pub baseline_truncations: usize,
    /// Average optimal value over the visited states (tabular environments
    /// only); not part of the gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_baseline: Option<f64>,
}

impl BiasReport {
    pub fn new(trace: EstimateTrace, baseline: Baseline) -> Result<Self> {
        let last = trace
            .last()
            .ok_or_else(|| invalid("bias report needs at least one trace checkpoint"))?
            .avg_max_q;
        Ok(Self {
            final_gap: last - baseline.value,
            true_value_baseline: baseline.value,
            baseline_truncations: baseline.truncations,
            trace,
            oracle_baseline: None,
        })
    }
}

/// One row of the trace CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow<'a> {
    pub step: usize,
    pub avg_max_q: f64,
    pub baseline: f64,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub env: &'a str,
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow<'_>]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "step,avg_max_q,baseline,seed,algorithm,env")?;
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step, r.avg_max_q, r.baseline, r.seed, r.algorithm, r.env
            )?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VvsQReport {
    pub sampled_states: usize,
    pub fraction_v_exceeds_maxq: f64,
    pub margin: f64,
}

/// Samples `num_samples` states visited by a uniform-random policy and
/// reports how often `V(s) > max_a Q(s, a) + margin`.
pub fn v_vs_maxq_report<V, E, R>(
    estimator: &V,
    env: &mut E,
    num_samples: usize,
    margin: f64,
    rng: &mut R,
) -> Result<VvsQReport>
where
    V: ValueEstimator + ?Sized,
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    if num_samples == 0 {
        return Err(invalid("num_samples must be positive"));
    }
    let mut exceed = 0usize;
    let mut sampled = 0usize;
    let mut obs = env.reset();
    while sampled < num_samples {
        let v = estimator
            .state_value(&obs)?
            .ok_or_else(|| Error::InvalidConfiguration("estimator has no V head".into()))?;
        let max_q = estimator
            .q_values(&obs)?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if v > max_q + margin {
            exceed += 1;
        }
        sampled += 1;
        let step = env.step(rng.gen_range(0..env.num_actions()))?;
        obs = if step.done() {
            env.reset()
        } else {
            step.observation
        };
    }
    Ok(VvsQReport {
        sampled_states: sampled,
        fraction_v_exceeds_maxq: exceed as f64 / sampled as f64,
        margin,
    })
}

/// Settings shared by every algorithm in a bias-ordering experiment.
#[derive(Clone, Debug)]
pub struct BiasExperimentConfig {
    /// Template; the algorithm field is overridden per arm.
    pub agent: AgentConfig,
    pub train: TrainOptions,
    /// Greedy episodes for the realised-return baseline.
    pub baseline_episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmGaps {
    pub algorithm: Algorithm,
    /// Final gap per non-diverged seed, in seed order.
    pub gaps: Vec<f64>,
    pub seeds: Vec<u64>,
    pub divergences: usize,
    pub median_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingTest {
    /// Claimed larger-gap algorithm.
    pub greater: Algorithm,
    pub lesser: Algorithm,
    pub median_greater: f64,
    pub median_lesser: f64,
    pub test: RankTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasOrderingReport {
    pub results: Vec<AlgorithmGaps>,
    pub orderings: Vec<OrderingTest>,
}

impl BiasOrderingReport {
    pub fn gaps(&self, algorithm: Algorithm) -> Option<&AlgorithmGaps> {
        self.results.iter().find(|r| r.algorithm == algorithm)
    }

    pub fn ordering(&self, greater: Algorithm, lesser: Algorithm) -> Option<&OrderingTest> {
        self.orderings
            .iter()
            .find(|o| o.greater == greater && o.lesser == lesser)
    }
}

/// Claimed gap orderings, tested whenever both sides were run.
pub const CLAIMED_ORDERINGS: [(Algorithm, Algorithm); 4] = [
    (Algorithm::Dqn, Algorithm::DqvMax),
    (Algorithm::DqvMax, Algorithm::Dqv),
    (Algorithm::Dqn, Algorithm::Dqv),
    (Algorithm::Dqn, Algorithm::Ddqn),
];

/// Trains every algorithm on `spec` for every seed, computes the final gap
/// between tracked max-Q and the realised-return baseline, and runs a
/// one-sided rank test for each claimed ordering.
pub fn bias_ordering_experiment(
    spec: &MdpSpec,
    algorithms: &[Algorithm],
    seeds: &[u64],
    config: &BiasExperimentConfig,
) -> Result<BiasOrderingReport> {
    if seeds.is_empty() || algorithms.is_empty() {
        return Err(invalid("bias experiment needs algorithms and seeds"));
    }
    if config.train.eval_interval == 0 {
        return Err(invalid("bias experiment needs estimate checkpoints"));
    }
    let env = EnvSpec::tabular("bias", spec.clone());
    let jobs: Vec<(Algorithm, u64)> = algorithms
        .iter()
        .flat_map(|&a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let outcomes: Vec<Result<(Algorithm, u64, Option<f64>)>> = jobs
        .par_iter()
        .map(|&(algorithm, seed)| {
            let agent_cfg = AgentConfig {
                algorithm,
                ..config.agent.clone()
            };
            let run = train_run(&env, &agent_cfg, &config.train, seed, &mut ())?;
            if run.diverged.is_some() {
                return Ok((algorithm, seed, None));
            }
            let mut eval_env = env.build(seed ^ 0x5eed_ba5e)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xb1a5));
            let baseline = compute_true_value_baseline(
                &run.agent,
                eval_env.as_mut(),
                agent_cfg.gamma,
                config.baseline_episodes,
                &mut rng,
            )?;
            let report = BiasReport::new(run.trace, baseline)?;
            Ok((algorithm, seed, report.final_gap.is_finite().then_some(report.final_gap)))
        })
        .collect();
    let mut by_algo: BTreeMap<Algorithm, AlgorithmGaps> = BTreeMap::new();
    for outcome in outcomes {
        let (algorithm, seed, gap) = outcome?;
        let entry = by_algo.entry(algorithm).or_insert_with(|| AlgorithmGaps {
            algorithm,
            gaps: Vec::new(),
            seeds: Vec::new(),
            divergences: 0,
            median_gap: f64::NAN,
        });
        match gap {
            Some(g) => {
                entry.gaps.push(g);
                entry.seeds.push(seed);
            }
            None => entry.divergences += 1,
        }
    }
    let results: Vec<AlgorithmGaps> = algorithms
        .iter()
        .filter_map(|a| by_algo.remove(a))
        .map(|mut r| {
            r.median_gap = median(&r.gaps);
            r
        })
        .collect();
    let find = |a: Algorithm| results.iter().find(|r| r.algorithm == a);
    let orderings = CLAIMED_ORDERINGS
        .iter()
        .filter_map(|&(g, l)| {
            let (hi, lo) = (find(g)?, find(l)?);
            Some(OrderingTest {
                greater: g,
                lesser: l,
                median_greater: hi.median_gap,
                median_lesser: lo.median_gap,
                test: mann_whitney_greater(&hi.gaps, &lo.gaps),
            })
        })
        .collect();
    Ok(BiasOrderingReport { results, orderings })
}
