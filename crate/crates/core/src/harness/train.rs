use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EnvSpec;
use crate::agents::{Agent, AgentConfig, UpdateStats};
use crate::diagnostics::{record_estimate_checkpoint, rollout, EstimateTrace, DEFAULT_EVAL_EPSILON};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, Transition};

/// Training-loop settings independent of the algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub total_steps: usize,
    pub replay_capacity: usize,
    pub warmup: usize,
    /// Environment steps between updates.
    pub train_every: usize,
    /// Steps between evaluation checkpoints; 0 disables them.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Exploration used while tracking max-Q estimates.
    pub eval_epsilon: f64,
    /// Steps between periodic step records; 0 disables them.
    pub log_interval: usize,
    /// Steps between agent checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    pub log_wall_time: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            total_steps: 10_000,
            replay_capacity: 50_000,
            warmup: 500,
            train_every: 1,
            eval_interval: 5_000,
            eval_episodes: 10,
            eval_epsilon: DEFAULT_EVAL_EPSILON,
            log_interval: 0,
            checkpoint_interval: 0,
            log_wall_time: false,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfiguration(m.into()));
        if self.total_steps == 0 {
            return bad("total_steps must be positive");
        }
        if self.total_steps < self.warmup {
            return bad("total_steps must be at least the replay warmup");
        }
        if self.replay_capacity == 0 {
            return bad("replay capacity must be positive");
        }
        if self.train_every == 0 {
            return bad("train_every must be positive");
        }
        if self.eval_interval > 0 && self.eval_episodes == 0 {
            return bad("eval_episodes must be positive when evaluation is enabled");
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return bad("eval_epsilon must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    /// An episode finished at this step.
    Episode,
    /// Periodic progress record.
    Step,
    /// Evaluation checkpoint.
    Eval,
}

/// One JSONL log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: RecordKind,
    pub step: usize,
    /// Completed episodes before this record.
    pub episode: usize,
    /// Undiscounted return of the episode that just ended.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_return: Option<f64>,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_q: Option<f64>,
    /// Average max-Q over evaluation-visited states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_max_q: Option<f64>,
    /// Greedy undiscounted episode return.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_return: Option<f64>,
    /// Greedy discounted return from the start state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_discounted_return: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<u64>,
}

/// Receives log records and checkpoint opportunities during training.
pub trait RunObserver {
    fn record(&mut self, _record: &RunRecord) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _step: usize, _agent: &Agent) -> Result<()> {
        Ok(())
    }
}

impl RunObserver for () {}

impl<F: FnMut(&RunRecord) -> Result<()>> RunObserver for F {
    fn record(&mut self, record: &RunRecord) -> Result<()> {
        self(record)
    }
}

pub struct RunOutcome {
    pub agent: Agent,
    pub trace: EstimateTrace,
    pub buffer: ReplayBuffer,
    /// Set when an update produced a non-finite loss or gradient.
    pub diverged: Option<String>,
    pub steps: usize,
    pub episodes: usize,
}

/// Independent random streams of one seeded run.
pub(crate) struct RunSeeds {
    pub agent: u64,
    pub env: u64,
    pub eval_env: u64,
    pub act: u64,
    pub sample: u64,
    pub eval: u64,
}

impl RunSeeds {
    pub fn new(seed: u64) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        Self {
            agent: r.next_u64(),
            env: r.next_u64(),
            eval_env: r.next_u64(),
            act: r.next_u64(),
            sample: r.next_u64(),
            eval: r.next_u64(),
        }
    }
}

/// Interleaved acting, storage and learning for `total_steps` environment
/// steps, with one update every `train_every` steps once the buffer is past
/// warmup and holds a full minibatch.
pub fn train_run(
    env_spec: &EnvSpec,
    agent_config: &AgentConfig,
    opts: &TrainOptions,
    seed: u64,
    observer: &mut dyn RunObserver,
) -> Result<RunOutcome> {
    opts.validate()?;
    agent_config.validate()?;
    let seeds = RunSeeds::new(seed);
    let mut env = env_spec.build(seeds.env)?;
    let mut eval_env = env_spec.build(seeds.eval_env)?;
    let mut agent = Agent::new(
        agent_config.clone(),
        env.observation_dim(),
        env.num_actions(),
        seeds.agent,
    )?;
    let mut buffer = ReplayBuffer::new(opts.replay_capacity, opts.warmup)?;
    let mut act_rng = ChaCha8Rng::seed_from_u64(seeds.act);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(seeds.sample);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(seeds.eval);
    let started = Instant::now();
    let wall = || opts.log_wall_time.then(|| started.elapsed().as_millis() as u64);

    let mut trace = EstimateTrace::default();
    let mut diverged = None;
    let mut last = UpdateStats::default();
    let mut obs = env.reset();
    let mut episode_return = 0.0;
    let mut episode = 0usize;
    let mut steps = 0usize;
    while steps < opts.total_steps {
        let epsilon = agent.epsilon_at(steps);
        let action = agent.act(&obs, epsilon, &mut act_rng)?;
        let out = env.step(action)?;
        episode_return += out.reward;
        buffer.push(Transition {
            state: std::mem::take(&mut obs),
            action,
            reward: out.reward,
            next_state: out.observation.clone(),
            terminal: out.terminal,
        });
        agent.observe_env_step();
        steps += 1;
        if buffer.is_ready()
            && buffer.len() >= agent_config.batch_size
            && steps % opts.train_every == 0
        {
            match agent.update_step(&buffer, &mut sample_rng) {
                Ok(s) => last = s,
                Err(Error::Numeric(msg)) => {
                    log::warn!("seed {seed}: diverged at step {steps}: {msg}");
                    diverged = Some(format!("step {steps}: {msg}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if out.done() {
            observer.record(&RunRecord {
                kind: RecordKind::Episode,
                step: steps,
                episode,
                episode_return: Some(episode_return),
                epsilon,
                loss_v: last.loss_v,
                loss_q: last.loss_q,
                avg_max_q: None,
                eval_return: None,
                eval_discounted_return: None,
                wall_ms: wall(),
            })?;
            episode += 1;
            episode_return = 0.0;
            obs = env.reset();
        } else {
            obs = out.observation;
        }
        if opts.log_interval > 0 && steps % opts.log_interval == 0 {
            observer.record(&RunRecord {
                kind: RecordKind::Step,
                step: steps,
                episode,
                episode_return: None,
                epsilon,
                loss_v: last.loss_v,
                loss_q: last.loss_q,
                avg_max_q: None,
                eval_return: None,
                eval_discounted_return: None,
                wall_ms: wall(),
            })?;
        }
        if opts.eval_interval > 0 && (steps % opts.eval_interval == 0 || steps == opts.total_steps) {
            let (_, avg_max_q) = record_estimate_checkpoint(
                &mut trace,
                &agent,
                eval_env.as_mut(),
                steps,
                opts.eval_episodes,
                opts.eval_epsilon,
                &mut eval_rng,
            )?;
            let greedy = rollout(
                &agent,
                eval_env.as_mut(),
                agent_config.gamma,
                opts.eval_episodes,
                0.0,
                &mut eval_rng,
            )?;
            observer.record(&RunRecord {
                kind: RecordKind::Eval,
                step: steps,
                episode,
                episode_return: None,
                epsilon,
                loss_v: last.loss_v,
                loss_q: last.loss_q,
                avg_max_q: Some(avg_max_q),
                eval_return: Some(greedy.mean_episode_return()),
                eval_discounted_return: Some(greedy.mean_start_return()),
                wall_ms: wall(),
            })?;
            if !avg_max_q.is_finite() {
                diverged = Some(format!("step {steps}: non-finite max-Q estimate"));
                break;
            }
        }
        if opts.checkpoint_interval > 0 && steps % opts.checkpoint_interval == 0 {
            observer.checkpoint(steps, &agent)?;
        }
    }
    Ok(RunOutcome {
        agent,
        trace,
        buffer,
        diverged,
        steps,
        episodes: episode,
    })
}
