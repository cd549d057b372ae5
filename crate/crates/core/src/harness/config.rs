use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EnvSpec, TrainOptions};
use crate::agents::AgentConfig;
use crate::diagnostics::DEFAULT_EVAL_EPSILON;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub warmup: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 50_000,
            warmup: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub eval_epsilon: f64,
    /// Greedy episodes for the realised-return baseline.
    pub baseline_episodes: usize,
    pub v_vs_q: bool,
    pub v_vs_q_samples: usize,
    pub v_vs_q_margin: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            eval_epsilon: DEFAULT_EVAL_EPSILON,
            baseline_episodes: 20,
            v_vs_q: true,
            v_vs_q_samples: 500,
            v_vs_q_margin: 0.0,
        }
    }
}

/// One experiment: an environment, an agent, a step budget and a seed list.
///
/// ```toml
/// env = "gridworld:5x5"
/// total_steps = 50000
/// seeds = [1, 2, 3, 4, 5]
/// output_dir = "runs/dqv-grid"
///
/// [agent]
/// algorithm = "dqv"
/// learning_rate = 0.001
///
/// [replay]
/// capacity = 50000
/// warmup = 1000
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Environment name (see [`EnvSpec::parse`]).
    pub env: Option<String>,
    /// Tabular MDP document; alternative to `env`.
    pub env_file: Option<PathBuf>,
    pub agent: AgentConfig,
    pub total_steps: usize,
    pub seeds: Vec<u64>,
    /// Steps between evaluation checkpoints; 0 disables them.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Greedy episodes for the final per-seed evaluation.
    pub final_eval_episodes: usize,
    pub output_dir: PathBuf,
    pub replay: ReplayConfig,
    pub diagnostics: DiagnosticsConfig,
    pub train_every: usize,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
    pub log_wall_time: bool,
    pub dump_replay: bool,
    /// Per-episode step cap, overriding the environment default.
    pub max_episode_steps: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: None,
            env_file: None,
            agent: AgentConfig::default(),
            total_steps: 10_000,
            seeds: vec![1],
            eval_interval: 5_000,
            eval_episodes: 10,
            final_eval_episodes: 20,
            output_dir: PathBuf::from("runs/default"),
            replay: ReplayConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
            train_every: 1,
            log_interval: 0,
            checkpoint_interval: 0,
            log_wall_time: false,
            dump_replay: false,
            max_episode_steps: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfiguration(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfiguration(e.to_string()))
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            total_steps: self.total_steps,
            replay_capacity: self.replay.capacity,
            warmup: self.replay.warmup,
            train_every: self.train_every,
            eval_interval: self.eval_interval,
            eval_episodes: self.eval_episodes,
            eval_epsilon: self.diagnostics.eval_epsilon,
            log_interval: self.log_interval,
            checkpoint_interval: self.checkpoint_interval,
            log_wall_time: self.log_wall_time,
        }
    }

    pub fn env_spec(&self) -> Result<EnvSpec> {
        let spec = match (&self.env, &self.env_file) {
            (Some(name), None) => EnvSpec::parse(name)?,
            (None, Some(path)) => EnvSpec::from_file(path)?,
            (Some(_), Some(_)) => {
                return Err(Error::InvalidConfiguration(
                    "give either env or env_file, not both".into(),
                ))
            }
            (None, None) => return Err(Error::InvalidConfiguration("no environment given".into())),
        };
        Ok(match self.max_episode_steps {
            Some(cap) => spec.with_max_steps(cap),
            None => spec,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.final_eval_episodes == 0 {
            return bad("final_eval_episodes must be positive".into());
        }
        if self.max_episode_steps == Some(0) {
            return bad("max_episode_steps must be positive".into());
        }
        let d = &self.diagnostics;
        if d.enabled && d.baseline_episodes == 0 {
            return bad("baseline_episodes must be positive".into());
        }
        if d.enabled && d.v_vs_q && d.v_vs_q_samples == 0 {
            return bad("v_vs_q_samples must be positive".into());
        }
        self.train_options().validate()?;
        self.agent.validate()?;
        self.env_spec().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Algorithm;

    #[test]
    fn parses_minimal_toml() {
        let c = ExperimentConfig::from_toml(
            r#"
            env = "chain:5"
            total_steps = 2000
            seeds = [1, 2]
            [agent]
            algorithm = "dqv-max"
            hidden = [16]
            [replay]
            warmup = 100
            "#,
        )
        .unwrap();
        assert_eq!(c.agent.algorithm, Algorithm::DqvMax);
        assert_eq!(c.replay.capacity, 50_000);
        c.validate().unwrap();
    }

    #[test]
    fn round_trips_through_toml() {
        let c = ExperimentConfig {
            env: Some("gridworld:3x3".into()),
            ..ExperimentConfig::default()
        };
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn rejects_invalid_configs() {
        let base = ExperimentConfig {
            env: Some("chain:5".into()),
            ..ExperimentConfig::default()
        };
        base.validate().unwrap();
        let cases = [
            ExperimentConfig {
                total_steps: 100,
                ..base.clone()
            },
            ExperimentConfig {
                seeds: vec![],
                ..base.clone()
            },
            ExperimentConfig {
                seeds: vec![3, 3],
                ..base.clone()
            },
            ExperimentConfig {
                env: None,
                ..base.clone()
            },
            ExperimentConfig {
                env: Some("nowhere".into()),
                ..base.clone()
            },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(Error::InvalidConfiguration(_))), "{c:?}");
        }
        assert!(ExperimentConfig::from_toml("unknown_key = 1").is_err());
    }
}
