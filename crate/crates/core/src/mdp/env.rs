use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MdpSpec;
use crate::error::{Error, Result};

/// Step cap applied when an environment is built without an explicit one.
pub const DEFAULT_MAX_STEPS: usize = 500;

/// Result of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// The episode reached a terminal state. Learners must not bootstrap.
    pub terminal: bool,
    /// The episode was cut by the step cap. Learners still bootstrap.
    pub truncated: bool,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Episodic environment with a discrete action set.
///
/// `step` after a terminal or truncated transition fails with
/// [`Error::EpisodeOver`] until `reset` is called.
pub trait Environment: Send {
    fn observation_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<EnvStep>;

    /// Current tabular state id, for environments that have one.
    fn state_id(&self) -> Option<usize> {
        None
    }
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn observation_dim(&self) -> usize {
        (**self).observation_dim()
    }
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn reset(&mut self) -> Vec<f64> {
        (**self).reset()
    }
    fn step(&mut self, action: usize) -> Result<EnvStep> {
        (**self).step(action)
    }
    fn state_id(&self) -> Option<usize> {
        (**self).state_id()
    }
}

/// A tabular MDP exposed through one-hot observations.
#[derive(Clone, Debug)]
pub struct MdpEnv {
    spec: Arc<MdpSpec>,
    rng: ChaCha8Rng,
    state: usize,
    steps: usize,
    max_steps: usize,
    active: bool,
}

impl MdpEnv {
    pub fn new(spec: impl Into<Arc<MdpSpec>>, seed: u64) -> Self {
        Self {
            spec: spec.into(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: 0,
            steps: 0,
            max_steps: DEFAULT_MAX_STEPS,
            active: false,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps.max(1);
        self
    }

    pub fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    pub fn one_hot(&self, state: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.spec.num_states()];
        v[state] = 1.0;
        v
    }
}

impl Environment for MdpEnv {
    fn observation_dim(&self) -> usize {
        self.spec.num_states()
    }

    fn num_actions(&self) -> usize {
        self.spec.num_actions()
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = self.spec.sample_initial(&mut self.rng);
        self.steps = 0;
        // An initial terminal state is an empty episode.
        self.active = !self.spec.is_terminal(self.state);
        self.one_hot(self.state)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        if !self.active {
            return Err(Error::EpisodeOver);
        }
        if action >= self.spec.num_actions() {
            return Err(Error::InvalidArgument(format!(
                "action {action} out of range for {} actions",
                self.spec.num_actions()
            )));
        }
        let (next, reward) = self.spec.sample_outcome(self.state, action, &mut self.rng);
        self.state = next;
        self.steps += 1;
        let terminal = self.spec.is_terminal(next);
        let truncated = !terminal && self.steps >= self.max_steps;
        self.active = !(terminal || truncated);
        Ok(EnvStep {
            observation: self.one_hot(next),
            reward,
            terminal,
            truncated,
        })
    }

    fn state_id(&self) -> Option<usize> {
        Some(self.state)
    }
}
