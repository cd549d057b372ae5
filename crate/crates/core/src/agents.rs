//! DQV, DQV-Max, Hard-DQV, Dueling-DQV and the DQN/DDQN baselines.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{
    Activation, ForwardCache, HeadMode, Network, NetworkFile, NetworkTopology, Optimizer,
    OptimizerKind,
};
use crate::diagnostics::rollout;
use crate::error::{invalid, Error, Result};
use crate::mdp::Environment;
use crate::replay::{select_action, EpsilonSchedule, ReplayBuffer, Transition};

pub const AGENT_FORMAT: &str = "dqv-agent/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Dqn,
    Ddqn,
    Dqv,
    DqvMax,
    HardDqv,
    DuelingDqv,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Dqn,
        Algorithm::Ddqn,
        Algorithm::Dqv,
        Algorithm::DqvMax,
        Algorithm::HardDqv,
        Algorithm::DuelingDqv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Dqn => "dqn",
            Algorithm::Ddqn => "ddqn",
            Algorithm::Dqv => "dqv",
            Algorithm::DqvMax => "dqv-max",
            Algorithm::HardDqv => "hard-dqv",
            Algorithm::DuelingDqv => "dueling-dqv",
        }
    }

    /// Whether the agent learns a state-value function.
    pub fn has_v(self) -> bool {
        !matches!(self, Algorithm::Dqn | Algorithm::Ddqn)
    }

    pub fn is_shared(self) -> bool {
        matches!(self, Algorithm::HardDqv | Algorithm::DuelingDqv)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| invalid(format!("unknown agent {s:?}")))
    }
}

/// What the target-sync counter counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncCounter {
    /// Gradient updates.
    #[default]
    Updates,
    /// Environment actions, reported through [`Agent::observe_env_step`].
    EnvSteps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub target_sync_period: usize,
    pub sync_counter: SyncCounter,
    pub epsilon: EpsilonSchedule,
    pub optimizer: OptimizerKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Width of each dedicated head layer (dueling only).
    pub head_width: usize,
    /// Trunk layer the dueling V head reads; defaults to the last one.
    pub v_head_depth: Option<usize>,
    pub huber: bool,
    pub max_grad_norm: Option<f64>,
    pub bias: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Dqv,
            gamma: 0.99,
            learning_rate: 1e-3,
            batch_size: 32,
            target_sync_period: 500,
            sync_counter: SyncCounter::Updates,
            epsilon: EpsilonSchedule {
                eps_start: 1.0,
                eps_end: 0.05,
                decay_steps: 5_000,
            },
            optimizer: OptimizerKind::adam(),
            hidden: vec![64],
            activation: Activation::Relu,
            head_width: 32,
            v_head_depth: None,
            huber: false,
            max_grad_norm: None,
            bias: true,
        }
    }
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfiguration(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.target_sync_period == 0 {
            return bad("target_sync_period must be at least 1".into());
        }
        self.epsilon
            .validate()
            .map_err(|e| Error::InvalidConfiguration(e.to_string()))?;
        self.optimizer.validate()?;
        if self.v_head_depth.is_some() && self.algorithm != Algorithm::DuelingDqv {
            return bad("v_head_depth only applies to dueling-dqv".into());
        }
        if self.algorithm == Algorithm::DuelingDqv && self.hidden.is_empty() {
            return bad("dueling-dqv needs at least one hidden layer".into());
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return bad("max_grad_norm must be positive".into());
        }
        Ok(())
    }

    fn topology(&self, input_dim: usize, num_actions: usize, head: HeadMode) -> NetworkTopology {
        let mut t = NetworkTopology::new(
            input_dim,
            self.hidden.clone(),
            head,
            num_actions,
            self.activation,
        );
        t.bias = self.bias;
        t
    }

    fn shared_head(&self) -> HeadMode {
        match self.algorithm {
            Algorithm::DuelingDqv => HeadMode::Dueling {
                v_head_depth: self.v_head_depth.unwrap_or(self.hidden.len()),
                v_head_width: self.head_width,
                q_head_width: self.head_width,
            },
            _ => HeadMode::HardShared,
        }
    }
}

/// Anything that can be queried for value estimates at an observation.
pub trait ValueEstimator {
    fn q_values(&self, observation: &[f64]) -> Result<Vec<f64>>;
    /// `None` when the estimator has no state-value head.
    fn state_value(&self, observation: &[f64]) -> Result<Option<f64>>;
}

fn no_head(which: &str) -> Error {
    Error::InvalidConfiguration(format!("network has no {which} head"))
}

fn bootstrap(t: &Transition, gamma: f64, value: impl FnOnce() -> Result<f64>) -> Result<f64> {
    if t.terminal {
        Ok(t.reward)
    } else {
        Ok(t.reward + gamma * value()?)
    }
}

/// `y = r + gamma V(s'; phi_target)`, `r` on terminal transitions. The same
/// targets serve both the V and the Q regression.
pub fn dqv_targets(batch: &[&Transition], phi_target: &Network, gamma: f64) -> Result<Vec<f64>> {
    if !phi_target.topology().head.has_v() {
        return Err(no_head("V"));
    }
    batch
        .iter()
        .map(|t| bootstrap(t, gamma, || phi_target.value(&t.next_state)))
        .collect()
}

/// Returns `(v_targets, q_targets)`: V regresses toward
/// `r + gamma max_a Q(s',a; theta_target)`, Q toward `r + gamma V(s'; phi)`
/// with the online value network.
pub fn dqv_max_targets(
    batch: &[&Transition],
    theta_target: &Network,
    phi_online: &Network,
    gamma: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !theta_target.topology().head.has_q() {
        return Err(no_head("Q"));
    }
    if !phi_online.topology().head.has_v() {
        return Err(no_head("V"));
    }
    let mut v = Vec::with_capacity(batch.len());
    let mut q = Vec::with_capacity(batch.len());
    for t in batch {
        v.push(bootstrap(t, gamma, || Ok(max(&theta_target.q_values(&t.next_state)?)))?);
        q.push(bootstrap(t, gamma, || phi_online.value(&t.next_state))?);
    }
    Ok((v, q))
}

pub fn dqn_targets(batch: &[&Transition], theta_target: &Network, gamma: f64) -> Result<Vec<f64>> {
    if !theta_target.topology().head.has_q() {
        return Err(no_head("Q"));
    }
    batch
        .iter()
        .map(|t| bootstrap(t, gamma, || Ok(max(&theta_target.q_values(&t.next_state)?))))
        .collect()
}

/// Online network selects the next action (lowest index on ties), target
/// network evaluates it.
pub fn ddqn_targets(
    batch: &[&Transition],
    theta_online: &Network,
    theta_target: &Network,
    gamma: f64,
) -> Result<Vec<f64>> {
    if !theta_online.topology().head.has_q() || !theta_target.topology().head.has_q() {
        return Err(no_head("Q"));
    }
    batch
        .iter()
        .map(|t| {
            bootstrap(t, gamma, || {
                let a = argmax(&theta_online.q_values(&t.next_state)?);
                Ok(theta_target.q_values(&t.next_state)?[a])
            })
        })
        .collect()
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Losses of one update, each `0.5 * mean(err^2)` (or mean Huber).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub loss_v: Option<f64>,
    pub loss_q: Option<f64>,
    pub synced: bool,
}

/// Online networks, the single target copy, optimizers and counters.
///
/// | algorithm            | online           | target       |
/// |----------------------|------------------|--------------|
/// | dqn, ddqn            | theta            | theta copy   |
/// | dqv                  | theta, phi       | phi copy     |
/// | dqv-max              | theta, phi       | theta copy   |
/// | hard-dqv, dueling-dqv| shared           | shared copy  |
#[derive(Clone, Debug)]
pub struct Agent {
    config: AgentConfig,
    theta: Option<Network>,
    phi: Option<Network>,
    shared: Option<Network>,
    target: Network,
    opt_theta: Option<Optimizer>,
    opt_phi: Option<Optimizer>,
    opt_shared: Option<Optimizer>,
    update_counter: usize,
    total_updates: u64,
    env_steps: u64,
    cache: ForwardCache,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl Agent {
    pub fn new(config: AgentConfig, input_dim: usize, num_actions: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |head| Network::init(config.topology(input_dim, num_actions, head), seeds.next_u64());
        let (mut theta, mut phi, mut shared) = (None, None, None);
        match config.algorithm {
            Algorithm::Dqn | Algorithm::Ddqn => theta = Some(init(HeadMode::SeparateQ)?),
            Algorithm::Dqv | Algorithm::DqvMax => {
                theta = Some(init(HeadMode::SeparateQ)?);
                phi = Some(init(HeadMode::SeparateV)?);
            }
            Algorithm::HardDqv | Algorithm::DuelingDqv => {
                shared = Some(init(config.shared_head())?)
            }
        }
        let target = match config.algorithm {
            Algorithm::Dqv => phi.clone(),
            Algorithm::HardDqv | Algorithm::DuelingDqv => shared.clone(),
            _ => theta.clone(),
        }
        .expect("target source exists for every algorithm");
        let opt = |n: &Option<Network>| -> Result<Option<Optimizer>> {
            n.as_ref()
                .map(|n| {
                    Optimizer::new(config.optimizer, config.learning_rate, n.num_params())
                        .map(|o| o.with_max_grad_norm(config.max_grad_norm))
                })
                .transpose()
        };
        Ok(Self {
            opt_theta: opt(&theta)?,
            opt_phi: opt(&phi)?,
            opt_shared: opt(&shared)?,
            theta,
            phi,
            shared,
            target,
            config,
            update_counter: 0,
            total_updates: 0,
            env_steps: 0,
            cache: ForwardCache::default(),
            grad_a: Vec::new(),
            grad_b: Vec::new(),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn algorithm(&self) -> Algorithm {
        self.config.algorithm
    }

    /// Online action-value network (separate-network agents).
    pub fn theta(&self) -> Option<&Network> {
        self.theta.as_ref()
    }

    /// Online state-value network (separate-network agents).
    pub fn phi(&self) -> Option<&Network> {
        self.phi.as_ref()
    }

    pub fn shared(&self) -> Option<&Network> {
        self.shared.as_ref()
    }

    pub fn target(&self) -> &Network {
        &self.target
    }

    /// Online network the target copies.
    pub fn target_source(&self) -> &Network {
        match self.config.algorithm {
            Algorithm::Dqv => self.phi.as_ref(),
            Algorithm::HardDqv | Algorithm::DuelingDqv => self.shared.as_ref(),
            _ => self.theta.as_ref(),
        }
        .expect("target source exists for every algorithm")
    }

    /// Mutable access to the online networks, `(theta, phi, shared)`.
    pub fn networks_mut(&mut self) -> (Option<&mut Network>, Option<&mut Network>, Option<&mut Network>) {
        (self.theta.as_mut(), self.phi.as_mut(), self.shared.as_mut())
    }

    /// Counter that triggers a target sync when it reaches the period.
    pub fn update_counter(&self) -> usize {
        self.update_counter
    }

    pub fn total_updates(&self) -> u64 {
        self.total_updates
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    fn q_net(&self) -> &Network {
        self.theta
            .as_ref()
            .or(self.shared.as_ref())
            .expect("every agent has a Q head")
    }

    fn v_net(&self) -> Option<&Network> {
        self.phi.as_ref().or(self.shared.as_ref())
    }

    pub fn sync_targets(&mut self) {
        let src = self.target_source().params().to_vec();
        self.target.params_mut().copy_from_slice(&src);
    }

    fn tick(&mut self) -> bool {
        self.update_counter += 1;
        if self.update_counter >= self.config.target_sync_period {
            self.sync_targets();
            self.update_counter = 0;
            true
        } else {
            false
        }
    }

    /// Records one environment action; drives target sync when the
    /// counter is configured to count environment steps.
    pub fn observe_env_step(&mut self) -> bool {
        self.env_steps += 1;
        self.config.sync_counter == SyncCounter::EnvSteps && self.tick()
    }

    /// Epsilon-greedy action on the online Q estimates.
    pub fn act<R: Rng + ?Sized>(&self, observation: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
        if epsilon >= 1.0 {
            return Ok(rng.gen_range(0..self.q_net().topology().num_actions));
        }
        select_action(&self.q_net().q_values(observation)?, epsilon, rng)
    }

    /// Exploration rate for the given environment step.
    pub fn epsilon_at(&self, step: usize) -> f64 {
        self.config.epsilon.at(step)
    }

    /// Samples a minibatch and applies one update.
    pub fn update_step<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<UpdateStats> {
        let batch = buffer.sample_minibatch(self.config.batch_size, rng)?;
        self.update_on_batch(&batch)
    }

    /// One gradient step per loss on the given transitions. Also the
    /// no-replay debug path: pass the latest transition alone.
    pub fn update_on_batch(&mut self, batch: &[&Transition]) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(invalid("empty minibatch"));
        }
        let gamma = self.config.gamma;
        // All targets are computed before any parameter moves.
        let (v_targets, q_targets) = match self.config.algorithm {
            Algorithm::Dqn => (None, dqn_targets(batch, &self.target, gamma)?),
            Algorithm::Ddqn => (None, ddqn_targets(batch, self.q_net(), &self.target, gamma)?),
            Algorithm::Dqv | Algorithm::HardDqv | Algorithm::DuelingDqv => {
                let y = dqv_targets(batch, &self.target, gamma)?;
                (Some(y.clone()), y)
            }
            Algorithm::DqvMax => {
                let phi = self.phi.as_ref().expect("dqv-max has phi");
                let (v, q) = dqv_max_targets(batch, &self.target, phi, gamma)?;
                (Some(v), q)
            }
        };
        let stats = if self.config.algorithm.is_shared() {
            self.shared_step(batch, v_targets.as_deref().unwrap_or(&[]), &q_targets)?
        } else {
            self.separate_step(batch, v_targets.as_deref(), &q_targets)?
        };
        self.total_updates += 1;
        let synced = self.config.sync_counter == SyncCounter::Updates && self.tick();
        Ok(UpdateStats { synced, ..stats })
    }

    fn loss_grad(&self, pred: f64, target: f64, n: f64) -> (f64, f64) {
        let err = pred - target;
        if self.config.huber && err.abs() > 1.0 {
            ((err.abs() - 0.5) / n, err.signum() / n)
        } else {
            (0.5 * err * err / n, err / n)
        }
    }

    fn separate_step(
        &mut self,
        batch: &[&Transition],
        v_targets: Option<&[f64]>,
        q_targets: &[f64],
    ) -> Result<UpdateStats> {
        let n = batch.len() as f64;
        let num_actions = self.q_net().topology().num_actions;
        let mut loss_q = 0.0;
        let mut dq = vec![0.0; num_actions];
        let theta = self.theta.as_ref().expect("separate agents have theta");
        self.grad_a.clear();
        self.grad_a.resize(theta.num_params(), 0.0);
        for (t, &y) in batch.iter().zip(q_targets) {
            check_action(t, num_actions)?;
            theta.forward_into(&t.state, &mut self.cache)?;
            let (l, g) = self.loss_grad(self.cache.q()[t.action], y, n);
            loss_q += l;
            dq.iter_mut().for_each(|x| *x = 0.0);
            dq[t.action] = g;
            theta.accumulate_gradient(&mut self.cache, 0.0, &dq, &mut self.grad_a)?;
        }
        let mut loss_v = None;
        if let Some(v_targets) = v_targets {
            let phi = self.phi.as_ref().expect("value agents have phi");
            self.grad_b.clear();
            self.grad_b.resize(phi.num_params(), 0.0);
            let mut total = 0.0;
            for (t, &y) in batch.iter().zip(v_targets) {
                phi.forward_into(&t.state, &mut self.cache)?;
                let (l, g) = self.loss_grad(self.cache.v(), y, n);
                total += l;
                phi.accumulate_gradient(&mut self.cache, g, &[], &mut self.grad_b)?;
            }
            loss_v = Some(total);
        }
        self.check_losses(loss_v, loss_q)?;
        let theta = self.theta.as_mut().expect("checked above");
        self.opt_theta
            .as_mut()
            .expect("optimizer per network")
            .step(theta.params_mut(), &mut self.grad_a)?;
        if let Some(phi) = self.phi.as_mut().filter(|_| loss_v.is_some()) {
            self.opt_phi
                .as_mut()
                .expect("optimizer per network")
                .step(phi.params_mut(), &mut self.grad_b)?;
        }
        Ok(UpdateStats {
            loss_v,
            loss_q: Some(loss_q),
            synced: false,
        })
    }

    fn shared_step(
        &mut self,
        batch: &[&Transition],
        v_targets: &[f64],
        q_targets: &[f64],
    ) -> Result<UpdateStats> {
        let n = batch.len() as f64;
        let net = self.shared.as_ref().expect("shared agents have one network");
        let num_actions = net.topology().num_actions;
        self.grad_a.clear();
        self.grad_a.resize(net.num_params(), 0.0);
        let (mut loss_v, mut loss_q) = (0.0, 0.0);
        let mut dq = vec![0.0; num_actions];
        for ((t, &yv), &yq) in batch.iter().zip(v_targets).zip(q_targets) {
            check_action(t, num_actions)?;
            net.forward_into(&t.state, &mut self.cache)?;
            let (lv, gv) = self.loss_grad(self.cache.v(), yv, n);
            let (lq, gq) = self.loss_grad(self.cache.q()[t.action], yq, n);
            loss_v += lv;
            loss_q += lq;
            dq.iter_mut().for_each(|x| *x = 0.0);
            dq[t.action] = gq;
            net.accumulate_gradient(&mut self.cache, gv, &dq, &mut self.grad_a)?;
        }
        self.check_losses(Some(loss_v), loss_q)?;
        let net = self.shared.as_mut().expect("checked above");
        self.opt_shared
            .as_mut()
            .expect("optimizer per network")
            .step(net.params_mut(), &mut self.grad_a)?;
        Ok(UpdateStats {
            loss_v: Some(loss_v),
            loss_q: Some(loss_q),
            synced: false,
        })
    }

    fn check_losses(&self, loss_v: Option<f64>, loss_q: f64) -> Result<()> {
        if loss_q.is_finite() && loss_v.map_or(true, f64::is_finite) {
            return Ok(());
        }
        Err(Error::Numeric(format!(
            "{} update {}: non-finite loss (v {:?}, q {}), max |param| {:e}",
            self.config.algorithm,
            self.total_updates + 1,
            loss_v,
            loss_q,
            self.max_abs_param()
        )))
    }

    fn max_abs_param(&self) -> f64 {
        [&self.theta, &self.phi, &self.shared]
            .into_iter()
            .flatten()
            .flat_map(|n| n.params().iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn to_checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            format: AGENT_FORMAT.to_string(),
            config: self.config.clone(),
            theta: self.theta.as_ref().map(Network::to_file),
            phi: self.phi.as_ref().map(Network::to_file),
            shared: self.shared.as_ref().map(Network::to_file),
            target: self.target.to_file(),
            opt_theta: self.opt_theta.clone(),
            opt_phi: self.opt_phi.clone(),
            opt_shared: self.opt_shared.clone(),
            update_counter: self.update_counter,
            total_updates: self.total_updates,
            env_steps: self.env_steps,
        }
    }

    pub fn from_checkpoint(c: AgentCheckpoint) -> Result<Self> {
        if c.format != AGENT_FORMAT {
            return Err(invalid(format!("unsupported agent format {:?}", c.format)));
        }
        c.config.validate()?;
        let net = |f: Option<NetworkFile>| f.map(Network::from_file).transpose();
        let agent = Self {
            theta: net(c.theta)?,
            phi: net(c.phi)?,
            shared: net(c.shared)?,
            target: Network::from_file(c.target)?,
            opt_theta: c.opt_theta,
            opt_phi: c.opt_phi,
            opt_shared: c.opt_shared,
            config: c.config,
            update_counter: c.update_counter,
            total_updates: c.total_updates,
            env_steps: c.env_steps,
            cache: ForwardCache::default(),
            grad_a: Vec::new(),
            grad_b: Vec::new(),
        };
        let shape_ok = match agent.config.algorithm {
            Algorithm::Dqn | Algorithm::Ddqn => agent.theta.is_some() && agent.opt_theta.is_some(),
            Algorithm::Dqv | Algorithm::DqvMax => {
                agent.theta.is_some()
                    && agent.phi.is_some()
                    && agent.opt_theta.is_some()
                    && agent.opt_phi.is_some()
            }
            Algorithm::HardDqv | Algorithm::DuelingDqv => {
                agent.shared.is_some() && agent.opt_shared.is_some()
            }
        };
        if !shape_ok || agent.target.topology() != agent.target_source().topology() {
            return Err(invalid("checkpoint networks do not match the algorithm"));
        }
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: AgentCheckpoint = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        Self::from_checkpoint(c)
    }
}

fn check_action(t: &Transition, num_actions: usize) -> Result<()> {
    if t.action >= num_actions {
        return Err(invalid(format!("transition action {} out of range", t.action)));
    }
    Ok(())
}

impl ValueEstimator for Agent {
    fn q_values(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.q_net().q_values(observation)
    }

    fn state_value(&self, observation: &[f64]) -> Result<Option<f64>> {
        self.v_net().map(|n| n.value(observation)).transpose()
    }
}

/// Everything needed to resume or evaluate an agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: String,
    pub config: AgentConfig,
    pub theta: Option<NetworkFile>,
    pub phi: Option<NetworkFile>,
    pub shared: Option<NetworkFile>,
    pub target: NetworkFile,
    pub opt_theta: Option<Optimizer>,
    pub opt_phi: Option<Optimizer>,
    pub opt_shared: Option<Optimizer>,
    pub update_counter: usize,
    pub total_updates: u64,
    pub env_steps: u64,
}

/// Average, over every state visited in `num_episodes` greedy rollouts, of
/// the discounted return realised from that state to the end of its episode.
pub fn greedy_policy_value<V, E, R>(
    agent: &V,
    env: &mut E,
    gamma: f64,
    num_episodes: usize,
    rng: &mut R,
) -> Result<f64>
where
    V: ValueEstimator + ?Sized,
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    Ok(rollout(agent, env, gamma, num_episodes, 0.0, rng)?.mean_visited_return())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(head: HeadMode, inputs: usize, actions: usize, params: Vec<f64>) -> Network {
        let t = NetworkTopology::new(inputs, vec![], head, actions, Activation::Relu).without_bias();
        Network::from_params(t, params, 0).unwrap()
    }

    fn tr(state: Vec<f64>, action: usize, reward: f64, next: Vec<f64>, terminal: bool) -> Transition {
        Transition {
            state,
            action,
            reward,
            next_state: next,
            terminal,
        }
    }

    #[test]
    fn dqv_targets_bootstrap_from_value_network() {
        let phi = linear(HeadMode::SeparateV, 1, 1, vec![10.0]);
        let a = tr(vec![1.0], 0, 5.0, vec![1.0], true);
        let b = tr(vec![1.0], 0, 0.0, vec![1.0], false);
        let y = dqv_targets(&[&a, &b], &phi, 0.99).unwrap();
        assert_eq!(y[0], 5.0);
        assert!((y[1] - 9.9).abs() < 1e-12);
        let q = linear(HeadMode::SeparateQ, 1, 2, vec![1.0, 1.0]);
        assert!(dqv_targets(&[&a], &q, 0.99).is_err());
    }

    #[test]
    fn dqv_max_targets_cross_bootstrap() {
        let theta = linear(HeadMode::SeparateQ, 1, 2, vec![2.0, 3.0]);
        let phi = linear(HeadMode::SeparateV, 1, 1, vec![2.0]);
        let t = tr(vec![0.0], 0, 0.5, vec![1.0], false);
        let (v, q) = dqv_max_targets(&[&t], &theta, &phi, 1.0).unwrap();
        assert_eq!(v, vec![3.5]);
        assert_eq!(q, vec![2.5]);
    }

    #[test]
    fn ddqn_decouples_selection_from_evaluation() {
        let online = linear(HeadMode::SeparateQ, 1, 2, vec![0.0, 5.0]);
        let target = linear(HeadMode::SeparateQ, 1, 2, vec![9.0, 0.0]);
        let t = tr(vec![0.0], 0, 0.0, vec![1.0], false);
        assert_eq!(dqn_targets(&[&t], &target, 1.0).unwrap(), vec![9.0]);
        assert_eq!(ddqn_targets(&[&t], &online, &target, 1.0).unwrap(), vec![0.0]);
        // ties go to the lowest index
        let flat = linear(HeadMode::SeparateQ, 1, 2, vec![1.0, 1.0]);
        assert_eq!(ddqn_targets(&[&t], &flat, &target, 1.0).unwrap(), vec![9.0]);
    }

    #[test]
    fn ddqn_equals_dqn_when_networks_coincide() {
        let t = NetworkTopology::new(3, vec![8], HeadMode::SeparateQ, 4, Activation::Tanh);
        let net = Network::init(t, 5).unwrap();
        let batch: Vec<Transition> = (0..10)
            .map(|i| {
                let x = i as f64 * 0.1;
                tr(vec![x, -x, 1.0], i % 4, x, vec![1.0 - x, x, 0.5], i % 3 == 0)
            })
            .collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        assert_eq!(
            dqn_targets(&refs, &net, 0.9).unwrap(),
            ddqn_targets(&refs, &net, &net, 0.9).unwrap()
        );
    }

    fn small(algorithm: Algorithm) -> AgentConfig {
        AgentConfig {
            hidden: vec![16],
            head_width: 8,
            batch_size: 4,
            ..AgentConfig::new(algorithm)
        }
    }

    fn batch() -> Vec<Transition> {
        vec![
            tr(vec![1.0, 0.0], 0, 1.0, vec![0.0, 1.0], false),
            tr(vec![0.0, 1.0], 1, 0.0, vec![1.0, 0.0], true),
        ]
    }

    #[test]
    fn sync_every_update_keeps_target_equal() {
        for alg in Algorithm::ALL {
            let mut agent = Agent::new(
                AgentConfig {
                    target_sync_period: 1,
                    ..small(alg)
                },
                2,
                2,
                3,
            )
            .unwrap();
            let b = batch();
            let refs: Vec<&Transition> = b.iter().collect();
            for _ in 0..3 {
                let s = agent.update_on_batch(&refs).unwrap();
                assert!(s.synced);
                assert_eq!(agent.target().params(), agent.target_source().params(), "{alg}");
            }
            assert_eq!(agent.total_updates(), 3);
            assert_eq!(agent.update_counter(), 0);
        }
    }

    #[test]
    fn sync_period_counts_updates() {
        let mut agent = Agent::new(
            AgentConfig {
                target_sync_period: 3,
                ..small(Algorithm::Dqv)
            },
            2,
            2,
            1,
        )
        .unwrap();
        let b = batch();
        let refs: Vec<&Transition> = b.iter().collect();
        let before = agent.target().params().to_vec();
        let synced: Vec<bool> = (0..6).map(|_| agent.update_on_batch(&refs).unwrap().synced).collect();
        assert_eq!(synced, vec![false, false, true, false, false, true]);
        assert_ne!(agent.target().params(), &before[..]);
        agent.sync_targets();
        let once = agent.target().params().to_vec();
        agent.sync_targets();
        assert_eq!(agent.target().params(), &once[..]);
    }

    #[test]
    fn sync_period_can_count_env_steps() {
        let mut agent = Agent::new(
            AgentConfig {
                target_sync_period: 2,
                sync_counter: SyncCounter::EnvSteps,
                ..small(Algorithm::Dqn)
            },
            2,
            2,
            1,
        )
        .unwrap();
        let b = batch();
        let refs: Vec<&Transition> = b.iter().collect();
        assert!(!agent.update_on_batch(&refs).unwrap().synced);
        assert!(!agent.observe_env_step());
        assert!(agent.observe_env_step());
        assert_eq!(agent.target().params(), agent.target_source().params());
        assert_eq!(agent.env_steps(), 2);
    }

    #[test]
    fn dqv_target_tracks_value_network() {
        let dqv = Agent::new(small(Algorithm::Dqv), 2, 2, 7).unwrap();
        assert_eq!(dqv.target().params(), dqv.phi().unwrap().params());
        let max = Agent::new(small(Algorithm::DqvMax), 2, 2, 7).unwrap();
        assert_eq!(max.target().params(), max.theta().unwrap().params());
        let hard = Agent::new(small(Algorithm::HardDqv), 2, 2, 7).unwrap();
        assert!(hard.theta().is_none() && hard.phi().is_none());
        assert_eq!(hard.target().params(), hard.shared().unwrap().params());
    }

    #[test]
    fn q_gradient_flows_through_taken_action_only() {
        let mut cfg = small(Algorithm::Dqn);
        cfg.hidden = vec![];
        cfg.bias = false;
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.learning_rate = 0.1;
        let mut agent = Agent::new(cfg, 2, 3, 4).unwrap();
        let before = agent.theta().unwrap().params().to_vec();
        let t = tr(vec![1.0, 0.5], 1, 1.0, vec![0.0, 0.0], true);
        agent.update_on_batch(&[&t]).unwrap();
        let after = agent.theta().unwrap().params();
        // rows are actions
        assert_eq!(after[0..2], before[0..2]);
        assert_ne!(after[2..4], before[2..4]);
        assert_eq!(after[4..6], before[4..6]);
    }

    #[test]
    fn zero_discount_learns_immediate_reward() {
        for alg in Algorithm::ALL {
            let cfg = AgentConfig {
                gamma: 0.0,
                learning_rate: 0.01,
                ..small(alg)
            };
            let mut agent = Agent::new(cfg, 2, 2, 11).unwrap();
            let b = [
                tr(vec![1.0, 0.0], 0, 1.0, vec![0.0, 1.0], false),
                tr(vec![1.0, 0.0], 1, 1.0, vec![0.0, 1.0], false),
            ];
            let refs: Vec<&Transition> = b.iter().collect();
            for _ in 0..2_000 {
                agent.update_on_batch(&refs).unwrap();
            }
            for q in agent.q_values(&[1.0, 0.0]).unwrap() {
                assert!((q - 1.0).abs() < 1e-2, "{alg}: q {q}");
            }
            if let Some(v) = agent.state_value(&[1.0, 0.0]).unwrap() {
                assert!((v - 1.0).abs() < 1e-2, "{alg}: v {v}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_resumes_identically() {
        let dir = tempfile::tempdir().unwrap();
        for alg in Algorithm::ALL {
            let mut agent = Agent::new(small(alg), 2, 2, 2).unwrap();
            let b = batch();
            let refs: Vec<&Transition> = b.iter().collect();
            for _ in 0..5 {
                agent.update_on_batch(&refs).unwrap();
            }
            let path = dir.path().join(format!("{alg}.json"));
            agent.save(&path).unwrap();
            let mut loaded = Agent::load(&path).unwrap();
            assert_eq!(loaded.to_checkpoint(), agent.to_checkpoint());
            let a = agent.update_on_batch(&refs).unwrap();
            let b = loaded.update_on_batch(&refs).unwrap();
            assert_eq!(a, b);
            assert_eq!(loaded.q_values(&[0.3, 0.6]).unwrap(), agent.q_values(&[0.3, 0.6]).unwrap());
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut agent = Agent::new(small(Algorithm::Dqv), 2, 2, 2).unwrap();
        assert!(agent.update_on_batch(&[]).is_err());
        let t = tr(vec![1.0, 0.0], 5, 0.0, vec![0.0, 1.0], true);
        assert!(agent.update_on_batch(&[&t]).is_err());
        let bad = AgentConfig {
            v_head_depth: Some(1),
            ..small(Algorithm::Dqv)
        };
        assert!(Agent::new(bad, 2, 2, 0).is_err());
        assert_eq!("dueling-dqv".parse::<Algorithm>().unwrap(), Algorithm::DuelingDqv);
        assert!("dqn2".parse::<Algorithm>().is_err());
    }
}
