//! Environments: the explicit tabular MDP, the `Environment` abstraction
//! used by learners, and the built-in desk-scale suite.

mod cartpole;
mod env;
mod suite;

pub use cartpole::{CartPole, CartPoleParams};
pub use env::{EnvStep, Environment, MdpEnv, DEFAULT_MAX_STEPS};
pub use suite::{
    bias_mdp_layout, make_bias_mdp, make_cartpole_like, make_chain, make_gridworld,
    mdp_as_environment, BiasMdpLayout, GridAction,
};

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const PROB_TOLERANCE: f64 = 1e-12;

/// One possible successor of a state-action pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub next_state: usize,
    pub probability: f64,
    pub reward: f64,
}

/// Explicit finite MDP: `p(s'|s,a)`, `R(s,a,s')`, terminal set and initial
/// distribution. Immutable once built; all constructors validate.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpSpec {
    num_states: usize,
    num_actions: usize,
    /// Indexed by `s * num_actions + a`.
    outcomes: Vec<Vec<Outcome>>,
    terminal: Vec<bool>,
    initial: Vec<f64>,
}

impl MdpSpec {
    /// Builds and validates an MDP. `outcomes[s][a]` lists the successors of
    /// `(s, a)`; rows of terminal states may be empty.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        outcomes: Vec<Vec<Vec<Outcome>>>,
        terminal_states: &[usize],
        initial: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(invalid("MDP needs at least one state and one action"));
        }
        if outcomes.len() != num_states {
            return Err(invalid(format!(
                "expected outcome rows for {num_states} states, got {}",
                outcomes.len()
            )));
        }
        let mut terminal = vec![false; num_states];
        for &t in terminal_states {
            if t >= num_states {
                return Err(invalid(format!("terminal state {t} out of range")));
            }
            terminal[t] = true;
        }
        let mut flat = Vec::with_capacity(num_states * num_actions);
        for (s, row) in outcomes.into_iter().enumerate() {
            if row.len() != num_actions {
                return Err(invalid(format!(
                    "state {s} lists {} actions, expected {num_actions}",
                    row.len()
                )));
            }
            flat.extend(row);
        }
        let spec = MdpSpec {
            num_states,
            num_actions,
            outcomes: flat,
            terminal,
            initial,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.initial.len() != self.num_states {
            return Err(invalid("initial distribution length must equal num_states"));
        }
        check_distribution(&self.initial, "initial distribution")?;
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let row = self.outcomes(s, a);
                let mut seen = Vec::with_capacity(row.len());
                for o in row {
                    if o.next_state >= self.num_states {
                        return Err(invalid(format!(
                            "transition ({s},{a}) -> {} out of range",
                            o.next_state
                        )));
                    }
                    if !(0.0..=1.0).contains(&o.probability) {
                        return Err(invalid(format!(
                            "transition ({s},{a}) -> {} has probability {}",
                            o.next_state, o.probability
                        )));
                    }
                    if !o.reward.is_finite() {
                        return Err(invalid(format!("reward on ({s},{a}) is not finite")));
                    }
                    if seen.contains(&o.next_state) {
                        return Err(invalid(format!(
                            "duplicate successor {} for ({s},{a})",
                            o.next_state
                        )));
                    }
                    seen.push(o.next_state);
                }
                if self.terminal[s] && row.is_empty() {
                    continue;
                }
                let total: f64 = row.iter().map(|o| o.probability).sum();
                if (total - 1.0).abs() > PROB_TOLERANCE {
                    return Err(invalid(format!(
                        "probabilities of ({s},{a}) sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn outcomes(&self, state: usize, action: usize) -> &[Outcome] {
        &self.outcomes[state * self.num_actions + action]
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn terminal_states(&self) -> Vec<usize> {
        (0..self.num_states).filter(|&s| self.terminal[s]).collect()
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    /// The most likely initial state (the unique one for every built-in env).
    pub fn start_state(&self) -> usize {
        let mut best = 0;
        for (s, &p) in self.initial.iter().enumerate() {
            if p > self.initial[best] {
                best = s;
            }
        }
        best
    }

    /// Expected immediate reward of `(s, a)`.
    pub fn expected_reward(&self, state: usize, action: usize) -> f64 {
        self.outcomes(state, action)
            .iter()
            .map(|o| o.probability * o.reward)
            .sum()
    }

    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(self.initial.iter().copied(), rng)
    }

    /// Samples a successor of `(s, a)`; returns `(next_state, reward)`.
    pub fn sample_outcome<R: Rng + ?Sized>(
        &self,
        state: usize,
        action: usize,
        rng: &mut R,
    ) -> (usize, f64) {
        let row = self.outcomes(state, action);
        let i = sample_index(row.iter().map(|o| o.probability), rng);
        (row[i].next_state, row[i].reward)
    }

    pub fn to_document(&self) -> MdpDocument {
        let mut transitions = Vec::new();
        let mut rewards = Vec::new();
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                for o in self.outcomes(s, a) {
                    transitions.push((s, a, o.next_state, o.probability));
                    rewards.push((s, a, o.next_state, o.reward));
                }
            }
        }
        MdpDocument {
            num_states: self.num_states,
            num_actions: self.num_actions,
            transitions,
            rewards,
            terminals: self.terminal_states(),
            initial: self.initial.clone(),
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self> {
        let (n, m) = (doc.num_states, doc.num_actions);
        let mut outcomes = vec![vec![Vec::<Outcome>::new(); m]; n];
        for &(s, a, next, p) in &doc.transitions {
            if s >= n || a >= m {
                return Err(invalid(format!("transition ({s},{a},{next}) out of range")));
            }
            if outcomes[s][a].iter().any(|o| o.next_state == next) {
                return Err(invalid(format!("duplicate transition ({s},{a},{next})")));
            }
            outcomes[s][a].push(Outcome {
                next_state: next,
                probability: p,
                reward: 0.0,
            });
        }
        for &(s, a, next, r) in &doc.rewards {
            let slot = outcomes
                .get_mut(s)
                .and_then(|row| row.get_mut(a))
                .and_then(|row| row.iter_mut().find(|o| o.next_state == next))
                .ok_or_else(|| invalid(format!("reward for absent transition ({s},{a},{next})")))?;
            slot.reward = r;
        }
        MdpSpec::new(n, m, outcomes, &doc.terminals, doc.initial.clone())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("MDP document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument =
            serde_json::from_str(text).map_err(|e| invalid(format!("bad MDP JSON: {e}")))?;
        Self::from_document(&doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: MdpDocument =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        Self::from_document(&doc)
    }
}

/// On-disk JSON layout of an [`MdpSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub num_states: usize,
    pub num_actions: usize,
    /// `[s, a, s', p]` rows.
    pub transitions: Vec<(usize, usize, usize, f64)>,
    /// `[s, a, s', r]` rows. Transitions without a reward row pay 0.
    pub rewards: Vec<(usize, usize, usize, f64)>,
    pub terminals: Vec<usize>,
    pub initial: Vec<f64>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(invalid(format!("{what} has entries outside [0, 1]")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOLERANCE {
        return Err(invalid(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

fn sample_index<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}
