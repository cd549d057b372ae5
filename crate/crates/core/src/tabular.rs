//! Ground-truth oracles and tabular value-learning rules.
//!
//! `value_iteration` and `exhaustive_policy_oracle` are deliberately
//! independent: the first iterates the Bellman optimality backup, the second
//! enumerates every deterministic stationary policy and solves its
//! evaluation system directly.

use std::ops::{Index, IndexMut};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::MdpSpec;
use crate::replay::select_action;

pub const DEFAULT_MAX_SWEEPS: usize = 100_000;
pub const DEFAULT_POLICY_BUDGET: u128 = 1_000_000;

/// State values, one per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTable(pub Vec<f64>);

impl ValueTable {
    pub fn zeros(num_states: usize) -> Self {
        ValueTable(vec![0.0; num_states])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs_diff(&self, other: &ValueTable) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<usize> for ValueTable {
    type Output = f64;
    fn index(&self, s: usize) -> &f64 {
        &self.0[s]
    }
}

impl IndexMut<usize> for ValueTable {
    fn index_mut(&mut self, s: usize) -> &mut f64 {
        &mut self.0[s]
    }
}

/// Action values, row-major `[state][action]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QTable {
            num_actions,
            values: vec![0.0; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.values.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for QTable {
    type Output = f64;
    fn index(&self, (s, a): (usize, usize)) -> &f64 {
        &self.values[s * self.num_actions + a]
    }
}

impl IndexMut<(usize, usize)> for QTable {
    fn index_mut(&mut self, (s, a): (usize, usize)) -> &mut f64 {
        &mut self.values[s * self.num_actions + a]
    }
}

/// Output of value iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSolution {
    pub values: ValueTable,
    pub q_values: QTable,
    pub gamma: f64,
    pub sweeps: usize,
    /// Max-norm change of every sweep, in order.
    pub residuals: Vec<f64>,
}

impl OracleSolution {
    /// Greedy action per state (ties go to the lowest index).
    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.values.len())
            .map(|s| {
                let row = self.q_values.row(s);
                let mut best = 0;
                for (a, &q) in row.iter().enumerate() {
                    if q > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

/// One application of the Bellman optimality operator to `v`.
pub fn bellman_backup(spec: &MdpSpec, v: &ValueTable, gamma: f64) -> ValueTable {
    let q = q_from_values(spec, v, gamma);
    ValueTable(
        (0..spec.num_states())
            .map(|s| if spec.is_terminal(s) { 0.0 } else { q.max(s) })
            .collect(),
    )
}

/// `Q(s,a) = sum_s' p(s'|s,a) [R(s,a,s') + gamma V(s')]`; terminal rows are 0.
pub fn q_from_values(spec: &MdpSpec, v: &ValueTable, gamma: f64) -> QTable {
    let mut q = QTable::zeros(spec.num_states(), spec.num_actions());
    for s in 0..spec.num_states() {
        if spec.is_terminal(s) {
            continue;
        }
        for a in 0..spec.num_actions() {
            q[(s, a)] = spec
                .outcomes(s, a)
                .iter()
                .map(|o| o.probability * (o.reward + gamma * v[o.next_state]))
                .sum();
        }
    }
    q
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(invalid(format!("discount {gamma} outside [0, 1]")));
    }
    Ok(())
}

pub fn value_iteration(spec: &MdpSpec, gamma: f64, tolerance: f64) -> Result<OracleSolution> {
    value_iteration_capped(spec, gamma, tolerance, DEFAULT_MAX_SWEEPS)
}

/// Synchronous value iteration until one more backup moves no entry by more
/// than `tolerance`. The returned `V` is the backup of the last iterate, and
/// `Q` is computed from that same iterate, so `V(s) = max_a Q(s,a)` holds
/// exactly for every non-terminal state.
pub fn value_iteration_capped(
    spec: &MdpSpec,
    gamma: f64,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<OracleSolution> {
    check_gamma(gamma)?;
    if !(tolerance > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    let mut v = ValueTable::zeros(spec.num_states());
    let mut residuals = Vec::new();
    for sweep in 1..=max_sweeps {
        let q = q_from_values(spec, &v, gamma);
        let next = ValueTable(
            (0..spec.num_states())
                .map(|s| if spec.is_terminal(s) { 0.0 } else { q.max(s) })
                .collect(),
        );
        let residual = next.max_abs_diff(&v);
        residuals.push(residual);
        if !residual.is_finite() {
            return Err(Error::ConvergenceFailure {
                iterations: sweep,
                residual,
            });
        }
        if residual <= tolerance {
            return Ok(OracleSolution {
                values: next,
                q_values: q,
                gamma,
                sweeps: sweep,
                residuals,
            });
        }
        v = next;
    }
    Err(Error::ConvergenceFailure {
        iterations: max_sweeps,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

/// Exact value of a stochastic stationary policy, `policy[s][a] = pi(a|s)`,
/// by solving `(I - gamma P_pi) V = R_pi`.
pub fn evaluate_policy(spec: &MdpSpec, policy: &[Vec<f64>], gamma: f64) -> Result<ValueTable> {
    check_gamma(gamma)?;
    let n = spec.num_states();
    if policy.len() != n {
        return Err(invalid("policy must list a distribution for every state"));
    }
    let mut matrix = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for s in 0..n {
        matrix[s * n + s] = 1.0;
        if spec.is_terminal(s) {
            continue;
        }
        for (a, &pa) in policy[s].iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for o in spec.outcomes(s, a) {
                matrix[s * n + o.next_state] -= gamma * pa * o.probability;
                rhs[s] += pa * o.probability * o.reward;
            }
        }
    }
    solve_dense(&mut matrix, &mut rhs, n)
        .map(ValueTable)
        .ok_or_else(|| Error::Numeric("policy evaluation system is singular".into()))
}

/// Exact value of a deterministic policy.
pub fn evaluate_deterministic(spec: &MdpSpec, actions: &[usize], gamma: f64) -> Result<ValueTable> {
    let m = spec.num_actions();
    let policy: Vec<Vec<f64>> = actions
        .iter()
        .map(|&a| {
            let mut row = vec![0.0; m];
            row[a] = 1.0;
            row
        })
        .collect();
    evaluate_policy(spec, &policy, gamma)
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` system.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i * n + col]
                .abs()
                .partial_cmp(&a[j * n + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[pivot * n + col].abs() < 1e-13 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / diag;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * x[k];
        }
        x[row] = acc / a[row * n + row];
    }
    Some(x)
}

pub fn exhaustive_policy_oracle(spec: &MdpSpec, gamma: f64) -> Result<ValueTable> {
    exhaustive_policy_oracle_with_budget(spec, gamma, DEFAULT_POLICY_BUDGET)
}

/// Elementwise maximum of `V^pi` over every deterministic stationary policy.
///
/// Only non-terminal states carry a decision, so the enumeration covers
/// `num_actions ^ non_terminal_states` policies. With `gamma = 1`, policies
/// whose evaluation system is singular (they never terminate) are skipped.
pub fn exhaustive_policy_oracle_with_budget(
    spec: &MdpSpec,
    gamma: f64,
    budget: u128,
) -> Result<ValueTable> {
    check_gamma(gamma)?;
    let decision_states: Vec<usize> = (0..spec.num_states())
        .filter(|&s| !spec.is_terminal(s))
        .collect();
    let m = spec.num_actions() as u128;
    let policies = decision_states
        .iter()
        .try_fold(1u128, |acc, _| acc.checked_mul(m).filter(|&p| p <= budget.max(1)));
    let policies = match policies {
        Some(p) => p,
        None => {
            let exponent = decision_states.len() as u32;
            return Err(Error::BudgetExceeded {
                policies: m.checked_pow(exponent).unwrap_or(u128::MAX),
                budget,
            });
        }
    };
    let mut best = vec![f64::NEG_INFINITY; spec.num_states()];
    let mut actions = vec![0usize; spec.num_states()];
    let mut evaluated = 0u128;
    for _ in 0..policies {
        match evaluate_deterministic(spec, &actions, gamma) {
            Ok(v) => {
                evaluated += 1;
                for (b, x) in best.iter_mut().zip(&v.0) {
                    *b = b.max(*x);
                }
            }
            Err(Error::Numeric(_)) if gamma == 1.0 => {}
            Err(e) => return Err(e),
        }
        // Odometer over the decision states.
        for &s in &decision_states {
            actions[s] += 1;
            if actions[s] < spec.num_actions() {
                break;
            }
            actions[s] = 0;
        }
    }
    if evaluated == 0 {
        return Err(Error::Numeric("no policy has a well-defined value".into()));
    }
    for s in 0..spec.num_states() {
        if spec.is_terminal(s) {
            best[s] = 0.0;
        }
    }
    Ok(ValueTable(best))
}

/// A transition between tabular state ids.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TabularTransition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

fn check_update(q: &QTable, t: &TabularTransition, alpha: f64, gamma: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("learning rate {alpha} outside (0, 1]")));
    }
    check_gamma(gamma)?;
    if t.state >= q.num_states() || t.next_state >= q.num_states() || t.action >= q.num_actions()
    {
        return Err(invalid(format!("transition {t:?} out of table range")));
    }
    Ok(())
}

fn one_step_targets(
    rule: TabularRule,
    v: &ValueTable,
    q: &QTable,
    t: &TabularTransition,
    gamma: f64,
) -> (f64, f64) {
    if t.terminal {
        return (t.reward, t.reward);
    }
    match rule {
        TabularRule::Qv => {
            let y = t.reward + gamma * v[t.next_state];
            (y, y)
        }
        TabularRule::QvMax => (
            t.reward + gamma * q.max(t.next_state),
            t.reward + gamma * v[t.next_state],
        ),
        TabularRule::QLearning => {
            let y = t.reward + gamma * q.max(t.next_state);
            (y, y)
        }
    }
}

/// QV-learning step: `V` and `Q` both regress toward `r + gamma V(s')`,
/// computed from the pre-update tables.
pub fn tabular_qv_update(
    v: &mut ValueTable,
    q: &mut QTable,
    t: &TabularTransition,
    alpha: f64,
    gamma: f64,
) -> Result<()> {
    check_update(q, t, alpha, gamma)?;
    let (vt, qt) = one_step_targets(TabularRule::Qv, v, q, t, gamma);
    v[t.state] += alpha * (vt - v[t.state]);
    q[(t.state, t.action)] += alpha * (qt - q[(t.state, t.action)]);
    Ok(())
}

/// QV-Max step: `V` regresses toward `r + gamma max_a Q(s',a)`, `Q` toward
/// `r + gamma V(s')`, both from the pre-update tables.
pub fn tabular_qv_max_update(
    v: &mut ValueTable,
    q: &mut QTable,
    t: &TabularTransition,
    alpha: f64,
    gamma: f64,
) -> Result<()> {
    check_update(q, t, alpha, gamma)?;
    let (vt, qt) = one_step_targets(TabularRule::QvMax, v, q, t, gamma);
    v[t.state] += alpha * (vt - v[t.state]);
    q[(t.state, t.action)] += alpha * (qt - q[(t.state, t.action)]);
    Ok(())
}

pub fn tabular_q_learning_update(
    q: &mut QTable,
    t: &TabularTransition,
    alpha: f64,
    gamma: f64,
) -> Result<()> {
    check_update(q, t, alpha, gamma)?;
    let target = if t.terminal {
        t.reward
    } else {
        t.reward + gamma * q.max(t.next_state)
    };
    q[(t.state, t.action)] += alpha * (target - q[(t.state, t.action)]);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TabularRule {
    Qv,
    QvMax,
    QLearning,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearningRate {
    Constant(f64),
    /// `1 / n(s, a)` where `n` counts updates of the pair (and of `V(s)` by state).
    InverseVisits,
}

/// Settings for [`train_tabular`]. Exploration is epsilon-greedy on `Q`.
#[derive(Clone, Copy, Debug)]
pub struct TabularRun {
    pub rule: TabularRule,
    pub gamma: f64,
    pub epsilon: f64,
    pub learning_rate: LearningRate,
    pub episodes: usize,
    /// Optional cap on the total number of transitions.
    pub max_steps: Option<usize>,
    pub max_episode_len: usize,
    pub seed: u64,
}

/// Runs a tabular learner on `spec` and returns the learned `(V, Q)`. For
/// Q-learning, `V(s)` is reported as `max_a Q(s,a)`.
pub fn train_tabular(spec: &MdpSpec, run: &TabularRun) -> Result<(ValueTable, QTable)> {
    let n = spec.num_states();
    let m = spec.num_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut v = ValueTable::zeros(n);
    let mut q = QTable::zeros(n, m);
    let mut pair_visits = vec![0u64; n * m];
    let mut state_visits = vec![0u64; n];
    let mut steps = 0usize;
    'episodes: for _ in 0..run.episodes {
        let mut s = spec.sample_initial(&mut rng);
        for _ in 0..run.max_episode_len {
            if spec.is_terminal(s) {
                break;
            }
            if run.max_steps.is_some_and(|cap| steps >= cap) {
                break 'episodes;
            }
            let a = select_action(q.row(s), run.epsilon, &mut rng)?;
            let (next, r) = spec.sample_outcome(s, a, &mut rng);
            let t = TabularTransition {
                state: s,
                action: a,
                reward: r,
                next_state: next,
                terminal: spec.is_terminal(next),
            };
            pair_visits[s * m + a] += 1;
            state_visits[s] += 1;
            let (q_alpha, v_alpha) = match run.learning_rate {
                LearningRate::Constant(alpha) => (alpha, alpha),
                LearningRate::InverseVisits => (
                    1.0 / pair_visits[s * m + a] as f64,
                    1.0 / state_visits[s] as f64,
                ),
            };
            check_update(&q, &t, q_alpha, run.gamma)?;
            let (vt, qt) = one_step_targets(run.rule, &v, &q, &t, run.gamma);
            if run.rule != TabularRule::QLearning {
                v[s] += v_alpha * (vt - v[s]);
            }
            q[(s, a)] += q_alpha * (qt - q[(s, a)]);
            steps += 1;
            s = next;
        }
    }
    if run.rule == TabularRule::QLearning {
        for s in 0..n {
            v[s] = if spec.is_terminal(s) { 0.0 } else { q.max(s) };
        }
    }
    Ok((v, q))
}
