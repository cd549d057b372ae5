use std::sync::Arc;

use super::{CartPole, MdpEnv, MdpSpec, Outcome};
use crate::error::{invalid, Result};

/// Gridworld moves, in action-index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridAction {
    Up = 0,
    Right = 1,
    Down = 2,
    Left = 3,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [
        GridAction::Up,
        GridAction::Right,
        GridAction::Down,
        GridAction::Left,
    ];

    fn delta(self) -> (i64, i64) {
        match self {
            GridAction::Up => (0, -1),
            GridAction::Right => (1, 0),
            GridAction::Down => (0, 1),
            GridAction::Left => (-1, 0),
        }
    }
}

/// Gridworld with the start in the top-left cell (state 0) and a terminal
/// goal in the bottom-right cell (state `width * height - 1`). State ids are
/// row-major, `y * width + x`.
///
/// Moves into a wall leave the agent in place. With probability `slip_prob`
/// the agent instead moves in one of the three other directions, chosen
/// uniformly. Entering the goal pays `goal_reward`; every other transition
/// pays `step_reward`.
pub fn make_gridworld(
    width: usize,
    height: usize,
    goal_reward: f64,
    step_reward: f64,
    slip_prob: f64,
) -> Result<MdpSpec> {
    if width == 0 || height == 0 || width * height < 2 {
        return Err(invalid(format!(
            "gridworld {width}x{height} needs at least two cells"
        )));
    }
    if !(0.0..1.0).contains(&slip_prob) {
        return Err(invalid(format!("slip_prob {slip_prob} outside [0, 1)")));
    }
    if !goal_reward.is_finite() || !step_reward.is_finite() {
        return Err(invalid("gridworld rewards must be finite"));
    }
    let n = width * height;
    let goal = n - 1;
    let mv = |s: usize, dir: GridAction| -> usize {
        let (x, y) = ((s % width) as i64, (s / width) as i64);
        let (dx, dy) = dir.delta();
        let (nx, ny) = (x + dx, y + dy);
        if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
            s
        } else {
            ny as usize * width + nx as usize
        }
    };
    let mut outcomes = Vec::with_capacity(n);
    for s in 0..n {
        if s == goal {
            outcomes.push(vec![Vec::new(); 4]);
            continue;
        }
        let row = GridAction::ALL
            .iter()
            .map(|&intended| {
                let mut dist: Vec<Outcome> = Vec::new();
                for &actual in &GridAction::ALL {
                    let p = if actual == intended {
                        1.0 - slip_prob
                    } else {
                        slip_prob / 3.0
                    };
                    if p == 0.0 {
                        continue;
                    }
                    let next = mv(s, actual);
                    let reward = if next == goal { goal_reward } else { step_reward };
                    match dist.iter_mut().find(|o| o.next_state == next) {
                        Some(o) => o.probability += p,
                        None => dist.push(Outcome {
                            next_state: next,
                            probability: p,
                            reward,
                        }),
                    }
                }
                dist
            })
            .collect();
        outcomes.push(row);
    }
    let mut initial = vec![0.0; n];
    initial[0] = 1.0;
    MdpSpec::new(n, 4, outcomes, &[goal], initial)
}

/// `n`-cell deterministic corridor paying 1 on reaching the far end.
pub fn make_chain(n: usize) -> Result<MdpSpec> {
    make_gridworld(n, 1, 1.0, 0.0, 0.0)
}

/// State ids of the overestimation-bias MDP.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiasMdpLayout {
    pub num_arms: usize,
}

impl BiasMdpLayout {
    pub const START: usize = 0;
    pub const BRANCH: usize = 1;
    /// Action taken in the start state to move on to the branch state.
    pub const CONTINUE: usize = 0;
    /// Any other start-state action ends the episode with reward 0.
    pub const STOP: usize = 1;

    pub fn payout(&self, arm: usize) -> usize {
        2 + arm
    }

    pub fn end_high(&self) -> usize {
        2 + self.num_arms
    }

    pub fn end_low(&self) -> usize {
        3 + self.num_arms
    }

    pub fn num_states(&self) -> usize {
        4 + self.num_arms
    }
}

pub fn bias_mdp_layout(num_arms: usize) -> BiasMdpLayout {
    BiasMdpLayout { num_arms }
}

/// MDP built to expose maximization bias.
///
/// The start state offers `continue` (action 0) or `stop` (every other
/// action, reward 0, episode ends). `continue` leads to the branch state,
/// whose `num_arms` actions each select a payout state. Every action in a
/// payout state ends the episode with reward `+noise_std` or `-noise_std`
/// with equal probability, so every arm has mean 0 and standard deviation
/// `noise_std`. All true values are 0.
pub fn make_bias_mdp(num_arms: usize, noise_std: f64) -> Result<MdpSpec> {
    if num_arms < 2 {
        return Err(invalid(format!("bias MDP needs at least 2 arms, got {num_arms}")));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(invalid(format!("noise_std {noise_std} must be finite and >= 0")));
    }
    let layout = bias_mdp_layout(num_arms);
    let n = layout.num_states();
    let m = num_arms;
    let det = |next| {
        vec![Outcome {
            next_state: next,
            probability: 1.0,
            reward: 0.0,
        }]
    };
    let mut outcomes = vec![vec![Vec::new(); m]; n];
    outcomes[BiasMdpLayout::START] = (0..m)
        .map(|a| {
            if a == BiasMdpLayout::CONTINUE {
                det(BiasMdpLayout::BRANCH)
            } else {
                det(layout.end_low())
            }
        })
        .collect();
    outcomes[BiasMdpLayout::BRANCH] = (0..m).map(|a| det(layout.payout(a))).collect();
    for arm in 0..num_arms {
        let payout = vec![
            Outcome {
                next_state: layout.end_high(),
                probability: 0.5,
                reward: noise_std,
            },
            Outcome {
                next_state: layout.end_low(),
                probability: 0.5,
                reward: -noise_std,
            },
        ];
        outcomes[layout.payout(arm)] = vec![payout; m];
    }
    let mut initial = vec![0.0; n];
    initial[BiasMdpLayout::START] = 1.0;
    MdpSpec::new(n, m, outcomes, &[layout.end_high(), layout.end_low()], initial)
}

/// Wraps a tabular MDP as a one-hot [`super::Environment`].
pub fn mdp_as_environment(spec: MdpSpec, seed: u64) -> MdpEnv {
    MdpEnv::new(Arc::new(spec), seed)
}

pub fn make_cartpole_like(seed: u64) -> CartPole {
    CartPole::new(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Environment;

    #[test]
    fn gridworld_rejects_bad_arguments() {
        assert!(make_gridworld(1, 1, 1.0, 0.0, 0.0).is_err());
        assert!(make_gridworld(0, 3, 1.0, 0.0, 0.0).is_err());
        assert!(make_gridworld(3, 3, 1.0, 0.0, 1.0).is_err());
        assert!(make_gridworld(3, 3, 1.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn two_cell_gridworld_moves_right_into_goal() {
        let spec = make_gridworld(2, 1, 1.0, 0.0, 0.0).unwrap();
        assert_eq!(spec.num_states(), 2);
        let o = spec.outcomes(0, GridAction::Right as usize);
        assert_eq!(o.len(), 1);
        assert_eq!(o[0].next_state, 1);
        assert_eq!(o[0].reward, 1.0);
        assert!(spec.is_terminal(1));
        // Walls keep the agent in place.
        assert_eq!(spec.outcomes(0, GridAction::Left as usize)[0].next_state, 0);
    }

    #[test]
    fn slip_spreads_mass_over_other_directions() {
        let spec = make_gridworld(3, 3, 1.0, 0.0, 0.3).unwrap();
        // Centre cell, intend up: 0.7 up, 0.1 to each other neighbour.
        let o = spec.outcomes(4, GridAction::Up as usize);
        let p = |s| o.iter().find(|x| x.next_state == s).unwrap().probability;
        assert!((p(1) - 0.7).abs() < 1e-12);
        assert!((p(5) - 0.1).abs() < 1e-12);
        assert!((p(7) - 0.1).abs() < 1e-12);
        assert!((p(3) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn bias_mdp_structure() {
        assert!(make_bias_mdp(1, 1.0).is_err());
        assert!(make_bias_mdp(4, -1.0).is_err());
        let spec = make_bias_mdp(8, 1.0).unwrap();
        let layout = bias_mdp_layout(8);
        assert_eq!(spec.num_states(), 12);
        assert_eq!(spec.num_actions(), 8);
        for arm in 0..8 {
            let next = spec.outcomes(BiasMdpLayout::BRANCH, arm)[0].next_state;
            assert_eq!(next, layout.payout(arm));
            for a in 0..8 {
                assert_eq!(spec.expected_reward(layout.payout(arm), a), 0.0);
            }
        }
        assert_eq!(
            spec.outcomes(BiasMdpLayout::START, BiasMdpLayout::STOP)[0].next_state,
            layout.end_low()
        );
    }

    #[test]
    fn one_hot_observations() {
        let spec = make_gridworld(2, 1, 1.0, 0.0, 0.0).unwrap();
        let mut env = mdp_as_environment(spec, 3);
        assert_eq!(env.observation_dim(), 2);
        assert_eq!(env.reset(), vec![1.0, 0.0]);
    }

    #[test]
    fn step_after_terminal_is_rejected() {
        let spec = make_gridworld(2, 1, 1.0, 0.0, 0.0).unwrap();
        let mut env = mdp_as_environment(spec, 3);
        env.reset();
        let s = env.step(GridAction::Right as usize).unwrap();
        assert!(s.terminal);
        assert!(env.step(0).is_err());
        env.reset();
        assert!(env.step(0).is_ok());
    }

    #[test]
    fn step_before_reset_is_rejected() {
        let mut env = mdp_as_environment(make_chain(3).unwrap(), 0);
        assert!(env.step(0).is_err());
    }

    #[test]
    fn step_cap_truncates() {
        let spec = make_chain(5).unwrap();
        let mut env = mdp_as_environment(spec, 0).with_max_steps(3);
        env.reset();
        for i in 0..3 {
            let s = env.step(GridAction::Left as usize).unwrap();
            assert!(!s.terminal);
            assert_eq!(s.truncated, i == 2);
        }
        assert!(env.step(0).is_err());
    }
}
