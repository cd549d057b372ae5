use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvStep, Environment, DEFAULT_MAX_STEPS};
use crate::error::{Error, Result};

/// Physical constants of the cart-pole task.
///
/// Defaults are the classic Barto-Sutton-Anderson values: a 1 kg cart, a
/// 0.1 kg pole of half-length 0.5 m, a 10 N push, explicit Euler
/// integration at 0.02 s, failure beyond 12 degrees or 2.4 m.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleParams {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_pole_length: f64,
    pub force: f64,
    pub tau: f64,
    pub angle_limit: f64,
    pub position_limit: f64,
    pub init_range: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_pole_length: 0.5,
            force: 10.0,
            tau: 0.02,
            angle_limit: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
            position_limit: 2.4,
            init_range: 0.05,
        }
    }
}

/// Continuous-state balancing task. Observation is
/// `(x, x_dot, theta, theta_dot)`; action 0 pushes left, 1 pushes right;
/// every step pays +1.
#[derive(Clone, Debug)]
pub struct CartPole {
    params: CartPoleParams,
    rng: ChaCha8Rng,
    state: [f64; 4],
    steps: usize,
    max_steps: usize,
    active: bool,
}

impl CartPole {
    pub fn new(seed: u64) -> Self {
        Self::with_params(CartPoleParams::default(), seed)
    }

    pub fn with_params(params: CartPoleParams, seed: u64) -> Self {
        Self {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: [0.0; 4],
            steps: 0,
            max_steps: DEFAULT_MAX_STEPS,
            active: false,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps.max(1);
        self
    }
}

impl Environment for CartPole {
    fn observation_dim(&self) -> usize {
        4
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self) -> Vec<f64> {
        let r = self.params.init_range;
        for x in self.state.iter_mut() {
            *x = self.rng.gen_range(-r..=r);
        }
        self.steps = 0;
        self.active = true;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        if !self.active {
            return Err(Error::EpisodeOver);
        }
        if action > 1 {
            return Err(Error::InvalidArgument(format!("cart-pole action {action}")));
        }
        let p = &self.params;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { p.force } else { -p.force };
        let total_mass = p.cart_mass + p.pole_mass;
        let pole_moment = p.pole_mass * p.half_pole_length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_moment * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (p.gravity * sin - cos * temp)
            / (p.half_pole_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_moment * theta_acc * cos / total_mass;
        self.state = [
            x + p.tau * x_dot,
            x_dot + p.tau * x_acc,
            theta + p.tau * theta_dot,
            theta_dot + p.tau * theta_acc,
        ];
        self.steps += 1;
        let terminal =
            self.state[0].abs() > p.position_limit || self.state[2].abs() > p.angle_limit;
        let truncated = !terminal && self.steps >= self.max_steps;
        self.active = !(terminal || truncated);
        Ok(EnvStep {
            observation: self.state.to_vec(),
            reward: 1.0,
            terminal,
            truncated,
        })
    }
}
