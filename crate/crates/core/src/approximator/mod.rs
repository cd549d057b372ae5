//! Fully-connected value approximators with hand-written backpropagation.

mod network;
mod optim;
mod topology;

pub use network::{ForwardCache, ForwardOutput, Network, NetworkFile, OutputGradient, NETWORK_FORMAT};
pub use optim::{Optimizer, OptimizerKind};
pub use topology::{Activation, HeadMode, NetworkTopology};

use crate::error::Result;

pub fn init_network(topology: NetworkTopology, seed: u64) -> Result<Network> {
    Network::init(topology, seed)
}

/// Largest relative error between the analytic gradient of
/// `g.v * V + g.q . Q` and central finite differences with step `h`.
/// Relative error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    net: &Network,
    observation: &[f64],
    g: &OutputGradient,
    h: f64,
    floor: f64,
) -> Result<f64> {
    let analytic = net.backward(observation, g)?;
    let objective = |n: &Network| -> Result<f64> {
        let out = n.forward(observation)?;
        let mut s = out.v.unwrap_or(0.0) * g.v;
        if let Some(q) = out.q {
            s += q.iter().zip(&g.q).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(s)
    };
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for i in 0..net.num_params() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let up = objective(&probe)?;
        probe.params_mut()[i] = orig - h;
        let down = objective(&probe)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    Ok(worst)
}
