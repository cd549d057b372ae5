use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::topology::{Activation, Dense, HeadLayout, HeadMode, Layout, NetworkTopology};
use crate::error::{invalid, Error, Result};

pub const NETWORK_FORMAT: &str = "dqv-network/v1";

/// Value estimates produced by one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub v: Option<f64>,
    pub q: Option<Vec<f64>>,
}

/// Gradient of some scalar loss with respect to the network outputs.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct OutputGradient {
    pub v: f64,
    /// Empty means zero for every action.
    pub q: Vec<f64>,
}

/// Feed-forward approximator over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Network {
    topology: NetworkTopology,
    params: Vec<f64>,
    seed: u64,
    layout: Layout,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.topology == other.topology && self.params == other.params && self.seed == other.seed
    }
}

/// Activations of one forward pass, reused across calls to avoid allocation.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[k]` the output of trunk layer `k`.
    acts: Vec<Vec<f64>>,
    v_hidden: Vec<f64>,
    q_hidden: Vec<f64>,
    v: f64,
    q: Vec<f64>,
    head_out: Vec<f64>,
    // backward scratch
    d_acts: Vec<Vec<f64>>,
    d_head: Vec<f64>,
    d_hidden: Vec<f64>,
    nz: Vec<usize>,
}

impl ForwardCache {
    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }
}

#[inline]
fn nonzero(x: &[f64], out: &mut Vec<usize>) {
    out.clear();
    out.extend(x.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i));
}

fn dense_forward(
    d: &Dense,
    params: &[f64],
    input: &[f64],
    act: Option<Activation>,
    nz: &mut Vec<usize>,
    out: &mut Vec<f64>,
) {
    nonzero(input, nz);
    out.clear();
    for i in 0..d.outputs {
        let row = &params[d.weights + i * d.inputs..d.weights + (i + 1) * d.inputs];
        let mut z = d.bias.map_or(0.0, |b| params[b + i]);
        for &j in nz.iter() {
            z += row[j] * input[j];
        }
        out.push(match act {
            Some(a) => a.apply(z),
            None => z,
        });
    }
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    d: &Dense,
    params: &[f64],
    input: &[f64],
    delta: &[f64],
    grad: &mut [f64],
    delta_in: Option<&mut [f64]>,
    nz: &mut Vec<usize>,
) {
    nonzero(input, nz);
    let mut delta_in = delta_in;
    for (i, &di) in delta.iter().enumerate() {
        if di == 0.0 {
            continue;
        }
        if let Some(b) = d.bias {
            grad[b + i] += di;
        }
        let base = d.weights + i * d.inputs;
        for &j in nz.iter() {
            grad[base + j] += di * input[j];
        }
        if let Some(back) = delta_in.as_deref_mut() {
            let row = &params[base..base + d.inputs];
            for (b, w) in back.iter_mut().zip(row) {
                *b += w * di;
            }
        }
    }
}

impl Network {
    /// Fan-in scaled uniform initialisation (He bound `sqrt(6 / fan_in)` for
    /// relu, Glorot bound `sqrt(6 / (fan_in + fan_out))` for tanh); zero biases.
    pub fn init(topology: NetworkTopology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let layout = Layout::new(&topology);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (d, _) in layout.layers() {
            let bound = match topology.activation {
                Activation::Relu => (6.0 / d.inputs as f64).sqrt(),
                Activation::Tanh => (6.0 / (d.inputs + d.outputs) as f64).sqrt(),
            };
            for w in &mut params[d.weights..d.weights + d.inputs * d.outputs] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(Self {
            topology,
            params,
            seed,
            layout,
        })
    }

    pub fn from_params(topology: NetworkTopology, params: Vec<f64>, seed: u64) -> Result<Self> {
        topology.validate()?;
        let layout = Layout::new(&topology);
        if params.len() != layout.len {
            return Err(invalid(format!(
                "topology needs {} parameters, got {}",
                layout.len,
                params.len()
            )));
        }
        Ok(Self {
            topology,
            params,
            seed,
            layout,
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Copies another network's parameters. Topologies must match.
    pub fn copy_params_from(&mut self, other: &Network) {
        assert_eq!(self.topology, other.topology, "parameter copy across topologies");
        self.params.copy_from_slice(&other.params);
    }

    pub fn forward(&self, observation: &[f64]) -> Result<ForwardOutput> {
        let mut cache = ForwardCache::default();
        self.forward_into(observation, &mut cache)?;
        let head = &self.topology.head;
        Ok(ForwardOutput {
            v: head.has_v().then_some(cache.v),
            q: head.has_q().then(|| cache.q.clone()),
        })
    }

    pub fn q_values(&self, observation: &[f64]) -> Result<Vec<f64>> {
        self.forward(observation)?
            .q
            .ok_or_else(|| Error::InvalidConfiguration("network has no Q head".into()))
    }

    pub fn value(&self, observation: &[f64]) -> Result<f64> {
        self.forward(observation)?
            .v
            .ok_or_else(|| Error::InvalidConfiguration("network has no V head".into()))
    }

    pub fn forward_into(&self, observation: &[f64], cache: &mut ForwardCache) -> Result<()> {
        let t = &self.topology;
        if observation.len() != t.input_dim {
            return Err(invalid(format!(
                "observation has {} entries, network expects {}",
                observation.len(),
                t.input_dim
            )));
        }
        let depth = self.layout.trunk.len();
        cache.acts.resize_with(depth + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(observation);
        for (k, d) in self.layout.trunk.iter().enumerate() {
            let (done, rest) = cache.acts.split_at_mut(k + 1);
            dense_forward(
                d,
                &self.params,
                &done[k],
                Some(t.activation),
                &mut cache.nz,
                &mut rest[0],
            );
        }
        let last = &cache.acts[depth];
        cache.q.clear();
        match &self.layout.head {
            HeadLayout::Single(d) => {
                dense_forward(d, &self.params, last, None, &mut cache.nz, &mut cache.head_out);
                match t.head {
                    HeadMode::SeparateV => cache.v = cache.head_out[0],
                    HeadMode::SeparateQ => cache.q.extend_from_slice(&cache.head_out),
                    HeadMode::HardShared => {
                        cache.q.extend_from_slice(&cache.head_out[..t.num_actions]);
                        cache.v = cache.head_out[t.num_actions];
                    }
                    HeadMode::Dueling { .. } => unreachable!("dueling uses its own layout"),
                }
            }
            HeadLayout::Dueling {
                v_depth,
                v_hidden,
                v_out,
                q_hidden,
                q_out,
            } => {
                dense_forward(
                    v_hidden,
                    &self.params,
                    &cache.acts[*v_depth],
                    Some(t.activation),
                    &mut cache.nz,
                    &mut cache.v_hidden,
                );
                dense_forward(
                    v_out,
                    &self.params,
                    &cache.v_hidden,
                    None,
                    &mut cache.nz,
                    &mut cache.head_out,
                );
                cache.v = cache.head_out[0];
                dense_forward(
                    q_hidden,
                    &self.params,
                    last,
                    Some(t.activation),
                    &mut cache.nz,
                    &mut cache.q_hidden,
                );
                dense_forward(
                    q_out,
                    &self.params,
                    &cache.q_hidden,
                    None,
                    &mut cache.nz,
                    &mut cache.q,
                );
            }
        }
        Ok(())
    }

    /// Gradient of `g.v * V + sum_a g.q[a] * Q(a)` with respect to every
    /// parameter, at `observation`.
    pub fn backward(&self, observation: &[f64], g: &OutputGradient) -> Result<Vec<f64>> {
        let mut cache = ForwardCache::default();
        self.forward_into(observation, &mut cache)?;
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_gradient(&mut cache, g.v, &g.q, &mut grad)?;
        Ok(grad)
    }

    /// Adds the gradient for the pass stored in `cache` into `grad`.
    pub fn accumulate_gradient(
        &self,
        cache: &mut ForwardCache,
        dv: f64,
        dq: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let t = &self.topology;
        if grad.len() != self.params.len() {
            return Err(invalid("gradient buffer length differs from parameter count"));
        }
        if !dq.is_empty() && (dq.len() != t.num_actions || !t.head.has_q()) {
            return Err(invalid("Q gradient does not match the network's Q head"));
        }
        if dv != 0.0 && !t.head.has_v() {
            return Err(invalid("V gradient given to a network without a V head"));
        }
        let depth = self.layout.trunk.len();
        cache.d_acts.resize_with(depth + 1, Vec::new);
        for k in 1..=depth {
            let w = cache.acts[k].len();
            cache.d_acts[k].clear();
            cache.d_acts[k].resize(w, 0.0);
        }
        let params = &self.params;
        let ForwardCache {
            acts,
            v_hidden,
            q_hidden,
            d_acts,
            d_head,
            d_hidden,
            nz,
            ..
        } = cache;
        match &self.layout.head {
            HeadLayout::Single(d) => {
                d_head.clear();
                match t.head {
                    HeadMode::SeparateV => d_head.push(dv),
                    HeadMode::SeparateQ => {
                        if dq.is_empty() {
                            d_head.resize(t.num_actions, 0.0);
                        } else {
                            d_head.extend_from_slice(dq);
                        }
                    }
                    HeadMode::HardShared => {
                        if dq.is_empty() {
                            d_head.resize(t.num_actions, 0.0);
                        } else {
                            d_head.extend_from_slice(dq);
                        }
                        d_head.push(dv);
                    }
                    HeadMode::Dueling { .. } => unreachable!(),
                }
                let back = (depth > 0).then(|| d_acts[depth].as_mut_slice());
                dense_backward(d, params, &acts[depth], d_head, grad, back, nz);
            }
            HeadLayout::Dueling {
                v_depth,
                v_hidden: vh,
                v_out,
                q_hidden: qh,
                q_out,
            } => {
                if dv != 0.0 {
                    d_hidden.clear();
                    d_hidden.resize(vh.outputs, 0.0);
                    dense_backward(v_out, params, v_hidden, &[dv], grad, Some(d_hidden), nz);
                    for (d, &y) in d_hidden.iter_mut().zip(v_hidden.iter()) {
                        *d *= t.activation.derivative_from_output(y);
                    }
                    let back = (*v_depth > 0).then(|| d_acts[*v_depth].as_mut_slice());
                    dense_backward(vh, params, &acts[*v_depth], d_hidden, grad, back, nz);
                }
                if dq.iter().any(|&x| x != 0.0) {
                    d_hidden.clear();
                    d_hidden.resize(qh.outputs, 0.0);
                    dense_backward(q_out, params, q_hidden, dq, grad, Some(d_hidden), nz);
                    for (d, &y) in d_hidden.iter_mut().zip(q_hidden.iter()) {
                        *d *= t.activation.derivative_from_output(y);
                    }
                    let back = (depth > 0).then(|| d_acts[depth].as_mut_slice());
                    dense_backward(qh, params, &acts[depth], d_hidden, grad, back, nz);
                }
            }
        }
        for k in (1..=depth).rev() {
            let (lower, upper) = d_acts.split_at_mut(k);
            let delta = &mut upper[0];
            for (d, &y) in delta.iter_mut().zip(acts[k].iter()) {
                *d *= t.activation.derivative_from_output(y);
            }
            let back = (k > 1).then(|| lower[k - 1].as_mut_slice());
            dense_backward(&self.layout.trunk[k - 1], params, &acts[k - 1], delta, grad, back, nz);
        }
        Ok(())
    }

    /// Parameter index ranges of trunk layer `k` (1-based).
    pub fn trunk_layer_range(&self, k: usize) -> std::ops::Range<usize> {
        let d = self.layout.trunk[k - 1];
        let end = d.bias.map_or(d.weights + d.inputs * d.outputs, |b| b + d.outputs);
        d.weights..end
    }

    /// Parameter index ranges of the dedicated V head (dueling only).
    pub fn v_head_range(&self) -> Option<std::ops::Range<usize>> {
        match &self.layout.head {
            HeadLayout::Dueling { v_hidden, v_out, .. } => {
                let end = v_out.bias.map_or(v_out.weights + v_out.inputs, |b| b + 1);
                Some(v_hidden.weights..end)
            }
            HeadLayout::Single(_) => None,
        }
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            format: NETWORK_FORMAT.to_string(),
            topology: self.topology.clone(),
            params: self.params.clone(),
            seed: self.seed,
        }
    }

    pub fn from_file(file: NetworkFile) -> Result<Self> {
        if file.format != NETWORK_FORMAT {
            return Err(invalid(format!("unsupported network format {:?}", file.format)));
        }
        Self::from_params(file.topology, file.params, file.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_file()).map_err(|e| Error::format(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: NetworkFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        Self::from_file(file)
    }
}

/// Serialized network: topology, flat parameters and initialisation seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format: String,
    pub topology: NetworkTopology,
    pub params: Vec<f64>,
    pub seed: u64,
}
