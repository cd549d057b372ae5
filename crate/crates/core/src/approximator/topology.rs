use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Which value functions a network produces and how its heads attach.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum HeadMode {
    /// State-value network: one linear output on top of the trunk.
    SeparateV,
    /// Action-value network: `num_actions` linear outputs on top of the trunk.
    SeparateQ,
    /// One output layer of `num_actions + 1` units; the last unit is `V`.
    HardShared,
    /// Dedicated hidden layer per head. The `V` head reads the trunk after
    /// layer `v_head_depth` (1-based); the `Q` head reads the last trunk
    /// layer. Heads are not aggregated.
    Dueling {
        v_head_depth: usize,
        v_head_width: usize,
        q_head_width: usize,
    },
}

impl HeadMode {
    pub fn has_v(&self) -> bool {
        !matches!(self, HeadMode::SeparateQ)
    }

    pub fn has_q(&self) -> bool {
        !matches!(self, HeadMode::SeparateV)
    }
}

fn default_bias() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub input_dim: usize,
    /// Hidden trunk widths; empty means a linear model.
    pub trunk: Vec<usize>,
    pub head: HeadMode,
    pub num_actions: usize,
    pub activation: Activation,
    /// Whether layers carry bias terms.
    #[serde(default = "default_bias")]
    pub bias: bool,
}

impl NetworkTopology {
    pub fn new(
        input_dim: usize,
        trunk: Vec<usize>,
        head: HeadMode,
        num_actions: usize,
        activation: Activation,
    ) -> Self {
        Self {
            input_dim,
            trunk,
            head,
            num_actions,
            activation,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(invalid("input_dim must be positive"));
        }
        if self.num_actions == 0 {
            return Err(invalid("num_actions must be positive"));
        }
        if let Some(i) = self.trunk.iter().position(|&w| w == 0) {
            return Err(invalid(format!("trunk layer {} has zero width", i + 1)));
        }
        if let HeadMode::Dueling {
            v_head_depth,
            v_head_width,
            q_head_width,
        } = self.head
        {
            if v_head_depth == 0 || v_head_depth > self.trunk.len() {
                return Err(invalid(format!(
                    "v_head_depth {v_head_depth} must lie in 1..={}",
                    self.trunk.len()
                )));
            }
            if v_head_width == 0 || q_head_width == 0 {
                return Err(invalid("dueling head widths must be positive"));
            }
        }
        Ok(())
    }

    /// Width of the trunk activation at `depth` (0 is the input).
    pub fn width_at(&self, depth: usize) -> usize {
        if depth == 0 {
            self.input_dim
        } else {
            self.trunk[depth - 1]
        }
    }

    pub fn parameter_count(&self) -> usize {
        Layout::new(self).len
    }
}

/// One fully-connected layer's slice of the flat parameter vector. Weights
/// are row-major `[outputs][inputs]`, followed by `outputs` biases.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: usize,
    pub bias: Option<usize>,
}

impl Dense {
    fn len(&self) -> usize {
        self.inputs * self.outputs + if self.bias.is_some() { self.outputs } else { 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum HeadLayout {
    Single(Dense),
    Dueling {
        v_depth: usize,
        v_hidden: Dense,
        v_out: Dense,
        q_hidden: Dense,
        q_out: Dense,
    },
}

/// Parameter layout: trunk layers in order, then head layers
/// (dueling order: V hidden, V out, Q hidden, Q out).
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub trunk: Vec<Dense>,
    pub head: HeadLayout,
    pub len: usize,
}

impl Layout {
    pub fn new(t: &NetworkTopology) -> Self {
        let mut offset = 0;
        let mut dense = |inputs: usize, outputs: usize| {
            let d = Dense {
                inputs,
                outputs,
                weights: offset,
                bias: t.bias.then_some(offset + inputs * outputs),
            };
            offset += d.len();
            d
        };
        let mut trunk = Vec::with_capacity(t.trunk.len());
        let mut width = t.input_dim;
        for &w in &t.trunk {
            trunk.push(dense(width, w));
            width = w;
        }
        let head = match t.head {
            HeadMode::SeparateV => HeadLayout::Single(dense(width, 1)),
            HeadMode::SeparateQ => HeadLayout::Single(dense(width, t.num_actions)),
            HeadMode::HardShared => HeadLayout::Single(dense(width, t.num_actions + 1)),
            HeadMode::Dueling {
                v_head_depth,
                v_head_width,
                q_head_width,
            } => {
                let v_in = if v_head_depth == 0 {
                    t.input_dim
                } else {
                    t.trunk[v_head_depth - 1]
                };
                let v_hidden = dense(v_in, v_head_width);
                let v_out = dense(v_head_width, 1);
                let q_hidden = dense(width, q_head_width);
                let q_out = dense(q_head_width, t.num_actions);
                HeadLayout::Dueling {
                    v_depth: v_head_depth,
                    v_hidden,
                    v_out,
                    q_hidden,
                    q_out,
                }
            }
        };
        Layout {
            trunk,
            head,
            len: offset,
        }
    }

    /// Every layer with a flag telling whether it is an output layer.
    pub fn layers(&self) -> Vec<(Dense, bool)> {
        let mut out: Vec<(Dense, bool)> = self.trunk.iter().map(|&d| (d, false)).collect();
        match self.head {
            HeadLayout::Single(d) => out.push((d, true)),
            HeadLayout::Dueling {
                v_hidden,
                v_out,
                q_hidden,
                q_out,
                ..
            } => {
                out.push((v_hidden, false));
                out.push((v_out, true));
                out.push((q_hidden, false));
                out.push((q_out, true));
            }
        }
        out
    }
}
