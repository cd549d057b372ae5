use std::path::Path;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::mdp::{
    make_bias_mdp, make_chain, make_gridworld, CartPole, Environment, MdpEnv, MdpSpec,
    DEFAULT_MAX_STEPS,
};

#[derive(Clone, Debug, PartialEq)]
pub enum EnvKind {
    Tabular(Arc<MdpSpec>),
    CartPole,
}

/// A named, buildable environment.
///
/// Name grammar: `kind[:arg][,key=value...]`
///
/// - `gridworld:WxH` with optional `goal=`, `step=`, `slip=`
/// - `chain:N`
/// - `bias:ARMS` with optional `noise=` (default 1.0)
/// - `cartpole`
///
/// Every kind accepts `cap=` for the per-episode step cap (default 500).
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    name: String,
    kind: EnvKind,
    max_steps: usize,
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfiguration(format!("bad value {value:?} for {key}")))
}

impl EnvSpec {
    pub fn tabular(name: impl Into<String>, spec: MdpSpec) -> Self {
        Self {
            name: name.into(),
            kind: EnvKind::Tabular(Arc::new(spec)),
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidConfiguration(m);
        let mut parts = name.split(',');
        let head = parts.next().unwrap_or_default().trim();
        let (kind, arg) = match head.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (head, None),
        };
        let mut opts: Vec<(&str, &str)> = Vec::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value in {name:?}, got {p:?}")))?;
            opts.push((k.trim(), v.trim()));
        }
        let mut take = |key: &str| -> Option<&str> {
            let i = opts.iter().position(|(k, _)| *k == key)?;
            Some(opts.remove(i).1)
        };
        let max_steps = match take("cap") {
            Some(v) => num::<usize>("cap", v)?,
            None => DEFAULT_MAX_STEPS,
        };
        if max_steps == 0 {
            return Err(bad("cap must be positive".into()));
        }
        let need_arg = || arg.ok_or_else(|| bad(format!("{kind} needs an argument, e.g. {kind}:5")));
        let kind_value = match kind {
            "gridworld" => {
                let dims = need_arg()?;
                let (w, h) = dims
                    .split_once('x')
                    .ok_or_else(|| bad(format!("gridworld size must be WxH, got {dims:?}")))?;
                let goal = take("goal").map_or(Ok(1.0), |v| num("goal", v))?;
                let step = take("step").map_or(Ok(0.0), |v| num("step", v))?;
                let slip = take("slip").map_or(Ok(0.0), |v| num("slip", v))?;
                let spec = make_gridworld(num("width", w)?, num("height", h)?, goal, step, slip)
                    .map_err(|e| bad(e.to_string()))?;
                EnvKind::Tabular(Arc::new(spec))
            }
            "chain" => {
                let spec = make_chain(num("chain length", need_arg()?)?).map_err(|e| bad(e.to_string()))?;
                EnvKind::Tabular(Arc::new(spec))
            }
            "bias" => {
                let noise = take("noise").map_or(Ok(1.0), |v| num("noise", v))?;
                let spec = make_bias_mdp(num("arms", need_arg()?)?, noise)
                    .map_err(|e| bad(e.to_string()))?;
                EnvKind::Tabular(Arc::new(spec))
            }
            "cartpole" if arg.is_none() => EnvKind::CartPole,
            _ => return Err(bad(format!("unknown environment {name:?}"))),
        };
        if let Some((k, _)) = opts.first() {
            return Err(bad(format!("unknown option {k:?} for {kind}")));
        }
        Ok(Self {
            name: name.to_string(),
            kind: kind_value,
            max_steps,
        })
    }

    /// Loads a tabular MDP document (JSON).
    pub fn from_file(path: &Path) -> Result<Self> {
        let spec = MdpSpec::load(path)?;
        Ok(Self::tabular(format!("file:{}", path.display()), spec))
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps.max(1);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &EnvKind {
        &self.kind
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// The underlying tabular MDP, when there is one.
    pub fn mdp(&self) -> Option<&MdpSpec> {
        match &self.kind {
            EnvKind::Tabular(s) => Some(s),
            EnvKind::CartPole => None,
        }
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn Environment>> {
        Ok(match &self.kind {
            EnvKind::Tabular(s) => Box::new(MdpEnv::new(s.clone(), seed).with_max_steps(self.max_steps)),
            EnvKind::CartPole => Box::new(CartPole::new(seed).with_max_steps(self.max_steps)),
        })
    }

    /// Builds a tabular environment with its concrete type.
    pub fn build_tabular(&self, seed: u64) -> Result<MdpEnv> {
        match &self.kind {
            EnvKind::Tabular(s) => Ok(MdpEnv::new(s.clone(), seed).with_max_steps(self.max_steps)),
            EnvKind::CartPole => Err(invalid(format!("{} is not tabular", self.name))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_names() {
        let g = EnvSpec::parse("gridworld:7x7,slip=0.2,step=-0.01").unwrap();
        assert_eq!(g.mdp().unwrap().num_states(), 49);
        assert_eq!(g.max_steps(), DEFAULT_MAX_STEPS);
        let c = EnvSpec::parse("chain:5,cap=40").unwrap();
        assert_eq!(c.mdp().unwrap().num_states(), 5);
        assert_eq!(c.max_steps(), 40);
        let b = EnvSpec::parse("bias:8").unwrap();
        assert_eq!(b.mdp().unwrap().num_actions(), 8);
        let p = EnvSpec::parse("cartpole").unwrap();
        assert!(p.mdp().is_none());
        assert_eq!(p.build(0).unwrap().observation_dim(), 4);
    }

    #[test]
    fn rejects_bad_names() {
        for name in [
            "maze:3",
            "gridworld",
            "gridworld:5",
            "gridworld:5x5,color=red",
            "gridworld:5x5,slip=1.5",
            "chain:x",
            "cartpole:2",
            "chain:5,cap=0",
        ] {
            assert!(
                matches!(EnvSpec::parse(name), Err(Error::InvalidConfiguration(_))),
                "{name}"
            );
        }
    }
}
