//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::VecDeque;

use dqv::replay::{ReplayBuffer, Transition};
use dqv::Error;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Property runner with a fixed seed so failures reproduce.
pub fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn marker(id: usize) -> Transition {
    Transition {
        state: vec![id as f64],
        action: 0,
        reward: id as f64,
        next_state: vec![id as f64 + 1.0],
        terminal: false,
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Push,
    Sample(usize),
}

#[derive(Clone, Debug)]
pub struct QueueCase {
    pub capacity: usize,
    pub warmup: usize,
    pub ops: Vec<Op>,
    pub seed: u64,
}

pub fn queue_case() -> impl Strategy<Value = QueueCase> {
    (1usize..40, 0usize..60, any::<u64>()).prop_flat_map(|(capacity, warmup, seed)| {
        let op = prop_oneof![3 => Just(Op::Push), 1 => (0usize..50).prop_map(Op::Sample)];
        prop::collection::vec(op, 0..200).prop_map(move |ops| QueueCase {
            capacity,
            warmup,
            ops,
            seed,
        })
    })
}

/// Replays `case` against a plain `VecDeque` model: FIFO contents after each
/// push, warmup gating and batch-size checks on each sample.
pub fn check_queue(case: &QueueCase) -> Result<(), TestCaseError> {
    let mut buffer = ReplayBuffer::new(case.capacity, case.warmup).unwrap();
    let mut model: VecDeque<usize> = VecDeque::new();
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let mut inserted = 0usize;
    for op in &case.ops {
        match *op {
            Op::Push => {
                buffer.push(marker(inserted));
                if model.len() == case.capacity {
                    model.pop_front();
                }
                model.push_back(inserted);
                inserted += 1;
                prop_assert_eq!(buffer.len(), inserted.min(case.capacity));
                prop_assert_eq!(buffer.evictions(), inserted.saturating_sub(case.capacity));
                let ids: Vec<usize> = buffer.iter().map(|t| t.reward as usize).collect();
                prop_assert_eq!(&ids, &model.iter().copied().collect::<Vec<_>>());
            }
            Op::Sample(batch) => {
                let r = buffer.sample_minibatch(batch, &mut rng);
                if inserted < case.warmup {
                    let not_ready = matches!(r, Err(Error::NotReady { .. }));
                    prop_assert!(not_ready);
                    prop_assert!(!buffer.is_ready());
                } else if batch == 0 || batch > model.len() {
                    let invalid = matches!(r, Err(Error::InvalidArgument(_)));
                    prop_assert!(invalid);
                } else {
                    let drawn = r.unwrap();
                    prop_assert_eq!(drawn.len(), batch);
                    for t in drawn {
                        prop_assert!(model.contains(&(t.reward as usize)));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Significance level of the per-trial uniformity test; small enough that
/// a thousand trials of a correct sampler pass.
pub const UNIFORMITY_ALPHA: f64 = 1e-6;

pub fn uniformity_case() -> impl Strategy<Value = (usize, usize, u64)> {
    // (stored items, extra evicted pushes, rng seed)
    (2usize..24, 0usize..30, any::<u64>())
}

/// Chi-squared goodness of fit of sampled slots against uniform.
pub fn check_uniformity(&(n, extra, seed): &(usize, usize, u64)) -> Result<(), TestCaseError> {
    let mut buffer = ReplayBuffer::new(n, 0).unwrap();
    for i in 0..n + extra {
        buffer.push(marker(i));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; n];
    let rounds = 100;
    for _ in 0..rounds {
        for t in buffer.sample_minibatch(n, &mut rng).unwrap() {
            counts[t.reward as usize - extra] += 1;
        }
    }
    let expected = rounds as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let critical = ChiSquared::new((n - 1) as f64)
        .unwrap()
        .inverse_cdf(1.0 - UNIFORMITY_ALPHA);
    prop_assert!(chi2 < critical, "chi2 {} >= {} for counts {:?}", chi2, critical, counts);
    Ok(())
}

use dqv::approximator::{Activation, HeadMode, Network, NetworkTopology, OutputGradient};

/// A random network with an input and an upstream output gradient.
#[derive(Clone, Debug)]
pub struct NetCase {
    pub topology: NetworkTopology,
    pub seed: u64,
    pub observation: Vec<f64>,
    pub grad: OutputGradient,
}

/// Every head mode, with dueling at each valid depth.
pub fn head_modes(trunk_len: usize) -> Vec<HeadMode> {
    let mut modes = vec![HeadMode::SeparateV, HeadMode::SeparateQ, HeadMode::HardShared];
    for depth in 1..=trunk_len {
        modes.push(HeadMode::Dueling {
            v_head_depth: depth,
            v_head_width: 5,
            q_head_width: 6,
        });
    }
    modes
}

pub fn net_case() -> impl Strategy<Value = NetCase> {
    (
        1usize..6,
        prop::collection::vec(2usize..10, 1..4),
        1usize..5,
        any::<bool>(),
        any::<bool>(),
        any::<u64>(),
        any::<prop::sample::Index>(),
    )
        .prop_flat_map(|(input, trunk, actions, tanh, bias, seed, mode)| {
            let modes = head_modes(trunk.len());
            let head = modes[mode.index(modes.len())].clone();
            let mut topology = NetworkTopology::new(
                input,
                trunk,
                head,
                actions,
                if tanh { Activation::Tanh } else { Activation::Relu },
            );
            topology.bias = bias;
            (
                Just(topology),
                Just(seed),
                prop::collection::vec(-1.0f64..1.0, input),
                -1.0f64..1.0,
                prop::collection::vec(-1.0f64..1.0, actions),
            )
                .prop_map(|(topology, seed, observation, v, q)| NetCase {
                    grad: OutputGradient {
                        v: if topology.head.has_v() { v } else { 0.0 },
                        q: if topology.head.has_q() { q } else { vec![] },
                    },
                    topology,
                    seed,
                    observation,
                })
        })
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Network with every parameter, biases included, drawn from U(-1, 1), so
/// that no ReLU sits exactly on its kink.
pub fn random_network(case: &NetCase) -> Network {
    use rand::Rng;
    let mut net = Network::init(case.topology.clone(), case.seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    net.params_mut().iter_mut().for_each(|p| *p = rng.gen_range(-1.0..1.0));
    net
}

/// Backprop against central differences for one case.
pub fn check_gradient(case: &NetCase) -> Result<f64, TestCaseError> {
    let net = random_network(case);
    let err = dqv::approximator::gradient_check(&net, &case.observation, &case.grad, FD_STEP, FD_FLOOR)
        .unwrap();
    prop_assert!(err < FD_TOLERANCE, "relative error {} for {:?}", err, case.topology);
    Ok(err)
}
