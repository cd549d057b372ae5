mod common;

use common::{check_gradient, net_case, runner};
use dqv::approximator::Network;
use proptest::prelude::*;

#[test]
fn backprop_matches_finite_differences() {
    runner(200)
        .run(&net_case(), |c| check_gradient(&c).map(|_| ()))
        .unwrap();
}

#[test]
fn save_load_round_trip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    runner(100)
        .run(&net_case(), |c| {
            let net = Network::init(c.topology.clone(), c.seed).unwrap();
            net.save(&path).unwrap();
            let back = Network::load(&path).unwrap();
            prop_assert_eq!(&back, &net);
            prop_assert_eq!(back.forward(&c.observation).unwrap(), net.forward(&c.observation).unwrap());
            Ok(())
        })
        .unwrap();
}

#[test]
fn init_is_a_pure_function_of_topology_and_seed() {
    runner(100)
        .run(&net_case(), |c| {
            let a = Network::init(c.topology.clone(), c.seed).unwrap();
            let b = Network::init(c.topology.clone(), c.seed).unwrap();
            prop_assert_eq!(a.params(), b.params());
            prop_assert_eq!(a.num_params(), c.topology.parameter_count());
            Ok(())
        })
        .unwrap();
}

#[test]
fn zero_output_gradient_gives_zero_parameter_gradient() {
    runner(100)
        .run(&net_case(), |mut c| {
            c.grad.v = 0.0;
            c.grad.q.iter_mut().for_each(|x| *x = 0.0);
            let net = Network::init(c.topology.clone(), c.seed).unwrap();
            let g = net.backward(&c.observation, &c.grad).unwrap();
            prop_assert!(g.iter().all(|&x| x == 0.0));
            Ok(())
        })
        .unwrap();
}
