#![cfg(feature = "oracles")]

use lanedqn::nn::{NetSpec, PolicyNet, Tensor};
use lanedqn::testkit::{check_input, full_battery, FD_STEP};

#[test]
fn analytic_gradients_match_central_differences() {
    let checks = full_battery(200, 3).unwrap();
    for c in &checks {
        assert_eq!(c.probes, (c.population - c.kinks_skipped).min(200), "{c:?}");
        assert!(c.passes(1e-5), "{c:?}");
    }
}

#[test]
fn probes_straddling_a_relu_kink_are_skipped() {
    // y = w2 * relu(w1 * x + b1) with the hidden unit's pre-activation inside the step
    let mut net = PolicyNet::<f64>::zeros(NetSpec::mlp(1, vec![1], 1)).unwrap();
    let names: Vec<String> = net.spec().param_layout().into_iter().map(|(n, _)| n).collect();
    for (p, n) in names.iter().enumerate() {
        if n.ends_with("weight") {
            net.param_mut(p)[0] = 1.0;
        }
    }
    let dq = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
    let near = Tensor::from_vec(&[1, 1, 1, 1], vec![0.5 * FD_STEP]).unwrap();
    let c = check_input(&net, &near, &dq, 1, 0).unwrap();
    assert_eq!((c.probes, c.kinks_skipped), (0, 1));
    let far = Tensor::from_vec(&[1, 1, 1, 1], vec![0.5]).unwrap();
    let c = check_input(&net, &far, &dq, 1, 0).unwrap();
    assert_eq!((c.probes, c.kinks_skipped), (1, 0));
    assert!(c.passes(1e-12), "{c:?}");
}
