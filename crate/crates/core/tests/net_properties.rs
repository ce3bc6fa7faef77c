mod common;

use common::{fd_jacobian, fd_sensitivity, random_inputs, random_net, rel_err, FD_FLOOR};
use proptest::prelude::*;
use qcnet_core::net::{Mlp, ParamId};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jacobian_matches_central_differences(seed in any::<u64>(), n0 in 1usize..=5, n1 in 1usize..=4, masked in 0.0f64..0.4) {
        let m = random_net(n0, n1, seed, masked);
        let xs = random_inputs(n0, 6, seed);
        let j = m.jacobian_wrt_params(&xs).unwrap();
        let fd = fd_jacobian(&m, &xs);
        prop_assert_eq!(j.shape(), (6, m.active_count()));
        for (a, b) in j.iter().zip(fd.iter()) {
            prop_assert!(rel_err(*a, *b, FD_FLOOR) <= 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn input_sensitivity_matches_central_differences(seed in any::<u64>(), n0 in 1usize..=5, n1 in 1usize..=4) {
        let m = random_net(n0, n1, seed, 0.2);
        for x in random_inputs(n0, 4, seed) {
            let s = m.sensitivity_wrt_inputs(&x).unwrap();
            let fd = fd_sensitivity(&m, &x);
            for (a, b) in s.iter().zip(&fd) {
                prop_assert!(rel_err(*a, *b, FD_FLOOR) <= 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_is_pure_and_strictly_inside_the_unit_interval(seed in any::<u64>(), n0 in 1usize..=6, n1 in 1usize..=5) {
        let m = random_net(n0, n1, seed, 0.1);
        for x in random_inputs(n0, 10, seed) {
            let a = m.forward(&x).unwrap();
            let b = m.forward(&x).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn masked_parameters_cannot_become_nonzero(seed in any::<u64>(), value in -5.0f64..5.0) {
        prop_assume!(value != 0.0);
        let mut m = random_net(3, 2, seed, 0.5);
        let p = m.param_count();
        for idx in 0..p {
            if !m.is_active(idx) {
                prop_assert!(m.set_param(m.param_id(idx), value).is_err());
            }
        }
        let vals = vec![value; m.active_count()];
        m.set_active_params(&vals).unwrap();
        for idx in 0..p {
            prop_assert_eq!(m.params()[idx] == 0.0, !m.is_active(idx));
        }
        // a file claiming a nonzero masked value is refused or zeroed on load
        let rebuilt = Mlp::from_flat(3, 2, vec![value; p], m.mask().to_vec(), Default::default()).unwrap();
        for idx in 0..p {
            if !rebuilt.is_active(idx) {
                prop_assert_eq!(rebuilt.params()[idx], 0.0);
            }
        }
    }
}

#[test]
fn hand_evaluated_two_by_two_network() {
    // z = sigmoid(w2 . tanh(W x + b1) + b), evaluated term by term
    let m = Mlp::from_parts(
        2,
        2,
        &[0.5, -1.0, 2.0, 0.25],
        &[0.1, -0.2],
        &[1.5, -0.7],
        0.3,
    )
    .unwrap();
    let x = [0.4, -1.2];
    let h0 = (0.5 * 0.4 + -1.0 * -1.2 + 0.1_f64).tanh();
    let h1 = (2.0 * 0.4 + 0.25 * -1.2 - 0.2_f64).tanh();
    let a = 1.5 * h0 - 0.7 * h1 + 0.3;
    let z = 1.0 / (1.0 + (-a).exp());
    assert!((m.forward(&x).unwrap() - z).abs() < 1e-12);
    assert_eq!(m.param(ParamId::OutputBias), 0.3);
}
