mod common;

use common::{fd_gradient, min_preactivation, rel_err, tiny_problem};
use koopflow::koopman::{
    loss_l1, loss_l1_with_grad, loss_l2, loss_l2_with_grad, loss_long_baseline,
    loss_long_baseline_with_grad, KoopmanModel,
};
use proptest::prelude::*;

const TOL: f64 = 1e-5;

fn with_params(model: &KoopmanModel, p: &[f64]) -> KoopmanModel {
    let mut m = model.clone();
    m.set_params(p).unwrap();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn l1_gradient_matches_finite_differences(seed in 0u64..10_000, beta in 0.0f64..10.0) {
        let (model, trajs) = tiny_problem(seed, 9, 2);
        prop_assume!(min_preactivation(&model, &trajs) > 1e-8);
        let samples = [(0, 0), (0, 3), (1, 2)];
        let (_, g) = loss_l1_with_grad(&model, &trajs, &samples, beta).unwrap();
        let p = model.params().values;
        let fd = fd_gradient(&p, |q| loss_l1(&with_params(&model, q), &trajs, &samples, beta).unwrap().total);
        let e = rel_err(&g, &fd);
        prop_assert!(e < TOL, "relative error {e}");
    }

    #[test]
    fn l2_gradient_matches_finite_differences(seed in 0u64..10_000, cap in 1usize..8) {
        let (model, trajs) = tiny_problem(seed, 7, 2);
        prop_assume!(min_preactivation(&model, &trajs) > 1e-8);
        let (_, g) = loss_l2_with_grad(&model, &trajs, cap, 3.0).unwrap();
        let p = model.params().values;
        let fd = fd_gradient(&p, |q| loss_l2(&with_params(&model, q), &trajs, cap, 3.0).unwrap().total);
        let e = rel_err(&g, &fd);
        prop_assert!(e < TOL, "relative error {e}");
    }

    #[test]
    fn baseline_gradient_matches_finite_differences(seed in 0u64..10_000, delta in 0.1f64..1.0) {
        let (model, trajs) = tiny_problem(seed, 6, 2);
        prop_assume!(min_preactivation(&model, &trajs) > 1e-8);
        let (_, g) = loss_long_baseline_with_grad(&model, &trajs, 200, delta, 0.7, 1.0).unwrap();
        let p = model.params().values;
        let fd = fd_gradient(&p, |q| {
            loss_long_baseline(&with_params(&model, q), &trajs, 200, delta, 0.7, 1.0).unwrap().total
        });
        let e = rel_err(&g, &fd);
        prop_assert!(e < TOL, "relative error {e}");
    }
}
