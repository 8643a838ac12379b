//! Metric behaviour on simulated data.

use ndarray::Array2;
use subtype_lasso::metrics::pred_err_matched;
use subtype_lasso::simgen::{child_seed, gen_truth, sample_matched, SimConfig};

#[test]
fn truth_predicts_no_worse_than_zero() {
    for config in 1..=4 {
        let cfg = SimConfig::matched(config, 2.0, 41);
        let truth = gen_truth(&cfg, &mut cfg.rng()).unwrap();
        let zero = Array2::zeros(truth.delta_star.raw_dim());
        let (mut at_truth, mut at_zero) = (0.0, 0.0);
        for rep in 0..20 {
            let test_cfg = SimConfig { seed: child_seed(41, rep), ..cfg.clone() };
            let test = sample_matched(&cfg, &truth, &mut test_cfg.rng()).unwrap();
            at_truth += pred_err_matched(truth.delta_star.view(), &test).unwrap() / 20.0;
            at_zero += pred_err_matched(zero.view(), &test).unwrap() / 20.0;
        }
        println!("config {config}: Pred.Err truth {at_truth:.4}, zero {at_zero:.4}");
        assert!(at_truth <= at_zero, "config {config}: {at_truth} > {at_zero}");
        assert!((at_zero - 0.5).abs() < 0.02);
    }
}
