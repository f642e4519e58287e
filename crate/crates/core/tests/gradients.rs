mod common;

use vle_core::framelevel::check_model_gradient;
use vle_core::{LabelSet, LogisticParams, Vocabulary};

#[test]
fn logistic_at_zero() {
    let vocab = Vocabulary::new(4).unwrap();
    let params = LogisticParams::zeros(vocab, 6, 1e-3);
    let xs: Vec<Vec<f64>> = (0..5)
        .map(|i| (0..6).map(|j| ((i * 7 + j) % 5) as f64 - 2.0).collect())
        .collect();
    let refs: Vec<&Vec<f64>> = xs.iter().collect();
    let labels: Vec<LabelSet> = (0..5).map(|i| LabelSet::from([i as u32 % 4])).collect();
    let err = check_model_gradient(&params, |p| p.loss_grad(&refs, &labels, &[0, 1, 2, 3, 4]), 1e-3, 0);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn moe_matches_finite_differences() {
    for seed in 0..5 {
        let err = common::moe_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn dbof_matches_finite_differences() {
    for seed in 0..5 {
        let err = common::dbof_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn lstm_matches_finite_differences() {
    for seed in 0..5 {
        let err = common::lstm_gradient_error(seed);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}
