mod common;

use npl_core::losses::{loss_and_gradient, softmax, LossKind, NegativeForm};

use common::{numeric_gradient, objective_gradient_error, relative_error, worst_loss_gradient_error};

#[test]
fn positive_loss_gradient_matches_finite_differences() {
    let worst = worst_loss_gradient_error(LossKind::Positive, 100, 1);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn negative_loss_gradient_matches_finite_differences() {
    let worst = worst_loss_gradient_error(LossKind::Negative, 100, 2);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn multi_negative_loss_gradient_matches_finite_differences() {
    let worst = worst_loss_gradient_error(LossKind::MultiNegative, 100, 3);
    assert!(worst <= 1e-4, "worst relative error {worst:e}");
}

#[test]
fn positive_gradient_is_probs_minus_target() {
    let logits = [0.3, -1.2, 2.0, 0.0];
    let target = [0.0, 0.0, 1.0, 0.0];
    let eval = loss_and_gradient(LossKind::Positive, &logits, &target, NegativeForm::Complementary).unwrap();
    let probs = softmax(&logits);
    for c in 0..4 {
        assert!((eval.grad[c] - (probs[c] - target[c])).abs() < 1e-12);
    }
}

#[test]
fn literal_negative_form_gradient_matches_finite_differences() {
    let logits = [0.5, -0.25, 1.0];
    let labels = [1.0, 0.0, 1.0];
    let f = |z: &[f64]| {
        loss_and_gradient(LossKind::Negative, z, &labels, NegativeForm::Literal)
            .unwrap()
            .loss
    };
    let eval = loss_and_gradient(LossKind::Negative, &logits, &labels, NegativeForm::Literal).unwrap();
    let numeric = numeric_gradient(f, &logits, 1e-5);
    assert!(relative_error(&eval.grad, &numeric, 1e-6) <= 1e-4);
}

#[test]
fn training_objective_gradient_matches_finite_differences() {
    for seed in 0..5 {
        let err = objective_gradient_error(seed);
        assert!(err <= 1e-4, "seed {seed}: relative error {err:e}");
    }
}
