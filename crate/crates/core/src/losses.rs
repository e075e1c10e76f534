//! Positive (cross-entropy), negative (complementary-label) and
//! multi-negative losses, with gradients taken through the softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to every argument of `ln`.
pub const EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Positive,
    Negative,
    MultiNegative,
}

/// Functional form of the per-class negative penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeForm {
    /// `-sum y_c ln(1 - p_c)`.
    #[default]
    Complementary,
    /// `-sum y_c ln(1 - ln p_c)`. Unbounded below; for comparison only.
    Literal,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn clamp_ln(x: f64) -> f64 {
    x.max(EPSILON).ln()
}

pub fn positive_loss(probs: &[f64], target: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(target)
        .filter(|(_, &y)| y != 0.0)
        .map(|(&p, &y)| y * clamp_ln(p))
        .sum::<f64>()
}

pub fn negative_loss(probs: &[f64], negatives: &[f64]) -> f64 {
    negative_loss_with(probs, negatives, NegativeForm::Complementary)
}

pub fn negative_loss_with(probs: &[f64], negatives: &[f64], form: NegativeForm) -> f64 {
    -probs
        .iter()
        .zip(negatives)
        .filter(|(_, &y)| y != 0.0)
        .map(|(&p, &y)| match form {
            NegativeForm::Complementary => y * clamp_ln(1.0 - p),
            NegativeForm::Literal => y * (1.0 - clamp_ln(p)).ln(),
        })
        .sum::<f64>()
}

fn popcount(labels: &[f64]) -> usize {
    labels.iter().filter(|&&y| y != 0.0).count()
}

/// `(C - |y|) / (C - 1)`: one for a single negative, shrinking linearly as
/// negatives accumulate.
pub fn multi_negative_weight(negatives: usize, classes: usize) -> f64 {
    (classes - negatives) as f64 / (classes - 1) as f64
}

pub fn multi_negative_loss(probs: &[f64], negatives: &[f64], classes: usize) -> Result<f64> {
    multi_negative_loss_with(probs, negatives, classes, NegativeForm::Complementary)
}

pub fn multi_negative_loss_with(
    probs: &[f64],
    negatives: &[f64],
    classes: usize,
    form: NegativeForm,
) -> Result<f64> {
    let count = popcount(negatives);
    if count == 0 || count >= classes {
        return Err(Error::InvalidLabel(format!(
            "{count} negative labels for {classes} classes"
        )));
    }
    Ok(multi_negative_weight(count, classes) * negative_loss_with(probs, negatives, form))
}

/// Loss value and its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Evaluates the chosen loss on `softmax(logits)` and returns the gradient
/// with respect to `logits`.
pub fn loss_and_gradient(
    kind: LossKind,
    logits: &[f64],
    labels: &[f64],
    form: NegativeForm,
) -> Result<LossEval> {
    let classes = logits.len();
    if labels.len() != classes {
        return Err(Error::Dimension {
            expected: classes,
            found: labels.len(),
        });
    }
    let mut grad = vec![0.0; classes];
    let mut probs = vec![0.0; classes];
    let loss = loss_and_gradient_into(kind, logits, labels, form, &mut probs, &mut grad)?;
    Ok(LossEval { loss, grad })
}

pub fn loss_gradient(kind: LossKind, logits: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    loss_and_gradient(kind, logits, labels, NegativeForm::Complementary).map(|e| e.grad)
}

/// Buffer-reusing core of [`loss_and_gradient`]; `probs` and `grad` must have
/// the logits' length.
pub(crate) fn loss_and_gradient_into(
    kind: LossKind,
    logits: &[f64],
    labels: &[f64],
    form: NegativeForm,
    probs: &mut [f64],
    grad: &mut [f64],
) -> Result<f64> {
    softmax_into(logits, probs);
    let classes = logits.len();
    match kind {
        LossKind::Positive => {
            // d/dz_j = p_j * sum(y) - y_j
            let mass: f64 = labels.iter().sum();
            for ((g, &p), &y) in grad.iter_mut().zip(probs.iter()).zip(labels) {
                *g = p * mass - y;
            }
            Ok(positive_loss(probs, labels))
        }
        LossKind::Negative | LossKind::MultiNegative => {
            let count = popcount(labels);
            let scale = if kind == LossKind::MultiNegative {
                if count == 0 || count >= classes {
                    return Err(Error::InvalidLabel(format!(
                        "{count} negative labels for {classes} classes"
                    )));
                }
                multi_negative_weight(count, classes)
            } else {
                1.0
            };
            // With u_c = dL/dp_c * p_c, dL/dz_j = u_j - p_j * sum(u).
            let mut loss = 0.0;
            let mut total_u = 0.0;
            for c in 0..classes {
                let y = labels[c];
                let p = probs[c];
                let u = if y == 0.0 {
                    0.0
                } else {
                    match form {
                        NegativeForm::Complementary => {
                            let q = complement(logits, c).max(EPSILON);
                            loss -= y * q.ln();
                            y * p / q
                        }
                        NegativeForm::Literal => {
                            let lp = clamp_ln(p);
                            loss -= y * (1.0 - lp).ln();
                            if p > EPSILON {
                                y / (1.0 - lp)
                            } else {
                                0.0
                            }
                        }
                    }
                };
                grad[c] = u;
                total_u += u;
            }
            for (g, &p) in grad.iter_mut().zip(probs.iter()) {
                *g = scale * (*g - p * total_u);
            }
            Ok(scale * loss)
        }
    }
}

/// `1 - softmax(logits)_c`, computed from the other classes' mass so it stays
/// accurate when `p_c` is close to one.
fn complement(logits: &[f64], c: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut others = 0.0;
    for (k, &z) in logits.iter().enumerate() {
        let e = (z - max).exp();
        total += e;
        if k != c {
            others += e;
        }
    }
    others / total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(c: usize, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[c] = 1.0;
        v
    }

    #[test]
    fn positive_loss_examples() {
        let l = positive_loss(&[0.25; 4], &one_hot(0, 4));
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.386_294_361_1).abs() < 1e-9);
        assert_eq!(positive_loss(&[0.0, 1.0, 0.0], &one_hot(1, 3)), 0.0);
        let l = positive_loss(&[0.7, 0.2, 0.1], &one_hot(1, 3));
        assert!((l - 1.609_437_912_4).abs() < 1e-9);
    }

    #[test]
    fn positive_loss_clamps_zero_probability() {
        let l = positive_loss(&[1.0, 0.0], &one_hot(1, 2));
        assert!(l.is_finite());
        assert!((l + EPSILON.ln()).abs() < 1e-12);
    }

    #[test]
    fn negative_loss_examples() {
        let l = negative_loss(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((l - 0.693_147_180_6).abs() < 1e-9);
        assert_eq!(negative_loss(&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]), 0.0);
        let l = negative_loss(&[0.1, 0.6, 0.3], &[0.0, 1.0, 1.0]);
        assert!((l - 1.272_965_675_8).abs() < 1e-9, "{l}");
        assert!(negative_loss(&[0.0, 1.0], &[0.0, 1.0]).is_finite());
    }

    #[test]
    fn literal_negative_form_goes_below_zero() {
        let l = negative_loss_with(&[0.5, 0.5], &[1.0, 0.0], NegativeForm::Literal);
        assert!((l + (1.0 + 2f64.ln()).ln()).abs() < 1e-12);
        assert!(l < 0.0);
    }

    #[test]
    fn multi_negative_examples() {
        let probs = [0.1, 0.6, 0.3];
        let y = [0.0, 1.0, 0.0];
        let single = negative_loss(&probs, &y);
        let multi = multi_negative_loss(&probs, &y, 3).unwrap();
        assert_eq!(single.to_bits(), multi.to_bits());

        assert_eq!(multi_negative_weight(4, 5), 0.25);
        // Probabilities chosen so the base loss is 2.0.
        let q = (-2.0f64).exp();
        let probs = [1.0 - q, 0.0, 0.0, 0.0, q];
        let y = [1.0, 1.0, 1.0, 1.0, 0.0];
        assert!((negative_loss(&probs, &y) - 2.0).abs() < 1e-12);
        assert!((multi_negative_loss(&probs, &y, 5).unwrap() - 0.5).abs() < 1e-12);

        let probs = [0.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(multi_negative_loss(&probs, &y, 5).unwrap(), 0.0);

        assert!(matches!(
            multi_negative_loss(&probs, &[0.0; 5], 5),
            Err(Error::InvalidLabel(_))
        ));
    }

    #[test]
    fn positive_gradient_is_probs_minus_target() {
        let logits = [0.3, -1.2, 2.0, 0.5];
        let probs = softmax(&logits);
        let g = loss_gradient(LossKind::Positive, &logits, &one_hot(2, 4)).unwrap();
        for c in 0..4 {
            let expected = probs[c] - if c == 2 { 1.0 } else { 0.0 };
            assert!((g[c] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_gradient_pushes_negated_logit_up() {
        let logits = [0.3, -1.2, 2.0];
        let g = loss_gradient(LossKind::Negative, &logits, &[0.0, 0.0, 1.0]).unwrap();
        assert!(g[2] > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_stay_finite() {
        let logits = [800.0, -800.0, 0.0];
        for kind in [LossKind::Positive, LossKind::Negative, LossKind::MultiNegative] {
            let labels = [1.0, 0.0, 0.0];
            let e = loss_and_gradient(kind, &logits, &labels, NegativeForm::Complementary).unwrap();
            assert!(e.loss.is_finite() && e.loss >= 0.0);
            assert!(e.grad.iter().all(|g| g.is_finite()));
        }
        let e = loss_and_gradient(
            LossKind::Negative,
            &logits,
            &[0.0, 1.0, 0.0],
            NegativeForm::Literal,
        )
        .unwrap();
        assert!(e.loss.is_finite());
        assert!(e.grad.iter().all(|g| g.is_finite()));
    }
}
