//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the selection or loss code under test. The
//! selection oracle works on integer class weights and counts with exact
//! rational arithmetic, so its answers do not share rounding behaviour with
//! the floating-point implementation.

#![allow(dead_code)]

pub mod cli_fixture;
pub mod scenarios;

use std::collections::{BTreeSet, HashMap};

use npl_core::domain::{Bag, BagId, InstanceId, Prediction, Proportion};

/// A prediction given as positive integer class weights; the probability of
/// class c is `weights[c] / sum(weights)`.
#[derive(Debug, Clone)]
pub struct IntPrediction {
    pub id: InstanceId,
    pub weights: Vec<u64>,
}

impl IntPrediction {
    pub fn total(&self) -> u64 {
        self.weights.iter().sum()
    }

    /// Lowest index among the largest weights.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for c in 1..self.weights.len() {
            if self.weights[c] > self.weights[best] {
                best = c;
            }
        }
        best
    }

    /// Confidence as the exact fraction (numerator, denominator).
    pub fn confidence(&self) -> (u64, u64) {
        (self.weights[self.argmax()], self.total())
    }

    pub fn to_prediction(&self) -> Prediction {
        let t = self.total() as f64;
        Prediction::from_probs(self.weights.iter().map(|&w| w as f64 / t).collect()).unwrap()
    }
}

/// A bag whose true ratio is `tcr_counts[c] / sum(tcr_counts)`.
#[derive(Debug, Clone)]
pub struct IntBag {
    pub tcr_counts: Vec<u64>,
    pub members: Vec<IntPrediction>,
}

impl IntBag {
    pub fn classes(&self) -> usize {
        self.tcr_counts.len()
    }

    pub fn to_bag(&self) -> Bag {
        let counts: Vec<usize> = self.tcr_counts.iter().map(|&c| c as usize).collect();
        Bag::new(
            BagId(0),
            self.members.iter().map(|m| m.id).collect(),
            Proportion::from_counts(&counts).unwrap(),
        )
        .unwrap()
    }

    pub fn predictions(&self) -> HashMap<InstanceId, Prediction> {
        self.members.iter().map(|m| (m.id, m.to_prediction())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Off,
    /// Threshold as an exact fraction (numerator, denominator).
    Fixed(u64, u64),
    Adaptive,
}

/// Target sets of a selection plan, order-free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OraclePlan {
    pub positive_count: Vec<usize>,
    pub negative_count: Vec<usize>,
    pub positives: BTreeSet<(InstanceId, usize)>,
    pub negatives: BTreeSet<(InstanceId, usize)>,
}

/// Round-half-up of a non-negative fraction.
fn round_half_up(num: u128, den: u128) -> u128 {
    (2 * num + den) / (2 * den)
}

/// `a` ranks before `b` when it is more confident, or equally confident with
/// a smaller id.
fn more_confident(a: &IntPrediction, b: &IntPrediction) -> bool {
    let (an, ad) = a.confidence();
    let (bn, bd) = b.confidence();
    let lhs = an as u128 * bd as u128;
    let rhs = bn as u128 * ad as u128;
    lhs > rhs || (lhs == rhs && a.id < b.id)
}

/// Brute-force selection plan. Each instance's rank within its predicted
/// class is found by counting the members that beat it, and the targets are
/// the instances whose rank falls inside the computed count.
pub fn oracle_plan(
    bag: &IntBag,
    mode: OracleMode,
    negatives: bool,
    exhausted: &BTreeSet<InstanceId>,
) -> OraclePlan {
    let c_total = bag.classes();
    let n = bag.members.len() as u128;
    let d = bag.tcr_counts.iter().sum::<u64>() as u128;

    let mut k = vec![0u128; c_total];
    for m in &bag.members {
        k[m.argmax()] += 1;
    }
    // sum_c |a_c / d - k_c / n| = err / (d n)
    let err: u128 = (0..c_total)
        .map(|c| (bag.tcr_counts[c] as i128 * n as i128 - k[c] as i128 * d as i128).unsigned_abs())
        .sum();
    let dn = d * n;
    let sae_num = err.min(dn); // SAE = sae_num / dn

    let mut plan = OraclePlan {
        positive_count: vec![0; c_total],
        negative_count: vec![0; c_total],
        positives: BTreeSet::new(),
        negatives: BTreeSet::new(),
    };

    for c in 0..c_total {
        let members: Vec<&IntPrediction> =
            bag.members.iter().filter(|m| m.argmax() == c).collect();
        let a = bag.tcr_counts[c] as u128;
        let kc = k[c];

        let positive_take = match mode {
            OracleMode::Off => 0,
            OracleMode::Fixed(tn, td) => members
                .iter()
                .filter(|m| {
                    let (cn, cd) = m.confidence();
                    cn as u128 * td as u128 >= tn as u128 * cd as u128
                })
                .count(),
            OracleMode::Adaptive => {
                // PS * n = (1 - sae) * min(a/d, k/n) * n
                //        = (dn - sae_num) * min(a n, k d) / (d^2 n)
                let num = (dn - sae_num) * (a * n).min(kc * d);
                let den = d * d * n;
                (round_half_up(num, den) as usize).min(members.len())
            }
        };
        let rank = |m: &IntPrediction| members.iter().filter(|o| more_confident(o, m)).count();
        let chosen: Vec<&IntPrediction> = members
            .iter()
            .copied()
            .filter(|m| rank(m) < positive_take)
            .collect();
        plan.positive_count[c] = chosen.len();
        plan.positives.extend(chosen.iter().map(|m| (m.id, c)));

        if negatives {
            // NS * n = sae * (k/n - a/d) * (1 - (a/d) / (k/n)) * n
            //        = sae_num * (k d - a n)^2 / (d^3 n k)   when k d > a n
            let wanted = if kc > 0 && kc * d > a * n {
                let diff = kc * d - a * n;
                round_half_up(sae_num * diff * diff, d * d * d * n * kc) as usize
            } else {
                0
            };
            let rest: Vec<&IntPrediction> = members
                .iter()
                .copied()
                .filter(|m| rank(m) >= positive_take)
                .collect();
            let wanted = wanted.min(rest.len());
            // Least confident first among the rest, skipping exhausted ones.
            let eligible: Vec<&IntPrediction> =
                rest.iter().copied().filter(|m| !exhausted.contains(&m.id)).collect();
            let reverse_rank = |m: &IntPrediction| {
                eligible
                    .iter()
                    .filter(|o| {
                        let (on, od) = o.confidence();
                        let (mn, md) = m.confidence();
                        let lhs = on as u128 * md as u128;
                        let rhs = mn as u128 * od as u128;
                        lhs < rhs || (lhs == rhs && o.id < m.id)
                    })
                    .count()
            };
            let picked: Vec<&IntPrediction> = eligible
                .iter()
                .copied()
                .filter(|m| reverse_rank(m) < wanted)
                .collect();
            plan.negative_count[c] = picked.len();
            plan.negatives.extend(picked.iter().map(|m| (m.id, c)));
        }
    }
    plan
}

/// Standard pseudo labeling: every instance whose largest class probability
/// reaches `threshold` is labeled with that class.
pub fn threshold_pseudo_labels(
    predictions: &HashMap<InstanceId, Prediction>,
    ids: impl IntoIterator<Item = InstanceId>,
    threshold: f64,
) -> BTreeSet<(InstanceId, usize)> {
    let mut out = BTreeSet::new();
    for id in ids {
        let probs = &predictions[&id].probs;
        let mut best = 0;
        for c in 1..probs.len() {
            if probs[c] > probs[best] {
                best = c;
            }
        }
        if probs[best] >= threshold {
            out.insert((id, best));
        }
    }
    out
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error between two vectors, `|a - b| / max(|a|, |b|, floor)`,
/// measured in the Euclidean norm.
pub fn relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

/// A random bag of 1 to 20 instances over 2 to 5 classes. The true ratio
/// uses a denominator of at most 50, and about a third of the instances get
/// a dominant class so that high thresholds select something. Weight ties
/// occur often, which exercises the id tie-break.
pub fn random_int_bag(seed: u64) -> IntBag {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..=5usize);
    let n = rng.random_range(1..=20usize);
    let mut tcr_counts: Vec<u64> = (0..classes).map(|_| rng.random_range(0..=10)).collect();
    if tcr_counts.iter().all(|&c| c == 0) {
        tcr_counts[rng.random_range(0..classes)] = 1;
    }
    let members = (0..n)
        .map(|i| {
            let mut weights: Vec<u64> = if rng.random_bool(0.35) {
                let mut w: Vec<u64> = (0..classes).map(|_| rng.random_range(0..=2)).collect();
                w[rng.random_range(0..classes)] = rng.random_range(40..=100);
                w
            } else {
                (0..classes).map(|_| rng.random_range(0..=6)).collect()
            };
            if weights.iter().all(|&w| w == 0) {
                weights[0] = 1;
            }
            IntPrediction {
                // Sparse, shuffled ids so id order differs from member order.
                id: InstanceId(rng.random_range(0..1000) * 32 + i as u64),
                weights,
            }
        })
        .collect();
    IntBag { tcr_counts, members }
}

/// Converts a library plan to the oracle's order-free shape.
pub fn plan_sets(plan: &npl_core::proportions::SelectionPlan) -> OraclePlan {
    OraclePlan {
        positive_count: plan.positive_count.clone(),
        negative_count: plan.negative_count.clone(),
        positives: plan.positive_targets.iter().copied().collect(),
        negatives: plan.negative_targets.iter().copied().collect(),
    }
}

/// Worst relative error between the analytic logit gradient of `kind` and a
/// central finite difference (step 1e-5) over `draws` random logit/label
/// draws. Logits stay in [-4, 4] so no probability reaches the log clamp,
/// where the loss has a kink.
pub fn worst_loss_gradient_error(kind: npl_core::losses::LossKind, draws: usize, seed: u64) -> f64 {
    use npl_core::losses::{loss_and_gradient, multi_negative_loss, negative_loss, positive_loss, softmax, LossKind, NegativeForm};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let classes = rng.random_range(2..=6usize);
        let logits: Vec<f64> = (0..classes).map(|_| rng.random_range(-4.0..4.0)).collect();
        let labels: Vec<f64> = match kind {
            LossKind::Positive => {
                let mut y = vec![0.0; classes];
                y[rng.random_range(0..classes)] = 1.0;
                y
            }
            _ => loop {
                let y: Vec<f64> = (0..classes).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
                let k = y.iter().filter(|&&v| v != 0.0).count();
                if k >= 1 && k < classes {
                    break y;
                }
            },
        };
        let loss = |z: &[f64]| {
            let p = softmax(z);
            match kind {
                LossKind::Positive => positive_loss(&p, &labels),
                LossKind::Negative => negative_loss(&p, &labels),
                LossKind::MultiNegative => multi_negative_loss(&p, &labels, classes).unwrap(),
            }
        };
        let analytic = loss_and_gradient(kind, &logits, &labels, NegativeForm::Complementary).unwrap();
        assert!((analytic.loss - loss(&logits)).abs() < 1e-12);
        let numeric = numeric_gradient(loss, &logits, 1e-5);
        worst = worst.max(relative_error(&analytic.grad, &numeric, 1e-6));
    }
    worst
}

/// Relative error of the training objective's parameter gradient on a
/// 3-class, 4-input, 8-hidden network over a mix of supervised, positive,
/// single-negative and multi-negative items.
pub fn objective_gradient_error(seed: u64) -> f64 {
    use npl_core::domain::{ItemKind, LabeledBatchItem};
    use npl_core::losses::NegativeForm;
    use npl_core::model::{objective, Activation, Architecture, Classifier, Network};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::mlp(4, 8, 3, Activation::Tanh);
    let net = Network::init(arch, seed);
    let xs: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let items = [
        LabeledBatchItem::positive(InstanceId(0), ItemKind::Supervised, 0, 3),
        LabeledBatchItem::positive(InstanceId(1), ItemKind::PositivePseudo, 2, 3).with_weight(0.5),
        LabeledBatchItem::negative(InstanceId(2), [1], 3, false),
        LabeledBatchItem::negative(InstanceId(3), [0, 2], 3, true),
        LabeledBatchItem::negative(InstanceId(4), [2], 3, true).with_weight(2.0),
        LabeledBatchItem::positive(InstanceId(5), ItemKind::Supervised, 1, 3),
    ];
    let examples: Vec<(&[f64], &LabeledBatchItem)> =
        xs.iter().map(Vec::as_slice).zip(items.iter()).collect();
    let (_, analytic) = objective(&net, &examples, NegativeForm::Complementary).unwrap();
    let f = |theta: &[f64]| {
        let probe = Network::from_parameters(arch, theta.to_vec()).unwrap();
        objective(&probe, &examples, NegativeForm::Complementary).unwrap().0
    };
    let numeric = numeric_gradient(f, net.parameters(), 1e-5);
    relative_error(&analytic, &numeric, 1e-6)
}
