//! Segmentation-style scores (OP, PC, mIoU) and proportion-tracking
//! summaries of a pipeline run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::IterationReport;

/// Per-class true positive, false positive and false negative counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn zeros(classes: usize) -> Self {
        Self {
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        for c in 0..self.classes() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
    }
}

pub fn confusion(predictions: &[usize], truths: &[usize], classes: usize) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() {
        return Err(Error::Dimension {
            expected: truths.len(),
            found: predictions.len(),
        });
    }
    let mut counts = ConfusionCounts::zeros(classes);
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= classes || t >= classes {
            return Err(Error::Validation(format!(
                "class index {} outside [0, {classes})",
                p.max(t)
            )));
        }
        if p == t {
            counts.tp[p] += 1;
        } else {
            counts.fp[p] += 1;
            counts.fn_[t] += 1;
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Overall: total TP over total predictions.
    pub op: f64,
    /// Per-class mean of TP / (TP + FP).
    pub pc: f64,
    pub miou: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// OP, PC and mIoU. Classes whose denominator is zero count as 0 and still
/// count toward the class average.
pub fn op_pc_miou(counts: &ConfusionCounts) -> Scores {
    let m = counts.classes();
    let tp: u64 = counts.tp.iter().sum();
    let predicted: u64 = counts.tp.iter().zip(&counts.fp).map(|(a, b)| a + b).sum();
    let mut pc = 0.0;
    let mut miou = 0.0;
    for c in 0..m {
        pc += ratio(counts.tp[c], counts.tp[c] + counts.fp[c]);
        miou += ratio(counts.tp[c], counts.tp[c] + counts.fp[c] + counts.fn_[c]);
    }
    Scores {
        op: ratio(tp, predicted),
        pc: pc / m as f64,
        miou: miou / m as f64,
    }
}

/// Per-class mean of TP / (TP + FN); the recall form of the class average.
pub fn mean_class_recall(counts: &ConfusionCounts) -> f64 {
    let m = counts.classes();
    (0..m)
        .map(|c| ratio(counts.tp[c], counts.tp[c] + counts.fn_[c]))
        .sum::<f64>()
        / m as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub median_sae: f64,
    pub mean_sae: f64,
    pub positive_labels: usize,
    pub negative_labels: usize,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    /// Median SAE never increases from one iteration to the next.
    pub sae_non_increasing: bool,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    }
}

pub fn proportion_trajectory(reports: &[IterationReport]) -> Result<Trajectory> {
    if reports.is_empty() {
        return Err(Error::Validation("no iteration reports".into()));
    }
    let points: Vec<TrajectoryPoint> = reports
        .iter()
        .map(|r| {
            let sae = r.sae_values();
            let mean = if sae.is_empty() {
                f64::NAN
            } else {
                sae.iter().sum::<f64>() / sae.len() as f64
            };
            TrajectoryPoint {
                iteration: r.iteration,
                median_sae: median(&sae),
                mean_sae: mean,
                positive_labels: r.positive_labels,
                negative_labels: r.negative_labels,
                validation_loss: r.validation_loss,
            }
        })
        .collect();
    let sae_non_increasing = points
        .windows(2)
        .all(|w| w[1].median_sae <= w[0].median_sae);
    Ok(Trajectory {
        points,
        sae_non_increasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::BagId;
    use crate::pipeline::BagReport;

    #[test]
    fn perfect_predictions() {
        let truth = [0, 1, 2, 2, 1];
        let counts = confusion(&truth, &truth, 3).unwrap();
        assert!(counts.fp.iter().chain(&counts.fn_).all(|&x| x == 0));
        let s = op_pc_miou(&counts);
        assert_eq!((s.op, s.pc, s.miou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn everything_predicted_as_zero() {
        let truths: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let counts = confusion(&[0; 30], &truths, 3).unwrap();
        assert_eq!(counts.tp[0], 10);
        assert_eq!(counts.fp[0], 20);
        assert_eq!(counts.fn_[1], 10);
        assert_eq!(counts.fn_[2], 10);
    }

    #[test]
    fn empty_input_is_all_zero() {
        let counts = confusion(&[], &[], 4).unwrap();
        assert_eq!(counts, ConfusionCounts::zeros(4));
        let s = op_pc_miou(&counts);
        assert_eq!((s.op, s.pc, s.miou), (0.0, 0.0, 0.0));
    }

    #[test]
    fn out_of_range_class() {
        assert!(matches!(confusion(&[3], &[0], 3), Err(Error::Validation(_))));
        assert!(confusion(&[0, 1], &[0], 3).is_err());
    }

    #[test]
    fn two_class_hand_example() {
        let counts = ConfusionCounts {
            tp: vec![1, 1],
            fp: vec![1, 1],
            fn_: vec![1, 1],
        };
        let s = op_pc_miou(&counts);
        assert!((s.op - 0.5).abs() < 1e-12);
        assert!((s.pc - 0.5).abs() < 1e-12);
        assert!((s.miou - 1.0 / 3.0).abs() < 1e-12);
        assert!((mean_class_recall(&counts) - 0.5).abs() < 1e-12);
    }

    fn report(iteration: usize, sae: &[f64]) -> IterationReport {
        IterationReport {
            iteration,
            bags: sae
                .iter()
                .enumerate()
                .map(|(i, &s)| BagReport {
                    bag_id: BagId(i as u64),
                    pcr: vec![1.0, 0.0],
                    sae: s,
                })
                .collect(),
            positive_labels: iteration,
            positives_new: 0,
            negative_labels: 0,
            negatives_added: 0,
            rejected: 0,
            positive_histogram: vec![0, 0],
            negative_histogram: vec![0, 0],
            validation_loss: 1.0,
            epochs: 1,
            best_epoch: 1,
        }
    }

    #[test]
    fn trajectory_flags() {
        let t = proportion_trajectory(&[report(0, &[0.3, 0.5, 0.1])]).unwrap();
        assert_eq!(t.points.len(), 1);
        assert_eq!(t.points[0].median_sae, 0.3);
        assert!((t.points[0].mean_sae - 0.3).abs() < 1e-12);
        assert!(t.sae_non_increasing);

        let down: Vec<_> = [0.4, 0.2, 0.1].iter().enumerate().map(|(i, &s)| report(i, &[s])).collect();
        assert!(proportion_trajectory(&down).unwrap().sae_non_increasing);
        let up: Vec<_> = [0.4, 0.5].iter().enumerate().map(|(i, &s)| report(i, &[s])).collect();
        assert!(!proportion_trajectory(&up).unwrap().sae_non_increasing);
        assert!(proportion_trajectory(&[]).is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
