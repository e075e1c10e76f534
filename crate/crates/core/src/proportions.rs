//! Proportion comparison and class-ratio-guided label selection.
//!
//! A bag's predicted class ratio (PCR) is compared against its true class
//! ratio (TCR). The sum of absolute errors (SAE) between the two scales how
//! many instances receive positive labels (positive selectivity) and how many
//! instances of an over-predicted class receive negative labels (negative
//! selectivity).

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Bag, BagId, InstanceId, Prediction, Proportion};
use crate::error::{Error, Result};

/// How the sum of absolute ratio errors is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SaeForm {
    /// `min(1, sum |tcr - pcr|)`, always in [0, 1].
    #[default]
    Clamped,
    /// `max(1, sum |tcr - pcr|)`; kept for comparison only, it is never below 1.
    Literal,
}

pub fn sae(tcr: &Proportion, pcr: &Proportion) -> Result<f64> {
    sae_with(tcr, pcr, SaeForm::Clamped)
}

pub fn sae_with(tcr: &Proportion, pcr: &Proportion, form: SaeForm) -> Result<f64> {
    sae_of_ratios(tcr.values(), pcr.values(), form)
}

/// SAE on raw ratio vectors. Unlike [`sae`], the inputs need not sum to
/// one, which suits ratios quoted after rounding (e.g. whole percentages).
pub fn sae_of_ratios(tcr: &[f64], pcr: &[f64], form: SaeForm) -> Result<f64> {
    if tcr.len() != pcr.len() {
        return Err(Error::Dimension {
            expected: tcr.len(),
            found: pcr.len(),
        });
    }
    let total: f64 = tcr
        .iter()
        .zip(pcr)
        .map(|(t, p)| (t - p).abs())
        .sum();
    Ok(match form {
        SaeForm::Clamped => total.min(1.0),
        SaeForm::Literal => total.max(1.0),
    })
}

/// `sae * max(0, pcr_c - tcr_c) * (1 - tcr_c / pcr_c)`, zero when `pcr_c == 0`.
pub fn negative_selectivity_given_sae(sae: f64, tcr_c: f64, pcr_c: f64) -> f64 {
    if pcr_c <= 0.0 {
        return 0.0;
    }
    let excess = (pcr_c - tcr_c).max(0.0);
    sae * excess * (1.0 - tcr_c / pcr_c)
}

/// `(1 - sae) * min(tcr_c, pcr_c)`.
pub fn positive_selectivity_given_sae(sae: f64, tcr_c: f64, pcr_c: f64) -> f64 {
    (1.0 - sae) * tcr_c.min(pcr_c)
}

pub fn negative_selectivity(tcr: &Proportion, pcr: &Proportion, class: usize) -> Result<f64> {
    check_class(tcr, class)?;
    let s = sae(tcr, pcr)?;
    Ok(negative_selectivity_given_sae(s, tcr.get(class), pcr.get(class)))
}

pub fn positive_selectivity(tcr: &Proportion, pcr: &Proportion, class: usize) -> Result<f64> {
    check_class(tcr, class)?;
    let s = sae(tcr, pcr)?;
    Ok(positive_selectivity_given_sae(s, tcr.get(class), pcr.get(class)))
}

fn check_class(p: &Proportion, class: usize) -> Result<()> {
    if class >= p.classes() {
        return Err(Error::InvalidLabel(format!(
            "class {class} outside [0, {})",
            p.classes()
        )));
    }
    Ok(())
}

/// Tolerance for treating a product as an exact half when rounding, so that
/// e.g. a true 2.5 computed as 2.4999999999999996 still rounds up.
const HALF_TOLERANCE: f64 = 1e-9;

/// Converts a selectivity into an instance count: `selectivity * bag_size`
/// rounded half-up, never negative.
pub fn selectivity_count(selectivity: f64, bag_size: usize) -> usize {
    let x = selectivity * bag_size as f64;
    if x.is_nan() || x <= 0.0 {
        0
    } else {
        (x + 0.5 + HALF_TOLERANCE).floor() as usize
    }
}

/// The per-class predicted ratio of a bag.
pub fn predicted_ratio(
    bag: &Bag,
    predictions: &HashMap<InstanceId, Prediction>,
) -> Result<Proportion> {
    let mut counts = vec![0usize; bag.tcr.classes()];
    for id in &bag.instance_ids {
        let p = lookup(bag, predictions, *id)?;
        let slot = counts.get_mut(p.predicted_class).ok_or(Error::Dimension {
            expected: bag.tcr.classes(),
            found: p.probs.len(),
        })?;
        *slot += 1;
    }
    Proportion::from_counts(&counts)
}

fn lookup<'a>(
    bag: &Bag,
    predictions: &'a HashMap<InstanceId, Prediction>,
    id: InstanceId,
) -> Result<&'a Prediction> {
    predictions.get(&id).ok_or(Error::IncompletePrediction {
        bag: bag.id,
        instance: id,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositiveMode {
    Off,
    /// Every instance whose confidence reaches the threshold.
    #[serde(alias = "fixed")]
    FixedThreshold,
    /// Count per class driven by positive selectivity.
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    pub positive: PositiveMode,
    pub threshold: f64,
    pub enable_negative: bool,
    pub sae_form: SaeForm,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            positive: PositiveMode::Adaptive,
            threshold: 0.95,
            enable_negative: true,
            sae_form: SaeForm::Clamped,
        }
    }
}

/// Concrete per-instance assignments for one bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub bag_id: BagId,
    pub pcr: Proportion,
    pub sae: f64,
    pub positive_count: Vec<usize>,
    pub negative_count: Vec<usize>,
    pub positive_targets: Vec<(InstanceId, usize)>,
    pub negative_targets: Vec<(InstanceId, usize)>,
}

pub fn build_selection_plan(
    bag: &Bag,
    predictions: &HashMap<InstanceId, Prediction>,
    params: &SelectionParams,
) -> Result<SelectionPlan> {
    build_selection_plan_excluding(bag, predictions, params, |_| false)
}

/// Like [`build_selection_plan`], but instances for which `exhausted` returns
/// true (they already carry C - 1 negatives) are never chosen as negative
/// targets.
pub fn build_selection_plan_excluding<F>(
    bag: &Bag,
    predictions: &HashMap<InstanceId, Prediction>,
    params: &SelectionParams,
    exhausted: F,
) -> Result<SelectionPlan>
where
    F: Fn(InstanceId) -> bool,
{
    if params.positive == PositiveMode::FixedThreshold
        && !(params.threshold > 0.0 && params.threshold <= 1.0)
    {
        return Err(Error::Config(format!(
            "threshold {} outside (0, 1]",
            params.threshold
        )));
    }
    let classes = bag.tcr.classes();
    let n = bag.len();

    // Instances grouped by predicted class, most confident first.
    let mut by_class: Vec<Vec<(InstanceId, f64)>> = vec![Vec::new(); classes];
    for &id in &bag.instance_ids {
        let p = lookup(bag, predictions, id)?;
        if p.probs.len() != classes {
            return Err(Error::Dimension {
                expected: classes,
                found: p.probs.len(),
            });
        }
        by_class[p.predicted_class].push((id, p.confidence));
    }
    for members in &mut by_class {
        members.sort_by(most_confident_first);
    }

    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let pcr = Proportion::from_counts(&counts)?;
    let sae = sae_with(&bag.tcr, &pcr, params.sae_form)?;

    let mut positive_count = vec![0; classes];
    let mut negative_count = vec![0; classes];
    let mut positive_targets = Vec::new();
    let mut negative_targets = Vec::new();

    for (c, members) in by_class.iter().enumerate() {
        let take = match params.positive {
            PositiveMode::Off => 0,
            PositiveMode::FixedThreshold => members
                .iter()
                .filter(|(_, conf)| *conf >= params.threshold)
                .count(),
            PositiveMode::Adaptive => {
                let ps = positive_selectivity_given_sae(sae, bag.tcr.get(c), pcr.get(c));
                selectivity_count(ps, n).min(members.len())
            }
        };
        positive_count[c] = take;
        positive_targets.extend(members[..take].iter().map(|(id, _)| (*id, c)));

        if params.enable_negative {
            let ns = negative_selectivity_given_sae(sae, bag.tcr.get(c), pcr.get(c));
            let wanted = selectivity_count(ns, n).min(members.len() - take);
            let mut rest: Vec<_> = members[take..].to_vec();
            rest.sort_by(least_confident_first);
            let chosen: Vec<_> = rest
                .iter()
                .filter(|(id, _)| !exhausted(*id))
                .take(wanted)
                .map(|(id, _)| (*id, c))
                .collect();
            negative_count[c] = chosen.len();
            negative_targets.extend(chosen);
        }
    }

    Ok(SelectionPlan {
        bag_id: bag.id,
        pcr,
        sae,
        positive_count,
        negative_count,
        positive_targets,
        negative_targets,
    })
}

// Confidence ties fall back to ascending instance id in both directions.
fn most_confident_first(a: &(InstanceId, f64), b: &(InstanceId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn least_confident_first(a: &(InstanceId, f64), b: &(InstanceId, f64)) -> Ordering {
    a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0))
}
