//! Core data types shared across the crate: proportions, instances, bags,
//! predictions and per-instance pseudo-label state.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a probability or proportion vector.
pub const SUM_TOLERANCE: f64 = 1e-6;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(InstanceId);
id_type!(BagId);
id_type!(
    /// Identifies the labeled source (one fully annotated image) a supervised
    /// instance was drawn from. Cross-validation splits never separate a source.
    SourceId
);

/// Per-class fractions summing to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Proportion {
    values: Vec<f64>,
}

impl Proportion {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidProportion("empty vector".into()));
        }
        if let Some((c, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidProportion(format!(
                "entry {c} = {v} outside [0, 1]"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidProportion(format!("entries sum to {sum}")));
        }
        Ok(Self { values })
    }

    /// Normalizes per-class counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyBag);
        }
        let total = total as f64;
        Ok(Self {
            values: counts.iter().map(|&n| n as f64 / total).collect(),
        })
    }

    /// Accepts percentages (e.g. `[5, 70, 15, 0, 10]`) and stores fractions.
    pub fn from_percentages(percent: &[f64]) -> Result<Self> {
        Self::new(percent.iter().map(|p| p / 100.0).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn classes(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.values[class]
    }
}

impl<'de> Deserialize<'de> for Proportion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        Proportion::new(values).map_err(serde::de::Error::custom)
    }
}

/// Where an instance came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    /// Fully labeled instance from a labeled source.
    Supervised(SourceId),
    /// Unlabeled (for training) member of a proportion-labeled bag.
    Bag(BagId),
    /// Held-out evaluation instance.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: InstanceId,
    pub origin: Origin,
    pub features: Vec<f64>,
    /// Ground truth, only consulted for supervised training and evaluation.
    pub true_class: Option<usize>,
}

impl Instance {
    pub fn source(&self) -> Option<SourceId> {
        match self.origin {
            Origin::Supervised(s) => Some(s),
            _ => None,
        }
    }
}

/// A group of instances carrying only a class-proportion label (the true
/// class ratio of the group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub id: BagId,
    pub instance_ids: Vec<InstanceId>,
    pub tcr: Proportion,
}

impl Bag {
    pub fn new(id: BagId, instance_ids: Vec<InstanceId>, tcr: Proportion) -> Result<Self> {
        if instance_ids.is_empty() {
            return Err(Error::Validation(format!("bag {id} has no instances")));
        }
        let mut seen = HashSet::with_capacity(instance_ids.len());
        if let Some(dup) = instance_ids.iter().find(|i| !seen.insert(**i)) {
            return Err(Error::Validation(format!(
                "bag {id} lists instance {dup} twice"
            )));
        }
        Ok(Self {
            id,
            instance_ids,
            tcr,
        })
    }

    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }
}

/// A class-probability vector with its argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub predicted_class: usize,
    pub confidence: f64,
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidProportion("empty probability vector".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::InvalidProportion(
                "probability outside [0, 1]".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidProportion(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(Self::from_probs_unchecked(probs))
    }

    /// Ties go to the lowest class index.
    pub(crate) fn from_probs_unchecked(probs: Vec<f64>) -> Self {
        let mut best = 0;
        for (c, &p) in probs.iter().enumerate().skip(1) {
            if p > probs[best] {
                best = c;
            }
        }
        Self {
            confidence: probs[best],
            predicted_class: best,
            probs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssignmentKind {
    Positive,
    Negative,
    /// Positive assignment dropped because the class is already negated.
    RejectedPositive,
    /// Negative assignment dropped because the instance hit the C - 1 cap.
    RejectedNegative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    pub assignments: Vec<(AssignmentKind, usize)>,
}

/// Outcome of trying to add a negative label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeOutcome {
    Added,
    AlreadyPresent,
    /// The instance already carries C - 1 negatives.
    Capped,
}

/// Pseudo labels attached to one unlabeled instance.
///
/// The positive class is never a member of the negative set, the negative set
/// holds at most C - 1 classes, and the history has one record per iteration
/// in strictly increasing order. Every mutator re-checks these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelState {
    classes: usize,
    positive: Option<usize>,
    negatives: BTreeSet<usize>,
    history: Vec<HistoryRecord>,
}

impl PseudoLabelState {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            positive: None,
            negatives: BTreeSet::new(),
            history: Vec::new(),
        }
    }

    pub fn positive(&self) -> Option<usize> {
        self.positive
    }

    pub fn negatives(&self) -> &BTreeSet<usize> {
        &self.negatives
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    /// True once no further negative label can be added.
    pub fn is_exhausted(&self) -> bool {
        self.negatives.len() + 1 >= self.classes
    }

    /// Returns false (and leaves the state unchanged) when `class` is negated.
    pub fn set_positive(&mut self, class: usize) -> bool {
        assert!(class < self.classes, "class {class} out of range");
        if self.negatives.contains(&class) {
            return false;
        }
        self.positive = Some(class);
        self.check();
        true
    }

    pub fn clear_positive(&mut self) {
        self.positive = None;
    }

    pub fn clear_negatives(&mut self) {
        self.negatives.clear();
    }

    /// Adding the current positive class as a negative clears the positive.
    pub fn add_negative(&mut self, class: usize) -> NegativeOutcome {
        assert!(class < self.classes, "class {class} out of range");
        if self.negatives.contains(&class) {
            return NegativeOutcome::AlreadyPresent;
        }
        if self.is_exhausted() {
            return NegativeOutcome::Capped;
        }
        self.negatives.insert(class);
        if self.positive == Some(class) {
            self.positive = None;
        }
        self.check();
        NegativeOutcome::Added
    }

    /// Appends to the record for `iteration`, opening a new one if needed.
    pub fn record(&mut self, iteration: usize, kind: AssignmentKind, class: usize) {
        match self.history.last_mut() {
            Some(last) if last.iteration == iteration => last.assignments.push((kind, class)),
            Some(last) => {
                assert!(
                    iteration > last.iteration,
                    "history must be strictly increasing ({} after {})",
                    iteration,
                    last.iteration
                );
                self.history.push(HistoryRecord {
                    iteration,
                    assignments: vec![(kind, class)],
                });
            }
            None => self.history.push(HistoryRecord {
                iteration,
                assignments: vec![(kind, class)],
            }),
        }
    }

    fn check(&self) {
        if let Some(p) = self.positive {
            assert!(!self.negatives.contains(&p), "positive {p} is also negated");
        }
        assert!(
            self.negatives.len() < self.classes,
            "{} negatives for {} classes",
            self.negatives.len(),
            self.classes
        );
    }
}

/// How a training item's label vector is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemKind {
    Supervised,
    PositivePseudo,
    NegativePseudo,
}

/// One training example: an instance plus a 0/1 label vector whose meaning
/// depends on `kind` (one-hot target, or the set of excluded classes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBatchItem {
    pub instance_id: InstanceId,
    pub kind: ItemKind,
    pub label_vector: Vec<f64>,
    pub weight: f64,
    /// Negative items use the count-weighted multi-negative loss when set.
    pub multi_negative: bool,
}

impl LabeledBatchItem {
    pub fn positive(instance_id: InstanceId, kind: ItemKind, class: usize, classes: usize) -> Self {
        let mut label_vector = vec![0.0; classes];
        label_vector[class] = 1.0;
        Self {
            instance_id,
            kind,
            label_vector,
            weight: 1.0,
            multi_negative: false,
        }
    }

    pub fn negative<I: IntoIterator<Item = usize>>(
        instance_id: InstanceId,
        negatives: I,
        classes: usize,
        multi_negative: bool,
    ) -> Self {
        let mut label_vector = vec![0.0; classes];
        for c in negatives {
            label_vector[c] = 1.0;
        }
        Self {
            instance_id,
            kind: ItemKind::NegativePseudo,
            label_vector,
            weight: 1.0,
            multi_negative,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    /// Index of the single 1 for supervised and positive items.
    pub fn target_class(&self) -> Option<usize> {
        match self.kind {
            ItemKind::NegativePseudo => None,
            _ => self.label_vector.iter().position(|&y| y == 1.0),
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.label_vector.len() != classes {
            return Err(Error::Dimension {
                expected: classes,
                found: self.label_vector.len(),
            });
        }
        if self.label_vector.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidLabel(format!(
                "instance {}: label vector is not 0/1",
                self.instance_id
            )));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidLabel(format!(
                "instance {}: weight {} must be positive",
                self.instance_id, self.weight
            )));
        }
        let ones = self.label_vector.iter().filter(|&&y| y == 1.0).count();
        let ok = match self.kind {
            ItemKind::Supervised | ItemKind::PositivePseudo => ones == 1,
            ItemKind::NegativePseudo => ones >= 1 && ones < classes,
        };
        if !ok {
            return Err(Error::InvalidLabel(format!(
                "instance {}: {:?} item with {ones} active classes",
                self.instance_id, self.kind
            )));
        }
        Ok(())
    }
}

/// Instances and bags for one experiment, with a fixed class count and
/// feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    classes: usize,
    dim: usize,
    instances: Vec<Instance>,
    bags: Vec<Bag>,
    index: HashMap<InstanceId, usize>,
}

impl Dataset {
    pub fn new(classes: usize, dim: usize, instances: Vec<Instance>, bags: Vec<Bag>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Validation(format!("need at least 2 classes, got {classes}")));
        }
        if dim == 0 {
            return Err(Error::Validation("feature dimension must be positive".into()));
        }
        let mut index = HashMap::with_capacity(instances.len());
        for (i, inst) in instances.iter().enumerate() {
            if index.insert(inst.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate instance id {}", inst.id)));
            }
            if inst.features.len() != dim {
                return Err(Error::Validation(format!(
                    "instance {} has {} features, expected {dim}",
                    inst.id,
                    inst.features.len()
                )));
            }
            if let Some(c) = inst.true_class {
                if c >= classes {
                    return Err(Error::Validation(format!(
                        "instance {} has class {c} outside [0, {classes})",
                        inst.id
                    )));
                }
            }
            if matches!(inst.origin, Origin::Supervised(_)) && inst.true_class.is_none() {
                return Err(Error::Validation(format!(
                    "supervised instance {} has no class",
                    inst.id
                )));
            }
        }
        let mut bag_ids = HashSet::new();
        for bag in &bags {
            if !bag_ids.insert(bag.id) {
                return Err(Error::Validation(format!("duplicate bag id {}", bag.id)));
            }
            if bag.tcr.classes() != classes {
                return Err(Error::Validation(format!(
                    "bag {} proportion has {} classes, expected {classes}",
                    bag.id,
                    bag.tcr.classes()
                )));
            }
            for id in &bag.instance_ids {
                match index.get(id).map(|&i| &instances[i]) {
                    Some(inst) if inst.origin == Origin::Bag(bag.id) => {}
                    Some(_) => {
                        return Err(Error::Validation(format!(
                            "instance {id} listed in bag {} belongs elsewhere",
                            bag.id
                        )))
                    }
                    None => {
                        return Err(Error::Validation(format!(
                            "bag {} references unknown instance {id}",
                            bag.id
                        )))
                    }
                }
            }
        }
        let in_bags: usize = bags.iter().map(Bag::len).sum();
        let bag_members = instances
            .iter()
            .filter(|i| matches!(i.origin, Origin::Bag(_)))
            .count();
        if in_bags != bag_members {
            return Err(Error::Validation(
                "some bag instances are not listed by any bag".into(),
            ));
        }
        Ok(Self {
            classes,
            dim,
            instances,
            bags,
            index,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn instance(&self, id: InstanceId) -> Option<&Instance> {
        self.index.get(&id).map(|&i| &self.instances[i])
    }

    pub fn supervised(&self) -> impl Iterator<Item = &Instance> {
        self.instances
            .iter()
            .filter(|i| matches!(i.origin, Origin::Supervised(_)))
    }

    pub fn eval(&self) -> impl Iterator<Item = &Instance> {
        self.instances.iter().filter(|i| i.origin == Origin::Eval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn proportion_from_counts_examples() {
        let p = Proportion::from_counts(&[2, 3, 5]).unwrap();
        assert!(approx(p.values(), &[0.2, 0.3, 0.5]));

        let p = Proportion::from_counts(&[10, 0, 0]).unwrap();
        assert_eq!(p.values(), &[1.0, 0.0, 0.0]);

        let p = Proportion::from_counts(&[7, 64, 14, 0, 14]).unwrap();
        let expected = [7.0 / 99.0, 64.0 / 99.0, 14.0 / 99.0, 0.0, 14.0 / 99.0];
        assert!(approx(p.values(), &expected));
        assert!((p.get(0) - 0.070_707_070_7).abs() < 1e-9);
        assert!((p.get(1) - 0.646_464_646_4).abs() < 1e-9);
        assert!((p.get(2) - 0.141_414_141_4).abs() < 1e-9);
    }

    #[test]
    fn proportion_from_zero_counts_is_empty_bag() {
        assert!(matches!(Proportion::from_counts(&[0, 0, 0]), Err(Error::EmptyBag)));
    }

    #[test]
    fn proportion_rejects_bad_vectors() {
        assert!(Proportion::new(vec![0.5, 0.4]).is_err());
        assert!(Proportion::new(vec![1.2, -0.2]).is_err());
        assert!(Proportion::new(vec![f64::NAN, 1.0]).is_err());
        assert!(Proportion::new(vec![]).is_err());
        assert!(Proportion::new(vec![0.5, 0.5 + 5e-7]).is_ok());
        let p = Proportion::from_percentages(&[5.0, 70.0, 15.0, 0.0, 10.0]).unwrap();
        assert!((p.get(1) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn prediction_argmax_ties_take_lowest_index() {
        let p = Prediction::from_probs(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(p.predicted_class, 0);
        assert_eq!(p.confidence, 0.4);
        let p = Prediction::from_probs(vec![0.1, 0.45, 0.45]).unwrap();
        assert_eq!(p.predicted_class, 1);
        assert_eq!(p.confidence, p.probs[p.predicted_class]);
        assert!(Prediction::from_probs(vec![0.6, 0.6]).is_err());
    }

    #[test]
    fn label_state_keeps_positive_out_of_negatives() {
        let mut s = PseudoLabelState::new(3);
        assert_eq!(s.add_negative(0), NegativeOutcome::Added);
        assert!(!s.set_positive(0));
        assert!(s.set_positive(2));
        assert_eq!(s.add_negative(2), NegativeOutcome::Added);
        assert_eq!(s.positive(), None);
        assert!(s.is_exhausted());
        assert_eq!(s.add_negative(1), NegativeOutcome::Capped);
        assert_eq!(s.add_negative(0), NegativeOutcome::AlreadyPresent);
    }

    #[test]
    fn history_groups_by_iteration() {
        let mut s = PseudoLabelState::new(3);
        s.record(1, AssignmentKind::Negative, 0);
        s.record(1, AssignmentKind::Positive, 2);
        s.record(3, AssignmentKind::Negative, 1);
        assert_eq!(s.history().len(), 2);
        assert_eq!(s.history()[0].assignments.len(), 2);
    }

    #[test]
    #[should_panic(expected = "strictly increasing")]
    fn history_rejects_going_back() {
        let mut s = PseudoLabelState::new(3);
        s.record(2, AssignmentKind::Negative, 0);
        s.record(1, AssignmentKind::Negative, 1);
    }

    #[test]
    fn batch_item_validation() {
        let id = InstanceId(1);
        assert!(LabeledBatchItem::positive(id, ItemKind::Supervised, 1, 3).validate(3).is_ok());
        assert!(LabeledBatchItem::negative(id, [0, 1], 3, true).validate(3).is_ok());
        assert!(LabeledBatchItem::negative(id, [0, 1, 2], 3, true).validate(3).is_err());
        assert!(LabeledBatchItem::negative(id, [], 3, true).validate(3).is_err());
        assert!(LabeledBatchItem::positive(id, ItemKind::PositivePseudo, 0, 3)
            .with_weight(0.0)
            .validate(3)
            .is_err());
    }

    #[test]
    fn dataset_rejects_inconsistent_bags() {
        let inst = |id: u64, origin| Instance {
            id: InstanceId(id),
            origin,
            features: vec![0.0],
            true_class: Some(0),
        };
        let tcr = Proportion::new(vec![1.0, 0.0]).unwrap();
        let bag = Bag::new(BagId(7), vec![InstanceId(1)], tcr.clone()).unwrap();
        assert!(Dataset::new(2, 1, vec![inst(1, Origin::Bag(BagId(7)))], vec![bag.clone()]).is_ok());
        assert!(Dataset::new(2, 1, vec![inst(1, Origin::Eval)], vec![bag]).is_err());
        assert!(Bag::new(BagId(1), vec![], tcr.clone()).is_err());
        assert!(Bag::new(BagId(1), vec![InstanceId(1), InstanceId(1)], tcr).is_err());
    }
}
