use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{
    AssignmentKind, InstanceId, ItemKind, LabeledBatchItem, NegativeOutcome, PseudoLabelState,
};
use crate::proportions::SelectionPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    Off,
    /// Only the current iteration's negatives are kept.
    Single,
    /// Negatives accumulate across iterations, weighted by their count.
    #[default]
    Multi,
}

/// What one [`PseudoLabelStore::update`] call changed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub positives_assigned: usize,
    /// Positives that differ from the instance's positive label in the
    /// previous iteration.
    pub positives_new: usize,
    pub positives_rejected: usize,
    pub negatives_added: usize,
    pub negatives_rejected: usize,
    /// Instances with at least one rejected assignment.
    pub flagged: Vec<InstanceId>,
}

impl UpdateSummary {
    pub fn merge(&mut self, other: UpdateSummary) {
        self.positives_assigned += other.positives_assigned;
        self.positives_new += other.positives_new;
        self.positives_rejected += other.positives_rejected;
        self.negatives_added += other.negatives_added;
        self.negatives_rejected += other.negatives_rejected;
        self.flagged.extend(other.flagged);
    }
}

/// Per-instance pseudo labels for every bag instance touched so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelStore {
    classes: usize,
    states: BTreeMap<InstanceId, PseudoLabelState>,
    previous_positive: BTreeMap<InstanceId, usize>,
}

impl PseudoLabelStore {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            states: BTreeMap::new(),
            previous_positive: BTreeMap::new(),
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, id: InstanceId) -> Option<&PseudoLabelState> {
        self.states.get(&id)
    }

    pub fn states(&self) -> impl Iterator<Item = (InstanceId, &PseudoLabelState)> {
        self.states.iter().map(|(id, s)| (*id, s))
    }

    pub fn is_exhausted(&self, id: InstanceId) -> bool {
        self.states.get(&id).is_some_and(PseudoLabelState::is_exhausted)
    }

    /// Clears every positive label (they are recomputed each iteration) and,
    /// in single mode, every negative label.
    pub fn begin_iteration(&mut self, mode: NegativeMode) {
        self.previous_positive = self
            .states
            .iter()
            .filter_map(|(id, s)| s.positive().map(|c| (*id, c)))
            .collect();
        for state in self.states.values_mut() {
            state.clear_positive();
            if mode != NegativeMode::Multi {
                state.clear_negatives();
            }
        }
    }

    /// Applies one bag's plan. Negatives go first so that a positive for an
    /// already negated class is dropped rather than the negative.
    pub fn update(
        &mut self,
        plan: &SelectionPlan,
        iteration: usize,
        mode: NegativeMode,
    ) -> UpdateSummary {
        let classes = self.classes;
        let mut summary = UpdateSummary::default();
        let mut flagged = BTreeSet::new();

        if mode != NegativeMode::Off {
            let mut by_instance: BTreeMap<InstanceId, Vec<usize>> = BTreeMap::new();
            for &(id, c) in &plan.negative_targets {
                by_instance.entry(id).or_default().push(c);
            }
            for (id, negatives) in by_instance {
                let state = self
                    .states
                    .entry(id)
                    .or_insert_with(|| PseudoLabelState::new(classes));
                if mode == NegativeMode::Single {
                    state.clear_negatives();
                }
                for c in negatives {
                    match state.add_negative(c) {
                        NegativeOutcome::Added => {
                            summary.negatives_added += 1;
                            state.record(iteration, AssignmentKind::Negative, c);
                        }
                        NegativeOutcome::AlreadyPresent => {}
                        NegativeOutcome::Capped => {
                            summary.negatives_rejected += 1;
                            state.record(iteration, AssignmentKind::RejectedNegative, c);
                            flagged.insert(id);
                        }
                    }
                }
            }
        }

        for &(id, c) in &plan.positive_targets {
            let state = self
                .states
                .entry(id)
                .or_insert_with(|| PseudoLabelState::new(classes));
            if state.set_positive(c) {
                summary.positives_assigned += 1;
                if self.previous_positive.get(&id) != Some(&c) {
                    summary.positives_new += 1;
                }
                state.record(iteration, AssignmentKind::Positive, c);
            } else {
                summary.positives_rejected += 1;
                state.record(iteration, AssignmentKind::RejectedPositive, c);
                flagged.insert(id);
            }
        }
        summary.flagged = flagged.into_iter().collect();
        summary
    }

    /// Training items for the current labels.
    pub fn items(&self, mode: NegativeMode, weight: f64) -> Vec<LabeledBatchItem> {
        let mut items = Vec::new();
        for (&id, state) in &self.states {
            if let Some(c) = state.positive() {
                items.push(
                    LabeledBatchItem::positive(id, ItemKind::PositivePseudo, c, self.classes)
                        .with_weight(weight),
                );
            }
            if mode != NegativeMode::Off && !state.negatives().is_empty() {
                items.push(
                    LabeledBatchItem::negative(
                        id,
                        state.negatives().iter().copied(),
                        self.classes,
                        mode == NegativeMode::Multi,
                    )
                    .with_weight(weight),
                );
            }
        }
        items
    }

    pub fn positive_count(&self) -> usize {
        self.states.values().filter(|s| s.positive().is_some()).count()
    }

    pub fn negative_count(&self) -> usize {
        self.states.values().map(|s| s.negatives().len()).sum()
    }

    pub fn positive_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for c in self.states.values().filter_map(PseudoLabelState::positive) {
            h[c] += 1;
        }
        h
    }

    pub fn negative_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes];
        for s in self.states.values() {
            for &c in s.negatives() {
                h[c] += 1;
            }
        }
        h
    }

    /// Checks that no instance carries its positive class as a negative.
    pub fn is_consistent(&self) -> bool {
        self.states.values().all(|s| {
            s.positive().is_none_or(|p| !s.negatives().contains(&p))
                && s.negatives().len() < self.classes
        })
    }
}
