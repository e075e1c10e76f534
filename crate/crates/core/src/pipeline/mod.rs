//! The iterative pseudo-labeling loop.
//!
//! Iteration 0 trains on the supervised split only. Every later iteration
//! predicts all bag instances with the current model, turns each bag's
//! predicted-vs-true class ratio into a [`SelectionPlan`], applies the plans
//! to the [`PseudoLabelStore`] and retrains on supervised plus pseudo-labeled
//! items. The loop stops once the validation loss has not improved for
//! `plateau` iterations, or after `max_iterations`.

mod store;

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{BagId, Dataset, Instance, InstanceId, ItemKind, LabeledBatchItem, Prediction};
use crate::error::{Error, Result};
use crate::model::{train_phase, Classifier, TrainConfig};
use crate::proportions::{
    build_selection_plan_excluding, PositiveMode, SaeForm, SelectionParams, SelectionPlan,
};

pub use store::{NegativeMode, PseudoLabelStore, UpdateSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub positive_mode: PositiveMode,
    pub negative_mode: NegativeMode,
    /// Confidence threshold for [`PositiveMode::FixedThreshold`].
    pub threshold: f64,
    pub max_iterations: usize,
    /// Outer iterations without validation improvement before stopping.
    pub plateau: usize,
    /// Continue from the previous iteration's parameters instead of the
    /// initial ones.
    pub warm_start: bool,
    pub sae_form: SaeForm,
    /// Share of the supervised instances held out for validation.
    pub validation_fraction: f64,
    pub supervised_weight: f64,
    pub pseudo_weight: f64,
    /// Train only the output layer once pseudo labels are in play.
    pub freeze_hidden_in_pseudo_phases: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            positive_mode: PositiveMode::Adaptive,
            negative_mode: NegativeMode::Multi,
            threshold: 0.95,
            max_iterations: 10,
            plateau: 2,
            warm_start: true,
            sae_form: SaeForm::Clamped,
            validation_fraction: 0.25,
            supervised_weight: 1.0,
            pseudo_weight: 1.0,
            freeze_hidden_in_pseudo_phases: false,
        }
    }
}

impl PipelineConfig {
    pub fn new(positive_mode: PositiveMode, negative_mode: NegativeMode) -> Self {
        Self {
            positive_mode,
            negative_mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.positive_mode == PositiveMode::Off && self.negative_mode == NegativeMode::Off {
            return Err(Error::Config(
                "positive and negative labeling are both off".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.plateau == 0 {
            return Err(Error::Config("plateau must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "threshold {} outside (0, 1]",
                self.threshold
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        for (name, w) in [
            ("supervised_weight", self.supervised_weight),
            ("pseudo_weight", self.pseudo_weight),
        ] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Short name used in logs and result tables.
    pub fn label(&self) -> String {
        use NegativeMode as N;
        use PositiveMode as P;
        match (self.positive_mode, self.negative_mode) {
            (P::FixedThreshold, N::Off) => "pseudo-labeling".into(),
            (P::Adaptive, N::Multi) => "proposed".into(),
            (P::Adaptive, N::Off) => "adaptive".into(),
            (P::Off, N::Single) => "negative-single".into(),
            (P::Off, N::Multi) => "negative-multi".into(),
            (P::Adaptive, N::Single) => "adaptive+single".into(),
            (P::FixedThreshold, N::Single) => "fixed+single".into(),
            (P::FixedThreshold, N::Multi) => "fixed+multi".into(),
            (P::Off, N::Off) => "none".into(),
        }
    }

    fn selection_params(&self) -> SelectionParams {
        SelectionParams {
            positive: self.positive_mode,
            threshold: self.threshold,
            enable_negative: self.negative_mode != NegativeMode::Off,
            sae_form: self.sae_form,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagReport {
    pub bag_id: BagId,
    pub pcr: Vec<f64>,
    pub sae: f64,
}

/// State after one outer iteration.
///
/// `bags` describes the predictions of the model trained in this iteration,
/// which are the ones the next iteration labels from. Label counts describe
/// the labels this iteration trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub bags: Vec<BagReport>,
    pub positive_labels: usize,
    pub positives_new: usize,
    pub negative_labels: usize,
    pub negatives_added: usize,
    pub rejected: usize,
    pub positive_histogram: Vec<usize>,
    pub negative_histogram: Vec<usize>,
    pub validation_loss: f64,
    pub epochs: usize,
    pub best_epoch: usize,
}

impl IterationReport {
    pub fn sae_values(&self) -> Vec<f64> {
        self.bags.iter().map(|b| b.sae).collect()
    }
}

/// Read-only view handed to an observer after each labeling step.
pub struct IterationSnapshot<'a> {
    pub iteration: usize,
    /// Predictions the labels were derived from.
    pub predictions: &'a HashMap<InstanceId, Prediction>,
    pub plans: &'a [SelectionPlan],
    pub store: &'a PseudoLabelStore,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome<M> {
    /// Model with the lowest validation loss over all iterations.
    pub model: M,
    pub best_iteration: usize,
    /// The iteration-0 model, trained on supervised data only.
    pub supervised_model: M,
    pub reports: Vec<IterationReport>,
    pub store: PseudoLabelStore,
    pub validation_ids: Vec<InstanceId>,
}

/// Splits supervised instances into (train, validation) with a seeded shuffle.
pub fn split_validation<'a>(
    supervised: &[&'a Instance],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<&'a Instance>, Vec<&'a Instance>)> {
    if supervised.len() < 2 {
        return Err(Error::Config(
            "need at least two supervised instances to carve a validation set".into(),
        ));
    }
    let mut shuffled = supervised.to_vec();
    shuffled.sort_by_key(|i| i.id);
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((supervised.len() as f64 * fraction).round() as usize).clamp(1, supervised.len() - 1);
    let validation = shuffled.split_off(supervised.len() - n_val);
    Ok((shuffled, validation))
}

fn phase_seed(base: u64, iteration: usize) -> u64 {
    base ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn predict_bags<M: Classifier>(
    model: &M,
    dataset: &Dataset,
) -> Result<HashMap<InstanceId, Prediction>> {
    let mut out = HashMap::new();
    for bag in dataset.bags() {
        for &id in &bag.instance_ids {
            let inst = dataset.instance(id).expect("dataset checked bag membership");
            out.insert(id, model.forward(&inst.features)?);
        }
    }
    Ok(out)
}

fn bag_reports(
    dataset: &Dataset,
    predictions: &HashMap<InstanceId, Prediction>,
    form: SaeForm,
) -> Result<Vec<BagReport>> {
    dataset
        .bags()
        .iter()
        .map(|bag| {
            let pcr = crate::proportions::predicted_ratio(bag, predictions)?;
            let sae = crate::proportions::sae_with(&bag.tcr, &pcr, form)?;
            Ok(BagReport {
                bag_id: bag.id,
                pcr: pcr.values().to_vec(),
                sae,
            })
        })
        .collect()
}

/// Runs the full loop with no observer.
pub fn run_pipeline<M: Classifier>(
    initial: M,
    dataset: &Dataset,
    supervised: &[&Instance],
    config: &PipelineConfig,
    train: &TrainConfig,
) -> Result<PipelineOutcome<M>> {
    run_pipeline_observed(initial, dataset, supervised, config, train, |_| {})
}

/// Runs the full loop; `observer` sees the predictions, plans and label store
/// of every labeling step.
pub fn run_pipeline_observed<M, F>(
    initial: M,
    dataset: &Dataset,
    supervised: &[&Instance],
    config: &PipelineConfig,
    train: &TrainConfig,
    mut observer: F,
) -> Result<PipelineOutcome<M>>
where
    M: Classifier,
    F: FnMut(&IterationSnapshot<'_>),
{
    config.validate()?;
    train.validate()?;
    let classes = dataset.classes();
    if initial.classes() != classes || initial.input_dim() != dataset.dim() {
        return Err(Error::Config(format!(
            "model shape {}x{} does not match dataset {}x{}",
            initial.input_dim(),
            initial.classes(),
            dataset.dim(),
            classes
        )));
    }
    if dataset.bags().is_empty() {
        return Err(Error::Config("no bags to pseudo-label".into()));
    }
    let covered: BTreeSet<usize> = supervised.iter().filter_map(|i| i.true_class).collect();
    if covered.len() < 2 {
        return Err(Error::Config(format!(
            "supervised set covers {} class(es); at least 2 required",
            covered.len()
        )));
    }

    let (train_set, validation) =
        split_validation(supervised, config.validation_fraction, train.seed)?;
    let supervised_items: Vec<LabeledBatchItem> = train_set
        .iter()
        .map(|inst| {
            let class = inst.true_class.ok_or_else(|| {
                Error::Validation(format!("supervised instance {} has no class", inst.id))
            })?;
            Ok(LabeledBatchItem::positive(inst.id, ItemKind::Supervised, class, classes)
                .with_weight(config.supervised_weight))
        })
        .collect::<Result<_>>()?;

    let phase_config = |iteration: usize| TrainConfig {
        seed: phase_seed(train.seed, iteration),
        freeze_hidden: train.freeze_hidden
            || (iteration > 0 && config.freeze_hidden_in_pseudo_phases),
        ..train.clone()
    };

    let first = train_phase(
        initial.clone(),
        &supervised_items,
        dataset,
        &validation,
        &phase_config(0),
    )
    .map_err(|e| e.in_iteration(0))?;
    let supervised_model = first.model.clone();
    let mut predictions = predict_bags(&first.model, dataset)?;
    let mut store = PseudoLabelStore::new(classes);
    let mut reports = vec![IterationReport {
        iteration: 0,
        bags: bag_reports(dataset, &predictions, config.sae_form)?,
        positive_labels: 0,
        positives_new: 0,
        negative_labels: 0,
        negatives_added: 0,
        rejected: 0,
        positive_histogram: vec![0; classes],
        negative_histogram: vec![0; classes],
        validation_loss: first.best_validation_loss,
        epochs: first.curve.len(),
        best_epoch: first.best_epoch,
    }];

    let mut best = (first.best_validation_loss, 0, first.model.clone());
    let mut current = first.model;
    let mut stale = 0;
    let params = config.selection_params();

    for iteration in 1..=config.max_iterations {
        let mut plans = Vec::with_capacity(dataset.bags().len());
        for bag in dataset.bags() {
            plans.push(build_selection_plan_excluding(
                bag,
                &predictions,
                &params,
                |id| config.negative_mode == NegativeMode::Multi && store.is_exhausted(id),
            )?);
        }
        store.begin_iteration(config.negative_mode);
        let mut summary = UpdateSummary::default();
        for plan in &plans {
            summary.merge(store.update(plan, iteration, config.negative_mode));
        }
        debug_assert!(store.is_consistent());
        observer(&IterationSnapshot {
            iteration,
            predictions: &predictions,
            plans: &plans,
            store: &store,
        });

        let mut items = supervised_items.clone();
        items.extend(store.items(config.negative_mode, config.pseudo_weight));
        let start = if config.warm_start {
            current
        } else {
            initial.clone()
        };
        let outcome = train_phase(start, &items, dataset, &validation, &phase_config(iteration))
            .map_err(|e| e.in_iteration(iteration))?;
        current = outcome.model;
        predictions = predict_bags(&current, dataset)?;
        reports.push(IterationReport {
            iteration,
            bags: bag_reports(dataset, &predictions, config.sae_form)?,
            positive_labels: store.positive_count(),
            positives_new: summary.positives_new,
            negative_labels: store.negative_count(),
            negatives_added: summary.negatives_added,
            rejected: summary.positives_rejected + summary.negatives_rejected,
            positive_histogram: store.positive_histogram(),
            negative_histogram: store.negative_histogram(),
            validation_loss: outcome.best_validation_loss,
            epochs: outcome.curve.len(),
            best_epoch: outcome.best_epoch,
        });

        if outcome.best_validation_loss < best.0 {
            best = (outcome.best_validation_loss, iteration, current.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.plateau {
                break;
            }
        }
    }

    let (_, best_iteration, model) = best;
    Ok(PipelineOutcome {
        model,
        best_iteration,
        supervised_model,
        reports,
        store,
        validation_ids: validation.iter().map(|i| i.id).collect(),
    })
}
