use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerKind};
use super::Classifier;
use crate::domain::{Dataset, Instance, ItemKind, LabeledBatchItem};
use crate::error::{Error, Result};
use crate::losses::{loss_and_gradient_into, positive_loss, softmax, LossKind, NegativeForm};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Duplicate supervised/positive items of minority classes up to the
    /// largest class's count.
    pub oversample_positive: bool,
    /// Train only the output layer.
    pub freeze_hidden: bool,
    pub negative_form: NegativeForm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 18,
            max_epochs: 1000,
            patience: 10,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            oversample_positive: true,
            freeze_hidden: false,
            negative_form: NegativeForm::Complementary,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Parameters from the best validation epoch.
    pub model: M,
    pub curve: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Improved,
    Stale,
    Stop,
}

/// Plateau detector: stops once `patience` consecutive observations fail to
/// beat the best one.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Observation {
        if loss < self.best || self.best_epoch.is_none() {
            self.best = loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            Observation::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                Observation::Stop
            } else {
                Observation::Stale
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best_epoch.map(|e| (e, self.best))
    }
}

fn loss_kind(item: &LabeledBatchItem) -> LossKind {
    match item.kind {
        ItemKind::Supervised | ItemKind::PositivePseudo => LossKind::Positive,
        ItemKind::NegativePseudo if item.multi_negative => LossKind::MultiNegative,
        ItemKind::NegativePseudo => LossKind::Negative,
    }
}

/// Mean weighted loss over `examples` and its gradient with respect to the
/// model parameters.
pub fn objective<M: Classifier>(
    model: &M,
    examples: &[(&[f64], &LabeledBatchItem)],
    form: NegativeForm,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.parameters().len()];
    let loss = accumulate(model, examples.iter().copied(), examples.len(), form, &mut grad)?;
    Ok((loss, grad))
}

fn accumulate<'a, M: Classifier>(
    model: &M,
    examples: impl Iterator<Item = (&'a [f64], &'a LabeledBatchItem)>,
    count: usize,
    form: NegativeForm,
    grad: &mut [f64],
) -> Result<f64> {
    let c = model.classes();
    let mut logits = vec![0.0; c];
    let mut probs = vec![0.0; c];
    let mut dlogits = vec![0.0; c];
    let scale = 1.0 / count as f64;
    let mut total = 0.0;
    for (x, item) in examples {
        model.logits_into(x, &mut logits);
        let loss = loss_and_gradient_into(
            loss_kind(item),
            &logits,
            &item.label_vector,
            form,
            &mut probs,
            &mut dlogits,
        )?;
        total += item.weight * loss;
        model.backward(x, &dlogits, scale * item.weight, grad);
    }
    Ok(total * scale)
}

fn validation_loss<M: Classifier>(model: &M, validation: &[(&[f64], usize)]) -> f64 {
    let mut target = vec![0.0; model.classes()];
    let mut logits = vec![0.0; model.classes()];
    let total: f64 = validation
        .iter()
        .map(|(x, class)| {
            model.logits_into(x, &mut logits);
            target[*class] = 1.0;
            let l = positive_loss(&softmax(&logits), &target);
            target[*class] = 0.0;
            l
        })
        .sum();
    total / validation.len() as f64
}

/// Builds the per-epoch sample list, duplicating supervised and positive
/// items of smaller classes until every represented class matches the
/// largest one.
pub(crate) fn oversampled_indices(items: &[LabeledBatchItem], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        if let Some(c) = item.target_class() {
            by_class.entry(c).or_default().push(i);
        }
    }
    let largest = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut indices: Vec<usize> = (0..items.len()).collect();
    for members in by_class.values() {
        let deficit = largest - members.len();
        if deficit == 0 {
            continue;
        }
        let mut pool = members.clone();
        pool.shuffle(rng);
        indices.extend(pool.iter().cycle().take(deficit).copied());
    }
    indices
}

/// Trains `model` on `items` with mini-batch gradient descent and early
/// stopping on the positive loss of `validation`.
///
/// Features are resolved through `dataset`. The returned model carries the
/// parameters of the best validation epoch. The run is reproducible given
/// `config.seed`.
pub fn train_phase<M: Classifier>(
    model: M,
    items: &[LabeledBatchItem],
    dataset: &Dataset,
    validation: &[&Instance],
    config: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    if items.is_empty() {
        return Err(Error::Config("no training items".into()));
    }
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let classes = model.classes();
    let mut examples = Vec::with_capacity(items.len());
    for item in items {
        item.validate(classes)?;
        let inst = dataset.instance(item.instance_id).ok_or_else(|| {
            Error::Validation(format!("training item for unknown instance {}", item.instance_id))
        })?;
        if inst.features.len() != model.input_dim() {
            return Err(Error::Dimension {
                expected: model.input_dim(),
                found: inst.features.len(),
            });
        }
        examples.push((inst.features.as_slice(), item));
    }
    let validation: Vec<(&[f64], usize)> = validation
        .iter()
        .map(|inst| match inst.true_class {
            Some(c) if c < classes && inst.features.len() == model.input_dim() => {
                Ok((inst.features.as_slice(), c))
            }
            _ => Err(Error::Validation(format!(
                "validation instance {} lacks a usable label",
                inst.id
            ))),
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order = if config.oversample_positive {
        oversampled_indices(items, &mut rng)
    } else {
        (0..items.len()).collect()
    };

    let trainable = if config.freeze_hidden {
        model.output_layer()
    } else {
        0..model.parameters().len()
    };
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, trainable.len());
    let mut model = model;
    let mut best_model = model.clone();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut curve = Vec::new();
    let mut grad = vec![0.0; model.parameters().len()];

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = accumulate(
                &model,
                batch.iter().map(|&i| examples[i]),
                batch.len(),
                config.negative_form,
                &mut grad,
            )?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    iteration: None,
                });
            }
            epoch_loss += loss * batch.len() as f64;
            optimizer
                .step(&mut model.parameters_mut()[trainable.clone()], &grad[trainable.clone()])
                .map_err(|_| Error::TrainingDiverged {
                    epoch,
                    iteration: None,
                })?;
        }
        let val = validation_loss(&model, &validation);
        if !val.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                iteration: None,
            });
        }
        curve.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / order.len() as f64,
            validation_loss: val,
        });
        match stopper.observe(epoch, val) {
            Observation::Improved => best_model = model.clone(),
            Observation::Stale => {}
            Observation::Stop => break,
        }
    }

    let (best_epoch, best_validation_loss) = stopper.best().expect("at least one epoch ran");
    Ok(TrainOutcome {
        model: best_model,
        curve,
        best_epoch,
        best_validation_loss,
    })
}
