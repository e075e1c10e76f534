//! Reproducible experiment runs: one configuration on one dataset, and the
//! six-configuration ablation grid across source-grouped folds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{kfold_split, Fold};
use crate::domain::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::metrics::{confusion, median, op_pc_miou, ConfusionCounts, Scores};
use crate::model::{Activation, Architecture, Classifier, Network, TrainConfig};
use crate::pipeline::{run_pipeline, IterationReport, NegativeMode, PipelineConfig, PipelineOutcome};
use crate::proportions::PositiveMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer width; absent for a softmax-linear model.
    pub hidden: Option<usize>,
    pub activation: Activation,
    /// Seed for the initial weights.
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: None,
            activation: Activation::Tanh,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, dataset: &Dataset) -> Result<Network> {
        let arch = Architecture {
            input_dim: dataset.dim(),
            hidden: self.hidden,
            activation: self.activation,
            classes: dataset.classes(),
        };
        arch.validate()?;
        Ok(Network::init(arch, self.init_seed))
    }
}

/// Everything needed to train one configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.train.validate()?;
        if self.model.hidden == Some(0) {
            return Err(Error::Config("model.hidden must be positive".into()));
        }
        Ok(())
    }

    /// Sets every seed that influences a run.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.model.init_seed = seed;
        self
    }
}

/// Scores `model` on the labeled members of `instances`.
pub fn evaluate<M: Classifier>(model: &M, instances: &[&Instance]) -> Result<(ConfusionCounts, Scores)> {
    let mut predicted = Vec::with_capacity(instances.len());
    let mut truths = Vec::with_capacity(instances.len());
    for inst in instances {
        if let Some(t) = inst.true_class {
            predicted.push(model.forward(&inst.features)?.predicted_class);
            truths.push(t);
        }
    }
    let counts = confusion(&predicted, &truths, model.classes())?;
    let scores = op_pc_miou(&counts);
    Ok((counts, scores))
}

/// Trains one configuration on all supervised instances of `dataset`.
pub fn run_single(dataset: &Dataset, config: &RunConfig) -> Result<PipelineOutcome<Network>> {
    config.validate()?;
    let model = config.model.build(dataset)?;
    let supervised: Vec<&Instance> = dataset.supervised().collect();
    run_pipeline(model, dataset, &supervised, &config.pipeline, &config.train)
}

/// The six positive/negative combinations of the ablation table, in row order.
pub const ABLATION_GRID: [(PositiveMode, NegativeMode); 6] = [
    (PositiveMode::FixedThreshold, NegativeMode::Off),
    (PositiveMode::Adaptive, NegativeMode::Off),
    (PositiveMode::Off, NegativeMode::Single),
    (PositiveMode::Off, NegativeMode::Multi),
    (PositiveMode::Adaptive, NegativeMode::Single),
    (PositiveMode::Adaptive, NegativeMode::Multi),
];

/// Pipeline configurations for the ablation grid on top of `base`.
pub fn ablation_configs(base: &PipelineConfig) -> Vec<PipelineConfig> {
    ABLATION_GRID
        .iter()
        .map(|&(p, n)| PipelineConfig {
            positive_mode: p,
            negative_mode: n,
            ..base.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSettings {
    pub base: RunConfig,
    /// Pipeline configurations to compare, in output order.
    pub configs: Vec<PipelineConfig>,
    pub folds: usize,
    pub fold_seed: u64,
}

impl AblationSettings {
    pub fn new(base: RunConfig, folds: usize) -> Self {
        let configs = ablation_configs(&base.pipeline);
        let fold_seed = base.train.seed;
        Self {
            base,
            configs,
            folds,
            fold_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub config: String,
    pub fold: usize,
    pub scores: Scores,
    pub counts: ConfusionCounts,
    pub best_iteration: usize,
    pub reports: Vec<IterationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub config: String,
    pub scores: Scores,
    /// Mean over folds of the per-iteration median bag SAE.
    pub median_sae: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    /// One entry per configuration, in `AblationSettings::configs` order.
    pub summaries: Vec<ConfigSummary>,
    /// Supervised-only (iteration 0) model, averaged over folds.
    pub supervised: Scores,
    pub supervised_folds: Vec<Scores>,
    /// Ordered by configuration, then fold.
    pub folds: Vec<FoldResult>,
}

impl AblationResult {
    pub fn summary(&self, label: &str) -> Option<&ConfigSummary> {
        self.summaries.iter().find(|s| s.config == label)
    }
}

fn mean_scores(scores: &[Scores]) -> Scores {
    let n = scores.len() as f64;
    Scores {
        op: scores.iter().map(|s| s.op).sum::<f64>() / n,
        pc: scores.iter().map(|s| s.pc).sum::<f64>() / n,
        miou: scores.iter().map(|s| s.miou).sum::<f64>() / n,
    }
}

/// Instances scored for a fold: the held-out labeled sources plus the
/// dataset's evaluation instances.
pub fn fold_eval_set<'a>(dataset: &'a Dataset, fold: &Fold) -> Vec<&'a Instance> {
    fold.test
        .iter()
        .filter_map(|id| dataset.instance(*id))
        .chain(dataset.eval())
        .collect()
}

/// Runs every configuration on every fold. Jobs run on the current rayon
/// pool; results are assembled in configuration-then-fold order, so the
/// output does not depend on scheduling.
pub fn run_ablation(dataset: &Dataset, settings: &AblationSettings) -> Result<AblationResult> {
    settings.base.train.validate()?;
    if settings.configs.is_empty() {
        return Err(Error::Config("no configurations to run".into()));
    }
    for c in &settings.configs {
        c.validate()?;
    }
    let supervised: Vec<&Instance> = dataset.supervised().collect();
    let folds = kfold_split(&supervised, settings.folds, settings.fold_seed)?;

    let jobs: Vec<(usize, usize)> = (0..settings.configs.len())
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();

    type JobOutput = (FoldResult, Scores);
    let outputs: Vec<Result<JobOutput>> = jobs
        .par_iter()
        .map(|&(ci, fi)| {
            let config = &settings.configs[ci];
            let fold = &folds[fi];
            let train: Vec<&Instance> = fold
                .train
                .iter()
                .filter_map(|id| dataset.instance(*id))
                .collect();
            let model = settings.base.model.build(dataset)?;
            let outcome = run_pipeline(model, dataset, &train, config, &settings.base.train)?;
            let eval = fold_eval_set(dataset, fold);
            let (counts, scores) = evaluate(&outcome.model, &eval)?;
            let (_, supervised_scores) = evaluate(&outcome.supervised_model, &eval)?;
            Ok((
                FoldResult {
                    config: config.label(),
                    fold: fold.index,
                    scores,
                    counts,
                    best_iteration: outcome.best_iteration,
                    reports: outcome.reports,
                },
                supervised_scores,
            ))
        })
        .collect();

    let mut fold_results = Vec::with_capacity(outputs.len());
    let mut supervised_folds = Vec::new();
    for (job, out) in jobs.iter().zip(outputs) {
        let (result, supervised_scores) = out?;
        if job.0 == 0 {
            supervised_folds.push(supervised_scores);
        }
        fold_results.push(result);
    }

    let summaries = settings
        .configs
        .iter()
        .enumerate()
        .map(|(ci, config)| {
            let runs = &fold_results[ci * folds.len()..(ci + 1) * folds.len()];
            let scores: Vec<Scores> = runs.iter().map(|r| r.scores).collect();
            let longest = runs.iter().map(|r| r.reports.len()).max().unwrap_or(0);
            let median_sae = (0..longest)
                .map(|it| {
                    let per_fold: Vec<f64> = runs
                        .iter()
                        .filter_map(|r| r.reports.get(it))
                        .map(|rep| median(&rep.sae_values()))
                        .collect();
                    per_fold.iter().sum::<f64>() / per_fold.len() as f64
                })
                .collect();
            ConfigSummary {
                config: config.label(),
                scores: mean_scores(&scores),
                median_sae,
            }
        })
        .collect();

    Ok(AblationResult {
        summaries,
        supervised: mean_scores(&supervised_folds),
        supervised_folds,
        folds: fold_results,
    })
}
