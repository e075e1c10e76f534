//! Classifiers, optimizers and the single-phase trainer.

mod optim;
mod train;

use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Prediction;
use crate::error::{Error, Result};
use crate::losses::softmax_into;

pub use optim::{NonFiniteGradient, Optimizer, OptimizerKind};
pub use train::{
    objective, train_phase, EarlyStopping, EpochRecord, Observation, TrainConfig, TrainOutcome,
};

/// A differentiable map from a feature vector to class logits over a flat
/// parameter vector.
pub trait Classifier: Clone + Send + Sync {
    fn input_dim(&self) -> usize;
    fn classes(&self) -> usize;
    fn parameters(&self) -> &[f64];
    fn parameters_mut(&mut self) -> &mut [f64];
    /// Parameters of the final layer; the only ones trained when the hidden
    /// layers are frozen.
    fn output_layer(&self) -> Range<usize>;
    /// Writes logits for `x` into `out`. Dimensions are assumed checked.
    fn logits_into(&self, x: &[f64], out: &mut [f64]);
    /// Adds `scale * d(logits)/d(params)^T * dlogits` to `grad`.
    fn backward(&self, x: &[f64], dlogits: &[f64], scale: f64, grad: &mut [f64]);

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut out = vec![0.0; self.classes()];
        self.logits_into(x, &mut out);
        Ok(out)
    }

    fn forward(&self, x: &[f64]) -> Result<Prediction> {
        let logits = self.logits(x)?;
        let mut probs = vec![0.0; logits.len()];
        softmax_into(&logits, &mut probs);
        Ok(Prediction::from_probs_unchecked(probs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `h`.
    fn derivative(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub input_dim: usize,
    /// Width of the single hidden layer; `None` for a softmax-linear model.
    pub hidden: Option<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub classes: usize,
}

impl Architecture {
    pub fn linear(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden: None,
            activation: Activation::Tanh,
            classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden: Some(hidden),
            activation,
            classes,
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, c) = (self.input_dim, self.classes);
        match self.hidden {
            None => c * d + c,
            Some(h) => h * d + h + c * h + c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 || self.hidden == Some(0) {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }
}

/// Softmax-linear or one-hidden-layer network.
///
/// Parameter layout, row-major: `[W1 (h x d), b1 (h), W2 (C x h), b2 (C)]`,
/// or `[W (C x d), b (C)]` without a hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: Vec<f64>,
}

impl Network {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            params: vec![0.0; arch.param_count()],
            arch,
        }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(arch);
        let d = arch.input_dim;
        let c = arch.classes;
        let mut fill = |params: &mut [f64], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in params {
                *w = rng.random_range(-limit..limit);
            }
        };
        match arch.hidden {
            None => fill(&mut net.params[..c * d], d, c),
            Some(h) => {
                fill(&mut net.params[..h * d], d, h);
                let w2 = h * d + h;
                fill(&mut net.params[w2..w2 + c * h], h, c);
            }
        }
        net
    }

    pub fn from_parameters(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Dimension {
                expected: arch.param_count(),
                found: params.len(),
            });
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn hidden_into(&self, h: usize, x: &[f64], out: &mut [f64]) {
        let d = self.arch.input_dim;
        let (w1, rest) = self.params.split_at(h * d);
        let b1 = &rest[..h];
        for (j, o) in out.iter_mut().enumerate() {
            let row = &w1[j * d..(j + 1) * d];
            let a = b1[j] + dot(row, x);
            *o = self.arch.activation.apply(a);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dense_into(weights: &[f64], bias: &[f64], input: &[f64], out: &mut [f64]) {
    let n = input.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = bias[k] + dot(&weights[k * n..(k + 1) * n], input);
    }
}

impl Classifier for Network {
    fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    fn classes(&self) -> usize {
        self.arch.classes
    }

    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn output_layer(&self) -> Range<usize> {
        match self.arch.hidden {
            None => 0..self.params.len(),
            Some(h) => h * self.arch.input_dim + h..self.params.len(),
        }
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        let c = self.arch.classes;
        match self.arch.hidden {
            None => {
                let d = self.arch.input_dim;
                dense_into(&self.params[..c * d], &self.params[c * d..], x, out);
            }
            Some(h) => {
                let mut hidden = vec![0.0; h];
                self.hidden_into(h, x, &mut hidden);
                let w2 = self.output_layer().start;
                dense_into(
                    &self.params[w2..w2 + c * h],
                    &self.params[w2 + c * h..],
                    &hidden,
                    out,
                );
            }
        }
    }

    fn backward(&self, x: &[f64], dlogits: &[f64], scale: f64, grad: &mut [f64]) {
        let c = self.arch.classes;
        let d = self.arch.input_dim;
        match self.arch.hidden {
            None => {
                let (gw, gb) = grad.split_at_mut(c * d);
                for k in 0..c {
                    let g = scale * dlogits[k];
                    gb[k] += g;
                    for (w, &xi) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *w += g * xi;
                    }
                }
            }
            Some(h) => {
                let mut hidden = vec![0.0; h];
                self.hidden_into(h, x, &mut hidden);
                let w2_start = h * d + h;
                let w2 = &self.params[w2_start..w2_start + c * h];

                let mut dhidden = vec![0.0; h];
                {
                    let (_, out_grad) = grad.split_at_mut(w2_start);
                    let (gw2, gb2) = out_grad.split_at_mut(c * h);
                    for k in 0..c {
                        let g = scale * dlogits[k];
                        gb2[k] += g;
                        let row = &w2[k * h..(k + 1) * h];
                        for j in 0..h {
                            gw2[k * h + j] += g * hidden[j];
                            dhidden[j] += g * row[j];
                        }
                    }
                }
                let (gw1, rest) = grad.split_at_mut(h * d);
                let gb1 = &mut rest[..h];
                for j in 0..h {
                    let da = dhidden[j] * self.arch.activation.derivative(hidden[j]);
                    if da == 0.0 {
                        continue;
                    }
                    gb1[j] += da;
                    for (w, &xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *w += da * xi;
                    }
                }
            }
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "npl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Self-describing serialized network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub seed: u64,
    pub parameters: Vec<f64>,
}

impl Checkpoint {
    pub fn new(network: &Network, seed: u64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            architecture: network.arch,
            seed,
            parameters: network.params.clone(),
        }
    }

    pub fn into_network(self) -> Result<Network> {
        Network::from_parameters(self.architecture, self.parameters)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!(
                "not a checkpoint (format {:?})",
                ckpt.format
            )));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
