use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Adam with the variance rectification term; plain momentum SGD while
    /// the second-moment estimate is still unreliable.
    Radam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFiniteGradient;

/// First-order optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, len: usize) -> Self {
        let moments = if kind == OptimizerKind::Sgd { 0 } else { len };
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NonFiniteGradient> {
        assert_eq!(params.len(), grads.len(), "gradient length mismatch");
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NonFiniteGradient);
        }
        self.t += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam | OptimizerKind::Radam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let bias1 = 1.0 - b1.powi(self.t);
                let bias2 = 1.0 - b2.powi(self.t);
                let rect = match self.kind {
                    OptimizerKind::Radam => rectification(b2, self.t),
                    _ => Some(1.0),
                };
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
                    self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
                    let m_hat = self.m[i] / bias1;
                    params[i] -= match rect {
                        Some(r) => {
                            let v_hat = self.v[i] / bias2;
                            lr * r * m_hat / (v_hat.sqrt() + self.epsilon)
                        }
                        None => lr * m_hat,
                    };
                }
            }
        }
        Ok(())
    }
}

/// RAdam variance rectification factor, `None` while the approximated SMA
/// length is at most 4.
fn rectification(beta2: f64, t: i32) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powi(t);
    let rho = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
    (rho > 4.0).then(|| {
        ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt()
    })
}
