//! Optimizers applied to the privatized gradient. They only ever see the
//! noisy mean, so any of them preserves the privacy guarantee.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Momentum {
        #[serde(default = "default_beta")]
        beta: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}


fn default_beta() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, dim: usize) -> Self {
        let buffers = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Momentum { .. } => (vec![0.0; dim], Vec::new()),
            OptimizerKind::Adam { .. } => (vec![0.0; dim], vec![0.0; dim]),
        };
        Self { kind, first: buffers.0, second: buffers.1, step: 0 }
    }

    /// One update of `params` in place against the descent direction `grad`.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::Dimension { expected: params.len(), got: grad.len() });
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Momentum { beta } => {
                for ((p, g), v) in params.iter_mut().zip(grad).zip(&mut self.first) {
                    *v = beta * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.first).zip(&mut self.second) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

/// Stateless convenience wrapper around a single [`Optimizer::update`].
pub fn optimizer_update(opt: &mut Optimizer, params: &[f64], grad: &[f64], lr: f64) -> Result<Vec<f64>> {
    let mut out = params.to_vec();
    opt.update(&mut out, grad, lr)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 2);
        assert_eq!(optimizer_update(&mut opt, &[1.0, 1.0], &[1.0, 0.0], 0.5).unwrap(), vec![0.5, 1.0]);
        assert!(opt.update(&mut [0.0], &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn zero_momentum_is_sgd() {
        let grads = [[0.3, -1.0], [2.0, 0.5], [-0.7, 0.1]];
        let mut a = Optimizer::new(OptimizerKind::Sgd, 2);
        let mut b = Optimizer::new(OptimizerKind::Momentum { beta: 0.0 }, 2);
        let (mut pa, mut pb) = (vec![1.0, -2.0], vec![1.0, -2.0]);
        for g in &grads {
            a.update(&mut pa, g, 0.1).unwrap();
            b.update(&mut pb, g, 0.1).unwrap();
        }
        assert_eq!(pa, pb);
    }

    #[test]
    fn adam_first_step_is_signed() {
        let kind = OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 };
        let mut opt = Optimizer::new(kind, 3);
        let out = optimizer_update(&mut opt, &[0.0; 3], &[0.2, -5.0, 1e-3], 0.01).unwrap();
        // m̂ = g, v̂ = g², so the step is -η g/(|g| + eps)
        for (o, g) in out.iter().zip([0.2f64, -5.0, 1e-3]) {
            let expected = -0.01 * g / (g.abs() + 1e-8);
            assert!((o - expected).abs() < 1e-15);
            assert!((o + 0.01 * g.signum()).abs() < 1e-7);
        }
    }
}
