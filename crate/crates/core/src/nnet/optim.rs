use serde::{Deserialize, Serialize};

use super::Model;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimiser state, one slot per parameter tensor.
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, model: &Model) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().map(|p| vec![0.0; p.len()]).collect();
        Self {
            kind,
            second: zeros.clone(),
            first: zeros,
            steps: 0,
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Vec<f64>], lr: f64) {
        self.steps += 1;
        let t = self.steps;
        let kind = self.kind;
        for (((p, g), m), v) in model
            .params_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            match kind {
                OptimizerKind::Sgd { momentum } => {
                    for ((pv, &gv), mv) in p.iter_mut().zip(g).zip(m.iter_mut()) {
                        *mv = momentum * *mv + gv;
                        *pv -= lr * *mv;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((pv, &gv), mv), vv) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
