use serde::{Deserialize, Serialize};

use super::backprop::GradientSet;
use super::model::Model;

pub const SGD_MOMENTUM: f32 = 0.9;
const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// SGD with momentum 0.9.
    Sgd,
    /// Adam with decoupled weight decay.
    AdamW,
}

/// Optimizer state for one model. Weight decay is decoupled in both
/// variants and applied after the gradient step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f32,
    step: u32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f32, model: &Model) -> Self {
        let zeros: Vec<Vec<f32>> = model.params().map(|p| vec![0.0; p.len()]).collect();
        let second = match kind {
            OptimizerKind::AdamW => zeros.clone(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Self {
            kind,
            weight_decay,
            step: 0,
            first: zeros,
            second,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    pub fn step(&mut self, model: &mut Model, grads: &GradientSet, lr: f32) {
        debug_assert!(grads.matches(model));
        self.step += 1;
        let decay = lr * self.weight_decay;
        match self.kind {
            OptimizerKind::Sgd => {
                for ((param, grad), buf) in model.params_mut().zip(grads.slices()).zip(&mut self.first)
                {
                    for ((p, g), b) in param.iter_mut().zip(grad).zip(buf.iter_mut()) {
                        *b = SGD_MOMENTUM * *b + g;
                        *p -= lr * *b;
                        *p -= decay * *p;
                    }
                }
            }
            OptimizerKind::AdamW => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((param, grad), m), v) in model
                    .params_mut()
                    .zip(grads.slices())
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((p, g), m), v) in param
                        .iter_mut()
                        .zip(grad)
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        *p -= decay * *p;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, Model};

    fn scalar_model(w: f32) -> Model {
        let mut layer = Layer::zeros(1, 1);
        layer.weight[0] = w;
        Model::from_layers(vec![layer]).unwrap()
    }

    fn grad_of(model: &Model, g: f32) -> GradientSet {
        let mut grads = GradientSet::zeros_like(model);
        grads.layers[0].weight[0] = g;
        grads
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut model = scalar_model(1.0);
        let grads = grad_of(&model, 0.37);
        let mut opt = Optimizer::new(OptimizerKind::AdamW, 0.0, &model);
        opt.step(&mut model, &grads, 0.01);
        assert!((model.layers()[0].weight[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_follows_adaptive_step() {
        let mut model = scalar_model(1.0);
        let grads = grad_of(&model, 0.0);
        let mut opt = Optimizer::new(OptimizerKind::AdamW, 0.5, &model);
        opt.step(&mut model, &grads, 0.1);
        // zero gradient: only the decay acts, w <- w (1 - lr * wd)
        assert!((model.layers()[0].weight[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut model = scalar_model(0.0);
        let grads = grad_of(&model, 1.0);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.0, &model);
        opt.step(&mut model, &grads, 0.1);
        opt.step(&mut model, &grads, 0.1);
        // -0.1 * 1 - 0.1 * (0.9 + 1)
        assert!((model.layers()[0].weight[0] + 0.29).abs() < 1e-6);
        assert_eq!(opt.steps_taken(), 2);
    }
}
