use crate::data::Label;
use crate::error::{Error, Result};

use super::loss::{loss_and_grad, LossKind};
use super::model::{dot, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Gradients mirroring a [`Model`]'s parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrad>,
}

impl GradientSet {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn matches(&self, model: &Model) -> bool {
        self.layers.len() == model.layers().len()
            && self
                .layers
                .iter()
                .zip(model.layers())
                .all(|(g, l)| g.weight.len() == l.weight.len() && g.bias.len() == l.bias.len())
    }

    /// Slices in the same order as [`Model::params`].
    pub fn slices(&self) -> impl Iterator<Item = &[f32]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f32]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn scale(&mut self, factor: f32) {
        for s in self.slices_mut() {
            for v in s {
                *v *= factor;
            }
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, alpha: f32) {
        for (dst, src) in self.slices_mut().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn norm(&self) -> f32 {
        self.slices()
            .flat_map(|s| s.iter())
            .map(|v| (*v as f64) * (*v as f64))
            .sum::<f64>()
            .sqrt() as f32
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct Backward {
    /// Mean loss over the batch.
    pub loss: f32,
    /// Gradient of the mean loss.
    pub grads: GradientSet,
}

/// Mean loss over `inputs` and its gradient with respect to every parameter.
pub fn backward(
    model: &Model,
    inputs: &[&[f32]],
    labels: &[Label],
    kind: LossKind,
) -> Result<Backward> {
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            actual: labels.len(),
        });
    }
    let mut grads = GradientSet::zeros_like(model);
    if inputs.is_empty() {
        return Ok(Backward { loss: 0.0, grads });
    }
    let layers = model.layers();
    let last = layers.len() - 1;
    // pre-activations of every layer for the current sample
    let mut pre: Vec<Vec<f32>> = vec![Vec::new(); layers.len()];
    let mut acts: Vec<Vec<f32>> = vec![Vec::new(); layers.len()];
    let mut total = 0.0f64;

    for (x, label) in inputs.iter().zip(labels) {
        if x.len() != model.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: model.input_dim(),
                actual: x.len(),
            });
        }
        for (l, layer) in layers.iter().enumerate() {
            let input: &[f32] = if l == 0 { x } else { &acts[l - 1] };
            let out: Vec<f32> = layer
                .bias
                .iter()
                .enumerate()
                .map(|(o, b)| b + dot(layer.row(o), input))
                .collect();
            if l < last {
                acts[l] = out.iter().map(|v| v.max(0.0)).collect();
            }
            pre[l] = out;
        }

        let (loss, mut delta) = loss_and_grad(&pre[last], label, kind)?;
        total += loss as f64;

        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let input: &[f32] = if l == 0 { x } else { &acts[l - 1] };
            let g = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weight[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, a) in row.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0f32; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in prev.iter_mut().zip(layer.row(o)) {
                        *p += d * w;
                    }
                }
                for (p, z) in prev.iter_mut().zip(&pre[l - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    let n = inputs.len() as f32;
    grads.scale(1.0 / n);
    Ok(Backward {
        loss: (total / inputs.len() as f64) as f32,
        grads,
    })
}
