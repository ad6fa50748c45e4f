use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label, LabeledInstance, TrainingTrace};
use crate::error::{Error, Result};
use crate::seed;

use super::backprop::backward;
use super::loss::LossKind;
use super::model::Model;
use super::optim::{Optimizer, OptimizerKind};
use super::schedule::CosineSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(rename = "lr")]
    pub base_lr: f32,
    #[serde(default)]
    pub weight_decay: f32,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub loss: LossKind,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::AdamW
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, base_lr: f32) -> Self {
        Self {
            epochs,
            batch_size,
            base_lr,
            weight_decay: 0.0,
            optimizer: OptimizerKind::AdamW,
            seed: 0,
            loss: LossKind::Hard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.base_lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }

    pub fn schedule(&self, n: usize) -> CosineSchedule {
        CosineSchedule::new(self.base_lr, self.epochs * self.steps_per_epoch(n))
    }
}

/// Hooks into the training loop. All methods default to no-ops.
pub trait TrainObserver {
    /// Called with the instances of every batch before the step is taken.
    fn on_batch(&mut self, _epoch: usize, _batch: &[&LabeledInstance]) {}

    fn on_step(&mut self, _step: usize, _loss: f32) {}

    /// Loss on the ascent batch of a step, for methods that ascend.
    fn on_forget_loss(&mut self, _step: usize, _loss: f32) {}

    /// Called after each epoch (1-based) with the current parameters.
    fn on_epoch_end(&mut self, _epoch: usize, _model: &Model) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Chains two observers.
impl<A: TrainObserver, B: TrainObserver> TrainObserver for (A, B) {
    fn on_batch(&mut self, epoch: usize, batch: &[&LabeledInstance]) {
        self.0.on_batch(epoch, batch);
        self.1.on_batch(epoch, batch);
    }

    fn on_step(&mut self, step: usize, loss: f32) {
        self.0.on_step(step, loss);
        self.1.on_step(step, loss);
    }

    fn on_forget_loss(&mut self, step: usize, loss: f32) {
        self.0.on_forget_loss(step, loss);
        self.1.on_forget_loss(step, loss);
    }

    fn on_epoch_end(&mut self, epoch: usize, model: &Model) -> Result<()> {
        self.0.on_epoch_end(epoch, model)?;
        self.1.on_epoch_end(epoch, model)
    }
}

impl<T: TrainObserver + ?Sized> TrainObserver for &mut T {
    fn on_batch(&mut self, epoch: usize, batch: &[&LabeledInstance]) {
        (**self).on_batch(epoch, batch);
    }

    fn on_step(&mut self, step: usize, loss: f32) {
        (**self).on_step(step, loss);
    }

    fn on_forget_loss(&mut self, step: usize, loss: f32) {
        (**self).on_forget_loss(step, loss);
    }

    fn on_epoch_end(&mut self, epoch: usize, model: &Model) -> Result<()> {
        (**self).on_epoch_end(epoch, model)
    }
}

/// Visiting order for one epoch, a pure function of `(n, seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(seed::derive_indexed(seed, "epoch-order", epoch as u64));
    order.shuffle(&mut rng);
    order
}

/// Mini-batch training with a fresh optimizer and a cosine schedule.
pub fn train_with(
    model: &Model,
    instances: &[LabeledInstance],
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Model> {
    config.validate()?;
    if instances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = model.clone();
    if config.epochs == 0 {
        return Ok(model);
    }
    let schedule = config.schedule(instances.len());
    let mut optimizer = Optimizer::new(config.optimizer, config.weight_decay, &model);
    let mut step = 0;
    let mut inputs: Vec<&[f32]> = Vec::with_capacity(config.batch_size);
    let mut labels: Vec<Label> = Vec::with_capacity(config.batch_size);
    let mut batch: Vec<&LabeledInstance> = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        let order = epoch_order(instances.len(), config.seed, epoch);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &instances[i]));
            observer.on_batch(epoch, &batch);
            inputs.clear();
            inputs.extend(batch.iter().map(|inst| inst.pixels()));
            labels.clear();
            labels.extend(batch.iter().map(|inst| inst.label.clone()));

            let out = backward(&model, &inputs, &labels, config.loss)?;
            if !out.loss.is_finite() || !out.grads.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            optimizer.step(&mut model, &out.grads, schedule.lr_at(step));
            if !model.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            observer.on_step(step, out.loss);
            step += 1;
        }
        observer.on_epoch_end(epoch, &model)?;
    }
    Ok(model)
}

/// Records, per instance, how many epochs ended with a correct prediction.
pub struct CorrectnessTracer<'a> {
    instances: &'a [LabeledInstance],
    trace: TrainingTrace,
}

impl<'a> CorrectnessTracer<'a> {
    pub fn new(instances: &'a [LabeledInstance]) -> Self {
        Self {
            instances,
            trace: TrainingTrace {
                correct_epochs: vec![0; instances.len()],
                epochs: 0,
            },
        }
    }

    pub fn into_trace(self) -> TrainingTrace {
        self.trace
    }
}

impl TrainObserver for CorrectnessTracer<'_> {
    fn on_epoch_end(&mut self, _epoch: usize, model: &Model) -> Result<()> {
        self.trace.epochs += 1;
        for (count, inst) in self.trace.correct_epochs.iter_mut().zip(self.instances) {
            if model.predict(inst.pixels())? == inst.label.class() {
                *count += 1;
            }
        }
        Ok(())
    }
}

/// Train on a dataset, optionally tracing per-instance correctness.
pub fn train(
    model: &Model,
    dataset: &Dataset,
    config: &TrainConfig,
    trace_correctness: bool,
) -> Result<(Model, Option<TrainingTrace>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if trace_correctness {
        let mut tracer = CorrectnessTracer::new(&dataset.instances);
        let trained = train_with(model, &dataset.instances, config, &mut tracer)?;
        Ok((trained, Some(tracer.into_trace())))
    } else {
        Ok((train_with(model, &dataset.instances, config, &mut ())?, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, BlobParams};
    use crate::nn::Architecture;

    fn blobs() -> Dataset {
        synth_blobs(&BlobParams {
            classes: 2,
            per_class: 40,
            height: 4,
            width: 4,
            channels: 1,
            spread: 0.1,
            seed: 3,
        })
        .unwrap()
    }

    fn accuracy(model: &Model, data: &Dataset) -> f64 {
        let correct = data
            .instances
            .iter()
            .filter(|i| model.predict(i.pixels()).unwrap() == i.label.class())
            .count();
        correct as f64 / data.len() as f64
    }

    #[test]
    fn zero_epochs_is_identity() {
        let data = blobs();
        let model = Model::new(&Architecture::new(16, vec![8], 2), 1).unwrap();
        let (out, _) = train(&model, &data, &TrainConfig::new(0, 8, 0.01), false).unwrap();
        assert_eq!(out, model);
    }

    #[test]
    fn separable_blobs_are_learned() {
        let data = blobs();
        let model = Model::new(&Architecture::new(16, vec![8], 2), 1).unwrap();
        let (out, trace) = train(&model, &data, &TrainConfig::new(50, 8, 0.01), true).unwrap();
        assert!(accuracy(&out, &data) >= 0.99);
        let trace = trace.unwrap();
        assert_eq!(trace.epochs, 50);
        assert!(trace.correct_epochs.iter().all(|&c| c <= 50));
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = blobs();
        let model = Model::new(&Architecture::new(16, vec![8], 2), 1).unwrap();
        let mut config = TrainConfig::new(3, 7, 0.01);
        config.seed = 11;
        let (a, _) = train(&model, &data, &config, false).unwrap();
        let (b, _) = train(&model, &data, &config, false).unwrap();
        assert_eq!(a, b);
        config.seed = 12;
        let (c, _) = train(&model, &data, &config, false).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let data = blobs().with_instances(Vec::new());
        let model = Model::new(&Architecture::new(16, vec![8], 2), 1).unwrap();
        assert!(matches!(
            train(&model, &data, &TrainConfig::new(1, 8, 0.01), false),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let data = blobs();
        let model = Model::new(&Architecture::new(16, vec![8], 2), 1).unwrap();
        assert!(train(&model, &data, &TrainConfig::new(1, 0, 0.01), false).is_err());
        assert!(train(&model, &data, &TrainConfig::new(1, 4, 0.0), false).is_err());
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        let mut order = epoch_order(100, 4, 2);
        assert_eq!(order, epoch_order(100, 4, 2));
        assert_ne!(order, epoch_order(100, 4, 3));
        order.sort_unstable();
        assert_eq!(order, (0..100).collect::<Vec<_>>());
    }
}
