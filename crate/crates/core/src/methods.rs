//! Unlearning algorithms: the retrain oracle, hybrid-instance fine-tuning,
//! and the Amnesiac, BadTeacher and NegGrad+ baselines.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::builder::{
    build_finetune_dataset, build_unlearning_set, BuildOptions, BuilderVariant, Provenance,
};
use crate::data::{Dataset, Label, LabeledInstance};
use crate::error::{Error, Result};
use crate::mask::MaskConfig;
use crate::nn::{
    backward, epoch_order, softmax_with_temperature, train_with, Architecture, LossKind, Model,
    Optimizer, TrainConfig, TrainObserver,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Retrain,
    Natmu,
    Amnesiac,
    Badteacher,
    Neggrad,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Retrain,
        Method::Natmu,
        Method::Amnesiac,
        Method::Badteacher,
        Method::Neggrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Retrain => "retrain",
            Method::Natmu => "natmu",
            Method::Amnesiac => "amnesiac",
            Method::Badteacher => "badteacher",
            Method::Neggrad => "neggrad",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NatmuParams {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(flatten)]
    pub mask: MaskConfig,
    #[serde(default = "default_variant")]
    pub variant: BuilderVariant,
    #[serde(default)]
    pub shuffle_masks: bool,
}

fn default_n() -> usize {
    4
}

fn default_variant() -> BuilderVariant {
    BuilderVariant::Natmu
}

impl Default for NatmuParams {
    fn default() -> Self {
        Self {
            n: 4,
            mask: MaskConfig::gradual(0.0),
            variant: BuilderVariant::Natmu,
            shuffle_masks: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    #[serde(default)]
    pub natmu: NatmuParams,
    #[serde(default = "one")]
    pub temperature: f32,
    #[serde(default = "one")]
    pub alpha: f32,
    #[serde(default)]
    pub reinit_final_layer: bool,
}

fn one() -> f32 {
    1.0
}

impl Default for MethodParams {
    fn default() -> Self {
        Self {
            natmu: NatmuParams::default(),
            temperature: 1.0,
            alpha: 1.0,
            reinit_final_layer: false,
        }
    }
}

impl MethodParams {
    fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::InvalidConfig("ascent coefficient must be non-negative".into()));
        }
        Ok(())
    }
}

/// Everything an unlearning run needs. `config.seed` is ignored; batch
/// orders and constructions derive from `seed`.
#[derive(Debug, Clone)]
pub struct UnlearnRequest<'a> {
    pub original: &'a Model,
    pub forget: &'a Dataset,
    pub remaining: &'a Dataset,
    pub config: TrainConfig,
    pub params: MethodParams,
    pub seed: u64,
}

impl UnlearnRequest<'_> {
    fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.params.validate()?;
        if self.original.input_dim() != self.remaining.shape.len() {
            return Err(Error::DimensionMismatch {
                expected: self.remaining.shape.len(),
                actual: self.original.input_dim(),
            });
        }
        if self.original.class_count() != self.remaining.classes {
            return Err(Error::InvalidModel(format!(
                "model has {} outputs, data has {} classes",
                self.original.class_count(),
                self.remaining.classes
            )));
        }
        let forget: HashSet<usize> = self.forget.instances.iter().map(|i| i.index).collect();
        if let Some(inst) = self.remaining.instances.iter().find(|i| forget.contains(&i.index)) {
            return Err(Error::InvalidConfig(format!(
                "instance {} is in both the forgetting and remaining sets",
                inst.index
            )));
        }
        Ok(())
    }

    fn train_config(&self, stage: &str, loss: LossKind) -> TrainConfig {
        TrainConfig {
            seed: seed::derive_seed(self.seed, stage),
            loss,
            ..self.config.clone()
        }
    }

    fn start_model(&self) -> Model {
        let mut model = self.original.clone();
        if self.params.reinit_final_layer {
            model.reinit_final_layer(seed::derive_seed(self.seed, "reinit-final-layer"));
        }
        model
    }

    /// The forgetting set in ascending index order, so results do not depend
    /// on how the caller ordered it.
    fn canonical_forget(&self) -> Dataset {
        let mut instances = self.forget.instances.clone();
        instances.sort_by_key(|i| i.index);
        self.forget.with_instances(instances)
    }
}

#[derive(Debug, Clone)]
pub struct UnlearnOutcome {
    pub model: Model,
    /// The relabeled forgetting part of the fine-tuning data (empty for
    /// retrain and NegGrad+).
    pub unlearning_set: Vec<LabeledInstance>,
    pub provenance: Vec<Provenance>,
    pub audit: Option<IsolationAudit>,
}

/// Counts training-batch appearances of forbidden instance indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IsolationAudit {
    forbidden: HashSet<usize>,
    pub batches: usize,
    pub instances_seen: usize,
    pub violations: Vec<usize>,
}

impl IsolationAudit {
    pub fn new(forbidden: impl IntoIterator<Item = usize>) -> Self {
        Self {
            forbidden: forbidden.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl TrainObserver for IsolationAudit {
    fn on_batch(&mut self, _epoch: usize, batch: &[&LabeledInstance]) {
        self.batches += 1;
        self.instances_seen += batch.len();
        self.violations.extend(
            batch
                .iter()
                .map(|i| i.index)
                .filter(|i| self.forbidden.contains(i)),
        );
    }
}

/// Fresh model trained on `remaining` only.
pub fn retrain(
    remaining: &Dataset,
    arch: &Architecture,
    config: &TrainConfig,
    init_seed: u64,
    observer: &mut dyn TrainObserver,
) -> Result<Model> {
    if remaining.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let model = Model::new(arch, init_seed)?;
    train_with(&model, &remaining.instances, config, observer)
}

pub fn unlearn_retrain(req: &UnlearnRequest<'_>, observer: &mut dyn TrainObserver) -> Result<UnlearnOutcome> {
    req.validate()?;
    let mut audit = IsolationAudit::new(req.forget.instances.iter().map(|i| i.index));
    let config = req.train_config("retrain-order", LossKind::Hard);
    let model = retrain(
        req.remaining,
        &req.original.architecture(),
        &config,
        seed::derive_seed(req.seed, "retrain-init"),
        &mut (&mut audit, observer),
    )?;
    if let Some(&index) = audit.violations.first() {
        return Err(Error::IsolationViolation(index));
    }
    Ok(UnlearnOutcome {
        model,
        unlearning_set: Vec::new(),
        provenance: Vec::new(),
        audit: Some(audit),
    })
}

pub fn unlearn_natmu(req: &UnlearnRequest<'_>, observer: &mut dyn TrainObserver) -> Result<UnlearnOutcome> {
    req.validate()?;
    let forget = req.canonical_forget();
    let natmu = &req.params.natmu;
    let masks = natmu.mask.build(forget.shape.height, forget.shape.width)?;
    let options = BuildOptions {
        n: natmu.n,
        variant: natmu.variant,
        seed: seed::derive_seed(req.seed, "natmu-build"),
        shuffle_masks: natmu.shuffle_masks,
    };
    let built = build_unlearning_set(&forget, req.remaining, req.original, &masks, &options)?;
    let finetune = build_finetune_dataset(req.remaining, &built);
    let model = fine_tune(req, &finetune.dataset.instances, "natmu-order", LossKind::Hard, observer)?;
    Ok(UnlearnOutcome {
        model,
        unlearning_set: finetune.unlearning_instances().to_vec(),
        provenance: built.into_iter().map(|b| b.provenance).collect(),
        audit: None,
    })
}

/// Forgetting instances with a uniformly drawn wrong label, fixed per run.
pub fn random_relabel(forget: &Dataset, seed: u64) -> Result<Vec<LabeledInstance>> {
    let classes = forget.classes;
    if classes < 2 {
        return Err(Error::InvalidConfig("relabeling needs at least 2 classes".into()));
    }
    let mut rng = seed::rng(seed);
    Ok(forget
        .instances
        .iter()
        .map(|inst| {
            let original = inst.label.class();
            let mut draw = rng.random_range(0..classes - 1);
            if draw >= original {
                draw += 1;
            }
            LabeledInstance {
                label: Label::Hard(draw),
                ..inst.clone()
            }
        })
        .collect())
}

pub fn unlearn_amnesiac(req: &UnlearnRequest<'_>, observer: &mut dyn TrainObserver) -> Result<UnlearnOutcome> {
    req.validate()?;
    let forget = req.canonical_forget();
    let relabeled = random_relabel(&forget, seed::derive_seed(req.seed, "amnesiac-labels"))?;
    let mut instances = req.remaining.instances.clone();
    instances.extend(relabeled.iter().cloned());
    let model = fine_tune(req, &instances, "amnesiac-order", LossKind::Hard, observer)?;
    Ok(UnlearnOutcome {
        model,
        unlearning_set: relabeled,
        provenance: Vec::new(),
        audit: None,
    })
}

/// `softmax(teacher(x) / T)` as a soft label for every instance.
pub fn teacher_targets(
    teacher: &Model,
    instances: &[LabeledInstance],
    temperature: f32,
) -> Result<Vec<LabeledInstance>> {
    instances
        .iter()
        .map(|inst| {
            let logits = teacher.logits(inst.pixels())?;
            Ok(LabeledInstance {
                label: Label::Soft(softmax_with_temperature(&logits, temperature)),
                ..inst.clone()
            })
        })
        .collect()
}

/// The randomly initialized teacher used for forgetting samples.
pub fn incompetent_teacher(req: &UnlearnRequest<'_>) -> Result<Model> {
    Model::new(
        &req.original.architecture(),
        seed::derive_seed(req.seed, "badteacher-init"),
    )
}

pub fn unlearn_badteacher(req: &UnlearnRequest<'_>, observer: &mut dyn TrainObserver) -> Result<UnlearnOutcome> {
    req.validate()?;
    let forget = req.canonical_forget();
    let temperature = req.params.temperature;
    let bad = incompetent_teacher(req)?;
    // both teachers are frozen, so the targets are computed once
    let forget_targets = teacher_targets(&bad, &forget.instances, temperature)?;
    let mut instances = teacher_targets(req.original, &req.remaining.instances, temperature)?;
    instances.extend(forget_targets.iter().cloned());
    let model = fine_tune(
        req,
        &instances,
        "badteacher-order",
        LossKind::Soft { temperature },
        observer,
    )?;
    Ok(UnlearnOutcome {
        model,
        unlearning_set: forget_targets,
        provenance: Vec::new(),
        audit: None,
    })
}

/// Descends on remaining batches while ascending on forgetting batches:
/// each step minimizes `loss(D_r batch) - alpha * loss(D_f batch)`.
pub fn unlearn_neggrad_plus(
    req: &UnlearnRequest<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<UnlearnOutcome> {
    req.validate()?;
    let forget = req.canonical_forget();
    let alpha = req.params.alpha;
    let remaining = &req.remaining.instances;
    if remaining.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = req.start_model();
    let config = &req.config;
    if config.epochs == 0 {
        return Ok(UnlearnOutcome {
            model,
            unlearning_set: Vec::new(),
            provenance: Vec::new(),
            audit: None,
        });
    }
    let order_seed = seed::derive_seed(req.seed, "neggrad-order");
    let forget_seed = seed::derive_seed(req.seed, "neggrad-forget-order");
    let schedule = config.schedule(remaining.len());
    let mut optimizer = Optimizer::new(config.optimizer, config.weight_decay, &model);
    let forget_batch = config.batch_size.min(forget.len());
    let mut step = 0;

    for epoch in 1..=config.epochs {
        let order = epoch_order(remaining.len(), order_seed, epoch);
        let forget_order = epoch_order(forget.len(), forget_seed, epoch);
        let mut cursor = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut batch: Vec<&LabeledInstance> = chunk.iter().map(|&i| &remaining[i]).collect();
            let inputs: Vec<&[f32]> = batch.iter().map(|i| i.pixels()).collect();
            let labels: Vec<Label> = batch.iter().map(|i| i.label.clone()).collect();
            let descent = backward(&model, &inputs, &labels, LossKind::Hard)?;
            let mut grads = descent.grads;
            let mut loss = descent.loss;

            if alpha > 0.0 && forget_batch > 0 {
                let picks: Vec<&LabeledInstance> = (0..forget_batch)
                    .map(|k| &forget.instances[forget_order[(cursor + k) % forget.len()]])
                    .collect();
                cursor = (cursor + forget_batch) % forget.len();
                let inputs: Vec<&[f32]> = picks.iter().map(|i| i.pixels()).collect();
                let labels: Vec<Label> = picks.iter().map(|i| i.label.clone()).collect();
                let ascent = backward(&model, &inputs, &labels, LossKind::Hard)?;
                observer.on_forget_loss(step, ascent.loss);
                grads.add_scaled(&ascent.grads, -alpha);
                loss -= alpha * ascent.loss;
                batch.extend(picks);
            }
            observer.on_batch(epoch, &batch);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            optimizer.step(&mut model, &grads, schedule.lr_at(step));
            if !model.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
            observer.on_step(step, loss);
            step += 1;
        }
        observer.on_epoch_end(epoch, &model)?;
    }
    Ok(UnlearnOutcome {
        model,
        unlearning_set: Vec::new(),
        provenance: Vec::new(),
        audit: None,
    })
}

fn fine_tune(
    req: &UnlearnRequest<'_>,
    instances: &[LabeledInstance],
    stage: &str,
    loss: LossKind,
    observer: &mut dyn TrainObserver,
) -> Result<Model> {
    let config = req.train_config(stage, loss);
    train_with(&req.start_model(), instances, &config, observer)
}

pub fn unlearn(
    method: Method,
    req: &UnlearnRequest<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<UnlearnOutcome> {
    match method {
        Method::Retrain => unlearn_retrain(req, observer),
        Method::Natmu => unlearn_natmu(req, observer),
        Method::Amnesiac => unlearn_amnesiac(req, observer),
        Method::Badteacher => unlearn_badteacher(req, observer),
        Method::Neggrad => unlearn_neggrad_plus(req, observer),
    }
}
