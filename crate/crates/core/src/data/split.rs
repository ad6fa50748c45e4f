use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

use super::types::{Dataset, Label, LabeledInstance, TrainingTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForgetMode {
    /// A uniformly random `ratio` of the training set.
    Random { ratio: f64 },
    /// Every instance of `class`. With `superclasses`, labels are remapped
    /// through the table afterwards (sub-class unlearning).
    Class {
        class: usize,
        #[serde(default)]
        superclasses: Option<Vec<usize>>,
    },
    /// The `ratio` of instances correctly classified in the fewest
    /// pretraining epochs.
    Difficult { ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingSpec {
    #[serde(flatten)]
    pub mode: ForgetMode,
    #[serde(default)]
    pub seed: u64,
}

impl ForgettingSpec {
    pub fn random(ratio: f64, seed: u64) -> Self {
        Self {
            mode: ForgetMode::Random { ratio },
            seed,
        }
    }

    pub fn class(class: usize) -> Self {
        Self {
            mode: ForgetMode::Class {
                class,
                superclasses: None,
            },
            seed: 0,
        }
    }

    pub fn difficult(ratio: f64) -> Self {
        Self {
            mode: ForgetMode::Difficult { ratio },
            seed: 0,
        }
    }

    pub fn is_class_wise(&self) -> bool {
        matches!(self.mode, ForgetMode::Class { .. })
    }

    pub fn needs_trace(&self) -> bool {
        matches!(self.mode, ForgetMode::Difficult { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match &self.mode {
            ForgetMode::Random { ratio } | ForgetMode::Difficult { ratio } => {
                if !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "forgetting ratio must lie in (0, 1), got {ratio}"
                    )));
                }
            }
            ForgetMode::Class {
                class,
                superclasses: Some(table),
            } if *class >= table.len() => {
                return Err(Error::InvalidConfig(format!(
                    "class {class} missing from the superclass table"
                )));
            }
            ForgetMode::Class { .. } => {}
        }
        Ok(())
    }

    /// The dataset with labels mapped through the superclass table, if any.
    pub fn relabel(&self, dataset: &Dataset) -> Result<Dataset> {
        self.validate()?;
        self.check_table(dataset.classes)?;
        let instances = dataset.instances.iter().map(|inst| self.relabel_instance(inst)).collect();
        Dataset::new(instances, dataset.shape, self.class_count(dataset.classes), dataset.split)
    }

    fn check_table(&self, classes: usize) -> Result<()> {
        match &self.mode {
            ForgetMode::Class {
                superclasses: Some(table),
                ..
            } if table.len() < classes => Err(Error::InvalidConfig(format!(
                "superclass table covers {} of {classes} classes",
                table.len()
            ))),
            _ => Ok(()),
        }
    }

    fn relabel_instance(&self, inst: &LabeledInstance) -> LabeledInstance {
        match &self.mode {
            ForgetMode::Class {
                superclasses: Some(table),
                ..
            } => LabeledInstance {
                label: Label::Hard(table[inst.label.class()]),
                ..inst.clone()
            },
            _ => inst.clone(),
        }
    }

    /// Class count of the relabeled data.
    pub fn class_count(&self, original: usize) -> usize {
        match &self.mode {
            ForgetMode::Class {
                superclasses: Some(table),
                ..
            } => table.iter().max().map_or(0, |m| m + 1),
            _ => original,
        }
    }
}

fn selection_size(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).min(n)
}

/// Partition a dataset into `(D_f, D_r)`. Both keep the original order.
pub fn split_forget(
    dataset: &Dataset,
    spec: &ForgettingSpec,
    trace: Option<&TrainingTrace>,
) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    spec.check_table(dataset.classes)?;
    let n = dataset.len();
    let mut forget = vec![false; n];
    match &spec.mode {
        ForgetMode::Random { ratio } => {
            let mut rng = seed::rng(seed::derive_seed(spec.seed, "forget-random"));
            for i in index::sample(&mut rng, n, selection_size(*ratio, n)) {
                forget[i] = true;
            }
        }
        ForgetMode::Class { class, .. } => {
            let mut any = false;
            for (flag, inst) in forget.iter_mut().zip(&dataset.instances) {
                if inst.label.class() == *class {
                    *flag = true;
                    any = true;
                }
            }
            if !any {
                return Err(Error::EmptyClass(*class));
            }
        }
        ForgetMode::Difficult { ratio } => {
            let trace = trace.ok_or(Error::MissingTrace {
                expected: n,
                actual: 0,
            })?;
            if trace.correct_epochs.len() != n {
                return Err(Error::MissingTrace {
                    expected: n,
                    actual: trace.correct_epochs.len(),
                });
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| (trace.correct_epochs[i], dataset.instances[i].index));
            for &i in &order[..selection_size(*ratio, n)] {
                forget[i] = true;
            }
        }
    }

    let (mut f, mut r) = (Vec::new(), Vec::new());
    for (flag, inst) in forget.iter().zip(&dataset.instances) {
        if *flag {
            f.push(spec.relabel_instance(inst));
        } else {
            r.push(spec.relabel_instance(inst));
        }
    }
    let classes = spec.class_count(dataset.classes);
    let build = |instances| Dataset::new(instances, dataset.shape, classes, dataset.split);
    Ok((build(f)?, build(r)?))
}
