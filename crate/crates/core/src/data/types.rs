use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::argmax;

/// Tolerance on `sum(p) = 1` for soft labels.
pub const DISTRIBUTION_TOLERANCE: f32 = 1e-5;

/// Image geometry. Pixels are stored height-major, then width, then
/// channel (`(row * W + col) * C + channel`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub pixels: Vec<f32>,
    pub shape: Shape,
}

impl ImageSample {
    pub fn new(pixels: Vec<f32>, shape: Shape) -> Result<Self> {
        if pixels.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                expected: shape.len(),
                actual: pixels.len(),
            });
        }
        if let Some(&value) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::PixelOutOfRange { index: 0, value });
        }
        Ok(Self { pixels, shape })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            pixels: vec![0.0; shape.len()],
            shape,
        }
    }
}

/// Hard class index or a probability vector over the classes.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Hard(usize),
    Soft(Vec<f32>),
}

impl Label {
    /// Class used when scoring accuracy: the index itself, or the argmax of
    /// the distribution.
    pub fn class(&self) -> usize {
        match self {
            Label::Hard(c) => *c,
            Label::Soft(p) => argmax(p),
        }
    }

    pub fn as_hard(&self) -> Option<usize> {
        match self {
            Label::Hard(c) => Some(*c),
            Label::Soft(_) => None,
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        match self {
            Label::Hard(c) if *c < classes => Ok(()),
            Label::Hard(c) => Err(Error::LabelOutOfRange {
                index: 0,
                label: *c,
                classes,
            }),
            Label::Soft(p) => validate_distribution(p, classes),
        }
    }
}

pub fn validate_distribution(p: &[f32], classes: usize) -> Result<()> {
    if p.len() != classes {
        return Err(Error::InvalidDistribution(format!(
            "length {} for {classes} classes",
            p.len()
        )));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidDistribution("negative or non-finite entry".into()));
    }
    let sum: f32 = p.iter().sum();
    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// A sample-label pair. `index` is the instance's position in the training
/// set it was drawn from; derived instances keep the index of their source.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub sample: ImageSample,
    pub label: Label,
    pub index: usize,
}

impl LabeledInstance {
    pub fn new(sample: ImageSample, label: Label, index: usize) -> Self {
        Self {
            sample,
            label,
            index,
        }
    }

    pub fn pixels(&self) -> &[f32] {
        &self.sample.pixels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<LabeledInstance>,
    pub shape: Shape,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    /// Validates shapes, pixel range and labels.
    pub fn new(
        instances: Vec<LabeledInstance>,
        shape: Shape,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        for (i, inst) in instances.iter().enumerate() {
            if inst.sample.shape != shape {
                return Err(Error::DimensionMismatch {
                    expected: shape.len(),
                    actual: inst.sample.pixels.len(),
                });
            }
            if let Some(&value) = inst.pixels().iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::PixelOutOfRange { index: i, value });
            }
            inst.label.validate(classes).map_err(|e| match e {
                Error::LabelOutOfRange { label, classes, .. } => Error::LabelOutOfRange {
                    index: i,
                    label,
                    classes,
                },
                other => other,
            })?;
        }
        Ok(Self {
            instances,
            shape,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for inst in &self.instances {
            counts[inst.label.class()] += 1;
        }
        counts
    }

    /// A dataset with the same metadata and different instances.
    pub fn with_instances(&self, instances: Vec<LabeledInstance>) -> Self {
        Self {
            instances,
            shape: self.shape,
            classes: self.classes,
            split: self.split,
        }
    }
}

/// Per-instance count of pretraining epochs after which the instance was
/// classified correctly.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub correct_epochs: Vec<u32>,
    pub epochs: u32,
}
