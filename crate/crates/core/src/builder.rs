//! Construction of the fine-tuning set: for every forgetting sample, pick
//! remaining instances from its most likely other classes, blend them into
//! the sample through the weighting masks, and relabel each hybrid with the
//! remaining instance's class.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageSample, Label, LabeledInstance};
use crate::error::{Error, Result};
use crate::mask::{MaskSet, WeightingMask};
use crate::nn::Model;
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuilderVariant {
    /// Masked blend of forgetting and remaining samples.
    Natmu,
    /// The untouched forgetting sample under each reassigned label.
    MultiLabel,
    /// The masked forgetting sample over a zero background.
    SegmentationOnly,
}

impl BuilderVariant {
    pub fn name(self) -> &'static str {
        match self {
            BuilderVariant::Natmu => "natmu",
            BuilderVariant::MultiLabel => "multi_label",
            BuilderVariant::SegmentationOnly => "segmentation_only",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub forget_index: usize,
    /// Training-set index of the blended remaining instance, if one was used.
    pub remaining_index: Option<usize>,
    pub category: usize,
    pub mask_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlearningInstance {
    pub sample: ImageSample,
    pub label: usize,
    pub original_label: usize,
    pub provenance: Provenance,
}

impl UnlearningInstance {
    pub fn to_labeled(&self) -> LabeledInstance {
        LabeledInstance::new(
            self.sample.clone(),
            Label::Hard(self.label),
            self.provenance.forget_index,
        )
    }
}

/// `x_f * m + x_r * (1 - m)` per pixel, with the mask broadcast over channels.
pub fn inject(x_f: &ImageSample, x_r: &ImageSample, mask: &WeightingMask) -> Result<ImageSample> {
    if x_f.shape != x_r.shape {
        return Err(Error::DimensionMismatch {
            expected: x_f.shape.len(),
            actual: x_r.shape.len(),
        });
    }
    let shape = x_f.shape;
    if mask.height() != shape.height || mask.width() != shape.width {
        return Err(Error::InvalidMask(format!(
            "{}x{} mask for a {}x{} image",
            mask.height(),
            mask.width(),
            shape.height,
            shape.width
        )));
    }
    let channels = shape.channels;
    let weights = mask.values();
    let pixels = x_f
        .pixels
        .iter()
        .zip(&x_r.pixels)
        .enumerate()
        .map(|(p, (&f, &r))| {
            let m = weights[p / channels];
            // clamp to the segment between the two inputs against rounding
            (f * m + r * (1.0 - m)).clamp(f.min(r), f.max(r))
        })
        .collect();
    Ok(ImageSample { pixels, shape })
}

/// Positions of each class's instances in the remaining set.
#[derive(Debug, Clone)]
pub struct ClassIndex {
    by_class: Vec<Vec<usize>>,
}

impl ClassIndex {
    pub fn new(remaining: &Dataset) -> Self {
        let mut by_class = vec![Vec::new(); remaining.classes];
        for (pos, inst) in remaining.instances.iter().enumerate() {
            by_class[inst.label.class()].push(pos);
        }
        Self { by_class }
    }

    pub fn has(&self, class: usize) -> bool {
        self.by_class.get(class).is_some_and(|v| !v.is_empty())
    }

    pub fn members(&self, class: usize) -> &[usize] {
        self.by_class.get(class).map_or(&[], |v| v.as_slice())
    }
}

/// The `n` highest-logit classes other than `label` that `available`
/// accepts, by descending logit with ties to the lower class index.
pub fn top_categories(
    logits: &[f32],
    label: usize,
    n: usize,
    forget_index: usize,
    available: impl Fn(usize) -> bool,
) -> Result<Vec<usize>> {
    let others = logits.len().saturating_sub(1);
    if n > others {
        return Err(Error::TooManyCategories {
            requested: n,
            available: others,
        });
    }
    let mut order: Vec<usize> = (0..logits.len()).filter(|&c| c != label).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let chosen: Vec<usize> = order.into_iter().filter(|&c| available(c)).take(n).collect();
    if chosen.len() < n {
        return Err(Error::CategoriesExhausted {
            forget_index,
            requested: n,
            found: chosen.len(),
        });
    }
    Ok(chosen)
}

fn select_with_index<'a>(
    model: &Model,
    forget: &LabeledInstance,
    remaining: &'a Dataset,
    index: &ClassIndex,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<&'a LabeledInstance>> {
    let logits = model.logits(forget.pixels())?;
    let categories = top_categories(&logits, forget.label.class(), n, forget.index, |c| {
        index.has(c)
    })?;
    Ok(categories
        .into_iter()
        .map(|c| {
            let members = index.members(c);
            &remaining.instances[members[rng.random_range(0..members.len())]]
        })
        .collect())
}

/// One remaining instance from each of the `n` most likely other classes
/// of `x_f` under `model`, drawn uniformly within the class.
pub fn select_remaining(
    model: &Model,
    forget: &LabeledInstance,
    remaining: &Dataset,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<LabeledInstance>> {
    let index = ClassIndex::new(remaining);
    Ok(select_with_index(model, forget, remaining, &index, n, rng)?
        .into_iter()
        .cloned()
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub n: usize,
    pub variant: BuilderVariant,
    pub seed: u64,
    /// Randomize which mask goes with which category.
    #[serde(default)]
    pub shuffle_masks: bool,
}

impl BuildOptions {
    pub fn natmu(n: usize, seed: u64) -> Self {
        Self {
            n,
            variant: BuilderVariant::Natmu,
            seed,
            shuffle_masks: false,
        }
    }
}

/// `n` unlearning instances per forgetting instance, in forget order.
///
/// Each forgetting instance draws from its own random stream keyed by its
/// training-set index, so the output does not depend on the order of `D_f`.
pub fn build_unlearning_set(
    forget: &Dataset,
    remaining: &Dataset,
    model: &Model,
    masks: &MaskSet,
    options: &BuildOptions,
) -> Result<Vec<UnlearningInstance>> {
    let index = ClassIndex::new(remaining);
    let zeros = ImageSample::zeros(forget.shape);
    let per_sample: Vec<Vec<UnlearningInstance>> = forget
        .instances
        .par_iter()
        .map(|f| {
            let mut rng = seed::rng(seed::derive_indexed(options.seed, "build", f.index as u64));
            let picks = select_with_index(model, f, remaining, &index, options.n, &mut rng)?;
            let assignment = masks.assignment(options.n, &mut rng, options.shuffle_masks);
            picks
                .into_iter()
                .zip(assignment)
                .map(|(r, j)| {
                    let category = r.label.class();
                    let (sample, remaining_index, mask_index) = match options.variant {
                        BuilderVariant::Natmu => {
                            (inject(&f.sample, &r.sample, masks.get(j))?, Some(r.index), Some(j))
                        }
                        BuilderVariant::MultiLabel => (f.sample.clone(), None, None),
                        BuilderVariant::SegmentationOnly => {
                            (inject(&f.sample, &zeros, masks.get(j))?, None, Some(j))
                        }
                    };
                    Ok(UnlearningInstance {
                        sample,
                        label: category,
                        original_label: f.label.class(),
                        provenance: Provenance {
                            forget_index: f.index,
                            remaining_index,
                            category,
                            mask_index,
                        },
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

/// `D^r` followed by the unlearning instances.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneDataset {
    pub dataset: Dataset,
    /// Instances at positions `>= remaining_len` are unlearning instances.
    pub remaining_len: usize,
}

impl FinetuneDataset {
    pub fn len(&self) -> usize {
        self.dataset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dataset.is_empty()
    }

    pub fn is_unlearning(&self, position: usize) -> bool {
        position >= self.remaining_len
    }

    pub fn unlearning_instances(&self) -> &[LabeledInstance] {
        &self.dataset.instances[self.remaining_len..]
    }
}

pub fn build_finetune_dataset(
    remaining: &Dataset,
    unlearning: &[UnlearningInstance],
) -> FinetuneDataset {
    let mut instances = remaining.instances.clone();
    instances.extend(unlearning.iter().map(UnlearningInstance::to_labeled));
    FinetuneDataset {
        dataset: remaining.with_instances(instances),
        remaining_len: remaining.len(),
    }
}
