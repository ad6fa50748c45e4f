//! Class-conditional blob images: each class owns a template made of a few
//! Gaussian bumps, and samples are the template plus pixel noise clipped to
//! the unit box.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

use super::types::{Dataset, ImageSample, Label, LabeledInstance, Shape, Split};

pub const DEFAULT_SPREAD: f32 = 0.35;
const BUMPS_PER_CLASS: usize = 3;
const BACKGROUND: f32 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobParams {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default = "default_spread")]
    pub spread: f32,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_spread() -> f32 {
    DEFAULT_SPREAD
}

impl BlobParams {
    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, self.channels)
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("blob datasets need at least 2 classes".into()));
        }
        if self.shape().is_empty() {
            return Err(Error::InvalidConfig("image dimensions must be positive".into()));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::InvalidConfig("spread must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mean image of every class.
pub fn blob_templates(params: &BlobParams) -> Result<Vec<Vec<f32>>> {
    params.validate()?;
    let shape = params.shape();
    let mut rng = seed::rng(seed::derive_seed(params.seed, "blob-templates"));
    let scale = shape.height.max(shape.width) as f32;
    let templates = (0..params.classes)
        .map(|_| {
            let bumps: Vec<(f32, f32, f32, Vec<f32>)> = (0..BUMPS_PER_CLASS)
                .map(|_| {
                    let row = rng.random_range(0.0..shape.height as f32);
                    let col = rng.random_range(0.0..shape.width as f32);
                    let width = rng.random_range(0.12..0.3) * scale;
                    let amps = (0..shape.channels)
                        .map(|_| rng.random_range(0.5..0.9))
                        .collect();
                    (row, col, width, amps)
                })
                .collect();
            let mut pixels = Vec::with_capacity(shape.len());
            for r in 0..shape.height {
                for c in 0..shape.width {
                    for ch in 0..shape.channels {
                        let v = bumps.iter().fold(BACKGROUND, |acc, (br, bc, bw, amps)| {
                            let d2 = (r as f32 - br).powi(2) + (c as f32 - bc).powi(2);
                            acc + amps[ch] * (-d2 / (2.0 * bw * bw)).exp()
                        });
                        pixels.push(v.clamp(0.0, 1.0));
                    }
                }
            }
            pixels
        })
        .collect();
    Ok(templates)
}

fn draw(
    params: &BlobParams,
    templates: &[Vec<f32>],
    per_class: usize,
    stream: &str,
    split: Split,
) -> Result<Dataset> {
    let shape = params.shape();
    let mut rng = seed::rng(seed::derive_seed(params.seed, stream));
    let noise = Normal::new(0.0f32, params.spread.max(f32::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let n = params.classes * per_class;
    let mut instances = Vec::with_capacity(n);
    for index in 0..n {
        let class = index % params.classes;
        let pixels = templates[class]
            .iter()
            .map(|&t| {
                if params.spread == 0.0 {
                    t
                } else {
                    (t + noise.sample(&mut rng)).clamp(0.0, 1.0)
                }
            })
            .collect();
        instances.push(LabeledInstance::new(
            ImageSample { pixels, shape },
            Label::Hard(class),
            index,
        ));
    }
    Dataset::new(instances, shape, params.classes, split)
}

/// Training split of a blob dataset. Classes are interleaved: instance `i`
/// belongs to class `i mod K`.
pub fn synth_blobs(params: &BlobParams) -> Result<Dataset> {
    let templates = blob_templates(params)?;
    draw(params, &templates, params.per_class, "blob-train", Split::Train)
}

/// Training and test splits sharing the same class templates.
pub fn synth_blobs_split(params: &BlobParams, test_per_class: usize) -> Result<(Dataset, Dataset)> {
    let templates = blob_templates(params)?;
    let train = draw(params, &templates, params.per_class, "blob-train", Split::Train)?;
    let test = draw(params, &templates, test_per_class, "blob-test", Split::Test)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(spread: f32) -> BlobParams {
        BlobParams {
            classes: 2,
            per_class: 100,
            height: 6,
            width: 5,
            channels: 2,
            spread,
            seed: 4,
        }
    }

    #[test]
    fn zero_spread_reproduces_templates() {
        let p = params(0.0);
        let templates = blob_templates(&p).unwrap();
        let ds = synth_blobs(&p).unwrap();
        for inst in &ds.instances {
            assert_eq!(inst.pixels(), templates[inst.label.class()].as_slice());
        }
    }

    #[test]
    fn sizes_and_determinism() {
        let p = params(0.3);
        let ds = synth_blobs(&p).unwrap();
        assert_eq!(ds.len(), 200);
        assert_eq!(ds.class_counts(), vec![100, 100]);
        assert_eq!(ds, synth_blobs(&p).unwrap());
        assert!(ds.instances.iter().all(|i| i.pixels().iter().all(|v| (0.0..=1.0).contains(v))));
        let (train, test) = synth_blobs_split(&p, 7).unwrap();
        assert_eq!(train, ds);
        assert_eq!(test.len(), 14);
        assert_eq!(test.split, Split::Test);
    }

    #[test]
    fn needs_two_classes() {
        let mut p = params(0.1);
        p.classes = 1;
        assert!(synth_blobs(&p).is_err());
    }
}
