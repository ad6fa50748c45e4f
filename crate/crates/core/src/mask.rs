//! Weighting masks that decide, per pixel, how much of the forgetting
//! sample survives in a hybrid. A mask is an `H x W` matrix broadcast over
//! channels.

use std::fmt::Write as _;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskFamily {
    Gradual,
    Constant,
    Cutmix,
}

impl MaskFamily {
    pub fn name(self) -> &'static str {
        match self {
            MaskFamily::Gradual => "gradual",
            MaskFamily::Constant => "constant",
            MaskFamily::Cutmix => "cutmix",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightingMask {
    height: usize,
    width: usize,
    values: Vec<f32>,
    family: MaskFamily,
}

impl WeightingMask {
    pub fn new(height: usize, width: usize, values: Vec<f32>, family: MaskFamily) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::InvalidMask(format!(
                "{} values for a {height}x{width} mask",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidMask(format!("value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            values,
            family,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32, family: MaskFamily) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], family)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn family(&self) -> MaskFamily {
        self.family
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Element at zero-based `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    /// Column `i` with the one-based indexing of the closed form.
    pub fn column(&self, i: usize) -> Vec<f32> {
        (0..self.height).map(|r| self.at(r, i - 1)).collect()
    }

    /// `1 - m`, elementwise.
    pub fn complement(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| 1.0 - v).collect(),
            ..self.clone()
        }
    }

    /// Counter-clockwise quarter turn; an `H x W` mask becomes `W x H`.
    pub fn rotate90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut values = Vec::with_capacity(h * w);
        for r in 0..w {
            for c in 0..h {
                values.push(self.at(c, w - 1 - r));
            }
        }
        Self {
            height: w,
            width: h,
            values,
            family: self.family,
        }
    }

    /// `clip_[0,1](delta + m)`.
    pub fn scale(&self, delta: f32) -> Self {
        Self {
            values: self
                .values
                .iter()
                .map(|v| (delta + v).clamp(0.0, 1.0))
                .collect(),
            ..self.clone()
        }
    }

    /// Row-major CSV, six decimal places.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.width) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v:.6}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }
}

/// The column-ramp mask `m1`: every column is constant, edges are 0 and the
/// two centre columns are 1.
///
/// Column `i` (one-based) takes `2(i-1)/(W-2)` for `i <= floor(W/2)` and
/// `2(W-i)/(W-2)` above. For odd `W` the centre column evaluates above 1
/// and is clipped to 1.
pub fn gradual_base(height: usize, width: usize) -> Result<WeightingMask> {
    if width < 3 {
        return Err(Error::InvalidMask(format!("gradual masks need W >= 3, got {width}")));
    }
    if height == 0 {
        return Err(Error::InvalidMask("mask height must be positive".into()));
    }
    let denom = (width - 2) as f32;
    let half = width / 2;
    let columns: Vec<f32> = (1..=width)
        .map(|i| {
            let num = if i <= half { 2 * (i - 1) } else { 2 * (width - i) };
            (num as f32 / denom).min(1.0)
        })
        .collect();
    let values = (0..height).flat_map(|_| columns.iter().copied()).collect();
    WeightingMask::new(height, width, values, MaskFamily::Gradual)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Vec<WeightingMask>,
}

impl MaskSet {
    pub fn new(masks: Vec<WeightingMask>) -> Result<Self> {
        let first = masks
            .first()
            .ok_or_else(|| Error::InvalidMask("empty mask set".into()))?;
        if masks
            .iter()
            .any(|m| m.height != first.height || m.width != first.width)
        {
            return Err(Error::InvalidMask("masks in a set must share H x W".into()));
        }
        Ok(Self { masks })
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[WeightingMask] {
        &self.masks
    }

    pub fn get(&self, j: usize) -> &WeightingMask {
        &self.masks[j]
    }

    pub fn height(&self) -> usize {
        self.masks[0].height
    }

    pub fn width(&self) -> usize {
        self.masks[0].width
    }

    /// Mask indices for the `n` hybrids of one forgetting sample. With `n`
    /// equal to the set size, mask `j` goes with the `j`-th category. Fewer
    /// draw a random subset; more repeat the set cyclically. `shuffle`
    /// permutes the pairing.
    pub fn assignment(&self, n: usize, rng: &mut Rng, shuffle: bool) -> Vec<usize> {
        let len = self.masks.len();
        let mut picks: Vec<usize> = if n < len {
            index::sample(rng, len, n).into_vec()
        } else {
            (0..n).map(|j| j % len).collect()
        };
        if shuffle {
            picks.shuffle(rng);
        }
        picks
    }
}

/// `[m1, 1 - m1, rot(m1), rot(1 - m1)]`, each scaled by `delta`.
///
/// For non-square images the rotated pair is built from a `W x H` base so
/// that every mask is `H x W`.
pub fn four_masks(height: usize, width: usize, delta: f32) -> Result<MaskSet> {
    if height < 3 || width < 3 {
        return Err(Error::InvalidMask(format!(
            "gradual mask sets need H, W >= 3, got {height}x{width}"
        )));
    }
    let m1 = gradual_base(height, width)?;
    let m2 = m1.complement();
    let turned = gradual_base(width, height)?;
    let m3 = turned.rotate90();
    let m4 = turned.complement().rotate90();
    MaskSet::new(vec![
        m1.scale(delta),
        m2.scale(delta),
        m3.scale(delta),
        m4.scale(delta),
    ])
}

/// Four identical masks of `clip(0.5 + delta)`.
pub fn constant_masks(height: usize, width: usize, delta: f32) -> Result<MaskSet> {
    let m = WeightingMask::filled(height, width, 0.5, MaskFamily::Constant)?.scale(delta);
    MaskSet::new(vec![m.clone(), m.clone(), m.clone(), m])
}

/// Mask `j` is 0 inside an `edge x edge` patch at corner `j` (top-left,
/// top-right, bottom-left, bottom-right) and 1 elsewhere, so the remaining
/// sample fills the patch.
pub fn cutmix_corner_masks(height: usize, width: usize, edge: usize) -> Result<MaskSet> {
    if edge > height.min(width) {
        return Err(Error::InvalidMask(format!(
            "patch edge {edge} exceeds the {height}x{width} image"
        )));
    }
    let corners = [(false, false), (false, true), (true, false), (true, true)];
    let masks = corners
        .iter()
        .map(|&(bottom, right)| {
            let rows = if bottom { height - edge..height } else { 0..edge };
            let cols = if right { width - edge..width } else { 0..edge };
            let values = (0..height)
                .flat_map(|r| {
                    let rows = rows.clone();
                    let cols = cols.clone();
                    (0..width).map(move |c| {
                        if rows.contains(&r) && cols.contains(&c) {
                            0.0
                        } else {
                            1.0
                        }
                    })
                })
                .collect();
            WeightingMask::new(height, width, values, MaskFamily::Cutmix)
        })
        .collect::<Result<Vec<_>>>()?;
    MaskSet::new(masks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskConfig {
    #[serde(default = "default_family")]
    pub family: MaskFamily,
    #[serde(default)]
    pub delta: f32,
    /// Patch edge for the cutmix family.
    #[serde(default)]
    pub edge: Option<usize>,
}

fn default_family() -> MaskFamily {
    MaskFamily::Gradual
}

impl MaskConfig {
    pub fn gradual(delta: f32) -> Self {
        Self {
            family: MaskFamily::Gradual,
            delta,
            edge: None,
        }
    }

    pub fn build(&self, height: usize, width: usize) -> Result<MaskSet> {
        match self.family {
            MaskFamily::Gradual => four_masks(height, width, self.delta),
            MaskFamily::Constant => constant_masks(height, width, self.delta),
            MaskFamily::Cutmix => {
                let edge = self.edge.unwrap_or(height.min(width) / 2);
                cutmix_corner_masks(height, width, edge)
            }
        }
    }
}
