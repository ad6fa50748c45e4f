//! UDS dataset files: `"UDS1"`, little-endian `u32` N, H, W, C, K, then N
//! records of a `u16` label followed by `H*W*C` little-endian `f32` pixels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::Reader;

use super::types::{Dataset, ImageSample, Label, LabeledInstance, Shape, Split};

pub const DATASET_MAGIC: [u8; 4] = *b"UDS1";

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let shape = dataset.shape;
    let mut out = Vec::with_capacity(24 + dataset.len() * (2 + 4 * shape.len()));
    out.extend_from_slice(&DATASET_MAGIC);
    for v in [
        dataset.len(),
        shape.height,
        shape.width,
        shape.channels,
        dataset.classes,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for (i, inst) in dataset.instances.iter().enumerate() {
        let label = inst.label.as_hard().ok_or(Error::SoftLabelNotEncodable(i))?;
        let label = u16::try_from(label).map_err(|_| Error::LabelOutOfRange {
            index: i,
            label,
            classes: u16::MAX as usize + 1,
        })?;
        out.extend_from_slice(&label.to_le_bytes());
        for p in inst.pixels() {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a UDS payload. Instance indices are assigned by record position.
pub fn decode_dataset(bytes: &[u8], split: Split) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let n = r.u32()? as usize;
    let shape = Shape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let classes = r.u32()? as usize;
    let mut instances = Vec::with_capacity(n.min(1 << 20));
    for index in 0..n {
        let label = r.u16()? as usize;
        if label >= classes {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes,
            });
        }
        let pixels = r.f32_vec(shape.len())?;
        if let Some(&value) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::PixelOutOfRange { index, value });
        }
        instances.push(LabeledInstance::new(
            ImageSample { pixels, shape },
            Label::Hard(label),
            index,
        ));
    }
    r.finish()?;
    Dataset::new(instances, shape, classes, split)
}

pub fn save_raw(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(dataset)?)?;
    Ok(())
}

pub fn load_raw(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(n: u32, h: u32, w: u32, c: u32, k: u32) -> Vec<u8> {
        let mut out = b"UDS1".to_vec();
        for v in [n, h, w, c, k] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    #[test]
    fn empty_payload_decodes() {
        let ds = decode_dataset(&header(0, 2, 2, 1, 3), Split::Train).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.classes, 3);
    }

    #[test]
    fn single_sample_round_trips_bit_exact() {
        let shape = Shape::new(2, 2, 1);
        let pixels = vec![0.0, 0.1, 0.7, 1.0];
        let inst = LabeledInstance::new(ImageSample::new(pixels, shape).unwrap(), Label::Hard(1), 0);
        let ds = Dataset::new(vec![inst], shape, 2, Split::Train).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(bytes.len(), 24 + 2 + 16);
        let back = decode_dataset(&bytes, Split::Train).unwrap();
        assert_eq!(back, ds);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_reported_not_panicked() {
        let mut bytes = header(1, 1, 1, 1, 2);
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&0.5f32.to_le_bytes());
        assert!(decode_dataset(&bytes, Split::Train).is_ok());

        let mut bad = bytes.clone();
        bad[3] = b'0';
        assert!(matches!(decode_dataset(&bad, Split::Train), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_dataset(b"UD", Split::Train), Err(Error::BadMagic { .. })));

        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 2], Split::Train),
            Err(Error::Truncated { .. })
        ));

        let mut label = bytes.clone();
        label[24] = 2;
        assert!(matches!(
            decode_dataset(&label, Split::Train),
            Err(Error::LabelOutOfRange { index: 0, label: 2, classes: 2 })
        ));

        let mut pixel = bytes.clone();
        pixel[26..30].copy_from_slice(&1.5f32.to_le_bytes());
        assert!(matches!(decode_dataset(&pixel, Split::Train), Err(Error::PixelOutOfRange { .. })));

        let mut trailing = bytes;
        trailing.push(0);
        assert!(matches!(decode_dataset(&trailing, Split::Train), Err(Error::TrailingBytes(1))));
    }

    #[test]
    fn soft_labels_are_not_encodable() {
        let shape = Shape::new(1, 1, 1);
        let inst = LabeledInstance::new(ImageSample::zeros(shape), Label::Soft(vec![0.5, 0.5]), 0);
        let ds = Dataset::new(vec![inst], shape, 2, Split::Train).unwrap();
        assert!(matches!(encode_dataset(&ds), Err(Error::SoftLabelNotEncodable(0))));
    }
}
