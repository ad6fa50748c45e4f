//! Model checkpoints: `"NMU1"`, little-endian `u32` layer count, per layer
//! `u32` input and output widths, then every layer's weight (row-major)
//! followed by its bias as little-endian `f32`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::Reader;

use super::model::{Layer, Model};

pub const MODEL_MAGIC: [u8; 4] = *b"NMU1";

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * model.layers().len() + 4 * model.parameter_count());
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        out.extend_from_slice(&(layer.inputs as u32).to_le_bytes());
        out.extend_from_slice(&(layer.outputs as u32).to_le_bytes());
    }
    for p in model.params() {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes);
    r.magic(MODEL_MAGIC)?;
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::InvalidModel("checkpoint has no layers".into()));
    }
    let mut dims = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        dims.push((r.u32()? as usize, r.u32()? as usize));
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for (inputs, outputs) in dims {
        let weight = r.f32_vec(inputs.checked_mul(outputs).ok_or_else(|| {
            Error::InvalidModel("layer dimensions overflow".into())
        })?)?;
        let bias = r.f32_vec(outputs)?;
        layers.push(Layer {
            inputs,
            outputs,
            weight,
            bias,
        });
    }
    r.finish()?;
    Model::from_layers(layers)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    decode_model(&fs::read(path)?)
}
