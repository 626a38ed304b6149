//! Versioned binary layout for a single model.
//!
//! ```text
//! "FMOE"            4 bytes magic
//! version           u32 LE (currently 1)
//! layer count L     u32 LE (number of weight matrices)
//! activation        u32 LE (0 = relu, 1 = tanh)
//! dims              (L + 1) × u32 LE, input width first
//! weights           per layer, row-major out×in, f64 LE
//! biases            per layer, f64 LE
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::mlp::{Activation, MlpModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FMOE";
pub const MODEL_FORMAT_VERSION: u32 = 1;

const MAX_WIDTH: u32 = 1 << 20;
const MAX_PARAMS: usize = 1 << 28;

pub fn write_model<W: Write>(model: &MlpModel, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(model.num_layers() as u32).to_le_bytes())?;
    w.write_all(&model.activation().code().to_le_bytes())?;
    for &d in model.layer_dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for m in model.weights() {
        for v in m.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for b in model.biases() {
        for v in b.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated parameter block: {e}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Checks the 4-byte magic and returns the version that follows it.
pub(crate) fn read_magic_version<R: Read>(r: &mut R) -> Result<u32> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("missing FMOE header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected \"FMOE\"")));
    }
    read_u32(r)
}

pub fn read_model<R: Read>(r: &mut R) -> Result<MlpModel> {
    let version = read_magic_version(r)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {version} (this build reads {MODEL_FORMAT_VERSION})"
        )));
    }
    let layers = read_u32(r)? as usize;
    if layers == 0 || layers > 64 {
        return Err(Error::Format(format!("implausible layer count {layers}")));
    }
    let activation = Activation::from_code(read_u32(r)?)
        .ok_or_else(|| Error::Format("unknown activation code".into()))?;
    let mut dims = Vec::with_capacity(layers + 1);
    for _ in 0..=layers {
        let d = read_u32(r)?;
        if d == 0 || d > MAX_WIDTH {
            return Err(Error::Format(format!("implausible layer width {d}")));
        }
        dims.push(d as usize);
    }
    let total: usize = dims.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
    if total > MAX_PARAMS {
        return Err(Error::Format(format!("{total} parameters exceeds limit")));
    }
    let mut weights = Vec::with_capacity(layers);
    for p in dims.windows(2) {
        let data = read_f64s(r, p[0] * p[1])?;
        weights.push(Array2::from_shape_vec((p[1], p[0]), data).expect("sized above"));
    }
    let mut biases = Vec::with_capacity(layers);
    for &d in &dims[1..] {
        biases.push(Array1::from_vec(read_f64s(r, d)?));
    }
    MlpModel::from_parts(weights, biases, activation)
}

pub fn model_to_bytes(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + model.parameter_count() * 8);
    write_model(model, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn model_from_bytes(mut bytes: &[u8]) -> Result<MlpModel> {
    let model = read_model(&mut bytes)?;
    if !bytes.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len())));
    }
    Ok(model)
}
