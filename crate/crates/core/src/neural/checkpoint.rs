use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{LayerTensors, ModelParams, ARCHITECTURE};
use crate::error::{Error, Result};
use crate::raster::{decode_f32le, split_container, write_container, DTYPE_F32LE};

pub const MODEL_MAGIC: &[u8; 8] = b"HSRMODL1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    tensors: Vec<TensorEntry>,
}

fn manifest() -> Manifest {
    let tensors = ARCHITECTURE
        .iter()
        .enumerate()
        .flat_map(|(i, s)| {
            [
                TensorEntry { name: format!("layer{}.weight", i + 1), shape: vec![s.out_ch, s.in_ch, s.kernel, s.kernel] },
                TensorEntry { name: format!("layer{}.bias", i + 1), shape: vec![s.out_ch] },
            ]
        })
        .collect();
    Manifest { dtype: DTYPE_F32LE.into(), tensors }
}

pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    let samples = params.tensors().into_iter().flat_map(|t| t.iter().copied());
    write_container(&mut out, MODEL_MAGIC, &manifest(), samples).expect("writing to memory");
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    let (header, payload) = split_container(bytes, MODEL_MAGIC)?;
    let found: Manifest =
        serde_json::from_slice(header).map_err(|e| Error::Format(format!("invalid model manifest: {e}")))?;
    let want = manifest();
    let same = found.dtype == want.dtype
        && found.tensors.len() == want.tensors.len()
        && found.tensors.iter().zip(&want.tensors).all(|(a, b)| a.name == b.name && a.shape == b.shape);
    if !same {
        return Err(Error::Format("model manifest does not match the network architecture".into()));
    }
    let expected = ModelParams::zeros().len() * 4;
    if payload.len() != expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    let mut values = decode_f32le(payload).into_iter();
    let layers = ARCHITECTURE.map(|s| {
        let weight = Array2::from_shape_vec((s.out_ch, s.fan_in()), values.by_ref().take(s.out_ch * s.fan_in()).collect())
            .expect("length checked");
        let bias = Array1::from_iter(values.by_ref().take(s.out_ch));
        LayerTensors { weight, bias }
    });
    let params = ModelParams { layers };
    if !params.is_finite() {
        return Err(Error::Data("model contains non-finite parameters".into()));
    }
    Ok(params)
}

pub fn save_model(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    fs::write(path, encode_model(params))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_model(&fs::read(path)?)
}
