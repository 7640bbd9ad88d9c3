//! Model checkpoints: an "RFNN" binary for the parameter blobs plus a JSON
//! architecture descriptor written alongside.
//!
//! Binary layout (little-endian):
//!   magic "RFNN" | version u16 | n_tensors u32
//!   per tensor: ndim u32, dims u32...
//!   per tensor: raw f32 data

use super::{ModelSpec, NnError, Params, Result, Tensor};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"RFNN";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub meta: serde_json::Value,
    #[serde(skip)]
    pub params: Params,
}

fn descriptor_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    std::path::PathBuf::from(p)
}

pub fn save_checkpoint(
    path: &Path,
    spec: &ModelSpec,
    params: &Params,
    meta: &serde_json::Value,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u16::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(params.tensors.len() as u32)?;
    for t in &params.tensors {
        w.write_u32::<LittleEndian>(t.shape.len() as u32)?;
        for &d in &t.shape {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
    }
    for t in &params.tensors {
        for &v in &t.data {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;

    let descriptor = serde_json::json!({ "model": spec, "meta": meta });
    std::fs::write(
        descriptor_path(path),
        serde_json::to_string_pretty(&descriptor).expect("descriptor serializes"),
    )?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint(format!(
            "bad magic {:02x?}, expected {:02x?}",
            magic, MAGIC
        )));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let n_tensors = r.read_u32::<LittleEndian>()? as usize;
    let mut shapes = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        shapes.push(shape);
    }
    let mut tensors = Vec::with_capacity(n_tensors);
    for shape in shapes {
        let n: usize = shape.iter().product();
        let mut data = vec![0.0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        tensors.push(Tensor::from_vec(&shape, data));
    }

    let text = std::fs::read_to_string(descriptor_path(path))?;
    let descriptor: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| NnError::Checkpoint(format!("descriptor parse: {e}")))?;
    let spec: ModelSpec = serde_json::from_value(descriptor["model"].clone())
        .map_err(|e| NnError::Checkpoint(format!("descriptor model: {e}")))?;
    let expect = spec.param_shapes()?;
    let got: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape.clone()).collect();
    if expect != got {
        return Err(NnError::Checkpoint(format!(
            "parameter shapes {got:?} do not match architecture {expect:?}"
        )));
    }
    Ok(Checkpoint {
        spec,
        meta: descriptor["meta"].clone(),
        params: Params { tensors },
    })
}

#[cfg(test)]
mod tests {
    use super::super::{LayerSpec, Padding};
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let spec = ModelSpec {
            input_shape: (1, 2, 12),
            layers: vec![
                LayerSpec::Conv2D {
                    out_channels: 3,
                    kernel_h: 2,
                    kernel_w: 3,
                    stride: 1,
                    padding: Padding::Valid,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense { out_units: 4 },
            ],
        };
        let params = Params::init(&spec, 17).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rfnn");
        let meta = serde_json::json!({"purpose": "test"});
        save_checkpoint(&path, &spec, &params, &meta).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.spec, spec);
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.meta["purpose"], "test");
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rfnn");
        std::fs::write(&path, b"XXXX rest").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
