//! Self-describing binary checkpoints.
//!
//! Layout: magic `GRFG`, format version (u32 LE), header length (u64 LE),
//! JSON header (hyperparameters, vocabulary hash, seed, epoch), then the
//! named tensors in canonical order, each as name, shape, and f32 LE data.
//! The loader refuses checkpoints whose vocabulary hash does not match the
//! vocabulary it is asked to serve.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArrMut, ArrRef, ModelConfig, ModelError, ModelParams};

const MAGIC: &[u8; 4] = b"GRFG";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub hyperparams: ModelConfig,
    pub vocab_hash: String,
    pub seed: u64,
    pub epoch: usize,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::BadCheckpoint(msg.into())
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    vocab_hash: &str,
    seed: u64,
    epoch: usize,
) -> Result<(), ModelError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let meta = CheckpointMeta {
        hyperparams: params.cfg,
        vocab_hash: vocab_hash.to_string(),
        seed,
        epoch,
    };
    let header = serde_json::to_vec(&meta).map_err(|e| bad(e.to_string()))?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (name, arr) in params.tensor_names().into_iter().zip(params.arrays()) {
        let (shape, data): (Vec<usize>, Vec<f64>) = match arr {
            ArrRef::A1(x) => (vec![x.len()], x.to_vec()),
            ArrRef::A2(x) => (vec![x.nrows(), x.ncols()], x.iter().copied().collect()),
        };
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for d in &shape {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N], ModelError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Load a checkpoint. When `expected_vocab_hash` is given, a mismatch is
/// an error rather than a silently mis-tokenized model.
pub fn load_checkpoint(
    path: &Path,
    expected_vocab_hash: Option<&str>,
) -> Result<(ModelParams, CheckpointMeta), ModelError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    if &read_exact::<4>(&mut r)? != MAGIC {
        return Err(bad("wrong magic bytes"));
    }
    let version = u32::from_le_bytes(read_exact::<4>(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header)?;
    let meta: CheckpointMeta = serde_json::from_slice(&header).map_err(|e| bad(e.to_string()))?;
    if let Some(expected) = expected_vocab_hash {
        if expected != meta.vocab_hash {
            return Err(ModelError::VocabMismatch);
        }
    }

    let mut params = ModelParams::zeros(meta.hyperparams);
    let names = params.tensor_names();
    for (name, arr) in names.into_iter().zip(params.arrays_mut()) {
        let name_len = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let found = String::from_utf8(name_buf).map_err(|e| bad(e.to_string()))?;
        if found != name {
            return Err(bad(format!("expected tensor {name}, found {found}")));
        }
        let ndim = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(read_exact::<8>(&mut r)?) as usize);
        }
        let expected_shape: Vec<usize> = match &arr {
            ArrMut::A1(x) => vec![x.len()],
            ArrMut::A2(x) => vec![x.nrows(), x.ncols()],
        };
        if shape != expected_shape {
            return Err(bad(format!(
                "tensor {name} has shape {shape:?}, expected {expected_shape:?}"
            )));
        }
        let count: usize = shape.iter().product();
        let mut data = vec![0.0f64; count];
        for v in data.iter_mut() {
            *v = f32::from_le_bytes(read_exact::<4>(&mut r)?) as f64;
        }
        match arr {
            ArrMut::A1(x) => x.as_slice_mut().unwrap().copy_from_slice(&data),
            ArrMut::A2(x) => x.as_slice_mut().unwrap().copy_from_slice(&data),
        }
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tiny_config;

    #[test]
    fn round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = ModelParams::init(tiny_config(), 17);
        save_checkpoint(&path, &params, "hash123", 17, 2).unwrap();
        let (loaded, meta) = load_checkpoint(&path, Some("hash123")).unwrap();
        assert_eq!(meta.seed, 17);
        assert_eq!(meta.epoch, 2);
        assert_eq!(meta.hyperparams, tiny_config());
        for (a, b) in params.arrays().iter().zip(loaded.arrays()) {
            match (a, b) {
                (ArrRef::A2(x), ArrRef::A2(y)) => {
                    for (u, v) in x.iter().zip(y.iter()) {
                        assert_eq!(*u as f32, *v as f32);
                    }
                }
                (ArrRef::A1(x), ArrRef::A1(y)) => {
                    for (u, v) in x.iter().zip(y.iter()) {
                        assert_eq!(*u as f32, *v as f32);
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn vocab_hash_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &ModelParams::init(tiny_config(), 1), "aaa", 1, 0).unwrap();
        assert!(matches!(
            load_checkpoint(&path, Some("bbb")),
            Err(ModelError::VocabMismatch)
        ));
        assert!(load_checkpoint(&path, None).is_ok());
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(
            load_checkpoint(&path, None),
            Err(ModelError::BadCheckpoint(_))
        ));
    }

    #[test]
    fn identical_saves_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let params = ModelParams::init(tiny_config(), 9);
        save_checkpoint(&p1, &params, "h", 9, 1).unwrap();
        save_checkpoint(&p2, &params, "h", 9, 1).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }
}
