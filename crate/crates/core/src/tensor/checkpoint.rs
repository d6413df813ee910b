//! Flat binary parameter checkpoints.
//!
//! Layout: 8-byte magic `NNPARAMS`, u32 version, u64 parameter count; then
//! per parameter: u32 name length, UTF-8 name, u32 rank, u64 dims, and the
//! values as little-endian f64.

use super::nn::ParamSet;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"NNPARAMS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("bad magic; not a parameter checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint holds {found} parameters, model expects {expected}")]
    CountMismatch { found: usize, expected: usize },
    #[error("parameter {name}: checkpoint shape {found:?} does not match model shape {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },
    #[error("parameter order mismatch: checkpoint has {found:?} where model expects {expected:?}")]
    NameMismatch { found: String, expected: String },
    #[error("checkpoint truncated")]
    Truncated,
}

fn io_err(path: &Path, source: io::Error) -> CheckpointError {
    CheckpointError::Io { path: path.display().to_string(), source }
}

/// Serializes a registry to the flat binary format.
pub fn save(path: &Path, params: &ParamSet) -> Result<(), CheckpointError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
        buf.extend_from_slice(name_bytes);
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&(tensor.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(tensor.cols() as u64).to_le_bytes());
        tensor.with_data(|d| {
            for v in d {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        });
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&buf).map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint into an existing registry. Parameter names, order,
/// and shapes must match the model exactly.
pub fn load(path: &Path, params: &ParamSet) -> Result<(), CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| io_err(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = r.u64()? as usize;
    if count != params.len() {
        return Err(CheckpointError::CountMismatch { found: count, expected: params.len() });
    }
    for (name, tensor) in params.iter() {
        let name_len = r.u32()? as usize;
        let found_name = String::from_utf8_lossy(r.take(name_len)?).into_owned();
        if found_name != name {
            return Err(CheckpointError::NameMismatch {
                found: found_name,
                expected: name.to_string(),
            });
        }
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        let expected = vec![tensor.rows(), tensor.cols()];
        if dims != expected {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                found: dims,
                expected,
            });
        }
        let n = tensor.len();
        let raw = r.take(n * 8)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensor.set_values(&values);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::nn::{Mlp, ParamSet};
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("pointfill-ckpt-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_preserves_values() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let _ = Mlp::new(&mut params, "net", &[4, 6, 3], &mut rng);
        let before: Vec<Vec<f64>> = params.tensors().iter().map(|t| t.values()).collect();

        let path = tmp("roundtrip.ckpt");
        save(&path, &params).unwrap();
        for t in params.tensors() {
            t.fill(0.0);
        }
        load(&path, &params).unwrap();
        let after: Vec<Vec<f64>> = params.tensors().iter().map(|t| t.values()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut a = ParamSet::new();
        a.register("p", Tensor::leaf(2, 3, vec![0.0; 6]));
        let path = tmp("shape.ckpt");
        save(&path, &a).unwrap();

        let mut b = ParamSet::new();
        b.register("p", Tensor::leaf(3, 3, vec![0.0; 9]));
        let err = load(&path, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 3]"), "{msg}");
    }

    #[test]
    fn rejects_garbage() {
        let path = tmp("garbage.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        let params = ParamSet::new();
        assert!(matches!(load(&path, &params), Err(CheckpointError::BadMagic)));
    }
}
