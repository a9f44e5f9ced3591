//! `model.tgnm` checkpoints.
//!
//! ```text
//! "TGNM"  u32 version=1  u32 header_len  header (JSON, header_len bytes)
//! tensors in manifest order, f32 little-endian, row-major
//! ```
//!
//! The JSON header carries the hyperparameters, the seed, the effective
//! training configuration and the tensor manifest.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Hyperparams, ModelParameters, TensorSpec};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TGNM";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {0:?}, expected \"TGNM\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint while reading {0}")]
    Truncated(&'static str),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("manifest does not match hyperparameters at tensor {0:?}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub hyperparams: Hyperparams,
    pub seed: u64,
    /// Effective training configuration, stored verbatim.
    pub config: serde_json::Value,
    pub manifest: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParameters,
}

impl Checkpoint {
    pub fn new(params: ModelParameters, seed: u64, config: serde_json::Value) -> Self {
        Self {
            header: CheckpointHeader {
                hyperparams: params.hp,
                seed,
                config,
                manifest: params.manifest(),
            },
            params,
        }
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), CheckpointError> {
        let header = serde_json::to_vec(&self.header).map_err(|e| CheckpointError::Header(e.to_string()))?;
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for t in self.params.tensors() {
            for &v in t {
                out.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        read_exact(&mut input, &mut magic, "magic")?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = read_u32(&mut input, "version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let len = read_u32(&mut input, "header length")? as usize;
        let mut header = vec![0u8; len];
        read_exact(&mut input, &mut header, "header")?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
        header
            .hyperparams
            .validate()
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut params = ModelParameters::zeros(header.hyperparams);
        let expected = params.manifest();
        if expected.len() != header.manifest.len() {
            return Err(CheckpointError::Manifest(format!(
                "{} tensors declared, {} expected",
                header.manifest.len(),
                expected.len()
            )));
        }
        for (a, b) in expected.iter().zip(&header.manifest) {
            if a != b {
                return Err(CheckpointError::Manifest(b.name.clone()));
            }
        }
        for t in params.tensors_mut() {
            let mut bytes = vec![0u8; t.len() * 4];
            read_exact(&mut input, &mut bytes, "tensor values")?;
            for (dst, b) in t.iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
            }
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &'static str) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Truncated(what),
        _ => CheckpointError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn hp() -> Hyperparams {
        Hyperparams {
            input_dim: 5,
            hidden_dim: 4,
            layers: 2,
            attn_dim: 3,
            head_dim: 3,
        }
    }

    #[test]
    fn round_trip() {
        let ck = Checkpoint::new(init_params(hp(), 4), 4, serde_json::json!({"epochs": 3}));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        assert_eq!(back, ck);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint::new(init_params(hp(), 4), 4, serde_json::Value::Null);
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::read_from(&bad[..]), Err(CheckpointError::BadMagic(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::read_from(&bad[..]), Err(CheckpointError::Version(9))));
        assert!(matches!(
            Checkpoint::read_from(&buf[..buf.len() - 1]),
            Err(CheckpointError::Truncated(_))
        ));
        let mut bad = buf.clone();
        bad[12] = b'!';
        assert!(matches!(Checkpoint::read_from(&bad[..]), Err(CheckpointError::Header(_))));
    }
}
