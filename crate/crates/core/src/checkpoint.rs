//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MSAM"            magic
//! u32               format version
//! [u8; 32]          SHA-256 of the config echo
//! u32 + bytes       config echo (TOML, UTF-8)
//! u32               tensor count
//! per tensor:
//!   u32 + bytes     name (UTF-8)
//!   u32             rank
//!   u64 × rank      dimensions
//!   f32 × ∏dims     row-major values
//! ```

use std::fs;
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::NormalizationKind;
use crate::error::{Error, Result};
use crate::model::{AcousticModel, ModelConfig};
use crate::trainer::TrainConfig;
use crate::Scalar;

pub const MAGIC: &[u8; 4] = b"MSAM";
pub const VERSION: u32 = 1;

/// How a model was trained; stored alongside its configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingContext {
    pub train: Option<TrainConfig>,
    pub normalization: Option<NormalizationKind>,
}

/// Configuration echoed in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationKind>,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

pub fn encode<T: Scalar>(model: &AcousticModel<T>, context: &TrainingContext) -> Vec<u8> {
    let meta = CheckpointMeta {
        normalization: context.normalization,
        model: model.config().clone(),
        train: context.train.clone(),
    };
    let echo = toml::to_string(&meta).expect("config serialises");
    let params = model.parameters();
    let mut out = Vec::with_capacity(64 + echo.len() + model.num_parameters() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(echo.as_bytes()));
    out.extend_from_slice(&(echo.len() as u32).to_le_bytes());
    out.extend_from_slice(echo.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in &params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.ndim() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.iter() {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<&'a str> {
        let len = self.u32(what)? as usize;
        std::str::from_utf8(self.take(len, what)?).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(AcousticModel<T>, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let digest = r.take(32, "digest")?.to_vec();
    let echo = r.string("config echo")?;
    if Sha256::digest(echo.as_bytes()).as_slice() != digest.as_slice() {
        return Err(Error::Checkpoint("config digest mismatch".into()));
    }
    let meta: CheckpointMeta =
        toml::from_str(echo).map_err(|e| Error::Checkpoint(format!("config echo: {e}")))?;
    let mut model = AcousticModel::<T>::zeros(meta.model.clone())?;

    let count = r.u32("tensor count")? as usize;
    let mut params = model.parameters_mut();
    if count != params.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, model has {}",
            params.len()
        )));
    }
    for (name, target) in params.iter_mut() {
        let stored = r.string("tensor name")?;
        if stored != name {
            return Err(Error::Checkpoint(format!("expected tensor `{name}`, found `{stored}`")));
        }
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank)
            .map(|_| r.u64("dimension").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != target.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {dims:?}, expected {:?}",
                target.shape()
            )));
        }
        let payload = r.take(target.len() * 4, "tensor payload")?;
        let values: Vec<T> = payload
            .chunks_exact(4)
            .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        let array = ArrayD::from_shape_vec(dims, values).expect("length checked");
        target.assign(&array);
    }
    drop(params);
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((model, meta))
}

pub fn save<T: Scalar>(model: &AcousticModel<T>, context: &TrainingContext, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, context)).map_err(|e| Error::file(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<(AcousticModel<T>, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> AcousticModel<f32> {
        let mut cfg = ModelConfig::new("M_4,9^20,30".parse::<ModelSpec>().unwrap(), 3);
        cfg.geometry.first_map_size = 4;
        cfg.geometry.first_num_kernels = 2;
        cfg.geometry.second_stride = 2;
        cfg.geometry.second_kernel_len = 4;
        cfg.geometry.second_map_size = 3;
        cfg.geometry.second_num_kernels = 2;
        cfg.geometry.projection_dim = 3;
        cfg.hidden_dim = 5;
        cfg.hidden_layers = 2;
        AcousticModel::random(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let context = TrainingContext {
            train: Some(TrainConfig::default()),
            normalization: Some(NormalizationKind::UtteranceMeeting),
        };
        let (back, meta) = decode::<f32>(&encode(&m, &context)).unwrap();
        assert_eq!(back, m);
        assert_eq!(meta.train, context.train);
        assert_eq!(meta.normalization, context.normalization);
        assert_eq!(&meta.model, m.config());
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&model(), &TrainingContext::default());
        assert_eq!(&bytes[..4], b"MSAM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
        let echo_len = u32::from_le_bytes(bytes[40..44].try_into().unwrap()) as usize;
        let echo = std::str::from_utf8(&bytes[44..44 + echo_len]).unwrap();
        assert!(echo.contains("M_4,9^20,30"));
        assert_eq!(&bytes[8..40], Sha256::digest(echo.as_bytes()).as_slice());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode(&model(), &TrainingContext::default());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode::<f32>(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[50] ^= 1;
        assert!(matches!(decode::<f32>(&bad), Err(Error::Checkpoint(_))));
        assert!(matches!(decode::<f32>(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        let mut bad = bytes;
        bad.push(0);
        assert!(matches!(decode::<f32>(&bad), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load::<f32>("/nonexistent/model.ckpt").unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Io);
    }
}
