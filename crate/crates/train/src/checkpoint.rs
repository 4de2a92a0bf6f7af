//! Checkpoint container.
//!
//! ```text
//! bytes 0..8    magic "AVSCKPT1"
//! bytes 8..16   header length L, u64 little-endian
//! bytes 16..16+L  JSON header: config snapshot, epoch, metric history and
//!                 a tensor index of {name, shape, dtype, offset, len}
//! remainder     tensor data, little-endian, offsets relative to its start
//! ```

use std::path::Path;

use avs_core::{ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Result, TrainError};

pub const MAGIC: &[u8; 8] = b"AVSCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub main_loss: f64,
    pub avm_loss: Option<f64>,
    pub val_miou: Option<f64>,
    pub val_f_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub params: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct TensorIndex {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorIndex>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data = Vec::new();
        let mut tensors = Vec::with_capacity(self.params.len());
        for (name, t) in self.params.iter() {
            let offset = data.len();
            for &v in t.data() {
                v.write_le(&mut data);
            }
            tensors.push(TensorIndex { name: name.clone(), shape: t.shape().to_vec(), dtype: f32::DTYPE.into(), offset, len: t.len() });
        }
        let header = Header { config: self.config.clone(), epoch: self.epoch, history: self.history.clone(), tensors };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| TrainError::Checkpoint { path: path.into(), msg };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..body]).map_err(|e| bad(e.to_string()))?;
        let data = &bytes[body..];
        let mut params = ParamStore::new();
        for t in header.tensors {
            if t.dtype != f32::DTYPE {
                return Err(bad(format!("{}: unsupported dtype {}", t.name, t.dtype)));
            }
            let end = t.len.checked_mul(f32::BYTES).and_then(|n| n.checked_add(t.offset)).filter(|&e| e <= data.len());
            let end = end.ok_or_else(|| bad(format!("{}: data out of range", t.name)))?;
            let values = data[t.offset..end].chunks_exact(f32::BYTES).map(f32::read_le).collect();
            let tensor = Tensor::new(&t.shape, values).map_err(|e| bad(format!("{}: {e}", t.name)))?;
            params.insert(t.name, tensor);
        }
        Ok(Self { config: header.config, epoch: header.epoch, history: header.history, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| TrainError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn best_val_miou(&self) -> Option<f64> {
        self.history.iter().filter_map(|r| r.val_miou).max_by(f64::total_cmp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_round_trip() {
        let mut params = ParamStore::new();
        params.insert("a.weight", Tensor::new(&[2, 3], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap());
        params.insert("b", Tensor::new(&[1], vec![7.0]).unwrap());
        let ck = Checkpoint {
            config: TrainConfig::default(),
            epoch: 4,
            history: vec![EpochRecord { epoch: 1, train_loss: 0.5, main_loss: 0.4, avm_loss: Some(0.2), val_miou: Some(0.3), val_f_score: None }],
            params,
        };
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.params.get("a.weight").unwrap().data()[5].to_bits(), (-0.0f32).to_bits());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT........", Path::new("x")).is_err());
    }
}
