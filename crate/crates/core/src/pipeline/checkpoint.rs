use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Result, TrainConfig, TrainingRegime};
use crate::diffcore::{ParamSet, Tensor};
use crate::models::NetworkConfig;

pub const MAGIC: &[u8; 4] = b"MMC1";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub network: NetworkConfig,
    pub regime: Option<TrainingRegime>,
    pub training: Option<TrainConfig>,
    pub seed: u64,
    /// Backbone stages whose parameters were trainable.
    pub trainable_backbone_stages: Vec<usize>,
    pub best_epoch: Option<usize>,
    pub best_val_auc: Option<f64>,
    #[serde(default)]
    pub youden_threshold: Option<f64>,
}

/// MMC1 container: magic, `u32` metadata length, metadata JSON, `u32`
/// parameter count, then per parameter `u32` name length, name, trainable
/// byte, `u32` rank, `u64` dims and little-endian `f64` values. All integers
/// are little-endian. Parameters appear in name order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    metadata_json: String,
    pub params: ParamSet<f64>,
}

impl Checkpoint {
    pub fn new(meta: &CheckpointMeta, params: ParamSet<f64>) -> Result<Self> {
        let metadata_json = serde_json::to_string(meta).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
        Ok(Checkpoint { metadata_json, params })
    }

    pub fn metadata(&self) -> Result<CheckpointMeta> {
        let meta: CheckpointMeta =
            serde_json::from_str(&self.metadata_json).map_err(|e| PipelineError::Checkpoint(format!("metadata: {e}")))?;
        if meta.schema_version != SCHEMA_VERSION {
            return Err(PipelineError::Checkpoint(format!("unsupported schema version {}", meta.schema_version)));
        }
        Ok(meta)
    }

    pub fn metadata_json(&self) -> &str {
        &self.metadata_json
    }

    pub fn set_metadata(&mut self, meta: &CheckpointMeta) -> Result<()> {
        *self = Checkpoint::new(meta, std::mem::take(&mut self.params))?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.metadata_json.len() + self.params.numel() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.metadata_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata_json.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, p) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(p.trainable as u8);
            let shape = p.tensor.shape();
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(PipelineError::Checkpoint("bad magic; not an MMC1 checkpoint".into()));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let meta = take(&mut r, meta_len)?;
        let metadata_json = String::from_utf8(meta.to_vec()).map_err(|_| PipelineError::Checkpoint("metadata is not UTF-8".into()))?;
        let count = read_u32(&mut r)?;
        let mut params = ParamSet::new();
        let mut last: Option<String> = None;
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(take(&mut r, name_len)?.to_vec())
                .map_err(|_| PipelineError::Checkpoint("parameter name is not UTF-8".into()))?;
            if last.as_ref().is_some_and(|l| *l >= name) {
                return Err(PipelineError::Checkpoint(format!("parameter '{name}' out of order")));
            }
            let trainable = match take(&mut r, 1)?[0] {
                0 => false,
                1 => true,
                b => return Err(PipelineError::Checkpoint(format!("bad trainable flag {b} for '{name}'"))),
            };
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut d = [0u8; 8];
                read_exact(&mut r, &mut d)?;
                shape.push(usize::try_from(u64::from_le_bytes(d)).map_err(|_| PipelineError::Checkpoint("dimension overflow".into()))?);
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| PipelineError::Checkpoint("shape overflow".into()))?;
            let raw = take(&mut r, n.checked_mul(8).ok_or_else(|| PipelineError::Checkpoint("shape overflow".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let tensor = Tensor::new(shape, data).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
            params.insert(name.clone(), tensor, trainable).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
            last = Some(name);
        }
        if !r.is_empty() {
            return Err(PipelineError::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Checkpoint { metadata_json, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| PipelineError::Io { path: path.display().to_string(), source: e })?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| PipelineError::Io { path: path.display().to_string(), source: e })?;
        Self::from_bytes(&bytes)
    }
}

fn truncated() -> PipelineError {
    PipelineError::Checkpoint("truncated checkpoint".into())
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(truncated());
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    buf.copy_from_slice(take(r, buf.len())?);
    Ok(())
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Network;

    fn sample() -> Checkpoint {
        let cfg = NetworkConfig::gray(16);
        let params = Network::new(cfg.clone()).unwrap().init_params::<f64>(4).unwrap();
        let meta = CheckpointMeta {
            schema_version: SCHEMA_VERSION,
            network: cfg,
            regime: Some(TrainingRegime::GrayPartial),
            training: Some(TrainConfig::new(4)),
            seed: 4,
            trainable_backbone_stages: vec![3],
            best_epoch: Some(2),
            best_val_auc: Some(0.75),
            youden_threshold: None,
        };
        Checkpoint::new(&meta, params).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, c);
        assert_eq!(back.metadata().unwrap().trainable_backbone_stages, vec![3]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mmc1");
        c.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
        assert_eq!(Checkpoint::load(&p).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn rejects_damaged_files() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert!(Checkpoint::from_bytes(&[]).is_err());
    }
}
