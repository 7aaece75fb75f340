//! Checkpoint serialization: a JSON manifest describing the architecture and
//! tensor layout, plus a raw little-endian f32 weight blob in manifest order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FusionNet, ModelConfig};
use crate::tensor::{ParamStore, Shape, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_WEIGHTS: &str = "weights.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 4],
    /// Byte offset into the weight blob.
    pub offset: u64,
    pub byte_len: u64,
}

/// Training provenance stored with a checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epoch: usize,
    pub val_iou: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub tensors: Vec<TensorRecord>,
    pub meta: TrainMeta,
}

/// Writes `manifest.json` and `weights.bin` into `dir` (created if absent).
/// Weights are stored as little-endian f32 in lexicographic parameter order.
pub fn save_checkpoint(dir: &Path, net: &FusionNet, meta: TrainMeta) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(net.params.len());
    let mut blob: Vec<u8> = Vec::with_capacity(net.params.element_count() * 4);
    for (name, param) in net.params.iter() {
        let s = param.value.shape();
        let offset = blob.len() as u64;
        for &v in param.value.data() {
            blob.extend_from_slice(&(v as f32).to_le_bytes());
        }
        tensors.push(TensorRecord {
            name: name.clone(),
            shape: [s.n, s.c, s.h, s.w],
            offset,
            byte_len: (s.count() * 4) as u64,
        });
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        model: net.cfg.clone(),
        tensors,
        meta,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    let mut f = std::fs::File::create(dir.join(CHECKPOINT_MANIFEST))?;
    f.write_all(text.as_bytes())?;
    f.write_all(b"\n")?;
    std::fs::write(dir.join(CHECKPOINT_WEIGHTS), blob)?;
    Ok(())
}

/// Reads a checkpoint directory back into a network, verifying the format
/// version, the blob length, and every tensor's shape.
pub fn load_checkpoint(dir: &Path) -> Result<(FusionNet, CheckpointManifest)> {
    let manifest_path = dir.join(CHECKPOINT_MANIFEST);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", manifest_path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::data(format!("malformed {}: {e}", manifest_path.display())))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::data(format!(
            "checkpoint format version {} unsupported (expected {CHECKPOINT_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let blob = std::fs::read(dir.join(CHECKPOINT_WEIGHTS))?;
    let expected_len: u64 = manifest.tensors.iter().map(|t| t.byte_len).sum();
    if blob.len() as u64 != expected_len {
        return Err(Error::data(format!(
            "weight blob holds {} bytes, manifest expects {expected_len}",
            blob.len()
        )));
    }

    let mut params = ParamStore::new();
    for record in &manifest.tensors {
        let [n, c, h, w] = record.shape;
        let shape = Shape::new(n, c, h, w);
        if record.byte_len as usize != shape.count() * 4 {
            return Err(Error::data(format!(
                "tensor `{}` record length {} disagrees with shape {shape}",
                record.name, record.byte_len
            )));
        }
        let start = record.offset as usize;
        let end = start + record.byte_len as usize;
        if end > blob.len() {
            return Err(Error::data(format!(
                "tensor `{}` extends past the weight blob",
                record.name
            )));
        }
        let data: Vec<f64> = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        params.insert(record.name.clone(), Tensor::from_vec(shape, data)?);
    }
    let net = FusionNet::from_parts(manifest.model.clone(), params)?;
    Ok((net, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn toy_net(seed: u64) -> FusionNet {
        FusionNet::new(ModelConfig::default(), seed).unwrap()
    }

    fn meta() -> TrainMeta {
        TrainMeta {
            epoch: 3,
            val_iou: 0.5,
            seed: 11,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let net = toy_net(1);
        save_checkpoint(&a, &net, meta()).unwrap();
        let (loaded, m) = load_checkpoint(&a).unwrap();
        save_checkpoint(&b, &loaded, m.meta).unwrap();
        assert_eq!(
            std::fs::read(a.join(CHECKPOINT_MANIFEST)).unwrap(),
            std::fs::read(b.join(CHECKPOINT_MANIFEST)).unwrap()
        );
        assert_eq!(
            std::fs::read(a.join(CHECKPOINT_WEIGHTS)).unwrap(),
            std::fs::read(b.join(CHECKPOINT_WEIGHTS)).unwrap()
        );
    }

    #[test]
    fn reload_is_exact_to_f32_rounding() {
        let dir = tempdir().unwrap();
        let net = toy_net(2);
        save_checkpoint(dir.path(), &net, meta()).unwrap();
        let (loaded, _) = load_checkpoint(dir.path()).unwrap();
        for (name, p) in net.params.iter() {
            let restored = loaded.params.value(name).unwrap();
            for (&orig, &back) in p.value.data().iter().zip(restored.data()) {
                assert_eq!(back, orig as f32 as f64, "param {name}");
            }
        }
    }

    #[test]
    fn truncated_blob_rejected() {
        let dir = tempdir().unwrap();
        let net = toy_net(3);
        save_checkpoint(dir.path(), &net, meta()).unwrap();
        let weights = dir.path().join(CHECKPOINT_WEIGHTS);
        let mut bytes = std::fs::read(&weights).unwrap();
        bytes.pop();
        std::fs::write(&weights, bytes).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("bytes"));
    }

    #[test]
    fn version_mismatch_rejected() {
        let dir = tempdir().unwrap();
        let net = toy_net(4);
        save_checkpoint(dir.path(), &net, meta()).unwrap();
        let path = dir.path().join(CHECKPOINT_MANIFEST);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 999");
        std::fs::write(&path, text).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn shape_disagreement_rejected() {
        let dir = tempdir().unwrap();
        let net = toy_net(5);
        save_checkpoint(dir.path(), &net, meta()).unwrap();
        let path = dir.path().join(CHECKPOINT_MANIFEST);
        // Swap one tensor's declared shape to something of equal size.
        let text = std::fs::read_to_string(&path).unwrap().replacen(
            "[\n        1,\n        16,\n        1,\n        1\n      ]",
            "[\n        16,\n        1,\n        1,\n        1\n      ]",
            1,
        );
        std::fs::write(&path, text).unwrap();
        assert!(load_checkpoint(dir.path()).is_err());
    }
}
