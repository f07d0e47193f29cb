//! Versioned checkpoint container.
//!
//! Layout: magic, container version, a length-prefixed JSON metadata block
//! (configs, training progress, normalization statistics, and an ordered
//! blob index), then the parameter tensors concatenated as raw blobs in the
//! same format as tensor files on disk. Parameters are stored as f32, like
//! every other tensor artifact.

use crate::error::{Error, Result};
use crate::imageops::NormalizationStats;
use crate::nn::{ConditionerConfig, Model, UNetConfig};
use crate::tensor::{ImageTensor, Semantics};
use serde::{Deserialize, Serialize};
use std::path::Path;

const MAGIC: [u8; 4] = *b"BSCP";
const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub len: usize,
}

/// Everything needed to rebuild the model and run the sampling pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub unet: UNetConfig,
    pub conditioner: ConditionerConfig,
    /// Schedule length T the model was trained against.
    pub schedule_steps: usize,
    /// Training steps completed when this checkpoint was written.
    pub step: u64,
    /// Root training seed.
    pub seed: u64,
    pub input_stats: NormalizationStats,
    pub target_stats: NormalizationStats,
    pub output_range: (f64, f64),
    pub blobs: Vec<BlobEntry>,
}

fn blob_from_param(name: &str, values: &[f64]) -> Result<ImageTensor> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    ImageTensor::new(
        1,
        values.len(),
        1,
        Semantics::NormalizedLatent,
        (lo.min(hi), hi.max(lo)),
        values.to_vec(),
    )
    .map_err(|e| Error::InvalidInput(format!("parameter blob {name}: {e}")))
}

/// Serializes model parameters plus metadata into one container file.
pub fn save(path: impl AsRef<Path>, model: &mut Model, mut meta: CheckpointMeta) -> Result<()> {
    let mut blob_bytes: Vec<u8> = Vec::new();
    let mut entries = Vec::new();
    let mut fail: Option<Error> = None;
    model.visit(&mut |name, p| {
        if fail.is_some() {
            return;
        }
        match blob_from_param(name, &p.w) {
            Ok(t) => {
                entries.push(BlobEntry { name: name.to_string(), len: p.len() });
                blob_bytes.extend_from_slice(&t.to_btns_bytes());
            }
            Err(e) => fail = Some(e),
        }
    });
    if let Some(e) = fail {
        return Err(e);
    }
    meta.blobs = entries;
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::with_capacity(16 + json.len() + blob_bytes.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob_bytes);
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads the metadata block only.
pub fn read_meta(path: impl AsRef<Path>) -> Result<CheckpointMeta> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    parse_meta(&bytes, &path.display().to_string()).map(|(m, _)| m)
}

fn parse_meta(bytes: &[u8], origin: &str) -> Result<(CheckpointMeta, usize)> {
    let malformed = |reason: String| Error::Malformed { path: origin.to_string(), reason };
    if bytes.len() < 16 {
        return Err(malformed("shorter than container header".into()));
    }
    if bytes[0..4] != MAGIC {
        return Err(malformed("bad container magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(malformed(format!("unsupported container version {version}")));
    }
    let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + json_len {
        return Err(malformed("metadata block truncated".into()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..16 + json_len])
        .map_err(|e| malformed(format!("metadata does not parse: {e}")))?;
    Ok((meta, 16 + json_len))
}

/// Restores a model from a checkpoint. The model is rebuilt from the stored
/// configs, then every parameter tensor is overwritten from its named blob.
pub fn load(path: impl AsRef<Path>) -> Result<(Model, CheckpointMeta)> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let bytes = std::fs::read(path)?;
    let (meta, mut offset) = parse_meta(&bytes, &origin)?;
    let mut model = Model::new(meta.seed, meta.unet.clone(), meta.conditioner.clone())?;
    // Decode blobs in index order; names and lengths must line up with the
    // freshly built model or the file belongs to a different architecture.
    let mut decoded: Vec<(String, Vec<f64>)> = Vec::with_capacity(meta.blobs.len());
    for entry in &meta.blobs {
        let blob_len = crate::tensor::HEADER_LEN + 4 * entry.len;
        if bytes.len() < offset + blob_len {
            return Err(Error::Malformed {
                path: origin.clone(),
                reason: format!("blob {} truncated", entry.name),
            });
        }
        let t = ImageTensor::from_btns_bytes(&bytes[offset..offset + blob_len], &entry.name)?;
        decoded.push((entry.name.clone(), t.into_data()));
        offset += blob_len;
    }
    if offset != bytes.len() {
        return Err(Error::Malformed {
            path: origin.clone(),
            reason: "trailing bytes after last blob".into(),
        });
    }
    let mut i = 0;
    let mut fail: Option<Error> = None;
    model.visit(&mut |name, p| {
        if fail.is_some() {
            return;
        }
        let Some((blob_name, values)) = decoded.get(i) else {
            fail = Some(Error::IncompatibleCheckpoint(format!(
                "model expects more tensors than checkpoint holds (missing {name})"
            )));
            return;
        };
        if blob_name != name || values.len() != p.len() {
            fail = Some(Error::IncompatibleCheckpoint(format!(
                "tensor {i}: model wants {name}[{}], checkpoint has {blob_name}[{}]",
                p.len(),
                values.len()
            )));
            return;
        }
        p.w.copy_from_slice(values);
        i += 1;
    });
    if let Some(e) = fail {
        return Err(e);
    }
    if i != decoded.len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint holds {} tensors, model uses {i}",
            decoded.len()
        )));
    }
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageops::StatsScope;
    use crate::nn::unet::UNetConfig;

    fn tiny_meta() -> CheckpointMeta {
        CheckpointMeta {
            unet: UNetConfig {
                base_size: 8,
                in_channels: 6,
                out_channels: 3,
                levels: 2,
                base_width: 4,
                attention_heads: 2,
                attention_min_size: 16,
                time_embed_dim: 8,
            },
            conditioner: ConditionerConfig { in_channels: 2, hidden: 4, out_channels: 3, upsample: 2 },
            schedule_steps: 40,
            step: 7,
            seed: 123,
            input_stats: NormalizationStats::new(vec![0.5, 0.4], vec![0.2, 0.3], StatsScope::Dataset)
                .unwrap(),
            target_stats: NormalizationStats::new(vec![0.5; 3], vec![0.25; 3], StatsScope::Dataset)
                .unwrap(),
            output_range: (0.0, 1.0),
            blobs: Vec::new(),
        }
    }

    #[test]
    fn save_load_round_trip_restores_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let meta = tiny_meta();
        let mut model = Model::new(meta.seed, meta.unet.clone(), meta.conditioner.clone()).unwrap();
        // Metadata round-trips and parameters survive to f32 precision.
        save(&path, &mut model, meta.clone()).unwrap();
        let (mut loaded, got) = load(&path).unwrap();
        assert_eq!(got.step, 7);
        assert_eq!(got.schedule_steps, 40);
        assert_eq!(got.input_stats, meta.input_stats);
        let mut orig = Vec::new();
        model.visit(&mut |_, p| orig.extend_from_slice(&p.w));
        let mut back = Vec::new();
        loaded.visit(&mut |_, p| back.extend_from_slice(&p.w));
        assert_eq!(orig.len(), back.len());
        for (a, b) in orig.iter().zip(&back) {
            assert_eq!(*a as f32, *b as f32);
            assert_eq!(*b, *b as f32 as f64);
        }
    }

    #[test]
    fn rewrites_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let meta = tiny_meta();
        let mut model = Model::new(meta.seed, meta.unet.clone(), meta.conditioner.clone()).unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&p1, &mut model, meta.clone()).unwrap();
        save(&p2, &mut model, meta).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let meta = tiny_meta();
        let mut model = Model::new(meta.seed, meta.unet.clone(), meta.conditioner.clone()).unwrap();
        save(&path, &mut model, meta.clone()).unwrap();
        // Tamper with the stored width so blob shapes disagree.
        let bytes = std::fs::read(&path).unwrap();
        let json_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[16..16 + json_len].to_vec()).unwrap();
        let tampered = json.replace("\"base_width\":4", "\"base_width\":8");
        assert_ne!(json, tampered);
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(tampered.len() as u64).to_le_bytes());
        out.extend_from_slice(tampered.as_bytes());
        out.extend_from_slice(&bytes[16 + json_len..]);
        std::fs::write(&path, out).unwrap();
        assert!(matches!(load(&path), Err(Error::IncompatibleCheckpoint(_))));
    }

    #[test]
    fn corrupted_container_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(read_meta(&path), Err(Error::Malformed { .. })));
        let meta = tiny_meta();
        let mut model = Model::new(meta.seed, meta.unet.clone(), meta.conditioner.clone()).unwrap();
        save(&path, &mut model, meta).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Malformed { .. })));
    }
}
