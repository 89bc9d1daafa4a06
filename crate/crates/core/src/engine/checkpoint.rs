//! Checkpoint archive: magic, format version, JSON header (config, views,
//! vocabulary, tensor table, free-form metadata), then little-endian f64
//! tensors in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MadsModel;
use crate::autodiff::Matrix;
use crate::config::ModelConfig;
use crate::corpus::{write_atomic, AttributeViewSet, Vocabulary};
use crate::error::{MadsError, Result};
use crate::textenc::EmbeddingTable;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MADSCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: [usize; 2],
    /// Offset in f64 elements from the start of the tensor section.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    views: AttributeViewSet,
    vocab: Vocabulary,
    tensors: Vec<TensorInfo>,
    #[serde(default)]
    metadata: serde_json::Value,
}

/// Writes the model atomically. The output depends only on the parameters,
/// config, vocabulary and `metadata`.
pub fn save_checkpoint(model: &MadsModel, path: &Path, metadata: &serde_json::Value) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for e in model.store.entries() {
        let (r, c) = e.value.dim();
        tensors.push(TensorInfo { name: e.name.clone(), shape: [r, c], offset });
        offset += r * c;
    }
    let header = Header {
        config: model.config.clone(),
        views: model.views.clone(),
        vocab: model.vocab.clone(),
        tensors,
        metadata: metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| MadsError::schema("checkpoint header", e))?;
    let mut bytes = Vec::with_capacity(20 + json.len() + offset * 8);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for e in model.store.entries() {
        for v in e.value.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

fn value_repr(v: Option<&serde_json::Value>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "nothing".into())
}

/// First config field that differs, as an incompatibility error.
fn compare_configs(expected: &ModelConfig, found: &ModelConfig) -> Result<()> {
    let e = serde_json::to_value(expected).expect("config serializes");
    let f = serde_json::to_value(found).expect("config serializes");
    let (Some(e), Some(f)) = (e.as_object(), f.as_object()) else { return Ok(()) };
    for (key, ev) in e {
        if f.get(key) != Some(ev) {
            return Err(MadsError::Incompatible {
                field: key.clone(),
                expected: ev.to_string(),
                found: value_repr(f.get(key)),
            });
        }
    }
    Ok(())
}

/// Reads a checkpoint. With `expected`, every config field must match it.
/// Returns the model and the stored metadata.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<(MadsModel, serde_json::Value)> {
    let bytes = std::fs::read(path).map_err(|e| MadsError::io(path, e))?;
    let ctx = path.display().to_string();
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(MadsError::schema(&ctx, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(MadsError::Incompatible {
            field: "version".into(),
            expected: CHECKPOINT_VERSION.to_string(),
            found: version.to_string(),
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + header_len).ok_or_else(|| MadsError::schema(&ctx, "truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| MadsError::schema(&ctx, e))?;
    header.config.validate()?;
    if let Some(exp) = expected {
        compare_configs(exp, &header.config)?;
    }
    let data = &bytes[20 + header_len..];
    let word_dim = header.config.word_dim;
    let words = EmbeddingTable { table: Matrix::zeros((header.vocab.len(), word_dim)), vocab: header.vocab };
    let mut model = MadsModel::new(header.config, header.views, words, 0)?;
    if header.tensors.len() != model.store.len() {
        return Err(MadsError::Incompatible {
            field: "tensors".into(),
            expected: model.store.len().to_string(),
            found: header.tensors.len().to_string(),
        });
    }
    for t in &header.tensors {
        let id = model.store.id(&t.name).ok_or_else(|| MadsError::Incompatible {
            field: t.name.clone(),
            expected: "no such tensor".into(),
            found: format!("{:?}", t.shape),
        })?;
        let want = model.store.get(id).dim();
        if (t.shape[0], t.shape[1]) != want {
            return Err(MadsError::Incompatible {
                field: t.name.clone(),
                expected: format!("{want:?}"),
                found: format!("{:?}", (t.shape[0], t.shape[1])),
            });
        }
        let n = t.shape[0] * t.shape[1];
        let raw = data
            .get(t.offset * 8..(t.offset + n) * 8)
            .ok_or_else(|| MadsError::schema(&ctx, format!("tensor {} is truncated", t.name)))?;
        let values: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        model.store.set(id, Matrix::from_shape_vec(want, values).expect("sized tensor"));
    }
    Ok((model, header.metadata))
}

#[cfg(test)]
mod tests {
    use super::super::testutil::fixture;
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let f = fixture(7);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mads");
        let meta = serde_json::json!({"note": "x"});
        save_checkpoint(&f.model, &p, &meta).unwrap();
        let (m, back) = load_checkpoint(&p, Some(&f.model.config)).unwrap();
        assert_eq!(back, meta);
        for (a, b) in f.model.store.entries().iter().zip(m.store.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.trainable, b.trainable);
            assert!(a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(m.vocab, f.model.vocab);
        let q = dir.path().join("m2.mads");
        save_checkpoint(&m, &q, &meta).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn mismatched_dim_names_field() {
        let f = fixture(8);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.mads");
        save_checkpoint(&f.model, &p, &serde_json::Value::Null).unwrap();
        let wrong = ModelConfig { dim: 16, ..f.model.config.clone() };
        let err = load_checkpoint(&p, Some(&wrong)).unwrap_err();
        assert!(matches!(err, MadsError::Incompatible { ref field, .. } if field == "dim"), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&p, None), Err(MadsError::Schema { .. })));
        let f = fixture(9);
        save_checkpoint(&f.model, &p, &serde_json::Value::Null).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[8] = 9;
        std::fs::write(&p, bytes).unwrap();
        let err = load_checkpoint(&p, None).unwrap_err();
        assert!(matches!(err, MadsError::Incompatible { ref field, .. } if field == "version"));
    }
}
