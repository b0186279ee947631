//! Single-file checkpoint format.
//!
//! Layout: one JSON header line describing shapes and hyperparameters,
//! a newline, all parameter values as little-endian f64 in header order,
//! then a little-endian CRC-32 of everything before it. The CRC makes
//! truncated or bit-flipped files fail loudly instead of training on
//! garbage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Result, TapError};
use crate::Mat;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_kind: String,
    pub params: Vec<ParamShape>,
    pub hyper: serde_json::Value,
    pub rng_seed: u64,
}

fn crc32(bytes: &[u8]) -> u32 {
    // IEEE 802.3 polynomial, reflected.
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

pub fn save_checkpoint(
    path: &Path,
    params: &ParamStore,
    model_kind: &str,
    hyper: serde_json::Value,
    rng_seed: u64,
) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        model_kind: model_kind.to_string(),
        params: params
            .iter()
            .map(|p| ParamShape {
                name: p.name.clone(),
                rows: p.value.rows,
                cols: p.value.cols,
            })
            .collect(),
        hyper,
        rng_seed,
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for p in params.iter() {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamStore)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 4 {
        return Err(TapError::Checkpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32(body) != stored {
        return Err(TapError::Checkpoint("checksum mismatch".into()));
    }
    let nl = body
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| TapError::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&body[..nl])
        .map_err(|e| TapError::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(TapError::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let payload = &body[nl + 1..];
    let expect: usize = header.params.iter().map(|p| p.rows * p.cols).sum();
    if payload.len() != expect * 8 {
        return Err(TapError::Checkpoint(format!(
            "payload holds {} bytes, header describes {}",
            payload.len(),
            expect * 8
        )));
    }
    let mut store = ParamStore::new();
    let mut off = 0;
    for shape in &header.params {
        let count = shape.rows * shape.cols;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let chunk: [u8; 8] = payload[off..off + 8].try_into().unwrap();
            data.push(f64::from_le_bytes(chunk));
            off += 8;
        }
        store.add(&shape.name, Mat::from_vec(shape.rows, shape.cols, data))?;
    }
    Ok((header, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = ParamStore::new();
        s.add("gru0.wz", Mat::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
        s.add("head.w", Mat::from_fn(2, 4, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
        s.add("head.b", Mat::from_fn(1, 2, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
        s
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = sample_store();
        let hyper = serde_json::json!({"hidden": 4, "layers": 1});
        save_checkpoint(&path, &store, "test", hyper.clone(), 42).unwrap();
        let (header, loaded) = load_checkpoint(&path).unwrap();

        assert_eq!(header.model_kind, "test");
        assert_eq!(header.rng_seed, 42);
        assert_eq!(header.hyper, hyper);
        assert_eq!(header.params.len(), 3);
        assert_eq!(loaded.len(), store.len());
        for (a, b) in store.iter().zip(loaded.iter()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.value.data().iter().zip(b.value.data().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // Saving the loaded store reproduces the file byte for byte.
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &loaded, "test", header.hyper, 42).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &sample_store(), "test", serde_json::json!({}), 0).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(TapError::Checkpoint(msg)) => assert!(msg.contains("checksum")),
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &sample_store(), "test", serde_json::json!({}), 0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn future_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        // Build a file with version 2 by hand, with a valid CRC.
        let header = serde_json::json!({
            "format_version": 2,
            "model_kind": "test",
            "params": [],
            "hyper": {},
            "rng_seed": 0,
        });
        let mut bytes = serde_json::to_vec(&header).unwrap();
        bytes.push(b'\n');
        let crc = super::crc32(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(TapError::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version failure, got {other:?}"),
        }
    }

    #[test]
    fn crc_reference_value() {
        // Published IEEE CRC-32 check value.
        assert_eq!(super::crc32(b"123456789"), 0xcbf43926);
    }
}
