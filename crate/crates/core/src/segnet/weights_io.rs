//! `BSWT` weight files.
//!
//! Layout: magic `BSWT`, format version (u32 LE), JSON header length
//! (u32 LE), the JSON header, then every parameter as an f32 LE in
//! canonical order.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{receptive_field, ModelKind, NetError, NetworkConfig, NetworkWeights};

pub const MAGIC: &[u8; 4] = b"BSWT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    model_kind: ModelKind,
    receptive_field: usize,
    param_count: usize,
}

pub fn serialize_weights(weights: &NetworkWeights) -> Vec<u8> {
    let header = Header {
        config: weights.config.clone(),
        model_kind: weights.model_kind,
        receptive_field: receptive_field(&weights.config),
        param_count: weights.params.len(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * weights.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &p in &weights.params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, NetError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or(NetError::LengthMismatch {
            expected: at + 4,
            actual: bytes.len(),
        })
}

pub fn deserialize_weights(bytes: &[u8]) -> Result<NetworkWeights, NetError> {
    if bytes.get(..4) != Some(&MAGIC[..]) {
        return Err(NetError::BadMagic);
    }
    let version = read_u32(bytes, 4)?;
    if version != FORMAT_VERSION {
        return Err(NetError::UnsupportedVersion(version));
    }
    let json_len = read_u32(bytes, 8)? as usize;
    let json = bytes.get(12..12 + json_len).ok_or(NetError::LengthMismatch {
        expected: 12 + json_len,
        actual: bytes.len(),
    })?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| NetError::BadHeader(e.to_string()))?;
    header.config.validate()?;

    let expected = header.config.param_count();
    if header.param_count != expected {
        return Err(NetError::BadHeader(format!(
            "header declares {} parameters, config implies {expected}",
            header.param_count
        )));
    }
    let body = &bytes[12 + json_len..];
    if body.len() != 4 * expected {
        return Err(NetError::LengthMismatch {
            expected: 4 * expected,
            actual: body.len(),
        });
    }
    let params = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(NetworkWeights {
        config: header.config,
        model_kind: header.model_kind,
        params,
    })
}

/// Short content hash identifying a serialized weight file.
pub fn weights_id(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NetworkWeights {
        let mut cfg = NetworkConfig::uniform(2, &[3, 4], 1, 1);
        cfg.input_norm = [0.1, 0.2, 0.30000000000000004];
        NetworkWeights::init(cfg, ModelKind::SplitVsSeedCoat, 5).unwrap()
    }

    #[test]
    fn save_load_save_is_identical() {
        let first = serialize_weights(&sample());
        let loaded = deserialize_weights(&first).unwrap();
        assert_eq!(loaded.model_kind, ModelKind::SplitVsSeedCoat);
        assert_eq!(loaded.config.input_norm, [0.1, 0.2, 0.30000000000000004]);
        assert_eq!(serialize_weights(&loaded), first);
    }

    #[test]
    fn header_records_receptive_field() {
        let bytes = serialize_weights(&sample());
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let v: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        assert_eq!(v["receptive_field"], 1 + 2 + 4 + 2 + 2);
        assert_eq!(v["model_kind"], "split_vs_seed_coat");
    }

    #[test]
    fn corrupt_files() {
        let bytes = serialize_weights(&sample());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(deserialize_weights(&bad), Err(NetError::BadMagic)));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            deserialize_weights(&bad),
            Err(NetError::UnsupportedVersion(9))
        ));

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(
            deserialize_weights(truncated),
            Err(NetError::LengthMismatch { .. })
        ));

        let mut extended = bytes.clone();
        extended.extend_from_slice(&[0; 4]);
        assert!(matches!(
            deserialize_weights(&extended),
            Err(NetError::LengthMismatch { .. })
        ));

        assert!(matches!(deserialize_weights(b"BS"), Err(NetError::BadMagic)));
    }
}
