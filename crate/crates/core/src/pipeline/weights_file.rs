//! Binary weights container.
//!
//! ```text
//! "FQPE" | version: u32 LE | header length: u32 LE | JSON header | f32 LE payload
//! ```
//!
//! The JSON header names the architecture, pyramid depth, correction order,
//! byte order and a manifest of tensor names and shapes. The payload holds
//! every value in the canonical flat order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_levels, EnhancerWeights};
use crate::dic::CorrectionOrder;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FQPE";
pub const WEIGHTS_VERSION: u32 = 1;
const ARCHITECTURE: &str = "fqpe-enhancer";
const PREAMBLE: usize = 12;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    architecture: String,
    levels: usize,
    order: CorrectionOrder,
    endianness: String,
    dtype: String,
    tensors: Vec<TensorEntry>,
    payload_values: usize,
}

fn encode(w: &EnhancerWeights) -> Result<Vec<u8>> {
    let named = w.named_tensors();
    let header = Header {
        architecture: ARCHITECTURE.into(),
        levels: w.levels,
        order: w.order,
        endianness: "little".into(),
        dtype: "f32".into(),
        tensors: named
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        payload_values: named.iter().map(|(_, t)| t.len()).sum(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + 4 * header.payload_values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<EnhancerWeights> {
    if bytes.len() < MAGIC.len() {
        return Err(Error::Truncated {
            expected: PREAMBLE,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::Truncated {
            expected: PREAMBLE,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != WEIGHTS_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: WEIGHTS_VERSION,
        });
    }
    let header_end = PREAMBLE + word(8) as usize;
    if bytes.len() < header_end {
        return Err(Error::Truncated {
            expected: header_end,
            found: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
        .map_err(|e| Error::Manifest(format!("unreadable header: {e}")))?;
    if header.architecture != ARCHITECTURE {
        return Err(Error::Manifest(format!(
            "unknown architecture {:?}",
            header.architecture
        )));
    }
    if header.endianness != "little" || header.dtype != "f32" {
        return Err(Error::Manifest(format!(
            "unsupported payload {} {}",
            header.endianness, header.dtype
        )));
    }
    check_levels(header.levels).map_err(|e| Error::Manifest(e.to_string()))?;

    let mut weights = EnhancerWeights::zeros(header.levels, header.order)?;
    let expected: Vec<(String, Vec<usize>)> = weights
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let declared: Vec<(String, Vec<usize>)> = header
        .tensors
        .into_iter()
        .map(|e| (e.name, e.shape))
        .collect();
    if declared != expected {
        return Err(Error::Manifest(format!(
            "tensor manifest does not describe a {}-level enhancer",
            header.levels
        )));
    }
    let manifest_values: usize = expected
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum();
    if header.payload_values != manifest_values {
        return Err(Error::Manifest(format!(
            "header declares {} values, manifest holds {manifest_values}",
            header.payload_values
        )));
    }
    let payload = &bytes[header_end..];
    let need = 4 * manifest_values;
    if payload.len() < need {
        return Err(Error::Truncated {
            expected: header_end + need,
            found: bytes.len(),
        });
    }
    if payload.len() > need {
        return Err(Error::Manifest(format!(
            "{} trailing bytes after payload",
            payload.len() - need
        )));
    }
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    weights.set_flat(&values)?;
    Ok(weights)
}

/// Write atomically: a temporary sibling file is renamed over `path`.
pub fn save_weights(w: &EnhancerWeights, path: &Path) -> Result<()> {
    let bytes = encode(w)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<EnhancerWeights> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{init_weights, RunConfig};

    fn sample() -> EnhancerWeights {
        init_weights(
            5,
            &RunConfig {
                levels: 3,
                order: CorrectionOrder::LocalToGlobal,
                ..RunConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn encode_decode_is_bit_exact() {
        let w = sample();
        let back = decode(&encode(&w).unwrap()).unwrap();
        assert_eq!(back, w);
        let bits = |w: &EnhancerWeights| {
            w.flat_values()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&back), bits(&w));
    }

    #[test]
    fn bypass_weights_round_trip() {
        let w = EnhancerWeights::zeros(0, CorrectionOrder::GlobalToLocal).unwrap();
        assert_eq!(decode(&encode(&w).unwrap()).unwrap(), w);
    }

    #[test]
    fn distinct_errors_for_corruption() {
        let bytes = encode(&sample()).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(Error::BadMagic)));

        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(
            decode(&bad_version),
            Err(Error::VersionMismatch { found: 9, .. })
        ));

        assert!(matches!(
            decode(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(decode(&bytes[..20]), Err(Error::Truncated { .. })));
        assert!(matches!(decode(&bytes[..2]), Err(Error::Truncated { .. })));

        let mut trailing = bytes.clone();
        trailing.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(decode(&trailing), Err(Error::Manifest(_))));
    }

    #[test]
    fn manifest_mismatch_is_rejected() {
        let w = sample();
        let bytes = encode(&w).unwrap();
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[12..12 + header_len]).unwrap();
        // claim a different depth while keeping the payload
        let tampered = json.replace("\"levels\":3", "\"levels\":4");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
        out.extend_from_slice(&(tampered.len() as u32).to_le_bytes());
        out.extend_from_slice(tampered.as_bytes());
        out.extend_from_slice(&bytes[12 + header_len..]);
        assert!(matches!(decode(&out), Err(Error::Manifest(_))));
    }

    #[test]
    fn save_and_load_through_filesystem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.fqpe");
        let w = sample();
        save_weights(&w, &path).unwrap();
        assert_eq!(load_weights(&path).unwrap(), w);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
