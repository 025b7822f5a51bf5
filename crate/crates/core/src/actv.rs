// SPDX-License-Identifier: MIT OR Apache-2.0

//! The ACTV v1 binary container.
//!
//! All integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ACTV"
//! 4       2     version (u16) = 1
//! 6       4     d_model (u32)
//! 10      4     n_layers (u32)
//! 14      8     record count (u64)
//! 22      4     metadata length N (u32)
//! 26      N     metadata, UTF-8 JSON object
//! 26+N    P     payload (layout fixed by the metadata "section" tag)
//! 26+N+P  4     CRC-32 (IEEE) of bytes [0, 26+N+P)
//! ```
//!
//! Sections:
//!
//! * `activations` (the default when the tag is absent): `count` records of
//!   `statement_ref u64, layer u16, label u8, dimension u8, split u8,
//!   d_model × f32`.
//! * `registry`: `count` concept vectors of
//!   `raw_norm f64, intercept f64, d_model × f64 direction, d_model × f64 train_mean`;
//!   keys live in the metadata `entries` array.
//! * `weights`: toy-model parameters, f64, tensor names and shapes in
//!   the metadata `tensors` array.

use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ACTV";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 26;

/// Decoded container, payload still raw.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub d_model: u32,
    pub n_layers: u32,
    pub count: u64,
    pub meta: Value,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Activations,
    Registry,
    Weights,
}

impl Section {
    pub fn tag(self) -> &'static str {
        match self {
            Section::Activations => "activations",
            Section::Registry => "registry",
            Section::Weights => "weights",
        }
    }

    pub fn of(meta: &Value) -> Result<Self> {
        match meta.get("section").and_then(Value::as_str) {
            None | Some("activations") => Ok(Section::Activations),
            Some("registry") => Ok(Section::Registry),
            Some("weights") => Ok(Section::Weights),
            Some(other) => Err(Error::Format(format!("unknown section `{other}`"))),
        }
    }

    pub fn expect(meta: &Value, want: Section) -> Result<()> {
        let got = Section::of(meta)?;
        if got == want {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "expected `{}` section, found `{}`",
                want.tag(),
                got.tag()
            )))
        }
    }

    /// Size of one activation record for the given width.
    pub fn activation_record_len(d_model: u32) -> u64 {
        13 + 4 * d_model as u64
    }

    fn payload_len(self, meta: &Value, d_model: u32, count: u64) -> Result<u64> {
        let overflow = || Error::Format("payload size overflows".into());
        match self {
            Section::Activations => count.checked_mul(Self::activation_record_len(d_model)).ok_or_else(overflow),
            Section::Registry => count.checked_mul(16 + 16 * d_model as u64).ok_or_else(overflow),
            Section::Weights => {
                let tensors = meta
                    .get("tensors")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::Format("weights section lacks `tensors`".into()))?;
                let mut total: u64 = 0;
                for t in tensors {
                    let shape = t
                        .get("shape")
                        .and_then(Value::as_array)
                        .ok_or_else(|| Error::Format("tensor lacks `shape`".into()))?;
                    let mut n: u64 = 1;
                    for s in shape {
                        let s = s.as_u64().ok_or_else(|| Error::Format("bad tensor shape".into()))?;
                        n = n.checked_mul(s).ok_or_else(overflow)?;
                    }
                    total = total.checked_add(n.checked_mul(8).ok_or_else(overflow)?).ok_or_else(overflow)?;
                }
                Ok(total)
            }
        }
    }
}

pub fn encode(c: &Container) -> Vec<u8> {
    let meta = serde_json::to_vec(&c.meta).expect("JSON value serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + c.payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&c.d_model.to_le_bytes());
    out.extend_from_slice(&c.n_layers.to_le_bytes());
    out.extend_from_slice(&c.count.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&c.payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn need(bytes: &[u8], needed: u64) -> Result<()> {
    if (bytes.len() as u64) < needed {
        Err(Error::TruncatedFile {
            needed,
            found: bytes.len() as u64,
        })
    } else {
        Ok(())
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses and validates a container. Length checks run before the checksum,
/// so a short file always reports [`Error::TruncatedFile`].
pub fn decode(bytes: &[u8]) -> Result<Container> {
    let prefix = bytes.len().min(4);
    if bytes[..prefix] != MAGIC[..prefix] {
        return Err(Error::BadMagic);
    }
    need(bytes, 6)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    need(bytes, HEADER_LEN as u64)?;
    let d_model = u32_at(bytes, 6);
    let n_layers = u32_at(bytes, 10);
    let count = u64::from_le_bytes(bytes[14..22].try_into().expect("8 bytes"));
    let meta_len = u32_at(bytes, 22) as u64;
    let meta_end = HEADER_LEN as u64 + meta_len;
    need(bytes, meta_end)?;

    let meta: Value = serde_json::from_slice(&bytes[HEADER_LEN..meta_end as usize])
        .map_err(|e| Error::Format(format!("metadata: {e}")))?;
    if !meta.is_object() {
        return Err(Error::Format("metadata is not a JSON object".into()));
    }
    let payload_len = Section::of(&meta)?.payload_len(&meta, d_model, count)?;
    let total = meta_end
        .checked_add(payload_len)
        .and_then(|t| t.checked_add(4))
        .ok_or_else(|| Error::Format("declared size overflows".into()))?;
    need(bytes, total)?;
    if bytes.len() as u64 > total {
        return Err(Error::Format(format!(
            "{} trailing bytes after checksum",
            bytes.len() as u64 - total
        )));
    }
    let body_end = (total - 4) as usize;
    let stored = u32_at(bytes, body_end);
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    Ok(Container {
        d_model,
        n_layers,
        count,
        meta,
        payload: bytes[meta_end as usize..body_end].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Container {
        let d_model = 2;
        let mut payload = Vec::new();
        for r in 0..3u64 {
            payload.extend_from_slice(&r.to_le_bytes());
            payload.extend_from_slice(&1u16.to_le_bytes());
            payload.extend_from_slice(&[0, 1, 0]);
            payload.extend_from_slice(&(r as f32).to_le_bytes());
            payload.extend_from_slice(&(-(r as f32)).to_le_bytes());
        }
        Container {
            d_model,
            n_layers: 1,
            count: 3,
            meta: json!({"section": "activations", "model_id": "t"}),
            payload,
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let bytes = encode(&c);
        assert_eq!(&bytes[..4], b"ACTV");
        assert_eq!(decode(&bytes).unwrap(), c);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic)));
        let mut bytes = encode(&sample());
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::VersionUnsupported(2))));
        assert!(matches!(decode(b"AC"), Err(Error::TruncatedFile { .. })));
        assert!(matches!(decode(b"PK"), Err(Error::BadMagic)));
        assert!(matches!(decode(b""), Err(Error::TruncatedFile { .. })));
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let mut bytes = encode(&sample());
        let n = bytes.len();
        bytes[n - 10] ^= 0x40;
        assert!(matches!(decode(&bytes), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode(&sample());
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn every_truncation_is_typed() {
        let bytes = encode(&sample());
        for cut in 0..bytes.len() {
            assert!(
                matches!(decode(&bytes[..cut]), Err(Error::TruncatedFile { .. })),
                "cut at {cut}"
            );
        }
    }
}
