//! Checkpoint container.
//!
//! ```text
//! magic        8 bytes   "RDGCKPT\0"
//! header_len   u32 LE
//! header       JSON: format_version, component, architecture, blocks [{name, shape}], provenance
//! payload      f32 LE values of every block, in header order
//! ```

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RDGCKPT\0";

/// What a checkpoint holds; loaders refuse a mismatched slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Encoder,
    Decoder,
    Projection,
    Classifier,
    SslHead,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Component::Encoder => "encoder",
            Component::Decoder => "decoder",
            Component::Projection => "projection",
            Component::Classifier => "classifier",
            Component::SslHead => "ssl_head",
        };
        f.write_str(s)
    }
}

/// Where a checkpoint came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_digest: String,
    pub step: u64,
    pub seed: u64,
    pub method: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub component: Component,
    /// Serialized network configuration (for example a `UNetConfig`).
    pub architecture: serde_json::Value,
    pub params: ParamSet<f32>,
    pub provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct Block {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    component: Component,
    architecture: serde_json::Value,
    blocks: Vec<Block>,
    provenance: Provenance,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            component: self.component,
            architecture: self.architecture.clone(),
            blocks: self
                .params
                .iter()
                .map(|p| Block {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                })
                .collect(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.params.numel());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for p in self.params.iter() {
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(12..12 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("malformed header: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_VERSION})",
                header.format_version
            )));
        }
        let mut payload = &bytes[12 + len..];
        let mut params = ParamSet::new();
        for block in header.blocks {
            let n = block
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| bad("block shape overflows"))?;
            let need = n.checked_mul(4).ok_or_else(|| bad("block shape overflows"))?;
            if payload.len() < need {
                return Err(Error::Checkpoint(format!(
                    "block {} with shape {:?} exceeds the payload",
                    block.name, block.shape
                )));
            }
            let data = payload[..need]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            payload = &payload[need..];
            params
                .insert(block.name, block.shape, data)
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        if !payload.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing payload bytes", payload.len())));
        }
        Ok(Checkpoint {
            component: header.component,
            architecture: header.architecture,
            params,
            provenance: header.provenance,
        })
    }

    /// Fails unless this checkpoint holds `expected`.
    pub fn expect_component(&self, expected: Component) -> Result<()> {
        if self.component != expected {
            return Err(Error::Checkpoint(format!(
                "component mismatch: file holds {}, slot expects {expected}",
                self.component
            )));
        }
        Ok(())
    }

    /// Deserializes the architecture record.
    pub fn architecture_as<A: serde::de::DeserializeOwned>(&self) -> Result<A> {
        serde_json::from_value(self.architecture.clone())
            .map_err(|e| Error::Checkpoint(format!("architecture record: {e}")))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint and checks that it holds `expected`.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Component) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Dependency(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    ckpt.expect_component(expected)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamSet::new();
        params.insert("a.weight", vec![2, 3], (0..6).map(|i| i as f32 * 0.1 - 0.2).collect()).unwrap();
        params.insert("a.bias", vec![2], vec![f32::MIN_POSITIVE, -0.0]).unwrap();
        Checkpoint {
            component: Component::Encoder,
            architecture: serde_json::json!({"depth": 5}),
            params,
            provenance: Provenance {
                config_digest: "abc".into(),
                step: 7,
                seed: 3,
                method: "enhance".into(),
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.params.iter().zip(c.params.iter()) {
            let bits = |p: &[f32]| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn rejects_wrong_component_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        save_checkpoint(&sample(), &path).unwrap();
        assert!(load_checkpoint(&path, Component::Encoder).is_ok());
        let err = load_checkpoint(&path, Component::Decoder).unwrap_err();
        assert!(err.to_string().contains("component mismatch"), "{err}");

        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());

        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = String::from_utf8(bytes[12..12 + len].to_vec()).unwrap();
        let header = header.replace("\"format_version\":1", "\"format_version\":9");
        let mut future = MAGIC.to_vec();
        future.extend_from_slice(&(header.len() as u32).to_le_bytes());
        future.extend_from_slice(header.as_bytes());
        future.extend_from_slice(&bytes[12 + len..]);
        let err = Checkpoint::from_bytes(&future).unwrap_err();
        assert!(err.to_string().contains("format_version"), "{err}");
        assert!(matches!(
            load_checkpoint(dir.path().join("missing"), Component::Encoder),
            Err(Error::Dependency(_))
        ));
    }
}
