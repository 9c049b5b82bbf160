//! Binary checkpoint: `u64` little-endian header length, a JSON header
//! with the parameter manifest, then the raw little-endian `f64` payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Ocn};
use crate::numerics::{Matrix, ParamSet};

const FORMAT: &str = "ocn-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the payload.
    pub offset: usize,
    pub decay: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    seed: u64,
    step: usize,
    vocab: Vocabulary,
    params: Vec<ManifestEntry>,
    payload_bytes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub seed: u64,
    pub step: usize,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut offset = 0;
        self.params
            .iter()
            .map(|(id, name, m)| {
                let entry = ManifestEntry {
                    name: name.to_string(),
                    shape: [m.rows(), m.cols()],
                    offset,
                    decay: self.params.decays(id),
                };
                offset += m.len() * 8;
                entry
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.manifest();
        let payload_bytes = self.params.num_scalars() * 8;
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            config: self.config.clone(),
            seed: self.seed,
            step: self.step,
            vocab: self.vocab.clone(),
            params,
            payload_bytes,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + payload_bytes);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, m) in self.params.iter() {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 8 {
            return Err(bad("truncated header length"));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let rest = &bytes[8..];
        if header_len > rest.len() {
            return Err(bad("header length exceeds file size"));
        }
        let header: Header = serde_json::from_slice(&rest[..header_len])
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                header.format, header.version
            )));
        }
        let payload = &rest[header_len..];
        if payload.len() != header.payload_bytes {
            return Err(Error::Checkpoint(format!(
                "payload is {} bytes, header says {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        let mut params = ParamSet::new();
        let mut expected_offset = 0;
        for entry in &header.params {
            let [rows, cols] = entry.shape;
            let n = rows * cols;
            if entry.offset != expected_offset {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` at offset {}, expected {expected_offset}",
                    entry.name, entry.offset
                )));
            }
            let end = expected_offset + n * 8;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` overruns payload",
                    entry.name
                )));
            }
            let data = payload[expected_offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let m = Matrix::new(rows, cols, data)
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", entry.name)))?;
            params.insert(entry.name.clone(), m, entry.decay);
            expected_offset = end;
        }
        if expected_offset != payload.len() {
            return Err(bad("manifest shapes do not cover the payload"));
        }
        let ckpt = Self {
            config: header.config,
            vocab: header.vocab,
            seed: header.seed,
            step: header.step,
            params,
        };
        ckpt.model()?;
        Ok(ckpt)
    }

    /// Rebuilds the network structure over the stored parameters.
    pub fn model(&self) -> Result<Ocn> {
        Ocn::bind(self.config.clone(), &self.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
