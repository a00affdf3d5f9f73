//! Binary checkpoint container: magic, version, a JSON header with the
//! configuration, model spec, history and layout, then the parameter values
//! as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, EpochRecord, TrainConfig};
use crate::data::Standardizer;
use crate::genmodel::ModelSpec;
use crate::ndcore::{Layout, ParamVector};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DPSOMCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    spec: ModelSpec,
    epoch: usize,
    history: Vec<EpochRecord>,
    standardizer: Option<Standardizer>,
    layout: Layout,
}

fn format_err(offset: u64, msg: impl Into<String>) -> Error {
    Error::Format { offset, msg: msg.into() }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            spec: self.spec.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            standardizer: self.standardizer.clone(),
            layout: self.params.layout.clone(),
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.params.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(format_err(bytes.len() as u64, "truncated checkpoint preamble"));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(format_err(0, "bad checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(format_err(8, format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let header_end = 20u64
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| format_err(12, "header length exceeds file size"))? as usize;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| format_err(20, format!("invalid header: {e}")))?;
        let body = &bytes[header_end..];
        let n = header.layout.len();
        if body.len() != 8 * n {
            return Err(format_err(
                header_end as u64,
                format!("expected {} parameter bytes, found {}", 8 * n, body.len()),
            ));
        }
        let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let params = ParamVector { values, layout: header.layout };
        header.spec.check_params(&params)?;
        Ok(Checkpoint {
            spec: header.spec,
            config: header.config,
            params,
            epoch: header.epoch,
            history: header.history,
            standardizer: header.standardizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::tiny_config;
    use super::*;
    use crate::trainer::{LossReport, Phase};

    fn sample() -> Checkpoint {
        let config = tiny_config();
        let spec = config.model_spec(5, true);
        let mut params = spec.init(9);
        params.values[0] = 0.1 + 0.2;
        params.values[1] = f64::MIN_POSITIVE;
        Checkpoint {
            spec,
            config,
            params,
            epoch: 3,
            history: vec![EpochRecord {
                phase: Phase::Joint,
                epoch: 2,
                loss: LossReport { total: 1.0 / 3.0, ..Default::default() },
                purity: Some(0.7),
                nmi: None,
            }],
            standardizer: None,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let bits = |p: &ParamVector| p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&ck.params));
        assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..10]).is_err());
    }
}
