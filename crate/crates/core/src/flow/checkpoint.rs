//! `CNFM` encoder checkpoints.
//!
//! Layout: `"CNFM"`, format version (u32 LE), header length (u32 LE), UTF-8
//! JSON header, then every parameter value as f64 LE in declaration order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::conditional::{ConditionalFlow, FlowArch};
use super::vae::{ConditionalVae, VaeArch};
use crate::autodiff::Module;
use crate::error::{Error, Result};
use crate::io::{atomic_write, decode_container, encode_container};
use crate::scalar::Real;

pub const ENCODER_MAGIC: &[u8; 4] = b"CNFM";
pub const ENCODER_VERSION: u32 = 1;

/// Family of a pre-trained action encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    #[serde(rename = "cnf")]
    Cnf,
    #[serde(rename = "nf-normal")]
    NfNormal,
    #[serde(rename = "vae")]
    Vae,
}

impl EncoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::Cnf => "cnf",
            EncoderKind::NfNormal => "nf-normal",
            EncoderKind::Vae => "vae",
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnf" => Ok(Self::Cnf),
            "nf-normal" => Ok(Self::NfNormal),
            "vae" => Ok(Self::Vae),
            other => Err(Error::Config(format!(
                "unknown encoder kind `{other}` (expected cnf, nf-normal or vae)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum ArchHeader {
    Flow(FlowArch),
    Vae(VaeArch),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderHeader {
    kind: EncoderKind,
    seed: u64,
    scalar: String,
    num_values: usize,
    arch: ArchHeader,
}

/// A pre-trained action encoder of either family.
#[derive(Clone, Debug)]
pub enum ActionEncoder<T> {
    Flow(ConditionalFlow<T>),
    Vae(ConditionalVae<T>),
}

impl<T: Real> ActionEncoder<T> {
    pub fn kind(&self) -> EncoderKind {
        match self {
            ActionEncoder::Flow(f) if f.arch().tanh_output => EncoderKind::Cnf,
            ActionEncoder::Flow(_) => EncoderKind::NfNormal,
            ActionEncoder::Vae(_) => EncoderKind::Vae,
        }
    }

    pub fn as_flow(&self) -> Option<&ConditionalFlow<T>> {
        match self {
            ActionEncoder::Flow(f) => Some(f),
            ActionEncoder::Vae(_) => None,
        }
    }

    pub fn as_vae(&self) -> Option<&ConditionalVae<T>> {
        match self {
            ActionEncoder::Vae(v) => Some(v),
            ActionEncoder::Flow(_) => None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (arch, seed, values) = match self {
            ActionEncoder::Flow(f) => (ArchHeader::Flow(f.arch().clone()), f.seed(), f.flat_values()),
            ActionEncoder::Vae(v) => (ArchHeader::Vae(v.arch().clone()), v.seed(), v.flat_values()),
        };
        let header = EncoderHeader {
            kind: self.kind(),
            seed,
            scalar: T::type_name().to_string(),
            num_values: values.len(),
            arch,
        };
        let json = serde_json::to_string(&header).expect("header serializes");
        let payload: Vec<f64> = values.iter().map(|v| v.as_f64()).collect();
        encode_container(ENCODER_MAGIC, ENCODER_VERSION, &json, &payload)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = decode_container(bytes, ENCODER_MAGIC, ENCODER_VERSION)?;
        let header: EncoderHeader = serde_json::from_str(&c.header).map_err(|e| Error::Format {
            offset: 12,
            detail: format!("bad encoder header: {e}"),
        })?;
        let mut enc = match header.arch {
            ArchHeader::Flow(arch) => ActionEncoder::Flow(ConditionalFlow::new(arch, header.seed)?),
            ArchHeader::Vae(arch) => ActionEncoder::Vae(ConditionalVae::new(arch, header.seed)?),
        };
        if enc.kind() != header.kind {
            return Err(Error::Format {
                offset: 12,
                detail: format!("header kind {} disagrees with architecture {}", header.kind, enc.kind()),
            });
        }
        let expected = match &enc {
            ActionEncoder::Flow(f) => f.num_values(),
            ActionEncoder::Vae(v) => v.num_values(),
        };
        if header.num_values != expected {
            return Err(Error::Format {
                offset: 12,
                detail: format!("header declares {} values, architecture has {expected}", header.num_values),
            });
        }
        let values: Vec<T> = c.f64_payload(expected)?.into_iter().map(T::lit).collect();
        match &mut enc {
            ActionEncoder::Flow(f) => f.load_flat(&values)?,
            ActionEncoder::Vae(v) => v.load_flat(&values)?,
        }
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn perturbed_flow() -> ConditionalFlow<f64> {
        let mut f = ConditionalFlow::new(FlowArch::cnf(2, 3, 2, vec![8]), 11).unwrap();
        let mut k = 0.0;
        for p in f.parameters_mut() {
            for v in p.value.data_mut() {
                k += 0.001;
                *v += k;
            }
        }
        f
    }

    #[test]
    fn flow_checkpoint_roundtrip_is_exact() {
        let f = perturbed_flow();
        let bytes = ActionEncoder::Flow(f.clone()).to_bytes();
        assert_eq!(&bytes[..4], b"CNFM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let back = ActionEncoder::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(back.kind(), EncoderKind::Cnf);
        assert_eq!(back.as_flow().unwrap().flat_values(), f.flat_values());
        assert_eq!(back.to_bytes(), bytes);
        let a = Tensor::from_f64(1, 2, &[0.3, -0.2]).unwrap();
        let s = Tensor::from_f64(1, 3, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(back.as_flow().unwrap().log_prob(&a, &s).unwrap(), f.log_prob(&a, &s).unwrap());
    }

    #[test]
    fn truncated_and_padded_checkpoints_rejected() {
        let bytes = ActionEncoder::Flow(perturbed_flow()).to_bytes();
        let err = ActionEncoder::<f64>::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Length { .. }), "{err}");
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(ActionEncoder::<f64>::from_bytes(&padded).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(ActionEncoder::<f64>::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn vae_checkpoint_roundtrip() {
        let v = ConditionalVae::<f64>::new(VaeArch::new(2, 2, vec![8]), 5).unwrap();
        let enc = ActionEncoder::Vae(v);
        let back = ActionEncoder::<f64>::from_bytes(&enc.to_bytes()).unwrap();
        assert_eq!(back.kind(), EncoderKind::Vae);
        assert_eq!(back.to_bytes(), enc.to_bytes());
    }
}
