//! Single-file model container.
//!
//! Layout: magic `FMOE`, container version (u32), section count (u32), then
//! sections of a 4-byte tag, a u64 payload length and the payload. All
//! integers are little-endian. Tags:
//!
//! * `NORM`: feature dim (u32), means, stds, degree mean, degree std (f64);
//! * `XAVG`, `XDEG`, `GATE`: model blobs as written by [`crate::nn::write_model`];
//! * `META`: UTF-8 `key=value` lines, including `gate_input`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experts::ExpertBundle;
use crate::gate::{GateInputMode, GateModel};
use crate::ingest::NormStats;
use crate::nn::{model_from_bytes, model_to_bytes, read_magic_version, read_u32, MAGIC};

pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelContainer {
    pub bundle: ExpertBundle,
    pub gate: GateModel,
    /// Free-form provenance such as seeds and window length.
    pub meta: BTreeMap<String, String>,
}

fn norm_bytes(n: &NormStats) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * (2 * n.dim() + 2));
    out.extend_from_slice(&(n.dim() as u32).to_le_bytes());
    for v in n.mean.iter().chain(&n.std).chain([&n.deg_mean, &n.deg_std]) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated normalization section".into()))?;
    Ok(f64::from_le_bytes(b))
}

fn norm_from_bytes(mut b: &[u8]) -> Result<NormStats> {
    let d = read_u32(&mut b)? as usize;
    if b.len() != 8 * (2 * d + 2) {
        return Err(Error::Format("normalization section has the wrong length".into()));
    }
    let mean = (0..d).map(|_| read_f64(&mut b)).collect::<Result<Vec<_>>>()?;
    let std = (0..d).map(|_| read_f64(&mut b)).collect::<Result<Vec<_>>>()?;
    Ok(NormStats {
        mean,
        std,
        deg_mean: read_f64(&mut b)?,
        deg_std: read_f64(&mut b)?,
    })
}

impl ModelContainer {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut meta = self.meta.clone();
        meta.insert("gate_input".into(), self.gate.mode.to_string());
        let meta_text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let sections: [(&[u8; 4], Vec<u8>); 5] = [
            (b"NORM", norm_bytes(&self.bundle.norm)),
            (b"XAVG", model_to_bytes(&self.bundle.avg)),
            (b"XDEG", model_to_bytes(&self.bundle.deg)),
            (b"GATE", model_to_bytes(&self.gate.mlp)),
            (b"META", meta_text.into_bytes()),
        ];
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (tag, payload) in sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let version = read_magic_version(&mut r)?;
        if version != CONTAINER_VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version} (this build reads {CONTAINER_VERSION})"
            )));
        }
        let count = read_u32(&mut r)?;
        let mut sections: BTreeMap<[u8; 4], &[u8]> = BTreeMap::new();
        for _ in 0..count {
            if r.len() < 12 {
                return Err(Error::Format("truncated section header".into()));
            }
            let tag: [u8; 4] = r[..4].try_into().unwrap();
            let len = u64::from_le_bytes(r[4..12].try_into().unwrap());
            r = &r[12..];
            if (r.len() as u64) < len {
                return Err(Error::Format(format!(
                    "section {} is truncated",
                    String::from_utf8_lossy(&tag)
                )));
            }
            let (payload, rest) = r.split_at(len as usize);
            sections.insert(tag, payload);
            r = rest;
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after the last section".into()));
        }
        let get = |tag: &[u8; 4]| {
            sections.get(tag).copied().ok_or_else(|| {
                Error::Format(format!("missing section {}", String::from_utf8_lossy(tag)))
            })
        };
        let norm = norm_from_bytes(get(b"NORM")?)?;
        let meta_text = std::str::from_utf8(get(b"META")?)
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let mut meta: BTreeMap<String, String> = meta_text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let mode: GateInputMode = meta
            .remove("gate_input")
            .ok_or_else(|| Error::Format("metadata lacks gate_input".into()))?
            .parse()?;
        let bundle = ExpertBundle {
            avg: model_from_bytes(get(b"XAVG")?)?,
            deg: model_from_bytes(get(b"XDEG")?)?,
            norm,
        };
        let gate = GateModel {
            mlp: model_from_bytes(get(b"GATE")?)?,
            mode,
        };
        let d = bundle.feature_dim();
        for (name, m, want) in [
            ("avg expert", &bundle.avg, 3 * d),
            ("deg expert", &bundle.deg, d + 2),
        ] {
            if m.input_dim() != want {
                return Err(Error::Format(format!(
                    "{name} expects {} inputs, container features imply {want}",
                    m.input_dim()
                )));
            }
        }
        gate.check(d)
            .map_err(|e| Error::Format(format!("gate does not fit the experts: {e}")))?;
        Ok(ModelContainer { bundle, gate, meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn container() -> ModelContainer {
        let mut norm = NormStats::identity(3);
        norm.mean = vec![1.5, -2.0, 1e-300];
        norm.deg_std = 0.75;
        ModelContainer {
            bundle: ExpertBundle::new(norm, &[5], Activation::Relu, 4).unwrap(),
            gate: GateModel::new(3, &[6, 4], Activation::Tanh, GateInputMode::PerSample, 4).unwrap(),
            meta: [("seed".to_string(), "4".to_string())].into(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = container();
        let bytes = c.to_bytes().unwrap();
        let back = ModelContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = container().to_bytes().unwrap();
        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(ModelContainer::from_bytes(&wrong_version).is_err());
        assert!(ModelContainer::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(ModelContainer::from_bytes(&wrong_magic).is_err());
    }
}
