//! Model container.
//!
//! ```text
//! offset 0   8 bytes   magic "ECGSSLMD"
//! offset 8   u64 LE    manifest length n
//! offset 16  n bytes   UTF-8 JSON manifest
//! then                 every array's f32 values, little-endian, in manifest order
//! ```
//!
//! The manifest records the format version, the architecture (`pretext` or
//! `emotion`), the trunk and head shapes, and for every array its name,
//! shape, trainable flag and element offset into the data block. Files
//! written by a newer format version are rejected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmotionNetwork, Head, HeadUnits, PretextNetwork, Trunk, TrunkSpec};
use crate::error::{Error, Result};
use crate::nn::{Param, ParamSet, Tensor};

pub const MAGIC: &[u8; 8] = b"ECGSSLMD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pretext,
    Emotion,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    architecture: ModelKind,
    trunk: TrunkSpec,
    head_dims: Vec<Vec<usize>>,
    #[serde(default)]
    head_units: HeadUnits,
    arrays: Vec<ArrayEntry>,
}

/// Either network, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Pretext(PretextNetwork<f32>),
    Emotion(EmotionNetwork<f32>),
}

impl ModelFile {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelFile::Pretext(_) => ModelKind::Pretext,
            ModelFile::Emotion(_) => ModelKind::Emotion,
        }
    }

    pub fn trunk(&self) -> &Trunk<f32> {
        match self {
            ModelFile::Pretext(n) => &n.trunk,
            ModelFile::Emotion(n) => &n.trunk,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (trunk, heads, units): (&Trunk<f32>, Vec<&Head<f32>>, HeadUnits) = match self {
            ModelFile::Pretext(n) => (&n.trunk, n.heads.iter().collect(), n.head_units),
            ModelFile::Emotion(n) => (&n.trunk, vec![&n.head], HeadUnits::One),
        };
        let all: Vec<&Param<f32>> = trunk
            .params
            .params
            .iter()
            .chain(heads.iter().flat_map(|h| h.params.params.iter()))
            .collect();
        let mut offset = 0;
        let arrays = all
            .iter()
            .map(|p| {
                let e = ArrayEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    trainable: p.trainable,
                    offset,
                };
                offset += p.value.len();
                e
            })
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            architecture: self.kind(),
            trunk: trunk.spec.clone(),
            head_dims: heads.iter().map(|h| h.dims.clone()).collect(),
            head_units: units,
            arrays,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serialises");
        let mut out = Vec::with_capacity(16 + json.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in all {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, msg);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not an ecgssl model file (bad magic)".into()));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes
            .get(16..16 + n)
            .ok_or_else(|| bad("truncated manifest".into()))?;
        let version: serde_json::Value =
            serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
        let v = version.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if v > FORMAT_VERSION as u64 {
            return Err(bad(format!(
                "model format version {v} is newer than the supported version {FORMAT_VERSION}"
            )));
        }
        let m: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
        let data = &bytes[16 + n..];
        let total: usize = m.arrays.iter().map(|a| a.shape.iter().product::<usize>()).sum();
        if data.len() != total * 4 {
            return Err(bad(format!("expected {} data bytes, found {}", total * 4, data.len())));
        }
        let mut params = Vec::with_capacity(m.arrays.len());
        for a in &m.arrays {
            let len: usize = a.shape.iter().product();
            let raw = data
                .get(a.offset * 4..(a.offset + len) * 4)
                .ok_or_else(|| bad(format!("array {} out of range", a.name)))?;
            let vals = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.push(Param {
                name: a.name.clone(),
                value: Tensor::from_vec(&a.shape, vals).map_err(|e| bad(e.to_string()))?,
                trainable: a.trainable,
            });
        }

        // Rebuild the architecture, then check names and shapes against it.
        let trunk_ref = Trunk::<f32>::new(m.trunk.clone(), 0).map_err(|e| bad(e.to_string()))?;
        let n_trunk = trunk_ref.params.len();
        let take = |reference: &ParamSet<f32>, got: &[Param<f32>]| -> Result<ParamSet<f32>> {
            if reference.len() != got.len() {
                return Err(bad(format!("expected {} arrays, found {}", reference.len(), got.len())));
            }
            for (r, g) in reference.params.iter().zip(got) {
                if r.name != g.name || r.value.shape() != g.value.shape() {
                    return Err(bad(format!(
                        "array {} {:?} does not match architecture ({} {:?})",
                        g.name,
                        g.value.shape(),
                        r.name,
                        r.value.shape()
                    )));
                }
            }
            Ok(ParamSet { params: got.to_vec() })
        };
        if params.len() < n_trunk {
            return Err(bad("missing trunk arrays".into()));
        }
        let trunk = Trunk {
            spec: m.trunk.clone(),
            params: take(&trunk_ref.params, &params[..n_trunk])?,
        };
        let mut rest = &params[n_trunk..];
        let mut heads = Vec::with_capacity(m.head_dims.len());
        for (j, dims) in m.head_dims.iter().enumerate() {
            let prefix = match m.architecture {
                ModelKind::Pretext => format!("head{j}"),
                ModelKind::Emotion => "emotion".to_string(),
            };
            let reference = Head::<f32>::new(&prefix, dims, 0, &[]).map_err(|e| bad(e.to_string()))?;
            let k = reference.params.len();
            if rest.len() < k {
                return Err(bad(format!("missing arrays for {prefix}")));
            }
            heads.push(Head {
                dims: dims.clone(),
                params: take(&reference.params, &rest[..k])?,
            });
            rest = &rest[k..];
        }
        if !rest.is_empty() {
            return Err(bad(format!("{} unexpected trailing arrays", rest.len())));
        }
        match m.architecture {
            ModelKind::Pretext => Ok(ModelFile::Pretext(PretextNetwork {
                trunk,
                heads,
                head_units: m.head_units,
            })),
            ModelKind::Emotion => {
                let head = heads
                    .pop()
                    .filter(|_| heads.is_empty())
                    .ok_or_else(|| bad("emotion model needs exactly one head".into()))?;
                Ok(ModelFile::Emotion(EmotionNetwork { trunk, head }))
            }
        }
    }
}

pub fn save_model(model: &ModelFile, path: &Path) -> Result<()> {
    fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelFile::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{transfer_weights, ConvBlockSpec};

    fn spec() -> TrunkSpec {
        TrunkSpec {
            input_len: 32,
            blocks: vec![ConvBlockSpec { kernel: 3, filters: 2 }, ConvBlockSpec { kernel: 2, filters: 3 }],
            convs_per_block: 2,
            pool: 4,
            pool_stride: 2,
        }
    }

    #[test]
    fn pretext_round_trip_is_bit_exact() {
        let net = PretextNetwork::<f32>::with_spec(spec(), 5, HeadUnits::Two, 9).unwrap();
        let file = ModelFile::Pretext(net);
        let bytes = file.to_bytes();
        let back = ModelFile::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, file);
    }

    #[test]
    fn emotion_round_trip_keeps_frozen_flags() {
        let net = PretextNetwork::<f32>::with_spec(spec(), 5, HeadUnits::One, 9).unwrap();
        let trunk = transfer_weights(&net.trunk, &spec()).unwrap();
        let emo = EmotionNetwork::new(trunk, 2, 4).unwrap();
        let file = ModelFile::Emotion(emo);
        let back = ModelFile::from_bytes(&file.to_bytes(), Path::new("mem")).unwrap();
        assert!(back.trunk().is_frozen());
        assert_eq!(back, file);
    }

    #[test]
    fn newer_version_rejected() {
        let net = PretextNetwork::<f32>::with_spec(spec(), 5, HeadUnits::One, 9).unwrap();
        let bytes = ModelFile::Pretext(net).to_bytes();
        let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = String::from_utf8(bytes[16..16 + n].to_vec()).unwrap();
        let bumped = json.replace("\"format_version\":1", "\"format_version\":99");
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(bumped.len() as u64).to_le_bytes());
        out.extend_from_slice(bumped.as_bytes());
        out.extend_from_slice(&bytes[16 + n..]);
        let err = ModelFile::from_bytes(&out, Path::new("m.bin")).unwrap_err().to_string();
        assert!(err.contains("newer"), "{err}");
    }

    #[test]
    fn truncated_data_rejected() {
        let net = PretextNetwork::<f32>::with_spec(spec(), 5, HeadUnits::One, 9).unwrap();
        let bytes = ModelFile::Pretext(net).to_bytes();
        assert!(ModelFile::from_bytes(&bytes[..bytes.len() - 4], Path::new("m")).is_err());
        assert!(ModelFile::from_bytes(b"garbage", Path::new("m")).is_err());
    }
}
