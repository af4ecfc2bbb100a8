//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `SWCMCKPT`, a little-endian `u64` manifest
//! length, the JSON manifest, then every tensor as little-endian `f64`
//! values concatenated in manifest order. Tied parameters are stored once
//! under their canonical name and listed in the tying map. Optional
//! optimizer moments follow the parameters as `optim.m.*` / `optim.v.*`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{Error, Result};
use crate::grafting::{DecoderLayout, GraftOptions};
use crate::model::{ModelConfig, SharedWeightModel};
use crate::train::{OptimizerState, TrainState};

pub const MAGIC: &[u8; 8] = b"SWCMCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f64le";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload.
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub step: u64,
    pub optimizer_t: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub layout: DecoderLayout,
    pub graft: GraftOptions,
    pub tying_map: BTreeMap<String, String>,
    pub tensors: Vec<TensorRecord>,
    pub vocab: Option<Vocab>,
    pub train: Option<TrainMeta>,
}

/// Everything a checkpoint can hold.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: SharedWeightModel,
    pub vocab: Option<Vocab>,
    pub train_state: Option<TrainState>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Serializes a model (plus optional vocabulary and training state).
pub fn to_bytes(model: &SharedWeightModel, vocab: Option<&Vocab>, state: Option<&TrainState>) -> Result<Vec<u8>> {
    let store = &model.store;
    let mut blobs: Vec<(String, Vec<usize>, &[f64])> = store
        .ids()
        .map(|id| {
            let t = store.get(id);
            (store.name(id).to_string(), t.shape().to_vec(), t.data())
        })
        .collect();
    if let Some(st) = state {
        if st.optimizer.m.len() != store.len() || st.optimizer.v.len() != store.len() {
            return Err(bad("optimizer state does not match the model"));
        }
        for (kind, moments) in [("m", &st.optimizer.m), ("v", &st.optimizer.v)] {
            for id in store.ids() {
                blobs.push((
                    format!("optim.{kind}.{}", store.name(id)),
                    store.get(id).shape().to_vec(),
                    &moments[id.index()],
                ));
            }
        }
    }
    let mut offset = 0u64;
    let tensors = blobs
        .iter()
        .map(|(name, shape, data)| {
            let length = (data.len() * 8) as u64;
            let rec = TensorRecord {
                name: name.clone(),
                shape: shape.clone(),
                dtype: DTYPE.into(),
                offset,
                length,
            };
            offset += length;
            rec
        })
        .collect();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model_config: model.config.clone(),
        layout: model.layout.clone(),
        graft: model.graft.clone(),
        tying_map: store.tying_map(),
        tensors,
        vocab: vocab.cloned(),
        train: state.map(|s| TrainMeta {
            step: s.step,
            optimizer_t: s.optimizer.t,
        }),
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in &blobs {
        for v in data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Splits a checkpoint into its manifest and payload, checking framing.
pub fn parse_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let end = 16u64
        .checked_add(len)
        .filter(|&e| e <= bytes.len() as u64)
        .ok_or_else(|| bad("manifest length exceeds file size"))? as usize;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..end]).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", manifest.format_version)));
    }
    let payload = &bytes[end..];
    let mut expected = 0u64;
    for t in &manifest.tensors {
        let numel: usize = t.shape.iter().product();
        if t.dtype != DTYPE || t.offset != expected || t.length != numel as u64 * 8 {
            return Err(bad(format!("tensor record {} is inconsistent", t.name)));
        }
        expected += t.length;
    }
    if expected != payload.len() as u64 {
        return Err(bad(format!(
            "payload has {} bytes, manifest describes {expected}",
            payload.len()
        )));
    }
    Ok((manifest, payload))
}

fn read_f64s(payload: &[u8], rec: &TensorRecord) -> Vec<f64> {
    payload[rec.offset as usize..(rec.offset + rec.length) as usize]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect()
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let (manifest, payload) = parse_manifest(bytes)?;
    manifest
        .model_config
        .validate()
        .map_err(|e| bad(format!("model config: {e}")))?;
    let mut model = SharedWeightModel::skeleton(manifest.model_config.clone(), manifest.layout.clone(), manifest.graft.clone())
        .map_err(|e| bad(format!("cannot rebuild model: {e}")))?;
    if model.store.tying_map() != manifest.tying_map {
        return Err(bad("tying map does not match the model structure"));
    }
    let by_name: BTreeMap<&str, &TensorRecord> = manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    if by_name.len() != manifest.tensors.len() {
        return Err(bad("duplicate tensor names"));
    }
    let n = model.store.len();
    let expected = if manifest.train.is_some() { 3 * n } else { n };
    if manifest.tensors.len() != expected {
        return Err(bad(format!("expected {expected} tensors, found {}", manifest.tensors.len())));
    }
    let ids: Vec<_> = model.store.ids().collect();
    let fetch = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
        let rec = by_name.get(name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
        if rec.shape != shape {
            return Err(bad(format!("tensor {name} has shape {:?}, expected {shape:?}", rec.shape)));
        }
        Ok(read_f64s(payload, rec))
    };
    for &id in &ids {
        let name = model.store.name(id).to_string();
        let shape = model.store.get(id).shape().to_vec();
        let data = fetch(&name, &shape)?;
        model.store.get_mut(id).data_mut().copy_from_slice(&data);
    }
    let train_state = match &manifest.train {
        None => None,
        Some(meta) => {
            let mut opt = OptimizerState::new(&model.store);
            opt.t = meta.optimizer_t;
            for &id in &ids {
                let name = model.store.name(id);
                let shape = model.store.get(id).shape();
                opt.m[id.index()] = fetch(&format!("optim.m.{name}"), shape)?;
                opt.v[id.index()] = fetch(&format!("optim.v.{name}"), shape)?;
            }
            Some(TrainState {
                step: meta.step,
                optimizer: opt,
            })
        }
    };
    Ok(Checkpoint {
        model,
        vocab: manifest.vocab,
        train_state,
    })
}

/// Writes to a sibling temporary file first, then renames into place.
pub fn save(path: &Path, model: &SharedWeightModel, vocab: Option<&Vocab>, state: Option<&TrainState>) -> Result<()> {
    let bytes = to_bytes(model, vocab, state)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&fs::read(path)?)
}

/// Reads only the manifest, for inspection.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let bytes = fs::read(path)?;
    Ok(parse_manifest(&bytes)?.0)
}

/// Bitwise equality, including the tying map.
pub fn models_bitwise_equal(a: &SharedWeightModel, b: &SharedWeightModel) -> bool {
    a.config == b.config
        && a.layout == b.layout
        && a.graft == b.graft
        && a.store.len() == b.store.len()
        && a.store.tying_map() == b.store.tying_map()
        && a.store.ids().zip(b.store.ids()).all(|(i, j)| {
            let (x, y) = (a.store.get(i), b.store.get(j));
            a.store.name(i) == b.store.name(j)
                && x.shape() == y.shape()
                && x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grafting::assemble_model;
    use crate::model::EncoderInit;

    fn tiny() -> SharedWeightModel {
        let cfg = ModelConfig {
            n_encoder_layers: 2,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab_size: 12,
            max_seq_len: 10,
            insert_every_x: 1,
            layer_norm_eps: 1e-5,
        };
        assemble_model(cfg, EncoderInit::Random, GraftOptions::default(), 5).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = tiny();
        let back = from_bytes(&to_bytes(&m, None, None).unwrap()).unwrap();
        assert!(models_bitwise_equal(&m, &back.model));
        assert!(back.train_state.is_none());
    }

    #[test]
    fn corrupt_inputs_are_checkpoint_errors() {
        let bytes = to_bytes(&tiny(), None, None).unwrap();
        assert!(matches!(from_bytes(b"nope"), Err(Error::Checkpoint(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 8]), Err(Error::Checkpoint(_))));
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(matches!(from_bytes(&wrong_magic), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn offsets_are_contiguous() {
        let bytes = to_bytes(&tiny(), None, None).unwrap();
        let (m, payload) = parse_manifest(&bytes).unwrap();
        let mut next = 0;
        for t in &m.tensors {
            assert_eq!(t.offset, next);
            next += t.length;
        }
        assert_eq!(next as usize, payload.len());
        assert_eq!(m.tying_map["output_projection.weight"], "embeddings.tokens");
    }
}
