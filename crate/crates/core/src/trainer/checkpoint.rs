//! Checkpoint directories: `manifest.json` plus one tensor file per
//! parameter and optimizer moment.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, TrainConfig, TrainState};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::ScheduleConfig;
use crate::error::{Error, Result};
use crate::numerics::io::{self, DType};
use crate::numerics::{ParamStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const KINDS: [&str; 3] = ["param", "adam_m", "adam_v"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Decimal word position, a 128-bit value.
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// `param`, `adam_m` or `adam_v`.
    pub kind: String,
    pub file: String,
    pub dims: Vec<usize>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub iteration: usize,
    pub adam_step: u64,
    pub rng: RngState,
    pub dtype: String,
    /// SHA-256 over parameter names and values, as [`ParamStore::content_hash`].
    pub param_hash: String,
    pub tensors: Vec<TensorEntry>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `state` to `dir`, replacing any previous checkpoint there.
pub fn save_checkpoint(dir: &Path, state: &TrainState) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let dtype = if state.config.fp64 { DType::F64 } else { DType::F32 };
    let params = state.model.params();
    let mut tensors = Vec::new();
    for id in params.ids() {
        let name = params.name(id);
        let value = params.value(id);
        let moments = [
            value.clone(),
            Tensor::new(value.dims().to_vec(), state.adam.m[id.index()].clone())?,
            Tensor::new(value.dims().to_vec(), state.adam.v[id.index()].clone())?,
        ];
        for (kind, t) in KINDS.iter().zip(moments) {
            let file = format!("tensors/{kind}/{name}.mdlt");
            let bytes = io::encode(&t, dtype);
            write_file(&dir.join(&file), &bytes)?;
            tensors.push(TensorEntry {
                name: name.to_string(),
                kind: kind.to_string(),
                file,
                dims: t.dims().to_vec(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
        }
    }
    let rng = state.rng();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        model: state.model.config().clone(),
        schedule: state.schedule_config.clone(),
        train: state.config.clone(),
        iteration: state.iter,
        adam_step: state.adam.step,
        rng: RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        },
        dtype: if state.config.fp64 { "f64" } else { "f32" }.to_string(),
        param_hash: params.content_hash(),
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_file(&dir.join("manifest.json"), json.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {}",
            m.format_version
        )));
    }
    Ok(m)
}

fn read_tensor(dir: &Path, entry: &TensorEntry) -> Result<Tensor> {
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    if digest != entry.sha256 {
        return Err(Error::Checkpoint(format!("hash mismatch for {}", path.display())));
    }
    let (t, _) = io::decode(&bytes)?;
    if t.dims() != entry.dims.as_slice() {
        return Err(Error::Checkpoint(format!("dims mismatch for {}", path.display())));
    }
    Ok(t)
}

fn load_kind(dir: &Path, m: &Manifest, kind: &str) -> Result<std::collections::BTreeMap<String, Tensor>> {
    m.tensors
        .iter()
        .filter(|e| e.kind == kind)
        .map(|e| Ok((e.name.clone(), read_tensor(dir, e)?)))
        .collect()
}

/// The model stored in `dir` together with its manifest.
pub fn load_model(dir: &Path) -> Result<(Denoiser, Manifest)> {
    let m = read_manifest(dir)?;
    let params = ParamStore::new(load_kind(dir, &m, "param")?);
    if params.content_hash() != m.param_hash {
        return Err(Error::Checkpoint("parameter hash does not match manifest".into()));
    }
    let model = Denoiser::from_params(m.model.clone(), params)?;
    Ok((model, m))
}

/// Full training state, ready to resume.
pub fn load_checkpoint(dir: &Path) -> Result<TrainState> {
    let (model, m) = load_model(dir)?;
    let moments = |kind| -> Result<Vec<Vec<f64>>> {
        let map = load_kind(dir, &m, kind)?;
        model
            .params()
            .names()
            .iter()
            .map(|n| {
                map.get(n)
                    .map(|t| t.data().to_vec())
                    .ok_or_else(|| Error::Checkpoint(format!("missing {kind} tensor `{n}`")))
            })
            .collect()
    };
    let adam = Adam {
        lr: m.train.lr,
        step: m.adam_step,
        m: moments("adam_m")?,
        v: moments("adam_v")?,
    };
    let bad_rng = |what: &str| Error::Checkpoint(format!("invalid rng {what}"));
    let seed: [u8; 32] = hex::decode(&m.rng.seed)
        .map_err(|_| bad_rng("seed"))?
        .try_into()
        .map_err(|_| bad_rng("seed"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(m.rng.stream);
    rng.set_word_pos(m.rng.word_pos.parse().map_err(|_| bad_rng("word position"))?);
    TrainState::from_parts(model, adam, m.schedule.clone(), m.train.clone(), m.iteration, rng)
}
