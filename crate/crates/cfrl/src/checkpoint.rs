//! Versioned binary checkpoints and their text manifests.
//!
//! Every binary file starts with an 8-byte magic and a `u32` version. All
//! integers are `u64` and all reals `f64`, little-endian.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cfrl_core::agent::{EpisodeLog, ReplayMemory, RngState, Transition, TrainerState};
use cfrl_core::baselines::LinUcbModel;
use cfrl_core::env::{MaskBase, MaskSnapshot, Observation, SparseVector};
use cfrl_core::mf::MfModel;
use cfrl_core::qnet::{Activation, Layer, QNetwork};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::binio::{read_header, write_header, Reader, Writer};
use crate::IoError;

pub const MF_MAGIC: &[u8; 8] = b"CFRLMF\0\0";
pub const QNET_MAGIC: &[u8; 8] = b"CFRLQN\0\0";
pub const TRAINER_MAGIC: &[u8; 8] = b"CFRLTS\0\0";
pub const LINUCB_MAGIC: &[u8; 8] = b"CFRLLU\0\0";
pub const VERSION: u32 = 1;

/// Upper bound on any length field, to fail fast on corrupt files.
const MAX_LEN: u64 = 1 << 34;

/// `<checkpoint>.manifest.toml`
pub fn manifest_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

pub fn write_manifest<T: Serialize>(checkpoint: &Path, manifest: &T) -> Result<(), IoError> {
    let path = manifest_path(checkpoint);
    let text = toml::to_string(manifest).map_err(|e| IoError::corrupt(&path, e.to_string()))?;
    fs::write(&path, text).map_err(|e| IoError::at(&path, e))
}

pub fn read_manifest<T: DeserializeOwned>(checkpoint: &Path) -> Result<T, IoError> {
    let path = manifest_path(checkpoint);
    let text = fs::read_to_string(&path).map_err(|e| IoError::at(&path, e))?;
    toml::from_str(&text).map_err(|e| IoError::corrupt(&path, e.to_string()))
}

/// Provenance of an MF checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfManifest {
    pub seed: u64,
    pub epochs: usize,
    /// RMSE on the ratings the model was trained on.
    pub train_rmse: f64,
    pub split: usize,
}

/// Provenance of a Q-network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetManifest {
    pub seed: u64,
    pub steps: usize,
    pub episodes: usize,
    pub sync_period: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub state: String,
    pub task: String,
    pub split: usize,
}

pub fn write_mf(path: &Path, model: &MfModel) -> Result<(), IoError> {
    let mut w = Writer::create(path)?;
    write_header(&mut w, MF_MAGIC, VERSION)?;
    w.u64(model.d() as u64)?;
    w.u64(model.num_users() as u64)?;
    w.u64(model.num_items() as u64)?;
    w.f64(model.lambda())?;
    w.f64(model.alpha())?;
    w.f64s(model.user_factors())?;
    w.f64s(model.item_factors())?;
    w.finish()
}

pub fn read_mf(path: &Path) -> Result<MfModel, IoError> {
    let mut r = Reader::open(path)?;
    read_header(&mut r, MF_MAGIC, VERSION)?;
    let d = r.len(MAX_LEN)?;
    let m = r.len(MAX_LEN)?;
    let n = r.len(MAX_LEN)?;
    let lambda = r.f64()?;
    let alpha = r.f64()?;
    let u = r.f64s(m * d)?;
    let v = r.f64s(n * d)?;
    r.expect_end()?;
    MfModel::from_parts(d, m, n, lambda, alpha, u, v).map_err(|e| IoError::data(path, e))
}

fn put_net(w: &mut Writer, net: &QNetwork) -> Result<(), IoError> {
    w.u8(net.activation().code())?;
    let sizes = net.layer_sizes();
    w.u64(sizes.len() as u64)?;
    for &s in &sizes {
        w.u64(s as u64)?;
    }
    for l in net.layers() {
        w.f64s(&l.weights)?;
        w.f64s(&l.bias)?;
    }
    Ok(())
}

fn get_net(r: &mut Reader) -> Result<QNetwork, IoError> {
    let code = r.u8()?;
    let activation =
        Activation::from_code(code).ok_or_else(|| IoError::corrupt(r.path(), format!("unknown activation {code}")))?;
    let count = r.len(64)?;
    let sizes = (0..count).map(|_| r.len(MAX_LEN)).collect::<Result<Vec<_>, _>>()?;
    let mut layers = Vec::new();
    for pair in sizes.windows(2) {
        let (inputs, outputs) = (pair[0], pair[1]);
        let weights = r.f64s(inputs * outputs)?;
        let bias = r.f64s(outputs)?;
        layers.push(Layer { inputs, outputs, weights, bias });
    }
    let path = r.path().to_path_buf();
    QNetwork::from_layers(layers, activation).map_err(|e| IoError::data(&path, e))
}

pub fn write_qnet(path: &Path, net: &QNetwork) -> Result<(), IoError> {
    let mut w = Writer::create(path)?;
    write_header(&mut w, QNET_MAGIC, VERSION)?;
    put_net(&mut w, net)?;
    w.finish()
}

pub fn read_qnet(path: &Path) -> Result<QNetwork, IoError> {
    let mut r = Reader::open(path)?;
    read_header(&mut r, QNET_MAGIC, VERSION)?;
    let net = get_net(&mut r)?;
    r.expect_end()?;
    Ok(net)
}

pub fn write_linucb(path: &Path, model: &LinUcbModel) -> Result<(), IoError> {
    let mut w = Writer::create(path)?;
    write_header(&mut w, LINUCB_MAGIC, VERSION)?;
    w.u64(model.dim() as u64)?;
    w.f64(model.alpha())?;
    w.f64s(model.a())?;
    w.f64s(model.b())?;
    w.finish()
}

pub fn read_linucb(path: &Path) -> Result<LinUcbModel, IoError> {
    let mut r = Reader::open(path)?;
    read_header(&mut r, LINUCB_MAGIC, VERSION)?;
    let dim = r.len(1 << 16)?;
    let alpha = r.f64()?;
    let a = r.f64s(dim * dim)?;
    let b = r.f64s(dim)?;
    r.expect_end()?;
    LinUcbModel::from_parts(dim, alpha, a, b).map_err(|e| IoError::data(path, e))
}

fn put_rng(w: &mut Writer, s: &RngState) -> Result<(), IoError> {
    w.bytes(&s.seed)?;
    w.u64(s.stream)?;
    w.bytes(&s.word_pos.to_le_bytes())
}

fn get_rng(r: &mut Reader) -> Result<RngState, IoError> {
    Ok(RngState { seed: r.bytes()?, stream: r.u64()?, word_pos: u128::from_le_bytes(r.bytes()?) })
}

fn put_obs(w: &mut Writer, o: &Observation) -> Result<(), IoError> {
    match o {
        Observation::Dense(v) => {
            w.u8(0)?;
            w.u64(v.len() as u64)?;
            w.f64s(v)
        }
        Observation::Sparse(s) => {
            w.u8(1)?;
            w.u64(s.dim as u64)?;
            w.u64(s.indices.len() as u64)?;
            for &i in &s.indices {
                w.u32(i)?;
            }
            w.f64s(&s.values)
        }
    }
}

fn get_obs(r: &mut Reader) -> Result<Observation, IoError> {
    match r.u8()? {
        0 => {
            let n = r.len(MAX_LEN)?;
            Ok(Observation::Dense(r.f64s(n)?))
        }
        1 => {
            let dim = r.len(MAX_LEN)?;
            let nnz = r.len(MAX_LEN)?;
            let indices = (0..nnz).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let values = r.f64s(nnz)?;
            Ok(Observation::Sparse(SparseVector { dim, indices, values }))
        }
        t => Err(IoError::corrupt(r.path(), format!("unknown observation tag {t}"))),
    }
}

/// Full trainer state for `--resume`. Item-list mask bases are shared by
/// many transitions, so they are written once and referenced by index.
pub fn write_trainer_state(path: &Path, s: &TrainerState) -> Result<(), IoError> {
    let mut bases: Vec<&Arc<[u32]>> = Vec::new();
    let mut base_ids: HashMap<*const u32, u64> = HashMap::new();
    for t in s.memory.iter() {
        if let MaskBase::Items(items) = t.next_mask.base() {
            base_ids.entry(items.as_ptr()).or_insert_with(|| {
                bases.push(items);
                bases.len() as u64 - 1
            });
        }
    }
    let mut w = Writer::create(path)?;
    write_header(&mut w, TRAINER_MAGIC, VERSION)?;
    put_net(&mut w, &s.net)?;
    put_net(&mut w, &s.target)?;
    for v in [s.target_staleness, s.train_steps, s.sync_count] {
        w.u64(v as u64)?;
    }
    for rng in [&s.user_rng, &s.explore_rng, &s.replay_rng] {
        put_rng(&mut w, rng)?;
    }
    w.u64(bases.len() as u64)?;
    for b in &bases {
        w.u64(b.len() as u64)?;
        for &i in b.iter() {
            w.u32(i)?;
        }
    }
    w.u64(s.memory.capacity() as u64)?;
    w.u64(s.memory.len() as u64)?;
    for t in s.memory.iter() {
        put_obs(&mut w, &t.state)?;
        w.u64(t.action as u64)?;
        w.f64(t.reward)?;
        put_obs(&mut w, &t.next_state)?;
        w.u8(t.done as u8)?;
        match t.next_mask.base() {
            MaskBase::All(n) => {
                w.u8(0)?;
                w.u64(*n as u64)?;
            }
            MaskBase::Items(items) => {
                w.u8(1)?;
                w.u64(base_ids[&items.as_ptr()])?;
            }
        }
        let removed = t.next_mask.removed();
        w.u64(removed.len() as u64)?;
        for &i in removed {
            w.u32(i)?;
        }
    }
    w.u64(s.log.len() as u64)?;
    for l in &s.log {
        w.u64(l.episode as u64)?;
        w.u64(l.user as u64)?;
        w.f64(l.reward_sum)?;
        w.f64(l.mean_td_loss)?;
        w.f64(l.epsilon)?;
        w.u64(l.sync_count as u64)?;
    }
    w.finish()
}

pub fn read_trainer_state(path: &Path) -> Result<TrainerState, IoError> {
    let mut r = Reader::open(path)?;
    read_header(&mut r, TRAINER_MAGIC, VERSION)?;
    let net = get_net(&mut r)?;
    let target = get_net(&mut r)?;
    let target_staleness = r.len(MAX_LEN)?;
    let train_steps = r.len(u64::MAX)?;
    let sync_count = r.len(u64::MAX)?;
    let user_rng = get_rng(&mut r)?;
    let explore_rng = get_rng(&mut r)?;
    let replay_rng = get_rng(&mut r)?;
    let n_bases = r.len(MAX_LEN)?;
    let mut bases: Vec<Arc<[u32]>> = Vec::with_capacity(n_bases);
    for _ in 0..n_bases {
        let n = r.len(MAX_LEN)?;
        let items = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        bases.push(Arc::from(items));
    }
    let capacity = r.len(MAX_LEN)?;
    let mut memory = ReplayMemory::new(capacity).map_err(|e| IoError::data(path, e))?;
    let len = r.len(capacity as u64)?;
    for _ in 0..len {
        let state = get_obs(&mut r)?;
        let action = r.len(MAX_LEN)?;
        let reward = r.f64()?;
        let next_state = get_obs(&mut r)?;
        let done = r.u8()? != 0;
        let base = match r.u8()? {
            0 => MaskBase::All(r.len(MAX_LEN)?),
            1 => {
                let id = r.len(n_bases.saturating_sub(1) as u64)?;
                let b = bases.get(id).ok_or_else(|| IoError::corrupt(path, format!("mask base {id} missing")))?;
                MaskBase::Items(Arc::clone(b))
            }
            t => return Err(IoError::corrupt(path, format!("unknown mask tag {t}"))),
        };
        let nr = r.len(MAX_LEN)?;
        let removed = (0..nr).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        memory.push(Transition { state, action, reward, next_state, done, next_mask: MaskSnapshot::new(base, &removed) });
    }
    let n_log = r.len(MAX_LEN)?;
    let mut log = Vec::with_capacity(n_log);
    for _ in 0..n_log {
        log.push(EpisodeLog {
            episode: r.len(u64::MAX)?,
            user: r.len(u64::MAX)?,
            reward_sum: r.f64()?,
            mean_td_loss: r.f64()?,
            epsilon: r.f64()?,
            sync_count: r.len(u64::MAX)?,
        });
    }
    r.expect_end()?;
    Ok(TrainerState {
        net,
        target,
        target_staleness,
        memory,
        user_rng,
        explore_rng,
        replay_rng,
        train_steps,
        sync_count,
        log,
    })
}

/// Writes to a sibling temp file then renames, so a crash never leaves a
/// truncated checkpoint under the final name.
pub fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<(), IoError>) -> Result<(), IoError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| IoError::at(path, e))
}
