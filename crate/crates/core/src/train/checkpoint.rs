//! Single-file checkpoint: magic, format version, named entries, SHA-256
//! trailer over everything before it.
//!
//! Entries are either little-endian tensors (`param/*`, `momentum/*`,
//! `schedule/betas`) or UTF-8 text (`meta`, a TOML document holding every
//! config section and the loop state).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{OptimizerState, TrainConfig};
use crate::denoiser::{init_weights, DenoiserConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::schedule::{DiffusionSchedule, ScheduleConfig};

const MAGIC: &[u8; 8] = b"DVIDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;
const DTYPE_TEXT: u8 = 2;

/// Everything a training run needs to resume bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub opt_state: OptimizerState,
    pub sched: DiffusionSchedule,
    pub train: TrainConfig,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    model: DenoiserConfig,
    schedule: ScheduleConfig,
    train: TrainConfig,
    state: State,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct State {
    step: usize,
    seed: u64,
    weights_version: u32,
}

enum Entry {
    F32(Vec<usize>, Vec<f32>),
    F64(Vec<usize>, Vec<f64>),
    Text(String),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn entry(&mut self, name: &str, e: &Entry) {
        self.bytes(name.as_bytes());
        match e {
            Entry::F32(shape, data) => {
                self.u8(DTYPE_F32);
                self.shape(shape);
                data.iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes()));
            }
            Entry::F64(shape, data) => {
                self.u8(DTYPE_F64);
                self.shape(shape);
                data.iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes()));
            }
            Entry::Text(s) => {
                self.u8(DTYPE_TEXT);
                self.bytes(s.as_bytes());
            }
        }
    }
    fn shape(&mut self, shape: &[usize]) {
        self.u32(shape.len() as u32);
        shape.iter().for_each(|&d| self.u64(d as u64));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(m: impl Into<String>) -> Error {
    Error::CheckpointCorrupt(m.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated entry"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflow"))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
    fn shape(&mut self) -> Result<(Vec<usize>, usize)> {
        let nd = self.u32()? as usize;
        let shape = (0..nd).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("tensor size overflow"))?;
        Ok((shape, numel))
    }
    fn entry(&mut self) -> Result<(String, Entry)> {
        let name = String::from_utf8(self.bytes()?.to_vec()).map_err(|_| corrupt("entry name is not UTF-8"))?;
        let e = match self.u8()? {
            DTYPE_F32 => {
                let (shape, n) = self.shape()?;
                let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor size overflow"))?)?;
                Entry::F32(shape, raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
            }
            DTYPE_F64 => {
                let (shape, n) = self.shape()?;
                let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor size overflow"))?)?;
                Entry::F64(shape, raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            DTYPE_TEXT => Entry::Text(String::from_utf8(self.bytes()?.to_vec()).map_err(|_| corrupt("text entry is not UTF-8"))?),
            d => return Err(corrupt(format!("unknown dtype tag {d}"))),
        };
        Ok((name, e))
    }
}

fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let meta = Meta {
        model: ck.weights.config,
        schedule: ck.sched.config(),
        train: ck.train.clone(),
        state: State { step: ck.opt_state.step, seed: ck.seed, weights_version: ck.weights.version },
    };
    let meta = toml::to_string(&meta).map_err(|e| Error::Parameter(format!("config not serializable: {e}")))?;
    if ck.opt_state.momenta.len() != ck.weights.params.len() {
        return Err(Error::ShapeMismatch("optimizer state does not mirror the parameters".into()));
    }
    let mut entries: Vec<(String, Entry)> = vec![("meta".into(), Entry::Text(meta))];
    for (p, m) in ck.weights.params.iter().zip(&ck.opt_state.momenta) {
        entries.push((format!("param/{}", p.name), Entry::F32(p.shape.clone(), p.data.clone())));
        entries.push((format!("momentum/{}", p.name), Entry::F32(p.shape.clone(), m.clone())));
    }
    entries.push(("schedule/betas".into(), Entry::F64(vec![ck.sched.betas().len()], ck.sched.betas().to_vec())));

    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u32(entries.len() as u32);
    for (name, e) in &entries {
        w.entry(name, e);
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    Ok(w.0)
}

/// Writes atomically (temp file, then rename).
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ck)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

fn decode(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < MAGIC.len() + 4 || &buf[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    if buf.len() < 12 + 4 + 32 {
        return Err(corrupt("truncated file"));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader { buf: body, pos: 12 };
    let count = r.u32()?;
    let mut entries = BTreeMap::new();
    for _ in 0..count {
        let (name, e) = r.entry()?;
        if entries.insert(name.clone(), e).is_some() {
            return Err(corrupt(format!("duplicate entry {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after entries"));
    }

    let meta = match entries.remove("meta") {
        Some(Entry::Text(t)) => t,
        Some(_) => return Err(corrupt("meta entry is not text")),
        None => return Err(Error::CheckpointMissingKey("meta".into())),
    };
    let meta: Meta = toml::from_str(&meta).map_err(|e| corrupt(format!("meta: {e}")))?;
    meta.train.validate().map_err(|e| corrupt(format!("meta: {e}")))?;

    let mut weights = init_weights(&meta.model, 0).map_err(|e| corrupt(format!("meta: {e}")))?;
    weights.version = meta.state.weights_version;
    let mut opt_state = OptimizerState::new(&weights);
    opt_state.step = meta.state.step;
    for (p, m) in weights.params.iter_mut().zip(&mut opt_state.momenta) {
        for (prefix, dst) in [("param", &mut p.data), ("momentum", m)] {
            let key = format!("{prefix}/{}", p.name);
            match entries.remove(&key) {
                Some(Entry::F32(shape, data)) if shape == p.shape && data.len() == dst.len() => *dst = data,
                Some(_) => return Err(corrupt(format!("{key} has the wrong shape or dtype"))),
                None => return Err(Error::CheckpointMissingKey(key)),
            }
        }
    }
    let sched = meta.schedule.build().map_err(|e| corrupt(format!("meta: {e}")))?;
    match entries.remove("schedule/betas") {
        Some(Entry::F64(_, betas)) if betas.as_slice() == sched.betas() => {}
        Some(_) => return Err(corrupt("stored betas disagree with the schedule config")),
        None => return Err(Error::CheckpointMissingKey("schedule/betas".into())),
    }
    if let Some(extra) = entries.keys().next() {
        return Err(corrupt(format!("unexpected entry {extra}")));
    }
    Ok(Checkpoint { weights, opt_state, sched, train: meta.train, seed: meta.state.seed })
}
