//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "RENASCKP"
//! version      u32
//! config       u64 length + UTF-8 JSON of the search config
//! in_channels  u64
//! classes      u64
//! step         u64
//! rng          32-byte seed, u64 stream, u128 word position
//! cursors      train (epoch u64, pos u64), val (epoch u64, pos u64)
//! norm         u64 channel count, then means, then standard deviations (f64)
//! params       u64 count; per parameter: u8 kind (0 weight, 1 gamma),
//!              4 × u64 shape, f64 data
//! alpha        u64 rows, u64 columns, f64 data row-major
//! sgd          per parameter: f64 velocity (shape as the parameter)
//! adam         per alpha row: u64 step count, f64 m, f64 v
//! history      u64 length, f64 losses
//! digest       32-byte SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::supergraph::ParamKind;
use crate::tensor::{numel, Tensor};

use super::{SearchConfig, StreamCursor, TrainState};

const MAGIC: &[u8; 8] = b"RENASCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Serialized, integrity-checked training state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub bytes: Vec<u8>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.err(format!("count {v} too large")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    fn tensor(&mut self, shape: [usize; 4]) -> Result<Tensor> {
        let data = self.f64s(numel(shape))?;
        Tensor::new(shape, data)
    }
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.0.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = serde_json::to_vec(&state.config).expect("config serializes");
        w.usize(config.len());
        w.0.extend_from_slice(&config);
        w.usize(state.in_channels);
        w.usize(state.classes);
        w.u64(state.step);
        w.0.extend_from_slice(&state.rng.get_seed());
        w.u64(state.rng.get_stream());
        w.0.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
        for c in [state.train_cursor, state.val_cursor] {
            w.u64(c.epoch);
            w.u64(c.pos);
        }
        w.usize(state.norm.mean.len());
        w.f64s(&state.norm.mean);
        w.f64s(&state.norm.std);
        let net = &state.parent.net;
        w.usize(net.params.len());
        for (p, k) in net.params.iter().zip(&net.kinds) {
            w.0.push(match k {
                ParamKind::Weight => 0,
                ParamKind::Gamma => 1,
            });
            for d in p.shape() {
                w.usize(d);
            }
            w.f64s(p.data());
        }
        let alpha = &state.parent.alpha;
        w.usize(alpha.rows.len());
        w.usize(alpha.ops());
        for row in &alpha.rows {
            w.f64s(row);
        }
        for s in &state.sgd {
            w.f64s(s.velocity.data());
        }
        for a in &state.adam {
            w.u64(a.step_count);
            w.f64s(a.m.data());
            w.f64s(a.v.data());
        }
        w.usize(state.history.len());
        w.f64s(&state.history);
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        Checkpoint { bytes: w.0 }
    }

    /// Hex SHA-256 of the whole file.
    pub fn hash_hex(&self) -> String {
        hex::encode(Sha256::digest(&self.bytes))
    }

    /// Checks magic, version and the trailing digest.
    pub fn verify(&self, path: &Path) -> Result<()> {
        let err = |detail: String| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        if self.bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &self.bytes[..8] != MAGIC {
            return Err(err("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(self.bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(err(format!(
                "version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let (body, digest) = self.bytes.split_at(self.bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(err("SHA-256 digest mismatch; the file is corrupt".into()));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ckpt = Checkpoint { bytes };
        ckpt.verify(path)?;
        Ok(ckpt)
    }

    /// Writes atomically through a temporary sibling file.
    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.bytes)
    }

    /// Reconstructs the training state; `path` only labels errors.
    pub fn decode(&self, path: &Path) -> Result<TrainState> {
        self.verify(path)?;
        let body = &self.bytes[..self.bytes.len() - DIGEST_LEN];
        let mut r = Reader {
            buf: body,
            pos: 12,
            path,
        };
        let n = r.usize()?;
        let config: SearchConfig = serde_json::from_slice(r.take(n)?)
            .map_err(|e| r.err(format!("embedded config: {e}")))?;
        let in_channels = r.usize()?;
        let classes = r.usize()?;
        let step = r.u64()?;
        let seed: [u8; 32] = r.array()?;
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.array()?);
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        let mut cursors = [StreamCursor::default(); 2];
        for c in &mut cursors {
            c.epoch = r.u64()?;
            c.pos = r.u64()?;
        }
        let channels = r.usize()?;
        let norm = Normalization {
            mean: r.f64s(channels)?,
            std: r.f64s(channels)?,
        };

        let mut state = TrainState::new(&config, in_channels, classes, norm)
            .map_err(|e| r.err(format!("embedded config: {e}")))?;
        let count = r.usize()?;
        if count != state.parent.net.params.len() {
            return Err(r.err(format!(
                "{count} parameters stored, network declares {}",
                state.parent.net.params.len()
            )));
        }
        for id in 0..count {
            let kind = match r.take(1)?[0] {
                0 => ParamKind::Weight,
                1 => ParamKind::Gamma,
                k => return Err(r.err(format!("unknown parameter kind {k}"))),
            };
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = r.usize()?;
            }
            if kind != state.parent.net.kinds[id] || shape != state.parent.net.params[id].shape() {
                return Err(r.err(format!("parameter {id} does not match the declared network")));
            }
            state.parent.net.params[id] = r.tensor(shape)?;
        }
        let rows = r.usize()?;
        let cols = r.usize()?;
        if rows != state.parent.alpha.rows.len() || cols != state.parent.alpha.ops() {
            return Err(r.err("alpha table has the wrong dimensions"));
        }
        for row in &mut state.parent.alpha.rows {
            *row = r.f64s(cols)?;
        }
        for s in &mut state.sgd {
            s.velocity = r.tensor(s.velocity.shape())?;
        }
        for a in &mut state.adam {
            a.step_count = r.u64()?;
            a.m = r.tensor(a.m.shape())?;
            a.v = r.tensor(a.v.shape())?;
        }
        let h = r.usize()?;
        state.history = r.f64s(h)?;
        if r.pos != body.len() {
            return Err(r.err(format!("{} trailing bytes", body.len() - r.pos)));
        }
        state.step = step;
        state.rng = rng;
        state.train_cursor = cursors[0];
        state.val_cursor = cursors[1];
        Ok(state)
    }

    /// Reads, verifies and decodes a checkpoint file.
    pub fn load(path: &Path) -> Result<(TrainState, Checkpoint)> {
        let ckpt = Self::read(path)?;
        let state = ckpt.decode(path)?;
        Ok((state, ckpt))
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| format!(".{}.tmp", n.to_string_lossy()))
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    tmp.set_file_name(name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
