//! Binary checkpoint format.
//!
//! ```text
//! "SISA" | version u16 | shard u16 | stage u16 | cursor 4×u64
//! repeated: name_len u16 | name | rank u8 | dims u32×rank | payload f64×∏dims
//! digest u64   (FNV-1a over everything before it)
//! ```
//! All integers and floats are little endian.

use super::SisaError;
use crate::fnv::fnv1a64;
use crate::nn::{AdamState, ModelConfig, ModelParams, Tensor};

pub const MAGIC: &[u8; 4] = b"SISA";
pub const FORMAT_VERSION: u16 = 1;

/// Position in the keyed random schedule at a stage boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngCursor {
    pub seed_root: u64,
    pub shard: u64,
    pub stage: u64,
    /// Epochs completed by this shard so far.
    pub epochs_done: u64,
}

/// Model and optimizer state of one shard after training stage `stage` (0 = initialization).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub shard: u16,
    pub stage: u16,
    pub params: ModelParams,
    pub adam: AdamState,
    pub cursor: RngCursor,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensor(&mut self, name: &str, shape: &[usize], data: &[f64]) {
        self.u16(name.len() as u16);
        self.0.extend_from_slice(name.as_bytes());
        self.u8(shape.len() as u8);
        for &d in shape {
            self.u32(d as u32);
        }
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SisaError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            SisaError::Checkpoint(format!("truncated at byte {} (need {n} more)", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, SisaError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, SisaError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }
    fn u32(&mut self) -> Result<u32, SisaError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, SisaError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64, SisaError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::with_capacity(self.params.num_values() * 24 + 1024));
        w.0.extend_from_slice(MAGIC);
        w.u16(FORMAT_VERSION);
        w.u16(self.shard);
        w.u16(self.stage);
        w.u64(self.cursor.seed_root);
        w.u64(self.cursor.shard);
        w.u64(self.cursor.stage);
        w.u64(self.cursor.epochs_done);
        for (prefix, set) in [("params", &self.params), ("adam.m", &self.adam.m), ("adam.v", &self.adam.v)] {
            for (name, t) in set.tensors() {
                w.tensor(&format!("{prefix}/{name}"), t.shape(), t.data());
            }
        }
        // Step counter as a rank-0 tensor; exact for any realistic count (< 2^53).
        w.tensor("adam.t", &[], &[self.adam.t as f64]);
        let digest = fnv1a64(&w.0);
        w.u64(digest);
        w.0
    }

    /// Digest stored in the trailing 8 bytes of [`Checkpoint::to_bytes`].
    pub fn digest(&self) -> u64 {
        let bytes = self.to_bytes();
        u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SisaError> {
        if bytes.len() < 4 + 6 + 32 + 8 {
            return Err(SisaError::Checkpoint("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if fnv1a64(body) != stored {
            return Err(SisaError::Checkpoint("digest mismatch (corrupted checkpoint)".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(SisaError::Checkpoint("bad magic".into()));
        }
        let version = r.u16()?;
        if version != FORMAT_VERSION {
            return Err(SisaError::Checkpoint(format!("unsupported version {version}")));
        }
        let shard = r.u16()?;
        let stage = r.u16()?;
        let cursor = RngCursor {
            seed_root: r.u64()?,
            shard: r.u64()?,
            stage: r.u64()?,
            epochs_done: r.u64()?,
        };

        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        while r.pos < body.len() {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| SisaError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let len: usize = dims.iter().product();
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let t = Tensor::from_vec(&dims, data).map_err(|e| SisaError::Checkpoint(e.to_string()))?;
            tensors.push((name, t));
        }

        let find = |name: &str| -> Result<&Tensor, SisaError> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| SisaError::Checkpoint(format!("missing tensor {name}")))
        };
        let dim = |name: &str, axis: usize| -> Result<usize, SisaError> {
            find(name)?
                .shape()
                .get(axis)
                .copied()
                .ok_or_else(|| SisaError::Checkpoint(format!("tensor {name} has too few dims")))
        };
        let config = ModelConfig {
            input_dim: dim("params/lstm1.w_ih", 1)?,
            lstm1_hidden: dim("params/lstm1.w_hh", 1)?,
            lstm2_hidden: dim("params/lstm2.w_hh", 1)?,
            fc_hidden: dim("params/fc1.weight", 0)?,
            num_classes: dim("params/fc2.weight", 0)?,
            ..ModelConfig::default()
        };
        let load = |prefix: &str| -> Result<ModelParams, SisaError> {
            let mut p = ModelParams::zeros(&config);
            for (name, slot) in p.tensors_mut() {
                let t = find(&format!("{prefix}/{name}"))?;
                if t.shape() != slot.shape() {
                    return Err(SisaError::Checkpoint(format!(
                        "{prefix}/{name}: shape {:?}, expected {:?}",
                        t.shape(),
                        slot.shape()
                    )));
                }
                *slot = t.clone();
            }
            Ok(p)
        };
        let params = load("params")?;
        let m = load("adam.m")?;
        let v = load("adam.v")?;
        let t = find("adam.t")?;
        if !t.shape().is_empty() || t.len() != 1 {
            return Err(SisaError::Checkpoint("adam.t must be a scalar".into()));
        }
        let expected = 3 * 14 + 1;
        if tensors.len() != expected {
            return Err(SisaError::Checkpoint(format!("{} tensors, expected {expected}", tensors.len())));
        }
        Ok(Self {
            shard,
            stage,
            params,
            adam: AdamState {
                m,
                v,
                t: t.data()[0] as u64,
            },
            cursor,
        })
    }
}
