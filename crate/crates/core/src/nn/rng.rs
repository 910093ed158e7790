//! Keyed, counter-based random streams.
//!
//! Every stochastic draw in training comes from a stream whose seed is a pure
//! function of `(root, purpose, shard, stage, epoch, batch)`. ChaCha is itself
//! counter based, so the `n`-th output of a stream never depends on what any
//! other stream consumed. Removing data from one shard therefore cannot shift
//! the randomness seen by another shard or by an earlier stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Synth = 4,
    Emi = 5,
    Split = 6,
    Eval = 7,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngKey {
    pub root: u64,
    pub purpose: Purpose,
    pub shard: u32,
    pub stage: u32,
    pub epoch: u32,
    pub batch: u32,
}

impl RngKey {
    pub fn new(root: u64, purpose: Purpose) -> Self {
        Self {
            root,
            purpose,
            shard: 0,
            stage: 0,
            epoch: 0,
            batch: 0,
        }
    }

    pub fn shard(mut self, shard: u32) -> Self {
        self.shard = shard;
        self
    }

    pub fn stage(mut self, stage: u32) -> Self {
        self.stage = stage;
        self
    }

    pub fn epoch(mut self, epoch: u32) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn batch(mut self, batch: u32) -> Self {
        self.batch = batch;
        self
    }

    fn seed_bytes(&self) -> [u8; 32] {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.root.to_le_bytes());
        seed[8..12].copy_from_slice(&(self.purpose as u32).to_le_bytes());
        seed[12..16].copy_from_slice(&self.shard.to_le_bytes());
        seed[16..20].copy_from_slice(&self.stage.to_le_bytes());
        seed[20..24].copy_from_slice(&self.epoch.to_le_bytes());
        seed[24..28].copy_from_slice(&self.batch.to_le_bytes());
        seed[28..32].copy_from_slice(b"sisa");
        seed
    }

    /// Fresh stream positioned at draw 0.
    pub fn stream(&self) -> RngStream {
        RngStream {
            key: *self,
            inner: ChaCha8Rng::from_seed(self.seed_bytes()),
        }
    }
}

/// A random stream tied to its key. Implements [`rand::RngCore`].
#[derive(Clone, Debug)]
pub struct RngStream {
    key: RngKey,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn key(&self) -> RngKey {
        self.key
    }

    /// Number of 32-bit words consumed so far.
    pub fn draw_index(&self) -> u128 {
        self.inner.get_word_pos()
    }

    /// Reposition to an absolute word index.
    pub fn seek(&mut self, word: u128) {
        self.inner.set_word_pos(word);
    }
}

impl rand::RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
