//! Flat binary checkpoint format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    b"PSGN"
//! version  u32
//! step     u64
//! rng      seed [u8; 32], word_pos u128, stream u64
//! train    lambda_l1 f32, learning_rate f32, adam_beta1 f32, adam_beta2 f32,
//!          batch_size u32, steps u64, seed u64
//! gen      image_size u32, base_channels u32, n_downsamples u32,
//!          n_resblocks u32, dropout f32
//! disc     base_channels u32, n_layers u32
//! adam     t_g u64, t_d u64
//! records  count u32, then per record:
//!          name_len u32, name utf-8, rank u32, dims u32 x rank, data f32 x n
//! ```
//!
//! Records hold every generator and discriminator parameter plus both
//! optimizers' first and second moments (`adam_g.m.<param>` etc.). Loading
//! rebuilds the networks from the stored configs and overwrites each
//! parameter by name, so a checkpoint is self-contained.

use std::fs;
use std::path::Path;

use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::train::TrainConfig;

pub const MAGIC: [u8; 4] = *b"PSGN";
pub const VERSION: u32 = 1;

/// One named tensor in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Everything needed to resume training (or run inference) exactly where a
/// run left off.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointData {
    pub step: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: u128,
    pub rng_stream: u64,
    pub train: TrainConfig,
    pub gen: GeneratorConfig,
    pub disc: DiscriminatorConfig,
    pub adam_g_t: u64,
    pub adam_d_t: u64,
    pub records: Vec<Record>,
}

impl CheckpointData {
    pub fn to_bytes(&self) -> Vec<u8> {
        let data_len: usize = self.records.iter().map(|r| 4 * r.data.len() + 64).sum();
        let mut out = Vec::with_capacity(128 + data_len);
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION);
        put_u64(&mut out, self.step);
        out.extend_from_slice(&self.rng_seed);
        out.extend_from_slice(&self.rng_word_pos.to_le_bytes());
        put_u64(&mut out, self.rng_stream);
        put_f32(&mut out, self.train.lambda_l1);
        put_f32(&mut out, self.train.learning_rate);
        put_f32(&mut out, self.train.adam_beta1);
        put_f32(&mut out, self.train.adam_beta2);
        put_u32(&mut out, self.train.batch_size as u32);
        put_u64(&mut out, self.train.steps);
        put_u64(&mut out, self.train.seed);
        put_u32(&mut out, self.gen.image_size as u32);
        put_u32(&mut out, self.gen.base_channels as u32);
        put_u32(&mut out, self.gen.n_downsamples as u32);
        put_u32(&mut out, self.gen.n_resblocks as u32);
        put_f32(&mut out, self.gen.dropout);
        put_u32(&mut out, self.disc.base_channels as u32);
        put_u32(&mut out, self.disc.n_layers as u32);
        put_u64(&mut out, self.adam_g_t);
        put_u64(&mut out, self.adam_d_t);
        put_u32(&mut out, self.records.len() as u32);
        for rec in &self.records {
            put_u32(&mut out, rec.name.len() as u32);
            out.extend_from_slice(rec.name.as_bytes());
            put_u32(&mut out, rec.shape.len() as u32);
            for &d in &rec.shape {
                put_u32(&mut out, d as u32);
            }
            for &v in &rec.data {
                put_f32(&mut out, v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version}, expected {VERSION}"
            )));
        }
        let step = r.u64()?;
        let mut rng_seed = [0u8; 32];
        rng_seed.copy_from_slice(r.take(32)?);
        let rng_word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let rng_stream = r.u64()?;
        let train = TrainConfig {
            lambda_l1: r.f32()?,
            learning_rate: r.f32()?,
            adam_beta1: r.f32()?,
            adam_beta2: r.f32()?,
            batch_size: r.u32()? as usize,
            steps: r.u64()?,
            seed: r.u64()?,
        };
        let gen = GeneratorConfig {
            image_size: r.u32()? as usize,
            base_channels: r.u32()? as usize,
            n_downsamples: r.u32()? as usize,
            n_resblocks: r.u32()? as usize,
            dropout: r.f32()?,
        };
        let disc = DiscriminatorConfig {
            base_channels: r.u32()? as usize,
            n_layers: r.u32()? as usize,
        };
        let adam_g_t = r.u64()?;
        let adam_d_t = r.u64()?;
        let n_records = r.u32()? as usize;
        let mut records = Vec::with_capacity(n_records);
        for _ in 0..n_records {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("record name is not utf-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            let mut n = 1usize;
            for _ in 0..rank {
                let d = r.u32()? as usize;
                n = n
                    .checked_mul(d)
                    .ok_or_else(|| Error::Checkpoint(format!("record {name}: shape overflow")))?;
                shape.push(d);
            }
            if n > bytes.len() {
                return Err(Error::Checkpoint(format!(
                    "record {name}: {n} elements exceed file size"
                )));
            }
            let raw = r.take(4 * n)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            records.push(Record { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last record",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            step,
            rng_seed,
            rng_word_pos,
            rng_stream,
            train,
            gen,
            disc,
            adam_g_t,
            adam_d_t,
            records,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn record(&self, name: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.name == name)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
