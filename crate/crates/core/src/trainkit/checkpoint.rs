//! Versioned binary checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic b"FCKP", version u32
//! config: u32 length + TOML text
//! step u64
//! adam: lr, beta1, beta2, epsilon (f64), step u64
//! count u32, then per tensor in name order:
//!   name: u16 length + UTF-8, rank u8, dims u32 × rank,
//!   value, first moment, second moment (f64 × numel each)
//! ```

use std::fs;
use std::path::Path;

use super::config::TrainConfig;
use super::model::Model;
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Model, optimizer state and the number of completed updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    pub step: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        w.extend_from_slice(CHECKPOINT_MAGIC);
        w.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let config = self.model.config.to_toml();
        w.extend_from_slice(&(config.len() as u32).to_le_bytes());
        w.extend_from_slice(config.as_bytes());
        w.extend_from_slice(&(self.step as u64).to_le_bytes());
        let a = &self.adam.config;
        for x in [a.lr, a.beta1, a.beta2, a.epsilon] {
            w.extend_from_slice(&x.to_le_bytes());
        }
        w.extend_from_slice(&self.adam.step_count().to_le_bytes());
        w.extend_from_slice(&(self.model.params.len() as u32).to_le_bytes());
        let moments = self.adam.first_moments().iter().zip(self.adam.second_moments());
        for ((name, value), (m, v)) in self.model.params.iter().zip(moments) {
            w.extend_from_slice(&(name.len() as u16).to_le_bytes());
            w.extend_from_slice(name.as_bytes());
            w.push(value.rank() as u8);
            for &d in value.shape() {
                w.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for t in [value, m, v] {
                for x in t.data() {
                    w.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnknownVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Format(format!("config text: {e}")))?;
        let config = TrainConfig::from_toml(text)?;
        let step = r.u64()? as usize;
        let adam_config = AdamConfig {
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let adam_step = r.u64()?;

        // The config determines the expected shape table.
        let mut model = Model::new(config)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(Error::Format(format!(
                "shape table has {count} tensors, config implies {}",
                expected.len()
            )));
        }
        let (mut values, mut first, mut second) = (Vec::new(), Vec::new(), Vec::new());
        for (want_name, want_shape) in &expected {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|e| Error::Format(e.to_string()))?;
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if name != want_name || &shape != want_shape {
                return Err(Error::Format(format!(
                    "shape table entry {name} {shape:?} does not match expected {want_name} {want_shape:?}"
                )));
            }
            for out in [&mut values, &mut first, &mut second] {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                out.push(Tensor::new(shape.clone(), data)?);
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after checkpoint",
                bytes.len() - r.pos
            )));
        }
        model.params.set_tensors(values)?;
        let adam = AdamState::from_parts(adam_config, adam_step, first, second)?;
        Ok(Self { model, adam, step })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}
