//! Binary checkpoints for flat parameter vectors.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size        field
//! 0       8           magic "GPIPARAM"
//! 8       4  u32      format version (1)
//! 12      4  u32      kind: 0 = Gaussian policy, 1 = value function
//! 16      4  u32      L, number of layer widths
//! 20      8·L u64     layer widths, input first
//! ..      8  u64      trailing vector length (action dim for policies, 0 otherwise)
//! ..      8  u64      P, total parameter count
//! ..      8·P f64     parameters in flat order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::policy::{GaussianPolicy, ValueFunction};

const MAGIC: &[u8; 8] = b"GPIPARAM";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckpointKind {
    Policy = 0,
    Value = 1,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub sizes: Vec<usize>,
    pub extra: usize,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn from_policy(policy: &GaussianPolicy) -> Self {
        Self {
            kind: CheckpointKind::Policy,
            sizes: policy.mean_net.sizes().to_vec(),
            extra: policy.action_dim(),
            params: policy.flat(),
        }
    }

    pub fn from_value(value: &ValueFunction) -> Self {
        Self {
            kind: CheckpointKind::Value,
            sizes: value.net.sizes().to_vec(),
            extra: 0,
            params: value.flat(),
        }
    }

    pub fn to_policy(&self) -> Result<GaussianPolicy> {
        if self.kind != CheckpointKind::Policy {
            return Err(Error::Checkpoint("not a policy checkpoint".into()));
        }
        let mut policy = GaussianPolicy {
            mean_net: Mlp::zeros(&self.sizes),
            log_std: vec![0.0; self.extra],
        };
        policy.set_flat(&self.params)?;
        Ok(policy)
    }

    pub fn to_value(&self) -> Result<ValueFunction> {
        if self.kind != CheckpointKind::Value {
            return Err(Error::Checkpoint("not a value checkpoint".into()));
        }
        let mut net = Mlp::zeros(&self.sizes);
        net.set_flat(&self.params)?;
        Ok(ValueFunction::from_net(net))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(40 + 8 * (self.sizes.len() + self.params.len()));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.kind as u32).to_le_bytes());
        buf.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            buf.extend_from_slice(&(s as u64).to_le_bytes());
        }
        buf.extend_from_slice(&(self.extra as u64).to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for &p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Checkpoint("truncated file".into()));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = match u32_at(take(4)?) {
            0 => CheckpointKind::Policy,
            1 => CheckpointKind::Value,
            k => return Err(Error::Checkpoint(format!("unknown kind {k}"))),
        };
        let layers = u32_at(take(4)?) as usize;
        let mut sizes = Vec::with_capacity(layers);
        for _ in 0..layers {
            sizes.push(u64_at(take(8)?) as usize);
        }
        let extra = u64_at(take(8)?) as usize;
        let count = u64_at(take(8)?) as usize;
        let expected = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>() + extra;
        if count != expected {
            return Err(Error::Checkpoint(format!(
                "parameter count {count} does not match header shapes ({expected})"
            )));
        }
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            params.push(f64::from_le_bytes(take(8)?.try_into().unwrap()));
        }
        if !cur.is_empty() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            kind,
            sizes,
            extra,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}
