//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! b"MXBT" | u32 version | u64 architecture hash | u32 encoder layers
//! u32 tensor count | tensors...
//! u64 optimizer step | first-moment tensors... | second-moment tensors...
//! tensor = u32 rank | u64 extents[rank] | f64 payload[numel]
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;
use crate::trainloop::optim::OptimState;

pub const MAGIC: &[u8; 4] = b"MXBT";
pub const VERSION: u32 = 1;

/// Stable 64-bit digest of the layer shapes.
pub fn architecture_hash(cfg: &ModelConfig) -> u64 {
    let mut h = Sha256::new();
    h.update(cfg.encoder_layers().to_le_bytes());
    for (i, o) in cfg.layer_dims() {
        h.update((i as u64).to_le_bytes());
        h.update((o as u64).to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optim: OptimState,
}

impl Checkpoint {
    pub fn config(&self) -> ModelConfig {
        self.params.config()
    }

    /// Errors unless the stored architecture matches `expected`.
    pub fn ensure_architecture(&self, expected: &ModelConfig) -> Result<()> {
        let got = self.config();
        if &got != expected {
            return Err(Error::dim(
                "checkpoint",
                format!("checkpoint holds {:?}, expected {:?}", got.layer_dims(), expected.layer_dims()),
            ));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend(architecture_hash(&self.config()).to_le_bytes());
        out.extend((self.params.encoder_layers() as u32).to_le_bytes());
        let tensors = self.params.tensors();
        out.extend((tensors.len() as u32).to_le_bytes());
        for t in tensors {
            write_tensor(&mut out, t);
        }
        out.extend(self.optim.step.to_le_bytes());
        for t in self.optim.m.iter().chain(&self.optim.v) {
            write_tensor(&mut out, t);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let hash = r.u64()?;
        let encoder_layers = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            tensors.push(r.tensor()?);
        }
        let params = ModelParams::from_tensors(tensors, encoder_layers)?;
        if architecture_hash(&params.config()) != hash {
            return Err(Error::Format("architecture hash does not match stored shapes".into()));
        }
        let step = r.u64()?;
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            m.push(r.tensor()?);
        }
        for _ in 0..count {
            v.push(r.tensor()?);
        }
        for (p, (a, b)) in params.tensors().iter().zip(m.iter().zip(&v)) {
            if a.shape() != p.shape() || b.shape() != p.shape() {
                return Err(Error::Format("optimizer state shape differs from parameters".into()));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            params,
            optim: OptimState { m, v, step },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend((t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend((e as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated checkpoint at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("tensor rank {rank} is implausible")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= self.bytes.len() - self.pos))
            .ok_or_else(|| Error::Format("tensor extends past end of checkpoint".into()))?;
        let data = self
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EncoderConfig, ProjectorConfig};

    fn cfg() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                input_dim: 5,
                hidden_dims: vec![4, 3],
            },
            projector: ProjectorConfig {
                hidden_dim: 6,
                output_dim: 2,
            },
        }
    }

    fn sample() -> Checkpoint {
        let params = ModelParams::init(&cfg(), 3).unwrap();
        let mut optim = OptimState::new(params.tensors());
        optim.step = 17;
        optim.m[0].data_mut()[1] = -0.25;
        optim.v[2].data_mut()[0] = 1e-300;
        Checkpoint { params, optim }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        back.ensure_architecture(&cfg()).unwrap();
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut long = bytes;
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Format(_))));
    }

    #[test]
    fn architecture_mismatch() {
        let mut other = cfg();
        other.projector.output_dim = 3;
        assert!(matches!(sample().ensure_architecture(&other), Err(Error::Dimension { .. })));
        assert_ne!(architecture_hash(&cfg()), architecture_hash(&other));
    }
}
