//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "DFCKPT"  u32 version  u8 kind  f64 multiplier  u32 image_size
//! u64 epoch  u64 step
//! u32 len, config snapshot (UTF-8 TOML)
//! u32 count, then per tensor: u16 len, name, u8 rank, u32 dims.., f32 values..
//! u8 has_optimizer [u64 step, u32 count, per buffer: u64 len, f32 m.., f32 v..]
//! 32-byte SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use facedepth_core::nn::ModelKind;
use facedepth_core::optim::AdamState;
use facedepth_core::{Error, Network, Result, Tensor};
use sha2::{Digest, Sha256};

pub const MAGIC: &[u8; 6] = b"DFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub multiplier: f64,
    pub image_size: u32,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps.
    pub step: u64,
    pub config: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
    pub optimizer: Option<AdamState<f32>>,
}

impl Checkpoint {
    pub fn of<N: Network<f32>>(net: &N, epoch: u64, step: u64, config: &str, optimizer: Option<&AdamState<f32>>) -> Self {
        Self {
            kind: net.kind(),
            multiplier: net.multiplier().value(),
            image_size: net.image_size() as u32,
            epoch,
            step,
            config: config.to_owned(),
            tensors: net.store().named_tensors(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Loads the tensors into `net` after checking kind, multiplier and
    /// input size.
    pub fn restore<N: Network<f32>>(&self, net: &mut N) -> Result<()> {
        if self.kind != net.kind() {
            return Err(Error::Config(format!(
                "checkpoint holds a {}, expected a {}",
                self.kind.name(),
                net.kind().name()
            )));
        }
        if self.multiplier != net.multiplier().value() {
            return Err(Error::Config(format!(
                "checkpoint width multiplier {} differs from configured {}",
                self.multiplier,
                net.multiplier().value()
            )));
        }
        if self.image_size as usize != net.image_size() {
            return Err(Error::Config(format!(
                "checkpoint image size {} differs from configured {}",
                self.image_size,
                net.image_size()
            )));
        }
        net.store_mut().load_named(&self.tensors)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(self.kind.tag());
        b.extend_from_slice(&self.multiplier.to_le_bytes());
        b.extend_from_slice(&self.image_size.to_le_bytes());
        b.extend_from_slice(&self.epoch.to_le_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        b.extend_from_slice(self.config.as_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u16).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.push(t.shape().len() as u8);
            for &d in t.shape() {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_f32s(&mut b, t.data());
        }
        match &self.optimizer {
            None => b.push(0),
            Some(s) => {
                b.push(1);
                b.extend_from_slice(&s.step.to_le_bytes());
                b.extend_from_slice(&(s.m.len() as u32).to_le_bytes());
                for (m, v) in s.m.iter().zip(&s.v) {
                    b.extend_from_slice(&(m.len() as u64).to_le_bytes());
                    put_f32s(&mut b, m);
                    put_f32s(&mut b, v);
                }
            }
        }
        let digest = Sha256::digest(&b);
        b.extend_from_slice(&digest);
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err("not a checkpoint file".into());
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err("checksum mismatch".into());
        }
        let tag = r.u8()?;
        let kind = ModelKind::from_tag(tag).ok_or_else(|| format!("unknown model kind {tag}"))?;
        let multiplier = r.f64()?;
        let image_size = r.u32()?;
        let epoch = r.u64()?;
        let step = r.u64()?;
        let n = r.u32()? as usize;
        let config = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| "config snapshot is not UTF-8")?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u16()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let data = r.f32s(shape.iter().product())?;
            let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
            tensors.push((name, t));
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let count = r.u32()? as usize;
                let (mut m, mut v) = (Vec::with_capacity(count), Vec::with_capacity(count));
                for _ in 0..count {
                    let len = r.u64()? as usize;
                    m.push(r.f32s(len)?);
                    v.push(r.f32s(len)?);
                }
                Some(AdamState { step, m, v })
            }
            x => return Err(format!("bad optimizer flag {x}")),
        };
        if r.pos != body.len() {
            return Err(format!("{} trailing bytes", body.len() - r.pos));
        }
        Ok(Self {
            kind,
            multiplier,
            image_size,
            epoch,
            step,
            config,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::format(path, reason))
    }
}

fn put_f32s(b: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        b.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated checkpoint")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length"))
    }

    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        self.array().map(f64::from_le_bytes)
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f32>, String> {
        let bytes = self.take(n.checked_mul(4).ok_or("tensor too large")?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use facedepth_core::{Generator, WidthMultiplier};

    fn sample() -> Checkpoint {
        let m = WidthMultiplier::new(0.0625).unwrap();
        let g = Generator::<f32>::seeded(m, 16, 3).unwrap();
        let mut opt = g.store().adam_state();
        opt.step = 7;
        opt.m[0][0] = 0.25;
        Checkpoint::of(&g, 2, 14, "[train]\nepochs = 4\n", Some(&opt))
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes();
        let k = bytes.len() / 2;
        bytes[k] ^= 1;
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap_err(), "checksum mismatch");
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut bytes = sample().to_bytes();
        bytes[6] = 9;
        assert!(Checkpoint::from_bytes(&bytes).unwrap_err().contains("version 9"));
    }

    #[test]
    fn restore_checks_the_architecture() {
        let c = sample();
        let mut other = Generator::<f32>::new(WidthMultiplier::new(0.125).unwrap(), 16).unwrap();
        assert!(matches!(c.restore(&mut other), Err(Error::Config(_))));
        let mut same = Generator::<f32>::new(WidthMultiplier::new(0.0625).unwrap(), 16).unwrap();
        c.restore(&mut same).unwrap();
        assert_eq!(same.store().named_tensors(), c.tensors);
    }
}
