//! Binary weight checkpoints.
//!
//! Layout (little-endian): magic `BCNN`, `u32` version, a descriptor of the
//! architecture (levels, base channels, likelihood code, Bernoulli reduction,
//! side as `u32`/`u8`, then dropout rate, L2 factor, σ floor and Bernoulli clamp
//! as `f64`), a `u32` tensor count, and per tensor a `u16` name length, the
//! UTF-8 name, a `u8` rank, `u32` dimensions and the `f32` values.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::network::{Architecture, NetworkWeights, Tensor};
use super::{BernoulliReduction, Likelihood, NetworkConfig};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BCNN";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn narrow(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} {v} does not fit in 32 bits")))
}

pub fn encode(w: &NetworkWeights<f32>) -> Result<Vec<u8>> {
    let cfg = w.config();
    let mut out = Vec::with_capacity(64 + 4 * w.parameter_count());
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, narrow(cfg.levels, "levels")?);
    put_u32(&mut out, narrow(cfg.base_channels, "base channels")?);
    out.push(cfg.likelihood.code());
    out.push(match cfg.bernoulli_reduction {
        BernoulliReduction::Sum => 0,
        BernoulliReduction::Mean => 1,
    });
    put_u32(&mut out, narrow(w.side(), "side")?);
    put_f64(&mut out, cfg.dropout_rate);
    put_f64(&mut out, cfg.l2_factor);
    put_f64(&mut out, cfg.sigma_floor);
    put_f64(&mut out, cfg.bernoulli_clamp);
    put_u32(&mut out, narrow(w.tensors().len(), "tensor count")?);
    for t in w.tensors() {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("tensor name {} too long", t.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            put_u32(&mut out, narrow(d, "dimension")?);
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint. Any structural problem, including a descriptor the
/// tensors do not match, is reported as [`Error::Checkpoint`].
pub fn decode(bytes: &[u8]) -> Result<NetworkWeights<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let levels = r.u32()? as usize;
    let base_channels = r.u32()? as usize;
    let code = r.u8()?;
    let likelihood = Likelihood::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown likelihood code {code}")))?;
    let bernoulli_reduction = match r.u8()? {
        0 => BernoulliReduction::Sum,
        1 => BernoulliReduction::Mean,
        other => return Err(Error::Checkpoint(format!("unknown reduction code {other}"))),
    };
    let side = r.u32()? as usize;
    let config = NetworkConfig {
        levels,
        base_channels,
        likelihood,
        bernoulli_reduction,
        dropout_rate: r.f64()?,
        l2_factor: r.f64()?,
        sigma_floor: r.f64()?,
        bernoulli_clamp: r.f64()?,
    };
    let arch = Architecture::new(config, side).map_err(|e| Error::Checkpoint(format!("descriptor: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    NetworkWeights::from_tensors(arch, tensors).map_err(|e| Error::Checkpoint(format!("descriptor mismatch: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcnn::init_network;

    fn small() -> NetworkWeights<f32> {
        let cfg = NetworkConfig { levels: 2, base_channels: 3, likelihood: Likelihood::Laplacian, ..Default::default() };
        init_network(&cfg, 8, 9).unwrap()
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let w = small();
        let bytes = encode(&w).unwrap();
        let back = decode(&bytes).unwrap();
        assert_eq!(back, w);
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode(&small()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(Error::Checkpoint(_))));
        // base channels 3 -> 4: tensor shapes no longer match the descriptor
        let mut bad = bytes;
        bad[12] = 4;
        assert!(matches!(decode(&bad), Err(Error::Checkpoint(_))));
    }
}
