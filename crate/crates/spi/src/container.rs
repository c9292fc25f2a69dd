//! Binary container for simulated acquisitions.
//!
//! Header: magic `SPI1`, `u32` version, `u32` side `n`, `u32` measurement count
//! `m`, `f64` SNR in dB (`+inf` when noiseless) and `u32` item count. Each item
//! is the `n²` ground-truth pixels followed by its `m` measurements, all as
//! little-endian `f32`.

use std::path::Path;

use spi_core::Image;

use crate::{files, Error, Result};

pub const MAGIC: [u8; 4] = *b"SPI1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedItem {
    pub truth: Image,
    pub measurements: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSet {
    pub side: usize,
    pub measurements: usize,
    pub snr_db: f64,
    pub items: Vec<SimulatedItem>,
}

impl SimulatedSet {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let (n2, m) = (self.side * self.side, self.measurements);
        let mut out = Vec::with_capacity(HEADER_LEN + self.items.len() * 4 * (n2 + m));
        out.extend_from_slice(&MAGIC);
        for v in [VERSION, narrow(self.side)?, narrow(m)?] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.snr_db.to_le_bytes());
        out.extend_from_slice(&narrow(self.items.len())?.to_le_bytes());
        for (i, item) in self.items.iter().enumerate() {
            if item.truth.height() != self.side || item.truth.width() != self.side || item.measurements.len() != m {
                return Err(Error::Format(format!("item {i} does not match the {}x{} / {m} header", self.side, self.side)));
            }
            for v in item.truth.data().iter().chain(&item.measurements) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("container shorter than its header".into()));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::Format("bad container magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        if word(4) != VERSION as usize {
            return Err(Error::Format(format!("unsupported container version {}", word(4))));
        }
        let (side, m) = (word(8), word(12));
        let snr_db = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let count = word(24);
        let item_len = (side * side + m) * 4;
        if bytes.len() - HEADER_LEN != count * item_len {
            return Err(Error::Format(format!(
                "{} payload bytes for {count} items of {item_len} bytes",
                bytes.len() - HEADER_LEN
            )));
        }
        let items = bytes[HEADER_LEN..]
            .chunks_exact(item_len.max(1))
            .take(count)
            .map(|chunk| {
                let vals: Vec<f64> = chunk
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect();
                let (img, meas) = vals.split_at(side * side);
                Ok(SimulatedItem { truth: Image::square(side, img.to_vec())?, measurements: meas.to_vec() })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { side, measurements: m, snr_db, items })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::write(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&files::read(path)?)
    }
}

fn narrow(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit the container header")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SimulatedSet {
        let items = (0..3)
            .map(|k| SimulatedItem {
                truth: Image::square(4, (0..16).map(|i| (i + k) as f64 / 32.0).collect()).unwrap(),
                measurements: vec![1.5 * k as f64, -0.25, 8.0],
            })
            .collect();
        SimulatedSet { side: 4, measurements: 3, snr_db: 25.0, items }
    }

    #[test]
    fn roundtrip() {
        let set = sample();
        let bytes = set.encode().unwrap();
        assert_eq!(&bytes[..4], b"SPI1");
        assert_eq!(bytes.len(), HEADER_LEN + 3 * 4 * 19);
        assert_eq!(SimulatedSet::decode(&bytes).unwrap(), set);
    }

    #[test]
    fn noiseless_snr_is_infinite() {
        let set = SimulatedSet { snr_db: f64::INFINITY, items: vec![], ..sample() };
        assert_eq!(SimulatedSet::decode(&set.encode().unwrap()).unwrap().snr_db, f64::INFINITY);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let bytes = sample().encode().unwrap();
        assert!(SimulatedSet::decode(&bytes[..bytes.len() - 2]).is_err());
        assert!(SimulatedSet::decode(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(SimulatedSet::decode(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 2;
        assert!(SimulatedSet::decode(&bad).is_err());
    }

    #[test]
    fn mismatched_items_are_rejected() {
        let mut set = sample();
        set.items[1].measurements.pop();
        assert!(set.encode().is_err());
    }
}
