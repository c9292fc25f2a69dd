//! 16-bit binary PGM images with a JSON sidecar holding the value range.
//!
//! Pixel `v` is stored as `round(65535·(v − min)/(max − min))`; the sidecar
//! `<name>.range.json` keeps `min` and `max` so values can be recovered.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spi_core::Image;

use crate::{files, Error, Result};

const MAX_VALUE: f64 = 65535.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

pub fn encode(img: &Image) -> (Vec<u8>, ValueRange) {
    let (min, max) = img.min_max();
    let span = max - min;
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.data() {
        let q = if span > 0.0 { ((v - min) / span * MAX_VALUE).round() as u16 } else { 0 };
        out.extend_from_slice(&q.to_be_bytes());
    }
    (out, ValueRange { min, max })
}

pub fn decode(bytes: &[u8], range: ValueRange) -> Result<Image> {
    let bad = |msg: &str| Error::Format(format!("PGM: {msg}"));
    // header: magic, width, height, maxval separated by single whitespace runs
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(bad("expected a 16-bit P5 image"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let body = bytes.get(pos..).ok_or_else(|| bad("missing pixels"))?;
    if body.len() != 2 * width * height {
        return Err(bad("pixel count does not match header"));
    }
    let span = range.max - range.min;
    let data = body
        .chunks_exact(2)
        .map(|c| match u16::from_be_bytes([c[0], c[1]]) {
            u16::MAX => range.max,
            q => range.min + q as f64 / MAX_VALUE * span,
        })
        .collect();
    Ok(Image::new(height, width, data)?)
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    let mut name = pgm.file_stem().unwrap_or_default().to_os_string();
    name.push(".range.json");
    pgm.with_file_name(name)
}

/// Writes `path` and its sidecar; returns both paths.
pub fn write(path: &Path, img: &Image) -> Result<[PathBuf; 2]> {
    let (bytes, range) = encode(img);
    files::write(path, &bytes)?;
    let side = sidecar_path(path);
    files::write(&side, &serde_json::to_vec(&range)?)?;
    Ok([path.to_owned(), side])
}

pub fn read(path: &Path) -> Result<Image> {
    let range: ValueRange = serde_json::from_slice(&files::read(&sidecar_path(path))?)?;
    decode(&files::read(path)?, range)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_within_quantization() {
        let img = Image::new(3, 5, (0..15).map(|i| (i as f64 * 0.37).sin() * 0.2).collect()).unwrap();
        let (bytes, range) = encode(&img);
        assert!(bytes.starts_with(b"P5\n5 3\n65535\n"));
        let back = decode(&bytes, range).unwrap();
        let step = (range.max - range.min) / MAX_VALUE;
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() <= 0.5 * step + 1e-15);
        }
        assert_eq!(back.min_max(), img.min_max());
    }

    #[test]
    fn constant_image() {
        let img = Image::filled(2, 2, 0.4);
        let (bytes, range) = encode(&img);
        assert_eq!(decode(&bytes, range).unwrap(), img);
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar_path(Path::new("a/b/0001_mean.pgm")), Path::new("a/b/0001_mean.range.json"));
    }

    #[test]
    fn rejects_other_formats() {
        let r = ValueRange { min: 0.0, max: 1.0 };
        assert!(decode(b"P2\n1 1\n255\n0", r).is_err());
        assert!(decode(b"P5\n2 2\n65535\n\0\0", r).is_err());
    }
}
