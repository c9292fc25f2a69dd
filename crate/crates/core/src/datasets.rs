//! MNIST (IDX) and STL-10 binary parsing, preprocessing and seeded splits.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::{patterns, seed, Error, Image, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// IDX magic for an unsigned-byte tensor with three dimensions.
pub const IDX3_UBYTE_MAGIC: u32 = 0x0000_0803;
pub const STL10_SIDE: usize = 96;
pub const STL10_IMAGE_BYTES: usize = STL10_SIDE * STL10_SIDE * 3;

/// Stack of 8-bit images, stored image-major then row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawStack {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RawStack {
    pub fn image_bytes(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let len = self.image_bytes();
        &self.data[i * len..(i + 1) * len]
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses an IDX3 unsigned-byte file (`count × rows × cols`).
pub fn parse_idx(bytes: &[u8]) -> Result<RawStack> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != IDX3_UBYTE_MAGIC {
        return Err(Error::Format(format!("bad IDX magic {magic:#010x}")));
    }
    let count = read_be_u32(bytes, 4)? as usize;
    let height = read_be_u32(bytes, 8)? as usize;
    let width = read_be_u32(bytes, 12)? as usize;
    let expected = count
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "IDX payload has {} bytes, dimensions need {expected}",
            payload.len()
        )));
    }
    Ok(RawStack { count, height, width, channels: 1, data: payload[..expected].to_vec() })
}

/// Serializes a single-channel stack as IDX3.
pub fn encode_idx(stack: &RawStack) -> Result<Vec<u8>> {
    if stack.channels != 1 {
        return Err(Error::Format("IDX3 holds single-channel images only".into()));
    }
    let mut out = Vec::with_capacity(16 + stack.data.len());
    for v in [IDX3_UBYTE_MAGIC, stack.count as u32, stack.height as u32, stack.width as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&stack.data);
    Ok(out)
}

/// Parses STL-10 `*_X.bin` data: per image three 96×96 planes, each stored column-major.
pub fn parse_stl10(bytes: &[u8]) -> Result<RawStack> {
    if bytes.len() % STL10_IMAGE_BYTES != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a multiple of the {STL10_IMAGE_BYTES}-byte STL-10 record",
            bytes.len()
        )));
    }
    let count = bytes.len() / STL10_IMAGE_BYTES;
    let plane = STL10_SIDE * STL10_SIDE;
    let mut data = vec![0u8; bytes.len()];
    for (src, dst) in bytes.chunks_exact(STL10_IMAGE_BYTES).zip(data.chunks_exact_mut(STL10_IMAGE_BYTES)) {
        for ch in 0..3 {
            for col in 0..STL10_SIDE {
                for row in 0..STL10_SIDE {
                    dst[(row * STL10_SIDE + col) * 3 + ch] = src[ch * plane + col * STL10_SIDE + row];
                }
            }
        }
    }
    Ok(RawStack { count, height: STL10_SIDE, width: STL10_SIDE, channels: 3, data })
}

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear resize with aligned corners: corner pixel centres map onto each other.
pub fn resize_bilinear(src: &Image, height: usize, width: usize) -> Image {
    let (sh, sw) = (src.height(), src.width());
    let scale = |dst: usize, n: usize| if dst > 1 { (n - 1) as f64 / (dst - 1) as f64 } else { 0.0 };
    let (fy, fx) = (scale(height, sh), scale(width, sw));
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        let y = r as f64 * fy;
        let y0 = (y.floor() as usize).min(sh - 1);
        let y1 = (y0 + 1).min(sh - 1);
        let ty = y - y0 as f64;
        for c in 0..width {
            let x = c as f64 * fx;
            let x0 = (x.floor() as usize).min(sw - 1);
            let x1 = (x0 + 1).min(sw - 1);
            let tx = x - x0 as f64;
            let top = lerp(src.get(y0, x0), src.get(y0, x1), tx);
            let bottom = lerp(src.get(y1, x0), src.get(y1, x1), tx);
            out.push(lerp(top, bottom, ty));
        }
    }
    Image::new(height, width, out).expect("resize output shape")
}

/// Converts to luminance, scales bytes to `[0, 1]` and resizes to `target_side × target_side`.
pub fn preprocess(stack: &RawStack, target_side: usize) -> Result<Vec<Image>> {
    patterns::log2_side(target_side)?;
    if stack.channels != 1 && stack.channels != 3 {
        return Err(Error::Dimension(format!("{} channels", stack.channels)));
    }
    if stack.height == 0 || stack.width == 0 || stack.data.len() != stack.count * stack.image_bytes() {
        return Err(Error::Dimension("inconsistent image stack".into()));
    }
    (0..stack.count)
        .map(|i| {
            let raw = stack.image(i);
            let gray: Vec<f64> = if stack.channels == 1 {
                raw.iter().map(|&v| f64::from(v) / 255.0).collect()
            } else {
                raw.chunks_exact(3)
                    .map(|px| {
                        let luma: f64 = px.iter().zip(LUMA).map(|(&v, w)| f64::from(v) * w).sum();
                        (luma / 255.0).clamp(0.0, 1.0)
                    })
                    .collect()
            };
            let img = Image::new(stack.height, stack.width, gray)?;
            let mut resized = resize_bilinear(&img, target_side, target_side);
            resized.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            Ok(resized)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Ground-truth images split into training, validation and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub side: usize,
    pub split_seed: u64,
    pub train: Vec<Image>,
    pub val: Vec<Image>,
    pub test: Vec<Image>,
    /// Source indices of each split, in split order.
    pub indices: [Vec<usize>; 3],
}

/// Seeded shuffle followed by contiguous slicing into disjoint train/val/test splits.
pub fn split_dataset(name: &str, images: &[Image], counts: SplitCounts, split_seed: u64) -> Result<Dataset> {
    if counts.total() > images.len() {
        return Err(Error::Data(format!(
            "{} images requested but only {} available",
            counts.total(),
            images.len()
        )));
    }
    let side = images.first().map(|i| i.height()).ok_or_else(|| Error::Data("no images".into()))?;
    for img in images {
        if img.height() != side || img.width() != side {
            return Err(Error::Data("images differ in size".into()));
        }
        if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("pixel values outside [0, 1]".into()));
        }
    }
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut seed::rng(split_seed));
    let train_idx = order[..counts.train].to_vec();
    let val_idx = order[counts.train..counts.train + counts.val].to_vec();
    let test_idx = order[counts.train + counts.val..counts.total()].to_vec();
    let pick = |idx: &[usize]| idx.iter().map(|&i| images[i].clone()).collect::<Vec<_>>();
    Ok(Dataset {
        name: name.into(),
        side,
        split_seed,
        train: pick(&train_idx),
        val: pick(&val_idx),
        test: pick(&test_idx),
        indices: [train_idx, val_idx, test_idx],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(count: u32, rows: u32, cols: u32, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IDX3_UBYTE_MAGIC, count, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn idx_single_image() {
        let stack = parse_idx(&idx_bytes(1, 28, 28, &[7u8; 784])).unwrap();
        assert_eq!((stack.count, stack.height, stack.width), (1, 28, 28));
        assert!(stack.data.iter().all(|&v| v == 7));
    }

    #[test]
    fn idx_errors() {
        assert!(matches!(parse_idx(&idx_bytes(1, 28, 28, &[0u8; 700])), Err(Error::Format(_))));
        let mut bad = idx_bytes(1, 2, 2, &[0; 4]);
        bad[3] = 0x01;
        assert!(matches!(parse_idx(&bad), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&[0, 0, 8]), Err(Error::Format(_))));
    }

    #[test]
    fn idx_white_normalizes_to_one() {
        let stack = parse_idx(&idx_bytes(1, 28, 28, &[255u8; 784])).unwrap();
        let imgs = preprocess(&stack, 32).unwrap();
        assert!(imgs[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn stl10_records() {
        let one = parse_stl10(&vec![0u8; STL10_IMAGE_BYTES]).unwrap();
        assert_eq!(one.count, 1);
        assert!(one.data.iter().all(|&v| v == 0));
        assert_eq!(parse_stl10(&vec![0u8; 2 * STL10_IMAGE_BYTES]).unwrap().count, 2);
        assert!(matches!(parse_stl10(&vec![0u8; STL10_IMAGE_BYTES + 1]), Err(Error::Format(_))));
    }

    #[test]
    fn stl10_is_column_major_per_channel() {
        let mut bytes = vec![0u8; STL10_IMAGE_BYTES];
        // Green plane, column 2, row 5.
        bytes[STL10_SIDE * STL10_SIDE + 2 * STL10_SIDE + 5] = 200;
        let stack = parse_stl10(&bytes).unwrap();
        assert_eq!(stack.data[(5 * STL10_SIDE + 2) * 3 + 1], 200);
        assert_eq!(stack.data.iter().filter(|&&v| v != 0).count(), 1);
    }

    #[test]
    fn white_rgb_has_unit_luminance_and_shape() {
        let stack = parse_stl10(&vec![255u8; STL10_IMAGE_BYTES]).unwrap();
        let imgs = preprocess(&stack, 64).unwrap();
        assert_eq!((imgs[0].height(), imgs[0].width()), (64, 64));
        assert!(imgs[0].data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_gray_survives_upsampling() {
        let stack = RawStack { count: 1, height: 28, width: 28, channels: 1, data: vec![100; 784] };
        let img = &preprocess(&stack, 32).unwrap()[0];
        assert!(img.data().iter().all(|&v| v == 100.0 / 255.0));
    }

    #[test]
    fn resize_keeps_corners() {
        let src = Image::square(3, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]).unwrap();
        let up = resize_bilinear(&src, 5, 5);
        assert_eq!(up.get(0, 0), 0.0);
        assert_eq!(up.get(4, 4), 0.8);
        assert_eq!(up.get(0, 4), 0.2);
        assert!((up.get(2, 2) - 0.4).abs() < 1e-15);
        assert!((up.get(0, 1) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn non_power_of_two_target_is_rejected() {
        let stack = RawStack { count: 1, height: 4, width: 4, channels: 1, data: vec![0; 16] };
        assert!(matches!(preprocess(&stack, 30), Err(Error::Size(_))));
    }

    #[test]
    fn splits_are_seeded_and_disjoint() {
        let images: Vec<Image> = (0..20).map(|i| Image::filled(4, 4, i as f64 / 20.0)).collect();
        let counts = SplitCounts { train: 10, val: 5, test: 3 };
        let a = split_dataset("toy", &images, counts, 9).unwrap();
        let b = split_dataset("toy", &images, counts, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (10, 5, 3));
        let mut all: Vec<usize> = a.indices.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 18);
        let c = split_dataset("toy", &images, counts, 10).unwrap();
        assert_ne!(a.indices, c.indices);
        let too_many = SplitCounts { train: 15, val: 5, test: 3 };
        assert!(matches!(split_dataset("toy", &images, too_many, 9), Err(Error::Data(_))));
    }
}
