//! Layer kernels on `(channels, height, width)` buffers stored channel-major.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use super::real::Real;
use crate::seed::Rng;

/// Dropout mask for `len` activations: `0` with probability `rate`, else `1 / (1 − rate)`.
pub fn dropout_mask<T: Real>(rng: &mut Rng, len: usize, rate: f64) -> Vec<T> {
    let threshold = (rate * 4_294_967_296.0) as u64;
    let keep = T::from_f64(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if (rng.next_u32() as u64) < threshold { T::zero() } else { keep })
        .collect()
}

/// Unfolds a `k × k` neighbourhood (zero "same" padding) into a `(c·k², h·w)` matrix.
pub fn im2col<T: Real>(input: &[T], channels: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![T::zero(); channels * k * k * hw];
    for c in 0..channels {
        let plane = &input[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    if x_lo < x_hi {
                        let s_lo = (x_lo as isize + dx) as usize;
                        dst[x_lo..x_hi].copy_from_slice(&src[s_lo..s_lo + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds column gradients back onto the input.
pub fn col2im<T: Real>(cols: &[T], channels: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut out = vec![T::zero(); channels * hw];
    for c in 0..channels {
        let plane = &mut out[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize) as usize;
                    if x_lo < x_hi {
                        let s_lo = (x_lo as isize + dx) as usize;
                        let dst = &mut plane[sy as usize * w + s_lo..][..x_hi - x_lo];
                        for (d, s) in dst.iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2×2 max pooling with stride 2. Returns the pooled map and the argmax index of each output.
pub fn max_pool2<T: Real>(input: &[T], channels: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut arg = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for idx in [best + 1, best + w, best + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<T: Real>(grad: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); input_len];
    for (g, &i) in grad.iter().zip(argmax) {
        out[i as usize] += *g;
    }
    out
}

/// Nearest-neighbour ×2 upsampling.
pub fn upsample2<T: Real>(input: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); channels * oh * ow];
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                out[(c * oh + y) * ow + x] = input[(c * h + y / 2) * w + x / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2×2 block. `h`, `w` are the small (input) sizes.
pub fn upsample2_backward<T: Real>(grad: &[T], channels: usize, h: usize, w: usize) -> Vec<T> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); channels * h * w];
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                out[(c * h + y / 2) * w + x / 2] += grad[(c * oh + y) * ow + x];
            }
        }
    }
    out
}
