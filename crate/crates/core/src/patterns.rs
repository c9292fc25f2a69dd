//! Hadamard sensing patterns.
//!
//! Patterns are outer products `h_r · h_cᵀ` of rows of a Sylvester–Hadamard
//! matrix, with entries in `{+1, -1}`. They are ordered coarse to fine: the
//! first `4^j` patterns are exactly those that are constant on
//! `(n/2^j) × (n/2^j)` blocks, so every dyadic prefix is a complete Hadamard
//! basis of the `2^j × 2^j` downsampled image. Within a level patterns are
//! sorted by total sequency, then by `(sequency(r), r, c)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::recon::LinearOperator;
use crate::{Error, Result};

/// Largest supported Hadamard exponent (`4096 × 4096`).
pub const MAX_HADAMARD_EXPONENT: u32 = 12;

/// Largest image side for which a dense measurement matrix may be materialized.
pub const MAX_DENSE_SIDE: usize = 64;

/// Sylvester–Hadamard matrix of order `2^k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HadamardMatrix {
    order: usize,
    entries: Vec<i8>,
}

impl HadamardMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.entries[row * self.order + col]
    }

    pub fn row(&self, row: usize) -> &[i8] {
        &self.entries[row * self.order..(row + 1) * self.order]
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }
}

/// Builds `H_{2^k}` by repeated Kronecker products with `H_2`, starting from `H_1 = [1]`.
pub fn sylvester_hadamard(k: u32) -> Result<HadamardMatrix> {
    if k > MAX_HADAMARD_EXPONENT {
        return Err(Error::Size(format!(
            "Hadamard exponent {k} exceeds {MAX_HADAMARD_EXPONENT}"
        )));
    }
    let mut order = 1usize;
    let mut entries = vec![1i8];
    for _ in 0..k {
        let next = order * 2;
        let mut grown = vec![0i8; next * next];
        for r in 0..order {
            for c in 0..order {
                let v = entries[r * order + c];
                grown[r * next + c] = v;
                grown[r * next + c + order] = v;
                grown[(r + order) * next + c] = v;
                grown[(r + order) * next + c + order] = -v;
            }
        }
        order = next;
        entries = grown;
    }
    Ok(HadamardMatrix { order, entries })
}

/// Number of sign changes along row `row` of the natural-order Hadamard matrix of order `n`.
pub fn sequency(n: usize, row: usize) -> u32 {
    debug_assert!(n.is_power_of_two() && row < n);
    // Entry (row, i) is (-1)^popcount(row & i).
    let sign = |i: usize| (row & i).count_ones() & 1;
    (1..n).filter(|&i| sign(i) != sign(i - 1)).count() as u32
}

/// Exponent `k` with `n = 2^k`, or a size error.
pub fn log2_side(n: usize) -> Result<u32> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Size(format!("image side {n} is not a power of two")));
    }
    let k = n.trailing_zeros();
    if k > MAX_HADAMARD_EXPONENT {
        return Err(Error::Size(format!("image side {n} is too large")));
    }
    Ok(k)
}

/// Index pair `(r, c)` naming the pattern `h_r · h_cᵀ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternIndex {
    pub row: usize,
    pub col: usize,
}

/// A permutation of all `n²` pattern index pairs for an `n × n` image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternOrdering {
    side: usize,
    order: Vec<PatternIndex>,
}

impl PatternOrdering {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn as_slice(&self) -> &[PatternIndex] {
        &self.order
    }

    /// Cumulative pattern counts at which each resolution level is complete: `1, 4, 16, ...`.
    pub fn level_boundaries(&self) -> Vec<usize> {
        let levels = self.side.trailing_zeros();
        (0..=levels).map(|j| 1usize << (2 * j)).collect()
    }

    /// Audit listing, one `index,r,c,sequency_r,sequency_c` line per pattern, with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,r,c,sequency_r,sequency_c\n");
        for (i, p) in self.order.iter().enumerate() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                p.row,
                p.col,
                sequency(self.side, p.row),
                sequency(self.side, p.col)
            );
        }
        out
    }
}

/// Nested coarse-to-fine ordering of the 2-D Hadamard patterns of an `n × n` image.
pub fn russian_doll_order(n: usize) -> Result<PatternOrdering> {
    let levels = log2_side(n)?;
    let seq: Vec<u32> = (0..n).map(|r| sequency(n, r)).collect();
    let mut order = Vec::with_capacity(n * n);
    for j in 0..=levels {
        let step = n >> j;
        let coarser = step * 2;
        let mut level: Vec<PatternIndex> = Vec::new();
        for row in (0..n).step_by(step) {
            for col in (0..n).step_by(step) {
                let seen = j > 0 && row % coarser == 0 && col % coarser == 0;
                if !seen {
                    level.push(PatternIndex { row, col });
                }
            }
        }
        level.sort_by_key(|p| (seq[p.row] + seq[p.col], seq[p.row], p.row, p.col));
        order.extend(level);
    }
    Ok(PatternOrdering { side: n, order })
}

/// In-place unnormalized fast Walsh–Hadamard transform in natural (Sylvester) order.
pub fn fwht(data: &mut [f64]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let mut half = 1;
    while half < n {
        for block in data.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
}

/// Computes `H · X · H` for a row-major `n × n` buffer.
fn fwht_2d(buf: &mut [f64], n: usize) {
    for row in buf.chunks_exact_mut(n) {
        fwht(row);
    }
    let mut column = vec![0.0; n];
    for c in 0..n {
        for (r, v) in column.iter_mut().enumerate() {
            *v = buf[r * n + c];
        }
        fwht(&mut column);
        for (r, v) in column.iter().enumerate() {
            buf[r * n + c] = *v;
        }
    }
}

/// The first `m` patterns of the nested ordering, acting on row-major `n × n` images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementMatrix {
    side: usize,
    patterns: Vec<PatternIndex>,
}

/// Measurement matrix with `m` rows for an `n × n` image.
pub fn build_measurement_matrix(n: usize, m: usize) -> Result<MeasurementMatrix> {
    let ordering = russian_doll_order(n)?;
    if m == 0 || m > n * n {
        return Err(Error::Size(format!("row count {m} outside 1..={}", n * n)));
    }
    Ok(MeasurementMatrix { side: n, patterns: ordering.order[..m].to_vec() })
}

impl MeasurementMatrix {
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn rows(&self) -> usize {
        self.patterns.len()
    }

    pub fn cols(&self) -> usize {
        self.side * self.side
    }

    pub fn patterns(&self) -> &[PatternIndex] {
        &self.patterns
    }

    /// `n² / m`.
    pub fn compression_ratio(&self) -> f64 {
        self.cols() as f64 / self.rows() as f64
    }

    /// Row `i` flattened row-major.
    pub fn pattern(&self, i: usize) -> Vec<i8> {
        let n = self.side;
        let p = self.patterns[i];
        let mut out = vec![0i8; n * n];
        for a in 0..n {
            let ha = hadamard_sign(p.row, a);
            for b in 0..n {
                out[a * n + b] = ha * hadamard_sign(p.col, b);
            }
        }
        out
    }

    /// Dense `m × n²` matrix, row-major. Only allowed for `n ≤ 64`.
    pub fn to_dense(&self) -> Result<Vec<i8>> {
        if self.side > MAX_DENSE_SIDE {
            return Err(Error::Size(format!(
                "dense materialization limited to side {MAX_DENSE_SIDE}"
            )));
        }
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            out.extend(self.pattern(i));
        }
        Ok(out)
    }

    /// `A · x` for a row-major image vector of length `n²`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols() {
            return Err(Error::Dimension(format!(
                "input of length {} for {} columns",
                x.len(),
                self.cols()
            )));
        }
        let n = self.side;
        let mut buf = x.to_vec();
        fwht_2d(&mut buf, n);
        Ok(self.patterns.iter().map(|p| buf[p.row * n + p.col]).collect())
    }

    /// `Aᵀ · y` for a measurement vector of length `m`.
    pub fn apply_adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows() {
            return Err(Error::Dimension(format!(
                "input of length {} for {} rows",
                y.len(),
                self.rows()
            )));
        }
        let n = self.side;
        let mut buf = vec![0.0; n * n];
        for (p, v) in self.patterns.iter().zip(y) {
            buf[p.row * n + p.col] = *v;
        }
        fwht_2d(&mut buf, n);
        Ok(buf)
    }
}

impl LinearOperator for MeasurementMatrix {
    fn nrows(&self) -> usize {
        self.rows()
    }

    fn ncols(&self) -> usize {
        self.cols()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&MeasurementMatrix::apply(self, x).expect("operator shape"));
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&MeasurementMatrix::apply_adjoint(self, y).expect("operator shape"));
    }
}

#[inline]
fn hadamard_sign(row: usize, col: usize) -> i8 {
    if (row & col).count_ones() & 1 == 0 {
        1
    } else {
        -1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn gram_is_scaled_identity(h: &HadamardMatrix) -> bool {
        let n = h.order();
        (0..n).all(|i| {
            (0..n).all(|j| {
                let dot: i64 = (0..n).map(|t| h.get(i, t) as i64 * h.get(j, t) as i64).sum();
                dot == if i == j { n as i64 } else { 0 }
            })
        })
    }

    #[test]
    fn sylvester_small_cases() {
        assert_eq!(sylvester_hadamard(0).unwrap().entries(), &[1]);
        assert_eq!(sylvester_hadamard(1).unwrap().entries(), &[1, 1, 1, -1]);
        let h5 = sylvester_hadamard(5).unwrap();
        assert_eq!(h5.order(), 32);
        assert!(gram_is_scaled_identity(&h5));
        assert!(h5.row(0).iter().all(|&v| v == 1));
        assert!((0..32).all(|r| h5.get(r, 0) == 1));
    }

    #[test]
    fn sylvester_rejects_huge_order() {
        assert!(matches!(sylvester_hadamard(13), Err(Error::Size(_))));
    }

    #[test]
    fn closed_form_sign_matches_kronecker() {
        let h = sylvester_hadamard(4).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                assert_eq!(h.get(r, c), hadamard_sign(r, c));
            }
        }
    }

    #[test]
    fn sequency_of_natural_order_rows() {
        let h = sylvester_hadamard(3).unwrap();
        for r in 0..8 {
            let changes = h.row(r).windows(2).filter(|w| w[0] != w[1]).count() as u32;
            assert_eq!(sequency(8, r), changes);
        }
        let all: BTreeSet<u32> = (0..8).map(|r| sequency(8, r)).collect();
        assert_eq!(all.len(), 8);
    }

    #[test]
    fn ordering_small_sides() {
        let one = russian_doll_order(1).unwrap();
        assert_eq!(one.as_slice(), &[PatternIndex { row: 0, col: 0 }]);

        let two = russian_doll_order(2).unwrap();
        let pairs: Vec<(usize, usize)> = two.as_slice().iter().map(|p| (p.row, p.col)).collect();
        assert_eq!(pairs[0], (0, 0));
        assert_eq!(pairs[3], (1, 1));
        let middle: BTreeSet<_> = pairs[1..3].iter().copied().collect();
        assert_eq!(middle, [(0, 1), (1, 0)].into_iter().collect());
    }

    #[test]
    fn ordering_rejects_non_power_of_two() {
        assert!(matches!(russian_doll_order(12), Err(Error::Size(_))));
        assert!(matches!(russian_doll_order(0), Err(Error::Size(_))));
    }

    #[test]
    fn ordering_is_nested_bijection() {
        let n = 32;
        let ord = russian_doll_order(n).unwrap();
        let set: BTreeSet<_> = ord.as_slice().iter().copied().collect();
        assert_eq!(set.len(), n * n);
        assert_eq!(ord.level_boundaries(), vec![1, 4, 16, 64, 256, 1024]);
        for j in 0..=5u32 {
            let step = n >> j;
            let prefix = &ord.as_slice()[..1 << (2 * j)];
            assert!(prefix.iter().all(|p| p.row % step == 0 && p.col % step == 0));
        }
    }

    #[test]
    fn measurement_shapes() {
        let a = build_measurement_matrix(32, 128).unwrap();
        assert_eq!((a.rows(), a.cols()), (128, 1024));
        assert_eq!(a.compression_ratio(), 8.0);

        let dc = build_measurement_matrix(2, 1).unwrap();
        assert_eq!(dc.to_dense().unwrap(), vec![1, 1, 1, 1]);

        assert!(matches!(build_measurement_matrix(4, 0), Err(Error::Size(_))));
        assert!(matches!(build_measurement_matrix(4, 17), Err(Error::Size(_))));
    }

    #[test]
    fn rows_are_orthogonal_with_norm_n_squared() {
        let n = 16;
        let a = build_measurement_matrix(n, 100).unwrap();
        let dense = a.to_dense().unwrap();
        let cols = n * n;
        for i in 0..a.rows() {
            for j in 0..a.rows() {
                let dot: i64 = (0..cols)
                    .map(|t| dense[i * cols + t] as i64 * dense[j * cols + t] as i64)
                    .sum();
                assert_eq!(dot, if i == j { cols as i64 } else { 0 });
            }
        }
    }

    #[test]
    fn full_basis_inverts() {
        let n = 32;
        let a = build_measurement_matrix(n, n * n).unwrap();
        let x: Vec<f64> = (0..n * n).map(|i| ((i * 37 % 101) as f64) / 101.0).collect();
        let back: Vec<f64> = a
            .apply_adjoint(&a.apply(&x).unwrap())
            .unwrap()
            .into_iter()
            .map(|v| v / (n * n) as f64)
            .collect();
        for (u, v) in x.iter().zip(&back) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_listing_has_header_and_rows() {
        let csv = russian_doll_order(4).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "index,r,c,sequency_r,sequency_c");
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[1], "0,0,0,0,0");
    }
}
