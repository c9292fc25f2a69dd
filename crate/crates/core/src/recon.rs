//! LSQR (Golub–Kahan bidiagonalization) for `min ‖A x − b‖₂`.
//!
//! Starting from `x₀ = 0` the iterates stay in the row space of `A`, so on an
//! underdetermined consistent system the solver converges to the minimum-norm
//! solution. That solution is what feeds the network as its initial guess.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::patterns::MeasurementMatrix;
use crate::sensing::MeasurementVector;
use crate::{seed, Error, Image, Result};
#[cfg(not(feature = "std"))]
use num_traits::Float;

/// A real linear map `ℝⁿ → ℝᵐ` together with its adjoint.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `out = A x`, with `x.len() == ncols()` and `out.len() == nrows()`.
    fn apply(&self, x: &[f64], out: &mut [f64]);
    /// `out = Aᵀ y`, with `y.len() == nrows()` and `out.len() == ncols()`.
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    pub fn from_measurement(a: &MeasurementMatrix) -> Result<Self> {
        let data = a.to_dense()?.into_iter().map(f64::from).collect();
        Self::new(a.rows(), a.cols(), data)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

impl LinearOperator for DenseMatrix {
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * yi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqrOptions {
    pub max_iterations: usize,
    /// Relative tolerance on `‖Aᵀr‖ / (‖A‖ ‖r‖)` and on the error in `A`.
    pub atol: f64,
    /// Relative tolerance on `‖r‖ / ‖b‖`.
    pub btol: f64,
    /// Stop once the condition estimate exceeds this; `0` disables the test.
    pub conlim: f64,
    /// Probe `⟨A u, v⟩ = ⟨u, Aᵀ v⟩` on random vectors before iterating.
    pub check_adjoint: bool,
}

impl Default for LsqrOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            atol: 1e-8,
            btol: 1e-8,
            conlim: 0.0,
            check_adjoint: cfg!(debug_assertions),
        }
    }
}

impl LsqrOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("LSQR needs at least one iteration".into()));
        }
        for (name, tol) in [("atol", self.atol), ("btol", self.btol)] {
            if !(tol > 0.0 && tol < 1.0) {
                return Err(Error::Config(format!("{name} = {tol} outside (0, 1)")));
            }
        }
        if !(self.conlim >= 0.0) {
            return Err(Error::Config(format!("conlim = {} must be >= 0", self.conlim)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `‖Aᵀr‖` small: `x` solves the least-squares problem.
    ConvergedAtol,
    /// `‖r‖` small: `x` solves the (compatible) system.
    ConvergedBtol,
    /// Condition estimate exceeded `conlim`.
    ConditionLimit,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqrResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
    /// `‖A x − b‖₂`, recomputed from the returned `x`.
    pub residual_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks that `apply_adjoint` is the adjoint of `apply` on a few random vector pairs.
pub fn check_adjoint<A: LinearOperator + ?Sized>(op: &A, tolerance: f64) -> Result<()> {
    let mut rng = seed::rng(0x5eed_ad1_0000);
    let (m, n) = (op.nrows(), op.ncols());
    let mut au = vec![0.0; m];
    let mut atv = vec![0.0; n];
    for _ in 0..3 {
        let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let v: Vec<f64> = (0..m).map(|_| rng.random::<f64>() - 0.5).collect();
        op.apply(&u, &mut au);
        op.apply_adjoint(&v, &mut atv);
        let lhs = dot(&au, &v);
        let rhs = dot(&u, &atv);
        let scale = (norm(&au) * norm(&v)).max(norm(&u) * norm(&atv)).max(f64::MIN_POSITIVE);
        if (lhs - rhs).abs() > tolerance * scale {
            return Err(Error::Operator(format!(
                "<Au, v> = {lhs:e} but <u, A^T v> = {rhs:e}"
            )));
        }
    }
    Ok(())
}

/// Solves `min ‖A x − b‖₂` with LSQR from a zero initial iterate.
pub fn lsqr_solve<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    opts: &LsqrOptions,
) -> Result<LsqrResult> {
    opts.validate()?;
    let (m, n) = (op.nrows(), op.ncols());
    if b.len() != m {
        return Err(Error::Dimension(format!("right-hand side of length {} for {m} rows", b.len())));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite right-hand side".into()));
    }
    if opts.check_adjoint {
        check_adjoint(op, 1e-10)?;
    }

    let mut x = vec![0.0; n];
    let mut u = b.to_vec();
    let mut v = vec![0.0; n];
    let mut tmp_m = vec![0.0; m];
    let mut tmp_n = vec![0.0; n];

    let mut beta = norm(&u);
    let bnorm = beta;
    if beta > 0.0 {
        u.iter_mut().for_each(|e| *e /= beta);
        op.apply_adjoint(&u, &mut v);
    }
    let mut alpha = norm(&v);
    if alpha > 0.0 {
        v.iter_mut().for_each(|e| *e /= alpha);
    }
    if alpha * beta == 0.0 {
        // b = 0 or Aᵀb = 0: x = 0 is the minimum-norm least-squares solution.
        return Ok(LsqrResult {
            x,
            iterations: 0,
            stop: StopReason::ConvergedAtol,
            residual_norm: bnorm,
        });
    }

    let mut w = v.clone();
    let mut rhobar = alpha;
    let mut phibar = beta;
    let mut anorm_sq = 0.0;
    let mut ddnorm = 0.0;
    let ctol = if opts.conlim > 0.0 { 1.0 / opts.conlim } else { 0.0 };

    let mut iterations = 0;
    let stop = loop {
        iterations += 1;

        // Bidiagonalization step.
        op.apply(&v, &mut tmp_m);
        for (ui, ai) in u.iter_mut().zip(&tmp_m) {
            *ui = ai - alpha * *ui;
        }
        beta = norm(&u);
        if beta > 0.0 {
            u.iter_mut().for_each(|e| *e /= beta);
        }
        anorm_sq += alpha * alpha + beta * beta;
        op.apply_adjoint(&u, &mut tmp_n);
        for (vi, ai) in v.iter_mut().zip(&tmp_n) {
            *vi = ai - beta * *vi;
        }
        alpha = norm(&v);
        if alpha > 0.0 {
            v.iter_mut().for_each(|e| *e /= alpha);
        }

        // Plane rotation eliminating the subdiagonal beta.
        let rho = rhobar.hypot(beta);
        let c = rhobar / rho;
        let s = beta / rho;
        let theta = s * alpha;
        rhobar = -c * alpha;
        let phi = c * phibar;
        phibar *= s;
        let tau = s * phi;

        let step = phi / rho;
        let wscale = -theta / rho;
        for ((xi, wi), vi) in x.iter_mut().zip(w.iter_mut()).zip(&v) {
            let wv = *wi;
            ddnorm += (wv / rho) * (wv / rho);
            *xi += step * wv;
            *wi = vi + wscale * wv;
        }

        if !phibar.is_finite() || !rho.is_finite() || x.iter().any(|e| !e.is_finite()) {
            return Err(Error::Numeric(format!("LSQR diverged at iteration {iterations}")));
        }

        let anorm = anorm_sq.sqrt();
        let acond = anorm * ddnorm.sqrt();
        let xnorm = norm(&x);
        let rnorm = phibar;
        let arnorm = alpha * tau.abs();

        let test1 = rnorm / bnorm;
        let test2 = if rnorm > 0.0 { arnorm / (anorm * rnorm) } else { 0.0 };
        let test3 = if acond > 0.0 { 1.0 / acond } else { 0.0 };
        let rtol = opts.btol + opts.atol * anorm * xnorm / bnorm;

        if test1 <= rtol {
            break StopReason::ConvergedBtol;
        }
        if test2 <= opts.atol {
            break StopReason::ConvergedAtol;
        }
        if ctol > 0.0 && test3 <= ctol {
            break StopReason::ConditionLimit;
        }
        if iterations >= opts.max_iterations {
            break StopReason::MaxIterations;
        }
    };

    op.apply(&x, &mut tmp_m);
    let residual_norm = tmp_m.iter().zip(b).map(|(a, bi)| (a - bi) * (a - bi)).sum::<f64>().sqrt();
    Ok(LsqrResult { x, iterations, stop, residual_norm })
}

/// LSQR reconstruction of an `n × n` image from its measurements, without clipping or rescaling.
pub fn reconstruct_initial(
    a: &MeasurementMatrix,
    y: &MeasurementVector,
    opts: &LsqrOptions,
) -> Result<Image> {
    if y.values().len() != a.rows() {
        return Err(Error::Dimension(format!(
            "{} measurements for a {}-row operator",
            y.values().len(),
            a.rows()
        )));
    }
    let result = lsqr_solve(a, y.values(), opts)?;
    Image::square(a.side(), result.x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::build_measurement_matrix;

    struct Broken;

    impl LinearOperator for Broken {
        fn nrows(&self) -> usize {
            2
        }
        fn ncols(&self) -> usize {
            2
        }
        fn apply(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] + x[1];
            out[1] = x[1];
        }
        fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
            // Should be [y0, y0 + y1].
            out[0] = y[0] + y[1];
            out[1] = y[1];
        }
    }

    #[test]
    fn identity_system() {
        let a = DenseMatrix::identity(4);
        let y = [1.0, 2.0, 3.0, 4.0];
        let r = lsqr_solve(&a, &y, &LsqrOptions::default()).unwrap();
        for (xi, yi) in r.x.iter().zip(&y) {
            assert!((xi - yi).abs() < 1e-8);
        }
        assert!(r.stop != StopReason::MaxIterations);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = build_measurement_matrix(8, 16).unwrap();
        let r = lsqr_solve(&a, &[0.0; 16], &LsqrOptions::default()).unwrap();
        assert!(r.x.iter().all(|&v| v == 0.0));
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn adjoint_mismatch_is_reported() {
        let opts = LsqrOptions { check_adjoint: true, ..Default::default() };
        assert!(matches!(lsqr_solve(&Broken, &[1.0, 1.0], &opts), Err(Error::Operator(_))));
    }

    #[test]
    fn non_finite_rhs_is_rejected() {
        let a = DenseMatrix::identity(2);
        let r = lsqr_solve(&a, &[1.0, f64::NAN], &LsqrOptions::default());
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn bad_options_are_rejected() {
        let a = DenseMatrix::identity(2);
        let opts = LsqrOptions { max_iterations: 0, ..Default::default() };
        assert!(matches!(lsqr_solve(&a, &[1.0, 1.0], &opts), Err(Error::Config(_))));
        let opts = LsqrOptions { atol: 1.5, ..Default::default() };
        assert!(matches!(lsqr_solve(&a, &[1.0, 1.0], &opts), Err(Error::Config(_))));
    }

    #[test]
    fn reported_residual_matches_recomputation() {
        let a = DenseMatrix::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = [1.0, 2.0, 0.0];
        let r = lsqr_solve(&a, &b, &LsqrOptions::default()).unwrap();
        let mut ax = [0.0; 3];
        a.apply(&r.x, &mut ax);
        let direct = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!((direct - r.residual_norm).abs() <= 1e-10 * direct.max(1.0));
        // Normal equations: [[2,1],[1,2]] x = [1,2] -> x = [0, 1].
        assert!((r.x[0] - 0.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8);
    }
}
