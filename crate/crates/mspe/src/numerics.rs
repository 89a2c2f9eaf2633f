//! Minimal dense linear algebra and stable elementary operations.
//!
//! Everything is 64-bit floating point with sequential left-to-right
//! reductions, so results are bitwise reproducible across runs and thread
//! counts. Row-major storage only; no SIMD or sparsity contract.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Matrix::new",
                detail: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard matrix product with 64-bit accumulation.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            detail: format!("{}x{} times {}x{}", a.rows, a.cols, b.rows, b.cols),
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a.data[i * a.cols + k] * b.data[k * b.cols + j];
            }
            out.data[i * b.cols + j] = acc;
        }
    }
    Ok(out)
}

/// Row-vector times matrix: `out[j] = sum_i x[i] * m[i][j]`.
///
/// Zero entries of `x` are skipped; with finite weights this changes no bits
/// of the result and makes sparse residual streams cheap.
pub fn vecmat(x: &[f64], m: &Matrix) -> Result<Vec<f64>> {
    if x.len() != m.rows {
        return Err(Error::Shape {
            op: "vecmat",
            detail: format!("vector of len {} times {}x{}", x.len(), m.rows, m.cols),
        });
    }
    let mut out = vec![0.0; m.cols];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &m.data[i * m.cols..(i + 1) * m.cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xi * w;
        }
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Numerically stable softmax (max subtraction); output sums to 1.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput("softmax"));
    }
    let max = v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let mut sum = 0.0;
    for &e in &out {
        sum += e;
    }
    for e in &mut out {
        *e /= sum;
    }
    Ok(out)
}

const DISTRIBUTION_SUM_TOL: f64 = 1e-9;

/// Checks that `p` is a probability vector: non-negative, sums to 1 within
/// tolerance.
pub fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyInput("distribution"));
    }
    let mut sum = 0.0;
    for &x in p {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "entry {x} is negative or non-finite"
            )));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > DISTRIBUTION_SUM_TOL {
        return Err(Error::InvalidDistribution(format!(
            "sums to {sum}, expected 1 within {DISTRIBUTION_SUM_TOL}"
        )));
    }
    Ok(())
}

/// Shannon entropy `-sum p_i ln p_i` in nats, with the convention
/// `0 * ln 0 = 0`. Result lies in `[0, ln(len)]`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    validate_distribution(p)?;
    let mut h = 0.0;
    for &x in p {
        if x > 0.0 {
            h -= x * x.ln();
        }
    }
    Ok(h)
}

/// RMS normalization: `v_i * gain_i / sqrt(mean(v^2) + eps)`.
pub fn rms_norm(v: &[f64], gain: &[f64], eps: f64) -> Result<Vec<f64>> {
    if v.len() != gain.len() {
        return Err(Error::Shape {
            op: "rms_norm",
            detail: format!("value len {} vs gain len {}", v.len(), gain.len()),
        });
    }
    if v.is_empty() {
        return Err(Error::EmptyInput("rms_norm"));
    }
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::Config(format!("rms_norm eps must be >= 0, got {eps}")));
    }
    let mut sq = 0.0;
    for &x in v {
        sq += x * x;
    }
    let inv = 1.0 / (sq / v.len() as f64 + eps).sqrt();
    Ok(v.iter().zip(gain).map(|(&x, &g)| x * g * inv).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_identity() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = matmul(&Matrix::identity(2), &a).unwrap();
        assert_eq!(out.data(), a.data());
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let a = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Matrix::new(2, 1, vec![3.0, 4.0]).unwrap();
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn matmul_dimension_mismatch() {
        let a = Matrix::new(2, 3, vec![0.0; 6]).unwrap();
        let b = Matrix::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(matmul(&a, &b), Err(Error::Shape { .. })));
    }

    /// Independent triple-loop oracle with a different accumulation order
    /// (k descending) from the implementation.
    fn matmul_oracle(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in (0..a.cols()).rev() {
                    acc += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn deterministic_matrix(rows: usize, cols: usize, salt: u64) -> Matrix {
        // Small LCG; values in [-1, 1].
        let mut state = salt.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let data = (0..rows * cols)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
            })
            .collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let a = deterministic_matrix(5, 7, 1);
        let b = deterministic_matrix(7, 3, 2);
        let got = matmul(&a, &b).unwrap();
        let want = matmul_oracle(&a, &b);
        assert_close(got.data(), want.data(), 1e-12);
    }

    #[test]
    fn matmul_associative_on_small_random_triples() {
        for salt in 0..8 {
            let a = deterministic_matrix(6, 5, salt * 3);
            let b = deterministic_matrix(5, 16, salt * 3 + 1);
            let c = deterministic_matrix(16, 4, salt * 3 + 2);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            assert_close(left.data(), right.data(), 1e-9);
        }
    }

    #[test]
    fn softmax_symmetry() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_no_overflow_on_large_inputs() {
        let out = softmax(&[1000.0, 1000.0, 1000.0]).unwrap();
        assert_close(&out, &[1.0 / 3.0; 3], 1e-15);
    }

    #[test]
    fn softmax_matches_exp_normalize_oracle() {
        let v = [1.0f64, 2.0, 3.0];
        let exps: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let sum: f64 = exps.iter().sum();
        let want: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        assert_close(&softmax(&v).unwrap(), &want, 1e-12);
    }

    #[test]
    fn softmax_empty_is_error() {
        assert!(matches!(softmax(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn entropy_one_hot_is_zero() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_uniform_is_log_len() {
        let p = vec![1.0 / 8.0; 8];
        assert!((entropy(&p).unwrap() - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_direct_summation_oracle() {
        // [0.5, 0.25, 0.25] -> 1.5 * ln 2
        let h = entropy(&[0.5, 0.25, 0.25]).unwrap();
        assert!((h - 1.5 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn entropy_rejects_invalid_distributions() {
        assert!(matches!(
            entropy(&[0.5, -0.1, 0.6]),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(matches!(
            entropy(&[0.5, 0.6]),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn rms_norm_unit_vector() {
        let v = [1.0, 1.0, 1.0, 1.0];
        let gain = [1.0; 4];
        let out = rms_norm(&v, &gain, 1e-15).unwrap();
        assert_close(&out, &v, 1e-7);
    }

    #[test]
    fn rms_norm_scale_normalization() {
        let out = rms_norm(&[2.0, 2.0], &[1.0, 1.0], 0.0).unwrap();
        assert_eq!(out, vec![1.0, 1.0]);
    }

    #[test]
    fn rms_norm_direct_formula_oracle() {
        let v: Vec<f64> = (0..9).map(|i| (i as f64 - 4.0) * 0.37).collect();
        let gain: Vec<f64> = (0..9).map(|i| 1.0 + 0.1 * i as f64).collect();
        let eps = 1e-6;
        let ms = v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        let want: Vec<f64> = v
            .iter()
            .zip(&gain)
            .map(|(x, g)| x * g / (ms + eps).sqrt())
            .collect();
        assert_close(&rms_norm(&v, &gain, eps).unwrap(), &want, 1e-12);
    }

    #[test]
    fn rms_norm_length_mismatch() {
        assert!(matches!(
            rms_norm(&[1.0, 2.0], &[1.0], 1e-6),
            Err(Error::Shape { .. })
        ));
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(
            v in proptest::collection::vec(-50.0f64..50.0, 1..32),
            c in -100.0f64..100.0,
        ) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = softmax(&v).unwrap();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn softmax_is_distribution_and_order_preserving(
            v in proptest::collection::vec(-50.0f64..50.0, 2..32),
        ) {
            let out = softmax(&v).unwrap();
            let sum: f64 = out.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for i in 0..v.len() {
                for j in 0..v.len() {
                    if v[i] > v[j] {
                        prop_assert!(out[i] > out[j]);
                    }
                }
            }
        }

        #[test]
        fn entropy_maximal_at_uniform(
            v in proptest::collection::vec(0.01f64..10.0, 2..16),
        ) {
            let sum: f64 = v.iter().sum();
            let p: Vec<f64> = v.iter().map(|x| x / sum).collect();
            let uniform = vec![1.0 / p.len() as f64; p.len()];
            prop_assert!(entropy(&p).unwrap() <= entropy(&uniform).unwrap() + 1e-12);
        }
    }
}
