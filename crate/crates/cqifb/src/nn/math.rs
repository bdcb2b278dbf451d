//! Row-major f32 matrices and the handful of kernels the trainer needs.
//!
//! Every kernel accumulates in a fixed order, so results are bit-identical
//! regardless of thread count.

use crate::util::par_rows;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        assert!(!rows.is_empty());
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols);
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// True when the AVX2+FMA fast paths are usable on this machine.
///
/// Kernel results are bit-stable for a given machine; the fused-multiply-add
/// path rounds differently from the portable one, so bit-identical output is
/// guaranteed per host, not across hosts.
#[cfg(target_arch = "x86_64")]
fn use_fma() -> bool {
    use std::sync::OnceLock;
    static HAS: OnceLock<bool> = OnceLock::new();
    *HAS.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
}

#[cfg(not(target_arch = "x86_64"))]
fn use_fma() -> bool {
    false
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn axpy_fma(y: &mut [f32], a: f32, x: &[f32]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y = x.mul_add(a, *y);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dot_fma(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ra = &a[c * 8..c * 8 + 8];
        let rb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            lanes[l] = ra[l].mul_add(rb[l], lanes[l]);
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    let mut acc = tail;
    for l in 0..8 {
        acc += lanes[l];
    }
    acc
}

/// `y += a * x` over equal-length slices.
#[inline]
pub fn axpy(y: &mut [f32], a: f32, x: &[f32]) {
    debug_assert_eq!(y.len(), x.len());
    #[cfg(target_arch = "x86_64")]
    if use_fma() {
        // Feature presence checked above.
        unsafe { axpy_fma(y, a, x) };
        return;
    }
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}

/// Dot product with eight fixed accumulator lanes.
///
/// The lane split keeps the sum order independent of the optimizer while
/// letting the compiler vectorize the hot loop.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    if use_fma() {
        return unsafe { dot_fma(a, b) };
    }
    let mut lanes = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ra = &a[c * 8..c * 8 + 8];
        let rb = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            lanes[l] += ra[l] * rb[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let mut acc = tail;
    for l in 0..8 {
        acc += lanes[l];
    }
    acc
}

/// `out[b] = bias + sum_i input[b][i] * w[i]` with `w` stored input-major
/// (`w.row(i)` is the fan-out of input `i`).
///
/// Work splits over batch rows; each thread accumulates input terms in
/// ascending order, so results do not depend on the thread count. The
/// input-outer loop streams the weight matrix once per batch instead of once
/// per row.
pub fn dense_forward(input: &Matrix, w: &Matrix, bias: &[f32]) -> Matrix {
    assert_eq!(input.cols(), w.rows(), "dense input width mismatch");
    assert_eq!(bias.len(), w.cols(), "dense bias width mismatch");
    let out_cols = w.cols();
    let mut out = Matrix::zeros(input.rows(), out_cols);
    par_rows(out.data_mut(), out_cols, |first, rows| {
        for orow in rows.chunks_mut(out_cols) {
            orow.copy_from_slice(bias);
        }
        for i in 0..w.rows() {
            let wrow = w.row(i);
            for (r, orow) in rows.chunks_mut(out_cols).enumerate() {
                axpy(orow, input.row(first + r)[i], wrow);
            }
        }
    });
    out
}

/// Gradient w.r.t. the dense input: `dx[b] = sum_o dy[b][o] * w[:, o]`.
pub fn dense_backward_input(dy: &Matrix, w: &Matrix) -> Matrix {
    assert_eq!(dy.cols(), w.cols());
    let in_cols = w.rows();
    // One transpose per call keeps the accumulation streaming-friendly.
    let mut wt = Matrix::zeros(w.cols(), w.rows());
    for i in 0..w.rows() {
        let row = w.row(i);
        for o in 0..w.cols() {
            wt.row_mut(o)[i] = row[o];
        }
    }
    let mut dx = Matrix::zeros(dy.rows(), in_cols);
    par_rows(dx.data_mut(), in_cols, |first, rows| {
        for o in 0..wt.rows() {
            let wrow = wt.row(o);
            for (r, xrow) in rows.chunks_mut(in_cols).enumerate() {
                axpy(xrow, dy.row(first + r)[o], wrow);
            }
        }
    });
    dx
}

/// Gradients w.r.t. dense weights and bias:
/// `dw[i] = sum_b x[b][i] * dy[b]`, `db = sum_b dy[b]`.
pub fn dense_backward_params(input: &Matrix, dy: &Matrix) -> (Matrix, Vec<f32>) {
    assert_eq!(input.rows(), dy.rows());
    let in_dim = input.cols();
    let out_dim = dy.cols();
    let mut dw = Matrix::zeros(in_dim, out_dim);
    par_rows(dw.data_mut(), out_dim, |first, rows| {
        // Tile the weight-row range so the accumulators stay cache-resident
        // while the upstream gradient streams through once per tile.
        let n_rows = rows.len() / out_dim;
        const TILE: usize = 64;
        let mut lo = 0;
        while lo < n_rows {
            let hi = (lo + TILE).min(n_rows);
            for b in 0..input.rows() {
                let xrow = input.row(b);
                let dyr = dy.row(b);
                for r in lo..hi {
                    axpy(&mut rows[r * out_dim..(r + 1) * out_dim], xrow[first + r], dyr);
                }
            }
            lo = hi;
        }
    });
    let mut db = vec![0.0f32; out_dim];
    for b in 0..dy.rows() {
        axpy(&mut db, 1.0, dy.row(b));
    }
    (dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dense(input: &Matrix, w: &Matrix, bias: &[f32]) -> Matrix {
        let mut out = Matrix::zeros(input.rows(), w.cols());
        for b in 0..input.rows() {
            for o in 0..w.cols() {
                let mut acc = bias[o] as f64;
                for i in 0..input.cols() {
                    acc += input.row(b)[i] as f64 * w.row(i)[o] as f64;
                }
                out.row_mut(b)[o] = acc as f32;
            }
        }
        out
    }

    fn fill(m: &mut Matrix, seed: u64) {
        let mut s = seed;
        for v in m.data_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = ((s >> 33) as f32 / (1u64 << 31) as f32) - 0.5;
        }
    }

    #[test]
    fn dense_forward_matches_naive() {
        let mut input = Matrix::zeros(7, 13);
        let mut w = Matrix::zeros(13, 5);
        fill(&mut input, 1);
        fill(&mut w, 2);
        let bias = vec![0.1, -0.2, 0.3, 0.0, 1.5];
        let fast = dense_forward(&input, &w, &bias);
        let slow = naive_dense(&input, &w, &bias);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn dense_backward_matches_naive() {
        let mut input = Matrix::zeros(6, 9);
        let mut w = Matrix::zeros(9, 4);
        let mut dy = Matrix::zeros(6, 4);
        fill(&mut input, 3);
        fill(&mut w, 4);
        fill(&mut dy, 5);

        let dx = dense_backward_input(&dy, &w);
        for b in 0..6 {
            for i in 0..9 {
                let mut acc = 0.0f64;
                for o in 0..4 {
                    acc += dy.row(b)[o] as f64 * w.row(i)[o] as f64;
                }
                assert!((dx.row(b)[i] as f64 - acc).abs() < 1e-5);
            }
        }

        let (dw, db) = dense_backward_params(&input, &dy);
        for i in 0..9 {
            for o in 0..4 {
                let mut acc = 0.0f64;
                for b in 0..6 {
                    acc += input.row(b)[i] as f64 * dy.row(b)[o] as f64;
                }
                assert!((dw.row(i)[o] as f64 - acc).abs() < 1e-5);
            }
        }
        for o in 0..4 {
            let acc: f64 = (0..6).map(|b| dy.row(b)[o] as f64).sum();
            assert!((db[o] as f64 - acc).abs() < 1e-5);
        }
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f32> = (0..19).map(|i| i as f32 * 0.25).collect();
        let b: Vec<f32> = (0..19).map(|i| 1.0 - i as f32 * 0.125).collect();
        let expect: f64 = a.iter().zip(&b).map(|(&x, &y)| x as f64 * y as f64).sum();
        assert!((dot(&a, &b) as f64 - expect).abs() < 1e-4);
    }
}
