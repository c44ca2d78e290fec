//! Matrix kernels. Every output cell is accumulated left to right over the
//! inner index, independently of the execution mode, so sequential and
//! parallel runs agree bit for bit.

use crate::error::{Error, Result};
use crate::exec::Execution;

use super::{DenseMatrix, SparseSymMatrix};

pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    matmul_with(a, b, Execution::default())
}

/// `a * b`. Zero entries of `a` are skipped, which keeps sparse bag-of-words
/// feature matrices cheap without changing the summation order.
pub fn matmul_with(a: &DenseMatrix, b: &DenseMatrix, exec: Execution) -> Result<DenseMatrix> {
    if a.cols() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (k, n) = (a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(a.rows(), n);
    let bs = b.as_slice();
    exec.for_each_row(out.as_mut_slice(), n, |i, orow| {
        let arow = a.row(i);
        for (p, &s) in arow.iter().enumerate().take(k) {
            if s == 0.0 {
                continue;
            }
            let brow = &bs[p * n..(p + 1) * n];
            for (o, &x) in orow.iter_mut().zip(brow) {
                *o += s * x;
            }
        }
    });
    Ok(out)
}

pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    matmul_tn_with(a, b, Execution::default())
}

/// `aᵀ * b` without materializing the transpose.
pub fn matmul_tn_with(a: &DenseMatrix, b: &DenseMatrix, exec: Execution) -> Result<DenseMatrix> {
    if a.rows() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (m, n) = (a.cols(), b.cols());
    let mut out = DenseMatrix::zeros(m, n);
    let (asl, bsl) = (a.as_slice(), b.as_slice());
    exec.for_each_row(out.as_mut_slice(), n, |p, orow| {
        for r in 0..a.rows() {
            let s = asl[r * m + p];
            if s == 0.0 {
                continue;
            }
            let brow = &bsl[r * n..(r + 1) * n];
            for (o, &x) in orow.iter_mut().zip(brow) {
                *o += s * x;
            }
        }
    });
    Ok(out)
}

pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    matmul_nt_with(a, b, Execution::default())
}

/// `a * bᵀ`.
pub fn matmul_nt_with(a: &DenseMatrix, b: &DenseMatrix, exec: Execution) -> Result<DenseMatrix> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let n = b.rows();
    let mut out = DenseMatrix::zeros(a.rows(), n);
    exec.for_each_row(out.as_mut_slice(), n, |i, orow| {
        let arow = a.row(i);
        for (j, o) in orow.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(b.row(j)) {
                acc += x * y;
            }
            *o = acc;
        }
    });
    Ok(out)
}

pub fn spmm(s: &SparseSymMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    spmm_with(s, b, Execution::default())
}

/// Sparse-times-dense product `s * b`.
pub fn spmm_with(s: &SparseSymMatrix, b: &DenseMatrix, exec: Execution) -> Result<DenseMatrix> {
    if s.dim() != b.rows() {
        return Err(Error::ShapeMismatch {
            op: "spmm",
            left: (s.dim(), s.dim()),
            right: b.shape(),
        });
    }
    let n = b.cols();
    let mut out = DenseMatrix::zeros(s.dim(), n);
    let bs = b.as_slice();
    exec.for_each_row(out.as_mut_slice(), n, |i, orow| {
        let (cols, vals) = s.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let brow = &bs[j * n..(j + 1) * n];
            for (o, &x) in orow.iter_mut().zip(brow) {
                *o += v * x;
            }
        }
    });
    Ok(out)
}

pub fn relu(a: &DenseMatrix) -> DenseMatrix {
    a.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Indicator of strictly positive entries.
pub fn relu_mask(a: &DenseMatrix) -> DenseMatrix {
    a.map(|x| if x > 0.0 { 1.0 } else { 0.0 })
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax_rows(a: &DenseMatrix) -> DenseMatrix {
    let mut out = a.clone();
    let cols = a.cols();
    for row in out.as_mut_slice().chunks_mut(cols.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
        row.iter_mut().for_each(|x| *x -= lse);
    }
    out
}

pub fn softmax_rows(a: &DenseMatrix) -> DenseMatrix {
    let mut out = a.clone();
    let cols = a.cols();
    for row in out.as_mut_slice().chunks_mut(cols.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            total += *x;
        }
        row.iter_mut().for_each(|x| *x /= total);
    }
    out
}

pub fn frobenius_norm(a: &DenseMatrix) -> f64 {
    a.sum_of_squares().sqrt()
}

/// Largest singular value by power iteration on `aᵀa`.
///
/// Starts from the normalized all-ones vector; if that start is annihilated
/// by `a`, its first coordinate is nudged by 1e-8 and renormalized. Stops when
/// the relative change of the estimate drops below `tol` or after `iters`
/// iterations. A zero matrix has spectral norm 0.
pub fn spectral_norm(a: &DenseMatrix, iters: usize, tol: f64) -> f64 {
    let n = a.cols();
    if n == 0 || a.rows() == 0 || a.as_slice().iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut av = mat_vec(a, &v);
    if norm(&av) == 0.0 {
        v[0] += 1e-8;
        normalize(&mut v);
        av = mat_vec(a, &v);
    }
    let mut sigma = norm(&av);
    for _ in 0..iters.max(1) {
        let mut w = mat_t_vec(a, &av);
        let wn = norm(&w);
        if wn == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= wn);
        v = w;
        av = mat_vec(a, &v);
        let next = norm(&av);
        let done = (next - sigma).abs() <= tol * next;
        sigma = next;
        if done {
            break;
        }
    }
    sigma
}

fn mat_vec(a: &DenseMatrix, v: &[f64]) -> Vec<f64> {
    (0..a.rows())
        .map(|i| a.row(i).iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

fn mat_t_vec(a: &DenseMatrix, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.cols()];
    for (i, &ui) in u.iter().enumerate() {
        out.iter_mut().zip(a.row(i)).for_each(|(o, x)| *o += ui * x);
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    v.iter_mut().for_each(|x| *x /= n);
}
