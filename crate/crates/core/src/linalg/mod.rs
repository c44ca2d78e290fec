//! Dense and sparse matrix kernels used by the GCN forward and backward
//! passes. No graph semantics live here.

mod dense;
mod eigen;
mod kernels;
mod sparse;

pub use dense::{DenseMatrix, DenseVector};
pub use eigen::symmetric_eigen;
pub use kernels::{
    frobenius_norm, log_softmax_rows, matmul, matmul_nt, matmul_nt_with, matmul_tn,
    matmul_tn_with, matmul_with, relu, relu_mask, softmax_rows, spectral_norm, spmm, spmm_with,
};
pub use sparse::SparseSymMatrix;

/// Iteration cap and tolerance used wherever the crate needs a spectral norm.
pub const SPECTRAL_ITERS: usize = 10_000;
pub const SPECTRAL_TOL: f64 = 1e-14;
