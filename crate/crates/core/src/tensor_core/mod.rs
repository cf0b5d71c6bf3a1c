//! Dense tensors, matricization and the linear algebra kernels.

pub mod dense;
pub mod linalg;
pub mod random;

pub use dense::{kron, tucker_matricization, DenseTensor};
pub use linalg::{
    adj_mul, fro_norm, hcat, hermitian_eigh, left_svd, matmul, matmul_ext, orthonormal_range,
    orthonormality_defect, qr_thin, spectral_norm, svd_reduced, Matrix, Op, RANGE_REL_TOL,
};
