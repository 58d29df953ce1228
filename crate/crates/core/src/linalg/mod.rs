//! Dense kernels: row-major matrices, GEMM, symmetric eigendecomposition and
//! least squares.

mod eig;
mod kernels;
mod lstsq;
mod matrix;

pub use eig::{sym_eigen, sym_eigen_ql, top_k_eig, SymEigen};
pub use kernels::{gemm, MatMut, MatRef};
pub use lstsq::{least_squares, least_squares_with_path, solve_normal_equations, svd, Solver, Svd};
pub use matrix::{axpy, dist, dot, norm, Matrix, SymMatrix};
