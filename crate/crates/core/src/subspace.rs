//! Subspace estimation from light tasks via a split-sample second moment.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{axpy, gemm, top_k_eig, Matrix, SymMatrix};
use crate::model::{Subspace, TaskBatch};
use crate::Scalar;

/// Tasks per GEMM block when accumulating the moment matrix.
const CHUNK: usize = 256;
/// Blocks evaluated in parallel before being folded into the running sum.
const WINDOW: usize = 32;

/// Means of `y x` over the first and second half of one task's examples.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfEstimates<T> {
    pub b1: Vec<T>,
    pub b2: Vec<T>,
}

/// Splits the first `2 * floor(t/2)` examples into two halves; an odd last
/// example is dropped so the halves stay independent.
pub fn half_estimates<T: Scalar>(task: &TaskBatch<T>) -> Result<HalfEstimates<T>> {
    let t = task.t();
    if t < 2 {
        return Err(Error::TooFewExamples { needed: 2, got: t });
    }
    let h = t / 2;
    Ok(HalfEstimates {
        b1: weighted_row_mean(task, 0, h),
        b2: weighted_row_mean(task, h, 2 * h),
    })
}

/// `(1/(end-start)) * sum_{j in start..end} y_j x_j`.
pub(crate) fn weighted_row_mean<T: Scalar>(task: &TaskBatch<T>, start: usize, end: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); task.d()];
    for j in start..end {
        axpy(task.y[j], task.x.row(j), &mut acc);
    }
    let inv = T::one() / T::of_usize(end - start);
    acc.iter_mut().for_each(|v| *v *= inv);
    acc
}

/// `(2n)^-1 sum_i (b1_i b2_iᵀ + b2_i b1_iᵀ)`.
pub fn moment_matrix<T: Scalar>(tasks: &[TaskBatch<T>]) -> Result<SymMatrix<T>> {
    let d = tasks.first().ok_or(Error::Empty("light tasks"))?.d();
    if let Some(bad) = tasks.iter().find(|b| b.d() != d) {
        return Err(Error::DimensionMismatch(format!("tasks of dimension {d} and {}", bad.d())));
    }
    moment_matrix_from(tasks.len(), d, |i| half_estimates(&tasks[i]))
}

/// Moment matrix over `n` tasks whose half estimates come from `source(i)`.
///
/// Tasks are processed in fixed blocks of 256 (one GEMM each) and block sums
/// are folded in index order with compensated addition, so the result does
/// not depend on the thread count. `source` may generate tasks on the fly,
/// which keeps memory flat for very large `n`.
pub fn moment_matrix_from<T, F>(n: usize, d: usize, source: F) -> Result<SymMatrix<T>>
where
    T: Scalar,
    F: Fn(usize) -> Result<HalfEstimates<T>> + Sync,
{
    if n == 0 {
        return Err(Error::Empty("light tasks"));
    }
    let blocks = n.div_ceil(CHUNK);
    let mut sum = vec![T::zero(); d * d];
    let mut comp = vec![T::zero(); d * d];
    for window in (0..blocks).step_by(WINDOW) {
        let partials: Vec<Vec<T>> = (window..(window + WINDOW).min(blocks))
            .into_par_iter()
            .map(|b| block_cross(b * CHUNK, ((b + 1) * CHUNK).min(n), d, &source))
            .collect::<Result<_>>()?;
        for part in partials {
            for ((s, c), &v) in sum.iter_mut().zip(comp.iter_mut()).zip(&part) {
                let y = v - *c;
                let t = *s + y;
                *c = (t - *s) - y;
                *s = t;
            }
        }
    }
    let scale = T::one() / (T::lit(2.0) * T::of_usize(n));
    let m = Matrix::from_fn(d, d, |i, j| (sum[i * d + j] + sum[j * d + i]) * scale);
    Ok(SymMatrix::from_upper(m))
}

// sum_{i in start..end} b1_i b2_iᵀ as a row-major d x d buffer.
fn block_cross<T, F>(start: usize, end: usize, d: usize, source: &F) -> Result<Vec<T>>
where
    T: Scalar,
    F: Fn(usize) -> Result<HalfEstimates<T>>,
{
    let c = end - start;
    let mut b1 = Matrix::zeros(c, d);
    let mut b2 = Matrix::zeros(c, d);
    for (r, i) in (start..end).enumerate() {
        let h = source(i)?;
        if h.b1.len() != d || h.b2.len() != d {
            return Err(Error::DimensionMismatch(format!("task {i} is not {d}-dimensional")));
        }
        b1.row_mut(r).copy_from_slice(&h.b1);
        b2.row_mut(r).copy_from_slice(&h.b2);
    }
    let mut out = Matrix::zeros(d, d);
    gemm(T::one(), b1.view().t(), b2.view(), T::zero(), out.view_mut());
    Ok(out.into_vec())
}

/// Top-`k` eigenspace of the moment matrix.
pub fn estimate_subspace<T: Scalar>(tasks: &[TaskBatch<T>], k: usize) -> Result<Subspace<T>> {
    let m = moment_matrix(tasks)?;
    Ok(top_k_eig(&m, k)?.1)
}

/// [`estimate_subspace`] over a task source; see [`moment_matrix_from`].
pub fn estimate_subspace_from<T, F>(n: usize, d: usize, k: usize, source: F) -> Result<Subspace<T>>
where
    T: Scalar,
    F: Fn(usize) -> Result<HalfEstimates<T>> + Sync,
{
    let m = moment_matrix_from(n, d, source)?;
    Ok(top_k_eig(&m, k)?.1)
}
