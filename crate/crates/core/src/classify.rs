//! Assigning light tasks to clusters and refitting each component.

use rayon::prelude::*;

use crate::cluster::Partition;
use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, solve_normal_equations, Matrix, MatRef, SymMatrix};
use crate::model::{ClusterModel, FittedModel, TaskBatch};
use crate::Scalar;

/// Rows stacked per GEMM when accumulating a cluster's Gram matrix.
const GRAM_ROWS: usize = 1024;

/// `R_l / (2 r2_l) + (t/2) ln r2_l` for every cluster, where `R_l` is the
/// task's residual sum of squares against `w_tilde_l`.
pub fn classify_objectives<T: Scalar>(task: &TaskBatch<T>, model: &ClusterModel<T>) -> Result<Vec<T>> {
    if let Some(l) = model.r2_tilde.iter().position(|&r| !(r > T::zero())) {
        return Err(Error::NonPositiveParameter(l));
    }
    let rss = residual_sums(task, &model.w_tilde)?;
    let half_t = T::of_usize(task.t()) / T::lit(2.0);
    Ok(rss
        .iter()
        .zip(&model.r2_tilde)
        .map(|(&r, &v)| r / (v + v) + half_t * v.ln())
        .collect())
}

/// `sum_j (y_j - x_jᵀ w_l)^2` for each column `w_l` of `w`.
pub(crate) fn residual_sums<T: Scalar>(task: &TaskBatch<T>, w: &Matrix<T>) -> Result<Vec<T>> {
    if task.d() != w.rows() {
        return Err(Error::DimensionMismatch(format!(
            "task dimension {} vs model dimension {}",
            task.d(),
            w.rows()
        )));
    }
    let fit = task.x.matmul(w)?;
    let k = w.cols();
    let mut rss = vec![T::zero(); k];
    for (j, &y) in task.y.iter().enumerate() {
        for (l, r) in rss.iter_mut().enumerate() {
            let e = y - fit[(j, l)];
            *r += e * e;
        }
    }
    Ok(rss)
}

/// Index of the smallest value; the first one on ties.
pub(crate) fn argmin<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < v[best] {
            best = i;
        }
    }
    best
}

pub fn classify_task<T: Scalar>(task: &TaskBatch<T>, model: &ClusterModel<T>) -> Result<usize> {
    Ok(argmin(&classify_objectives(task, model)?))
}

pub fn classify_all<T: Scalar>(tasks: &[TaskBatch<T>], model: &ClusterModel<T>) -> Result<Vec<usize>> {
    tasks.par_iter().map(|t| classify_task(t, model)).collect()
}

/// Output of [`refine`].
#[derive(Clone, Debug)]
pub struct Refinement<T> {
    pub model: FittedModel<T>,
    /// Cluster chosen for each light-2 task.
    pub light_labels: Vec<usize>,
    /// Pooled example count per cluster.
    pub examples: Vec<usize>,
}

/// Classifies the light-2 tasks, pools them with the heavy tasks of the same
/// cluster and refits each cluster by least squares.
///
/// `s2_hat = RSS / (m - d)` with `m` pooled examples. A cluster with `m <= d`
/// gets the minimum-norm fit, keeps `r2_tilde` as its variance, and is marked
/// degenerate, as is any cluster whose fit is exact. `p_hat` counts light-2
/// tasks only; with no light-2 tasks it falls back to `p_tilde` and
/// `p_hat_defined` is cleared.
pub fn refine<T: Scalar>(heavy: &[TaskBatch<T>], partition: &Partition, light2: &[TaskBatch<T>], model: &ClusterModel<T>) -> Result<Refinement<T>> {
    if partition.len() != heavy.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} heavy tasks",
            partition.len(),
            heavy.len()
        )));
    }
    let (k, d) = (model.k(), model.d());
    let light_labels = classify_all(light2, model)?;

    let mut members: Vec<Vec<&TaskBatch<T>>> = vec![Vec::new(); k];
    for (task, &c) in heavy.iter().zip(partition.labels()) {
        members[c].push(task);
    }
    for (task, &c) in light2.iter().zip(&light_labels) {
        members[c].push(task);
    }

    let fits: Vec<(Vec<T>, T, usize, bool)> = members
        .par_iter()
        .enumerate()
        .map(|(c, tasks)| fit_cluster(tasks, d, model.r2_tilde[c]))
        .collect::<Result<_>>()?;

    let mut w_cols = Vec::with_capacity(k);
    let mut s2 = Vec::with_capacity(k);
    let mut examples = Vec::with_capacity(k);
    let mut degenerate = Vec::with_capacity(k);
    for (w, v, m, deg) in fits {
        w_cols.push(w);
        s2.push(v);
        examples.push(m);
        degenerate.push(deg);
    }

    let (p_hat, p_hat_defined) = if light2.is_empty() {
        (model.p_tilde.clone(), false)
    } else {
        let mut counts = vec![0usize; k];
        for &c in &light_labels {
            counts[c] += 1;
        }
        let n = T::of_usize(light2.len());
        (counts.iter().map(|&c| T::of_usize(c) / n).collect(), true)
    };

    let mut fitted = FittedModel::new(Matrix::from_columns(&w_cols)?, s2, p_hat)?;
    fitted.degenerate = degenerate;
    fitted.p_hat_defined = p_hat_defined;
    Ok(Refinement {
        model: fitted,
        light_labels,
        examples,
    })
}

/// Least squares on the pooled examples of one cluster.
fn fit_cluster<T: Scalar>(tasks: &[&TaskBatch<T>], d: usize, r2_fallback: T) -> Result<(Vec<T>, T, usize, bool)> {
    let mut gram = Matrix::zeros(d, d);
    let mut rhs = vec![T::zero(); d];
    let mut m = 0usize;
    let mut buf: Vec<T> = Vec::with_capacity(GRAM_ROWS * d);
    let flush = |buf: &mut Vec<T>, gram: &mut Matrix<T>| {
        let rows = buf.len() / d;
        if rows > 0 {
            let v = MatRef::new(buf, rows, d);
            gemm(T::one(), v.t(), v, T::one(), gram.view_mut());
            buf.clear();
        }
    };
    for task in tasks {
        for (j, &y) in task.y.iter().enumerate() {
            let row = task.x.row(j);
            crate::linalg::axpy(y, row, &mut rhs);
            buf.extend_from_slice(row);
            if buf.len() == GRAM_ROWS * d {
                flush(&mut buf, &mut gram);
            }
        }
        m += task.t();
    }
    flush(&mut buf, &mut gram);

    let (w, _) = solve_normal_equations(&SymMatrix::from_upper(gram), &rhs)?;
    // Residuals from the data, not from the Gram identity, to avoid cancellation.
    let mut rss = T::zero();
    for task in tasks {
        for (j, &y) in task.y.iter().enumerate() {
            let e = y - dot(task.x.row(j), &w);
            rss += e * e;
        }
    }
    if m <= d {
        return Ok((w, r2_fallback, m, true));
    }
    let s2 = rss / T::of_usize(m - d);
    Ok((w, s2, m, !(s2 > T::zero())))
}
