//! EM for a mixture of linear regressions with task-level latent labels.
//!
//! Every example of a task shares the task's component, so responsibilities
//! are per task. The M-step is responsibility-weighted least squares per
//! component.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::classify::residual_sums;
use crate::error::{Error, Result};
use crate::linalg::{gemm, norm, solve_normal_equations, Matrix, SymMatrix};
use crate::model::{FittedModel, MetaParams, TaskBatch};
use crate::predict::softmax;
use crate::rng::{stream, StreamTag};
use crate::Scalar;

/// Variance floor that keeps a component from locking onto an exact fit.
pub const S2_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the mean per-task log-likelihood improves by less than this.
    pub tol: f64,
    /// Memory allowed for caching each task's Gram matrix. Above it the
    /// M-step recomputes weighted products from the raw examples.
    pub gram_cache_bytes: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tol: 1e-7,
            gram_cache_bytes: 1 << 30,
        }
    }
}

/// Random perturbation of the truth used to start EM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitPerturbation {
    /// Variance of the Gaussian noise added to every entry of `W`.
    pub gamma2: f64,
    /// Variance of the noise added to each `s_i`.
    pub s_var: f64,
    /// Variance of the noise added to each `p_i`; `None` means `1/k`.
    pub p_var: Option<f64>,
}

impl InitPerturbation {
    pub fn new(gamma2: f64) -> Self {
        Self {
            gamma2,
            s_var: 0.1,
            p_var: None,
        }
    }

    /// No noise at all: the init equals the truth.
    pub fn deterministic() -> Self {
        Self {
            gamma2: 0.0,
            s_var: 0.0,
            p_var: Some(0.0),
        }
    }
}

/// `W + Z` with each column projected onto the unit ball, `s = |N(s, s_var)|`
/// and `p = |z| / |z|_1` for `z ~ N(p, p_var I)`.
pub fn em_init_perturbed<T: Scalar>(truth: &MetaParams<T>, pert: InitPerturbation, seed: u64) -> Result<FittedModel<T>> {
    let p_var = pert.p_var.unwrap_or(1.0 / truth.k() as f64);
    for (name, v) in [("gamma2", pert.gamma2), ("s_var", pert.s_var), ("p_var", p_var)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
        }
    }
    let mut rng = stream(seed, StreamTag::EmInit, 0);
    let mut gauss = |sd: f64| sd * rng.sample::<f64, _>(StandardNormal);
    let (d, k) = (truth.d(), truth.k());
    let g = pert.gamma2.sqrt();
    let mut cols = Vec::with_capacity(k);
    for i in 0..k {
        let mut w: Vec<T> = truth.w_col(i).into_iter().map(|v| v + T::lit(gauss(g))).collect();
        let n = norm(&w);
        if n > T::one() {
            w.iter_mut().for_each(|v| *v /= n);
        }
        cols.push(w);
    }
    debug_assert_eq!(cols[0].len(), d);
    let s_sd = pert.s_var.sqrt();
    let s2: Vec<T> = truth
        .s()
        .iter()
        .map(|&s| {
            let q = (s.as_f64() + gauss(s_sd)).abs();
            T::lit((q * q).max(S2_FLOOR))
        })
        .collect();
    let p_sd = p_var.sqrt();
    let z: Vec<f64> = truth.p().iter().map(|&p| (p.as_f64() + gauss(p_sd)).abs()).collect();
    let l1: f64 = z.iter().sum();
    let p = if l1 > 0.0 {
        z.iter().map(|&v| T::lit(v / l1)).collect()
    } else {
        vec![T::one() / T::of_usize(k); k]
    };
    FittedModel::new(Matrix::from_columns(&cols)?, s2, p)
}

/// Result of [`em_fit`].
#[derive(Clone, Debug)]
pub struct EmState<T> {
    pub model: FittedModel<T>,
    /// `n x k`, rows on the simplex, for the returned model.
    pub responsibilities: Matrix<T>,
    /// Mean per-task log-likelihood before each M-step, plus the final model's.
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Stopped on the tolerance with no collapsed component.
    pub converged: bool,
    /// Component whose weighted example count fell below `d` at some point.
    pub collapsed: Vec<bool>,
}

pub fn em_fit<T: Scalar>(tasks: &[TaskBatch<T>], init: &FittedModel<T>, config: &EmConfig) -> Result<EmState<T>> {
    let refs: Vec<&TaskBatch<T>> = tasks.iter().collect();
    em_fit_refs(&refs, init, config)
}

/// [`em_fit`] over borrowed tasks, so several datasets can be pooled without copying.
pub fn em_fit_refs<T: Scalar>(tasks: &[&TaskBatch<T>], init: &FittedModel<T>, config: &EmConfig) -> Result<EmState<T>> {
    let n = tasks.len();
    if n == 0 {
        return Err(Error::Empty("EM tasks"));
    }
    let (d, k) = (init.d(), init.k());
    if let Some(t) = tasks.iter().find(|t| t.d() != d) {
        return Err(Error::DimensionMismatch(format!("task dimension {} vs model dimension {d}", t.d())));
    }
    if let Some(i) = init.s2_hat.iter().position(|&v| !(v > T::zero())) {
        return Err(Error::NonPositiveParameter(i));
    }

    let stats = Sufficient::new(tasks, d, config.gram_cache_bytes);
    let mut w = init.w_hat.clone();
    let mut s2 = init.s2_hat.clone();
    let mut p = init.p_hat.clone();
    let mut collapsed = vec![false; k];
    let mut trace = Vec::new();
    let mut rss = all_residuals(tasks, &w)?;
    let mut resp;
    let mut converged = false;
    let mut iterations = 0;

    loop {
        let (r, ll) = e_step(tasks, &rss, &s2, &p);
        resp = r;
        trace.push(ll);
        let len = trace.len();
        if len >= 2 && trace[len - 1] - trace[len - 2] < config.tol {
            converged = true;
            break;
        }
        if iterations == config.max_iters {
            break;
        }
        iterations += 1;

        let counts = weighted_counts(tasks, &resp);
        let solved = stats.solve(tasks, &resp, k)?;
        for l in 0..k {
            if counts[l] < T::of_usize(d) {
                collapsed[l] = true;
            }
            // A component with essentially no mass keeps its parameters.
            if counts[l] > T::epsilon() {
                w.set_column(l, &solved[l]);
            }
        }
        rss = all_residuals(tasks, &w)?;
        let nn = T::of_usize(n);
        for l in 0..k {
            if counts[l] > T::epsilon() {
                let weighted: T = (0..n).map(|i| resp[(i, l)] * rss[i][l]).sum();
                s2[l] = (weighted / counts[l]).max(T::lit(S2_FLOOR));
            }
            p[l] = (0..n).map(|i| resp[(i, l)]).sum::<T>() / nn;
        }
    }

    let mut model = FittedModel::new(w, s2, p)?;
    model.degenerate = collapsed.clone();
    Ok(EmState {
        model,
        responsibilities: resp,
        trace,
        iterations,
        converged: converged && !collapsed.iter().any(|&c| c),
        collapsed,
    })
}

fn all_residuals<T: Scalar>(tasks: &[&TaskBatch<T>], w: &Matrix<T>) -> Result<Vec<Vec<T>>> {
    tasks.par_iter().map(|t| residual_sums(t, w)).collect()
}

fn e_step<T: Scalar>(tasks: &[&TaskBatch<T>], rss: &[Vec<T>], s2: &[T], p: &[T]) -> (Matrix<T>, f64) {
    let k = s2.len();
    let log_s2: Vec<T> = s2.iter().map(|v| v.ln()).collect();
    let log_p: Vec<T> = p.iter().map(|v| v.ln()).collect();
    let ln_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
    let half = T::lit(0.5);
    let rows: Vec<(Vec<T>, f64)> = tasks
        .par_iter()
        .zip(rss)
        .map(|(task, r)| {
            let t = T::of_usize(task.t());
            let lw: Vec<T> = (0..k)
                .map(|l| log_p[l] - half * t * (log_s2[l] + ln_2pi) - r[l] / (s2[l] + s2[l]))
                .collect();
            let max = lw.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + lw.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            (softmax(&lw), lse.as_f64())
        })
        .collect();
    let n = tasks.len();
    let mut resp = Matrix::zeros(n, k);
    let mut ll = 0.0;
    for (i, (row, lse)) in rows.into_iter().enumerate() {
        resp.row_mut(i).copy_from_slice(&row);
        ll += lse;
    }
    (resp, ll / n as f64)
}

fn weighted_counts<T: Scalar>(tasks: &[&TaskBatch<T>], resp: &Matrix<T>) -> Vec<T> {
    let k = resp.cols();
    let mut c = vec![T::zero(); k];
    for (i, task) in tasks.iter().enumerate() {
        let t = T::of_usize(task.t());
        for (l, cl) in c.iter_mut().enumerate() {
            *cl += resp[(i, l)] * t;
        }
    }
    c
}

/// Per-task `Xᵀy` and, when it fits in memory, the packed upper triangle of `XᵀX`.
struct Sufficient<T> {
    d: usize,
    xty: Matrix<T>,
    packed_gram: Option<Matrix<T>>,
}

/// Tasks whose Grams are formed at once when they are not cached.
const GRAM_CHUNK: usize = 256;

impl<T: Scalar> Sufficient<T> {
    fn new(tasks: &[&TaskBatch<T>], d: usize, budget: usize) -> Self {
        let n = tasks.len();
        let packed_len = d * (d + 1) / 2;
        let xty_rows: Vec<Vec<T>> = tasks.par_iter().map(|t| t.x.tr_matvec(&t.y).expect("matching rows")).collect();
        let xty = Matrix::from_rows(&xty_rows).expect("equal lengths");
        let bytes = n.saturating_mul(packed_len).saturating_mul(std::mem::size_of::<T>());
        let packed_gram = (bytes <= budget).then(|| packed_grams(tasks, d));
        Self { d, xty, packed_gram }
    }

    /// Weighted least-squares solution for every component.
    fn solve(&self, tasks: &[&TaskBatch<T>], resp: &Matrix<T>, k: usize) -> Result<Vec<Vec<T>>> {
        let d = self.d;
        let rhs = resp.tr_matmul(&self.xty)?;
        // Row l holds sum_i r_il X_iᵀ X_i, packed.
        let all = match &self.packed_gram {
            Some(packed) => resp.tr_matmul(packed)?,
            None => {
                let mut acc = Matrix::zeros(k, d * (d + 1) / 2);
                for start in (0..tasks.len()).step_by(GRAM_CHUNK) {
                    let end = (start + GRAM_CHUNK).min(tasks.len());
                    let g = packed_grams(&tasks[start..end], d);
                    let r = resp.row_range(start, end);
                    gemm(T::one(), r.view().t(), g.view(), T::one(), acc.view_mut());
                }
                acc
            }
        };
        (0..k)
            .map(|l| {
                let row = all.row(l);
                let mut g = Matrix::zeros(d, d);
                let mut idx = 0;
                for i in 0..d {
                    g.row_mut(i)[i..].copy_from_slice(&row[idx..idx + d - i]);
                    idx += d - i;
                }
                solve_normal_equations(&SymMatrix::from_upper(g), rhs.row(l)).map(|(w, _)| w)
            })
            .collect()
    }
}

// One packed upper-triangular Gram per row.
fn packed_grams<T: Scalar>(tasks: &[&TaskBatch<T>], d: usize) -> Matrix<T> {
    let packed_len = d * (d + 1) / 2;
    let mut g = Matrix::zeros(tasks.len(), packed_len);
    g.as_mut_slice()
        .par_chunks_mut(packed_len)
        .zip(tasks.par_iter())
        .for_each(|(out, task)| {
            let full = task.x.gram();
            let mut idx = 0;
            for i in 0..d {
                out[idx..idx + d - i].copy_from_slice(&full.row(i)[i..]);
                idx += d - i;
            }
        });
    g
}
