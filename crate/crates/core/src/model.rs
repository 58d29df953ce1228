//! Meta-parameters, tasks, pools and the estimates produced along the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, MetaViolation, Result};
use crate::linalg::{dist, norm, sym_eigen, Matrix, SymMatrix};
use crate::Scalar;

/// Ground-truth mixture: column `i` of `w` is the regression vector of
/// component `i`, with noise scale `s[i]` and weight `p[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaParams<T> {
    w: Matrix<T>,
    s: Vec<T>,
    p: Vec<T>,
}

impl<T: Scalar> MetaParams<T> {
    /// Validated constructor; fails with every violated invariant.
    pub fn new(w: Matrix<T>, s: Vec<T>, p: Vec<T>) -> Result<Self> {
        let m = Self::from_parts(w, s, p)?;
        validate_meta(&m)?;
        Ok(m)
    }

    /// Checks shapes only. Useful for deliberately invalid inputs.
    pub fn from_parts(w: Matrix<T>, s: Vec<T>, p: Vec<T>) -> Result<Self> {
        let k = w.cols();
        if k == 0 {
            return Err(Error::Empty("mixture components"));
        }
        if s.len() != k || p.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "W has {k} columns but s has {} and p has {} entries",
                s.len(),
                p.len()
            )));
        }
        Ok(Self { w, s, p })
    }

    pub fn k(&self) -> usize {
        self.w.cols()
    }

    pub fn d(&self) -> usize {
        self.w.rows()
    }

    pub fn w(&self) -> &Matrix<T> {
        &self.w
    }

    pub fn w_col(&self, i: usize) -> Vec<T> {
        self.w.column(i)
    }

    pub fn s(&self) -> &[T] {
        &self.s
    }

    pub fn p(&self) -> &[T] {
        &self.p
    }

    /// Minimum pairwise distance between regression vectors (zero when k = 1).
    pub fn delta(&self) -> T {
        let cols = self.w.columns();
        let mut best: Option<T> = None;
        for i in 0..cols.len() {
            for j in (i + 1)..cols.len() {
                let dij = dist(&cols[i], &cols[j]);
                best = Some(best.map_or(dij, |b| b.min(dij)));
            }
        }
        best.unwrap_or(T::zero())
    }

    /// `max_i sqrt(s_i^2 + |w_i|^2)`.
    pub fn rho(&self) -> T {
        (0..self.k())
            .map(|i| {
                let wn = norm(&self.w.column(i));
                (self.s[i] * self.s[i] + wn * wn).sqrt()
            })
            .fold(T::zero(), T::max)
    }

    pub fn p_min(&self) -> T {
        self.p.iter().copied().fold(T::infinity(), T::min)
    }

    /// Smallest eigenvalue of `sum_j p_j w_j w_jᵀ` above `1e-9 * rho^2`.
    ///
    /// The nonzero spectrum equals that of the k x k matrix
    /// `P^{1/2} WᵀW P^{1/2}`, which is much cheaper than the d x d form.
    pub fn lambda_min(&self) -> T {
        let k = self.k();
        let g = self.w.gram();
        let sq: Vec<T> = self.p.iter().map(|p| p.max(T::zero()).sqrt()).collect();
        let small = Matrix::from_fn(k, k, |i, j| sq[i] * g[(i, j)] * sq[j]);
        let eig = sym_eigen(&SymMatrix::from_upper(small));
        let rho = self.rho();
        let cut = T::lit(1e-9) * rho * rho;
        eig.values
            .into_iter()
            .filter(|&v| v > cut)
            .fold(T::infinity(), T::min)
    }

    /// Noise variance averaged over the prior, `sum_i p_i s_i^2`.
    pub fn mean_noise_variance(&self) -> T {
        self.p.iter().zip(&self.s).map(|(&p, &s)| p * s * s).sum()
    }

    pub fn cast<U: Scalar>(&self) -> MetaParams<U> {
        MetaParams {
            w: self.w.cast(),
            s: self.s.iter().map(|&x| U::lit(x.as_f64())).collect(),
            p: self.p.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }
}

/// Checks every invariant and reports all violations at once.
pub fn validate_meta<T: Scalar>(m: &MetaParams<T>) -> Result<()> {
    let mut bad = Vec::new();
    let sum: T = m.p.iter().copied().sum();
    let min = m.p_min();
    if (sum - T::one()).abs() > T::tol(1e-12) || !(min > T::zero()) {
        bad.push(MetaViolation::InvalidSimplex {
            sum: sum.as_f64(),
            min: min.as_f64(),
        });
    }
    for (i, &s) in m.s.iter().enumerate() {
        if !(s > T::zero()) {
            bad.push(MetaViolation::NonPositiveNoise {
                component: i,
                value: s.as_f64(),
            });
        }
    }
    let rho = m.rho();
    if !(rho <= T::one() + T::tol(1e-9)) {
        bad.push(MetaViolation::ScaleExceedsOne { rho: rho.as_f64() });
    }
    let cols = m.w.columns();
    'outer: for i in 0..cols.len() {
        for j in (i + 1)..cols.len() {
            if dist(&cols[i], &cols[j]) == T::zero() {
                bad.push(MetaViolation::ZeroSeparation { first: i, second: j });
                break 'outer;
            }
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidMeta(bad))
    }
}

/// One task: `t` examples `(x_j, y_j)` stacked as rows of `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBatch<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    /// Hidden component label, kept for evaluation only.
    pub true_component: Option<usize>,
}

impl<T: Scalar> TaskBatch<T> {
    pub fn new(x: Matrix<T>, y: Vec<T>, true_component: Option<usize>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} rows of x but {} targets",
                x.rows(),
                y.len()
            )));
        }
        if y.is_empty() {
            return Err(Error::TooFewExamples { needed: 1, got: 0 });
        }
        Ok(Self { x, y, true_component })
    }

    pub fn t(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    /// The first `t` examples.
    pub fn truncated(&self, t: usize) -> Self {
        let t = t.min(self.t());
        Self {
            x: self.x.row_range(0, t),
            y: self.y[..t].to_vec(),
            true_component: self.true_component,
        }
    }

    pub fn label(&self, index: usize) -> Result<usize> {
        self.true_component.ok_or(Error::MissingLabel(index))
    }
}

/// Task counts and per-task example counts of the three datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSizes {
    pub n_l1: usize,
    pub t_l1: usize,
    pub n_h: usize,
    pub t_h: usize,
    pub n_l2: usize,
    pub t_l2: usize,
}

impl PoolSizes {
    pub fn validate(&self) -> Result<()> {
        if self.t_l1 < 2 {
            return Err(Error::InvalidArgument(format!("t_l1 must be at least 2, got {}", self.t_l1)));
        }
        let counts = [self.n_l1, self.n_h, self.n_l2, self.t_h, self.t_l2];
        if counts.contains(&0) {
            return Err(Error::InvalidArgument("task and example counts must be positive".into()));
        }
        Ok(())
    }
}

/// The light-1 (subspace), heavy (clustering) and light-2 (classification) datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPool<T> {
    pub light1: Vec<TaskBatch<T>>,
    pub heavy: Vec<TaskBatch<T>>,
    pub light2: Vec<TaskBatch<T>>,
    pub sizes: PoolSizes,
}

impl<T: Scalar> TaskPool<T> {
    pub fn new(light1: Vec<TaskBatch<T>>, heavy: Vec<TaskBatch<T>>, light2: Vec<TaskBatch<T>>, sizes: PoolSizes) -> Result<Self> {
        let checks = [
            ("light1", light1.len(), sizes.n_l1, &light1, sizes.t_l1),
            ("heavy", heavy.len(), sizes.n_h, &heavy, sizes.t_h),
            ("light2", light2.len(), sizes.n_l2, &light2, sizes.t_l2),
        ];
        for (name, got, want, tasks, t) in checks {
            if got != want {
                return Err(Error::DimensionMismatch(format!("{name}: {got} tasks, sizes say {want}")));
            }
            if let Some(short) = tasks.iter().find(|b| b.t() < t) {
                return Err(Error::TooFewExamples { needed: t, got: short.t() });
            }
        }
        if sizes.t_l1 < 2 {
            return Err(Error::TooFewExamples { needed: 2, got: sizes.t_l1 });
        }
        Ok(Self {
            light1,
            heavy,
            light2,
            sizes,
        })
    }
}

/// Orthonormal `d x k` basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subspace<T> {
    u: Matrix<T>,
}

impl<T: Scalar> Subspace<T> {
    pub fn new(u: Matrix<T>) -> Result<Self> {
        let k = u.cols();
        let g = u.gram();
        let dev = g.max_abs_diff(&Matrix::identity(k));
        if dev > T::tol(1e-10) * T::of_usize(u.rows().max(1)).sqrt() {
            return Err(Error::NotOrthonormal(dev.as_f64()));
        }
        Ok(Self { u })
    }

    pub fn basis(&self) -> &Matrix<T> {
        &self.u
    }

    pub fn d(&self) -> usize {
        self.u.rows()
    }

    pub fn k(&self) -> usize {
        self.u.cols()
    }

    /// `Uᵀ v`.
    pub fn coords(&self, v: &[T]) -> Vec<T> {
        self.u.tr_matvec(v).expect("vector length matches basis")
    }

    /// `U c`.
    pub fn lift(&self, c: &[T]) -> Vec<T> {
        self.u.matvec(c).expect("coefficient length matches rank")
    }

    /// `U Uᵀ v`.
    pub fn project(&self, v: &[T]) -> Vec<T> {
        self.lift(&self.coords(v))
    }

    /// Dense `U Uᵀ`.
    pub fn projector(&self) -> Matrix<T> {
        self.u.matmul(&self.u.transpose()).expect("square product")
    }
}

/// Intermediate per-cluster estimates from the heavy tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel<T> {
    /// Cluster of each heavy task.
    pub assignments: Vec<usize>,
    pub w_tilde: Matrix<T>,
    pub r2_tilde: Vec<T>,
    pub p_tilde: Vec<T>,
}

impl<T: Scalar> ClusterModel<T> {
    pub fn k(&self) -> usize {
        self.r2_tilde.len()
    }

    pub fn d(&self) -> usize {
        self.w_tilde.rows()
    }
}

/// Refined estimates. Flags mark clusters whose numbers could not be trusted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel<T> {
    pub w_hat: Matrix<T>,
    pub s2_hat: Vec<T>,
    pub p_hat: Vec<T>,
    /// Set for clusters with at most `d` pooled examples (minimum-norm fit,
    /// variance not estimable) or an EM component that collapsed.
    pub degenerate: Vec<bool>,
    /// False when there were no light-2 tasks and `p_hat` is the clustering prior.
    pub p_hat_defined: bool,
}

impl<T: Scalar> FittedModel<T> {
    pub fn new(w_hat: Matrix<T>, s2_hat: Vec<T>, p_hat: Vec<T>) -> Result<Self> {
        let k = w_hat.cols();
        if s2_hat.len() != k || p_hat.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{k} regression vectors, {} variances, {} weights",
                s2_hat.len(),
                p_hat.len()
            )));
        }
        Ok(Self {
            w_hat,
            s2_hat,
            p_hat,
            degenerate: vec![false; k],
            p_hat_defined: true,
        })
    }

    /// The ground truth seen as a fitted model.
    pub fn from_meta(m: &MetaParams<T>) -> Self {
        Self {
            w_hat: m.w().clone(),
            s2_hat: m.s().iter().map(|&s| s * s).collect(),
            p_hat: m.p().to_vec(),
            degenerate: vec![false; m.k()],
            p_hat_defined: true,
        }
    }

    pub fn k(&self) -> usize {
        self.w_hat.cols()
    }

    pub fn d(&self) -> usize {
        self.w_hat.rows()
    }

    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&b| b)
    }

    /// Relabels components: new component `i` is old component `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let cols = self.w_hat.columns();
        Self {
            w_hat: Matrix::from_columns(&perm.iter().map(|&j| cols[j].clone()).collect::<Vec<_>>())
                .expect("consistent columns"),
            s2_hat: perm.iter().map(|&j| self.s2_hat[j]).collect(),
            p_hat: perm.iter().map(|&j| self.p_hat[j]).collect(),
            degenerate: perm.iter().map(|&j| self.degenerate[j]).collect(),
            p_hat_defined: self.p_hat_defined,
        }
    }
}
