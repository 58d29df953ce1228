//! Clustering heavy tasks in the estimated subspace.
//!
//! Each heavy task is cut into `2L` blocks whose `y x` means are projected
//! onto the subspace. For a pair of tasks, block `l` and block `l + L` give
//! two independent estimates of the difference of their regression vectors,
//! so their inner product estimates the squared distance. The median over
//! `l` is robust to a few bad blocks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::{ClusterModel, Subspace, TaskBatch};
use crate::subspace::weighted_row_mean;
use crate::Scalar;

/// Failure probability used by the automatic choice of `L`.
const AUTO_DELTA: f64 = 0.05;

/// Projected block means `gamma[l] = Uᵀ mean_{block l}(y x)`, `l < 2L`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchEstimates<T> {
    pub gamma: Vec<Vec<T>>,
}

impl<T> BatchEstimates<T> {
    pub fn num_batches(&self) -> usize {
        self.gamma.len() / 2
    }
}

pub fn batch_estimates<T: Scalar>(task: &TaskBatch<T>, u: &Subspace<T>, l: usize) -> Result<BatchEstimates<T>> {
    if l == 0 {
        return Err(Error::InvalidArgument("L must be at least 1".into()));
    }
    let t = task.t();
    if t < 2 * l {
        return Err(Error::TooFewExamples { needed: 2 * l, got: t });
    }
    if task.d() != u.d() {
        return Err(Error::DimensionMismatch(format!(
            "task dimension {} vs subspace dimension {}",
            task.d(),
            u.d()
        )));
    }
    let m = t / (2 * l);
    let gamma = (0..2 * l)
        .map(|b| u.coords(&weighted_row_mean(task, b * m, (b + 1) * m)))
        .collect();
    Ok(BatchEstimates { gamma })
}

/// Median-of-batches distance estimates between heavy tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix<T> {
    pub h: Matrix<T>,
    pub l: usize,
}

impl<T: Scalar> DistanceMatrix<T> {
    /// Wraps a square matrix; the diagonal is ignored.
    pub fn new(h: Matrix<T>, l: usize) -> Result<Self> {
        if h.rows() != h.cols() {
            return Err(Error::DimensionMismatch("distance matrix must be square".into()));
        }
        Ok(Self { h, l })
    }

    pub fn n(&self) -> usize {
        self.h.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.h[(i, j)]
    }
}

pub fn pairwise_distance<T: Scalar>(tasks: &[TaskBatch<T>], u: &Subspace<T>, l: usize) -> Result<DistanceMatrix<T>> {
    let est: Vec<BatchEstimates<T>> = tasks
        .par_iter()
        .map(|t| batch_estimates(t, u, l))
        .collect::<Result<_>>()?;
    distance_from_estimates(&est)
}

/// `H_ij = median_l (g_i^l - g_j^l)·(g_i^{l+L} - g_j^{l+L})`, `H_ii = 0`.
pub fn distance_from_estimates<T: Scalar>(est: &[BatchEstimates<T>]) -> Result<DistanceMatrix<T>> {
    let n = est.len();
    let l = est.first().map_or(1, BatchEstimates::num_batches);
    if est.iter().any(|e| e.gamma.len() != 2 * l) {
        return Err(Error::InvalidArgument("tasks disagree on the number of batches".into()));
    }
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut vals = vec![T::zero(); l];
            ((i + 1)..n)
                .map(|j| {
                    for (b, v) in vals.iter_mut().enumerate() {
                        *v = diff_dot(&est[i].gamma[b], &est[j].gamma[b], &est[i].gamma[b + l], &est[j].gamma[b + l]);
                    }
                    median(&mut vals)
                })
                .collect()
        })
        .collect();
    let mut h = Matrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + 1 + off;
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(DistanceMatrix { h, l })
}

#[inline]
fn diff_dot<T: Scalar>(a1: &[T], b1: &[T], a2: &[T], b2: &[T]) -> T {
    let mut s = T::zero();
    for i in 0..a1.len() {
        s += (a1[i] - b1[i]) * (a2[i] - b2[i]);
    }
    s
}

/// Middle order statistic; mean of the two middle values for even length.
/// Reorders `values`. Panics on empty input (use [`try_median`] otherwise).
pub fn median<T: Scalar>(values: &mut [T]) -> T {
    try_median(values).expect("median of an empty list")
}

pub fn try_median<T: Scalar>(values: &mut [T]) -> Result<T> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Empty("median input"));
    }
    let cmp = |a: &T, b: &T| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal);
    let (_, &mut hi, _) = values.select_nth_unstable_by(n / 2, cmp);
    if n % 2 == 1 {
        return Ok(hi);
    }
    let lo = values[..n / 2].iter().copied().fold(T::neg_infinity(), T::max);
    Ok((lo + hi) / T::lit(2.0))
}

/// Assignment of `n` items to clusters `0..k`, labelled in order of each
/// cluster's smallest member.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    k: usize,
}

impl Partition {
    /// Relabels arbitrary cluster ids canonically.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|r| {
                let next = map.len();
                *map.entry(*r).or_insert(next)
            })
            .collect();
        Self { labels, k: map.len() }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == c).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        true
    }
}

/// Single-linkage agglomeration down to `k` clusters.
///
/// Equivalent to Kruskal on edges ordered by `(H_ij, i, j)`: each accepted
/// edge is the closest cross-cluster pair, ties going to the smallest index
/// pair.
pub fn single_linkage<T: Scalar>(h: &DistanceMatrix<T>, k: usize) -> Result<Partition> {
    let n = h.n();
    check_k(n, k)?;
    let mut edges: Vec<(T, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push((h.get(i, j), i, j));
        }
    }
    edges.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.1, a.2).cmp(&(b.1, b.2)))
    });
    let mut sets = DisjointSets::new(n);
    let mut clusters = n;
    for &(_, i, j) in &edges {
        if clusters == k {
            break;
        }
        if sets.union(i, j) {
            clusters -= 1;
        }
    }
    let roots: Vec<usize> = (0..n).map(|i| sets.find(i)).collect();
    Ok(Partition::from_labels(&roots))
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("cannot form {k} clusters from {n} tasks")));
    }
    Ok(())
}

/// Cluster-to-cluster distance used by [`agglomerate`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linkage {
    Single,
    #[default]
    Average,
    Complete,
}

/// Agglomerative clustering to `k` clusters with Lance-Williams updates.
///
/// Each cluster lives in the slot of its smallest member; the closest pair of
/// slots `(a, b)` is merged into `a`, ties going to the smallest `(a, b)`.
pub fn agglomerate<T: Scalar>(h: &DistanceMatrix<T>, k: usize, linkage: Linkage) -> Result<Partition> {
    let n = h.n();
    check_k(n, k)?;
    let mut dm = h.h.clone();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    let mut best_d = vec![T::infinity(); n];
    let mut best_j = vec![usize::MAX; n];

    let nearest = |dm: &Matrix<T>, active: &[bool], i: usize| {
        let mut bd = T::infinity();
        let mut bj = usize::MAX;
        for j in 0..n {
            if j != i && active[j] && (bj == usize::MAX || dm[(i, j)] < bd) {
                bd = dm[(i, j)];
                bj = j;
            }
        }
        (bd, bj)
    };
    for i in 0..n {
        (best_d[i], best_j[i]) = nearest(&dm, &active, i);
    }

    for _ in 0..(n - k) {
        let mut pick: Option<(T, usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            let key = (best_d[i], i.min(best_j[i]), i.max(best_j[i]));
            let better = match pick {
                None => true,
                Some(p) => key.0 < p.0 || (key.0 == p.0 && (key.1, key.2) < (p.1, p.2)),
            };
            if better {
                pick = Some(key);
            }
        }
        let (_, a, b) = pick.expect("at least two active clusters");
        let (na, nb) = (T::of_usize(size[a]), T::of_usize(size[b]));
        for i in (0..n).filter(|&i| active[i] && i != a && i != b) {
            let (da, db) = (dm[(i, a)], dm[(i, b)]);
            let v = match linkage {
                Linkage::Single => da.min(db),
                Linkage::Complete => da.max(db),
                Linkage::Average => (na * da + nb * db) / (na + nb),
            };
            dm[(i, a)] = v;
            dm[(a, i)] = v;
        }
        active[b] = false;
        size[a] += size[b];
        for o in owner.iter_mut().filter(|o| **o == b) {
            *o = a;
        }
        for i in (0..n).filter(|&i| active[i]) {
            if i == a || best_j[i] == a || best_j[i] == b {
                (best_d[i], best_j[i]) = nearest(&dm, &active, i);
            } else if dm[(i, a)] < best_d[i] || (dm[(i, a)] == best_d[i] && a < best_j[i]) {
                best_d[i] = dm[(i, a)];
                best_j[i] = a;
            }
        }
    }
    Ok(Partition::from_labels(&owner))
}

/// Number of median batches for heavy tasks of size `t`: `ceil(log2(n/0.05))`,
/// reduced so every block keeps at least `4k` examples, and at least 1.
pub fn auto_batches(n_h: usize, t_h: usize, k: usize) -> usize {
    let want = ((n_h.max(1) as f64) / AUTO_DELTA).log2().ceil() as usize;
    let cap = (t_h / (8 * k.max(1))).max(1);
    want.clamp(1, cap)
}

/// Initial per-cluster estimates from the heavy tasks.
///
/// Each task's first `floor(t/2)` examples feed `w_tilde` (projected onto the
/// subspace); the remaining examples measure the residual variance
/// `r2_tilde` against that fresh estimate.
pub fn initial_estimates<T: Scalar>(tasks: &[TaskBatch<T>], partition: &Partition, u: &Subspace<T>) -> Result<ClusterModel<T>> {
    if partition.len() != tasks.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} tasks",
            partition.len(),
            tasks.len()
        )));
    }
    let (k, d) = (partition.k(), u.d());
    let mut w_cols = Vec::with_capacity(k);
    let mut r2 = Vec::with_capacity(k);
    for c in 0..k {
        let members = partition.members(c);
        let mut sum = vec![T::zero(); d];
        let mut count = 0usize;
        for &i in &members {
            let task = &tasks[i];
            let h = task.t() / 2;
            for j in 0..h {
                crate::linalg::axpy(task.y[j], task.x.row(j), &mut sum);
            }
            count += h;
        }
        if count == 0 {
            return Err(Error::EmptyCluster(c));
        }
        let inv = T::one() / T::of_usize(count);
        sum.iter_mut().for_each(|v| *v *= inv);
        let w = u.project(&sum);

        let mut rss = T::zero();
        let mut rcount = 0usize;
        for &i in &members {
            let task = &tasks[i];
            for j in task.t() / 2..task.t() {
                let r = task.y[j] - dot(task.x.row(j), &w);
                rss += r * r;
            }
            rcount += task.t() - task.t() / 2;
        }
        let r2c = rss / T::of_usize(rcount);
        if !(r2c > T::zero()) {
            return Err(Error::NonPositiveParameter(c));
        }
        w_cols.push(w);
        r2.push(r2c);
    }
    let n = T::of_usize(tasks.len());
    Ok(ClusterModel {
        assignments: partition.labels().to_vec(),
        w_tilde: Matrix::from_columns(&w_cols)?,
        r2_tilde: r2,
        p_tilde: partition.sizes().iter().map(|&s| T::of_usize(s) / n).collect(),
    })
}

/// Distance matrix, partition and initial estimates in one go.
#[derive(Clone, Debug)]
pub struct Clustering<T> {
    pub distances: DistanceMatrix<T>,
    pub partition: Partition,
    pub model: ClusterModel<T>,
}

pub fn cluster_tasks<T: Scalar>(tasks: &[TaskBatch<T>], u: &Subspace<T>, k: usize, l: usize, linkage: Linkage) -> Result<Clustering<T>> {
    let distances = pairwise_distance(tasks, u, l)?;
    let partition = match linkage {
        Linkage::Single => single_linkage(&distances, k)?,
        other => agglomerate(&distances, k, other)?,
    };
    let model = initial_estimates(tasks, &partition, u)?;
    Ok(Clustering {
        distances,
        partition,
        model,
    })
}
