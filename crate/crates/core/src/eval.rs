//! Metrics: subspace error, component matching, estimation error, clustering
//! accuracy and Monte Carlo prediction error.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{sample_task, CovariateDist};
use crate::error::{Error, Result};
use crate::linalg::{dist, dot, norm, Matrix};
use crate::model::{FittedModel, MetaParams, Subspace, TaskBatch};
use crate::predict::{mix_columns, PosteriorWeights};
use crate::rng::{stream, StreamTag};
use crate::Scalar;

/// `max_i |(I - UUᵀ) w_i| / rho`.
pub fn subspace_error<T: Scalar>(u: &Subspace<T>, meta: &MetaParams<T>) -> Result<f64> {
    if u.d() != meta.d() {
        return Err(Error::DimensionMismatch(format!("subspace in R^{} vs model in R^{}", u.d(), meta.d())));
    }
    let worst = (0..meta.k())
        .map(|i| {
            let w = meta.w_col(i);
            dist(&w, &u.project(&w)).as_f64()
        })
        .fold(0.0, f64::max);
    Ok(worst / meta.rho().as_f64())
}

/// Minimum-cost perfect matching on a square cost matrix: `assign[row] = col`.
///
/// Shortest augmenting paths with potentials, `O(n^3)`.
pub fn hungarian(cost: &Matrix<f64>) -> Vec<usize> {
    let n = cost.rows();
    assert_eq!(n, cost.cols(), "cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays with a virtual column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_row[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[col_row[j] - 1] = j - 1;
    }
    assign
}

/// `perm[l]` is the estimated component matched to true component `l`, under
/// cost `|w_hat_i - w_l|`.
pub fn match_components<T: Scalar>(est: &FittedModel<T>, truth: &MetaParams<T>) -> Result<Vec<usize>> {
    if est.k() != truth.k() || est.d() != truth.d() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has k={}, d={} but truth has k={}, d={}",
            est.k(),
            est.d(),
            truth.k(),
            truth.d()
        )));
    }
    let k = truth.k();
    let est_cols = est.w_hat.columns();
    let true_cols = truth.w().columns();
    let cost = Matrix::from_fn(k, k, |l, i| dist(&est_cols[i], &true_cols[l]).as_f64());
    Ok(hungarian(&cost))
}

/// The three scaled deviations behind the estimation error, each a max over components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationError {
    pub epsilon: f64,
    /// `max_i |w_hat_i - w_i| / s_i`.
    pub w_term: f64,
    /// `max_i sqrt(d) |s2_hat_i - s_i^2| / s_i^2`.
    pub s2_term: f64,
    /// `max_i sqrt(d / t_l2) |p_hat_i - p_i| / p_i`.
    pub p_term: f64,
}

/// Smallest `eps` with `|w_hat - w| <= eps s`, `|s2_hat - s^2| <= eps s^2 / sqrt d`
/// and `|p_hat - p| <= eps sqrt(t_l2/d) p` for every component, after matching.
pub fn estimation_error<T: Scalar>(est: &FittedModel<T>, truth: &MetaParams<T>, t_l2: usize) -> Result<EstimationError> {
    let perm = match_components(est, truth)?;
    estimation_error_aligned(&est.permuted(&perm), truth, t_l2)
}

/// [`estimation_error`] without matching: component `i` of `est` is taken to be
/// component `i` of the truth.
pub fn estimation_error_aligned<T: Scalar>(est: &FittedModel<T>, truth: &MetaParams<T>, t_l2: usize) -> Result<EstimationError> {
    if t_l2 == 0 {
        return Err(Error::InvalidArgument("t_l2 must be positive".into()));
    }
    let d = truth.d() as f64;
    let (mut w_term, mut s2_term, mut p_term) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..truth.k() {
        let s = truth.s()[i].as_f64();
        let p = truth.p()[i].as_f64();
        w_term = w_term.max(dist(&est.w_hat.column(i), &truth.w_col(i)).as_f64() / s);
        s2_term = s2_term.max(d.sqrt() * (est.s2_hat[i].as_f64() - s * s).abs() / (s * s));
        p_term = p_term.max((d / t_l2 as f64).sqrt() * (est.p_hat[i].as_f64() - p).abs() / p);
    }
    Ok(EstimationError {
        epsilon: w_term.max(s2_term).max(p_term),
        w_term,
        s2_term,
        p_term,
    })
}

/// Hidden labels of `tasks`, failing on the first unlabelled one.
pub fn task_labels<T: Scalar>(tasks: &[TaskBatch<T>]) -> Result<Vec<usize>> {
    tasks.iter().enumerate().map(|(i, t)| t.label(i)).collect()
}

fn overlap(pred: &[usize], truth: &[usize]) -> (Matrix<f64>, usize) {
    let size = pred.iter().chain(truth).max().map_or(0, |m| m + 1);
    let mut c = Matrix::zeros(size, size);
    for (&p, &t) in pred.iter().zip(truth) {
        c[(p, t)] += 1.0;
    }
    (c, size)
}

/// Cluster-to-label map maximizing the number of agreeing items.
/// `map[c]` is the label assigned to cluster `c`.
pub fn label_mapping(pred: &[usize], truth: &[usize]) -> Vec<usize> {
    let (c, _) = overlap(pred, truth);
    hungarian(&c.scaled(-1.0))
}

/// Fraction of items whose cluster maps to their label under the best matching.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("clustering labels"));
    }
    Ok(accuracy_under(&label_mapping(pred, truth), pred, truth))
}

/// Accuracy when cluster `c` is read as label `map[c]`.
pub fn accuracy_under(map: &[usize], pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred
        .iter()
        .zip(truth)
        .filter(|(&p, &t)| map.get(p) == Some(&t))
        .count();
    hits as f64 / pred.len().max(1) as f64
}

/// Monte Carlo errors of the MAP and posterior-mean estimators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionError {
    pub trials: usize,
    pub tau: usize,
    pub map_train_mse: f64,
    pub map_test_mse: f64,
    pub bayes_train_mse: f64,
    pub bayes_test_mse: f64,
    /// Mean of `|beta_hat - beta|^2` against the task's true regression vector.
    pub map_param_sq_error: f64,
    pub bayes_param_sq_error: f64,
    /// Standard errors of the two test MSEs.
    pub map_test_se: f64,
    pub bayes_test_se: f64,
    /// `sum_i p_i s_i^2` of the truth: the best achievable test MSE.
    pub noise_floor: f64,
}

/// Each trial draws a task from `truth` with `tau + 1` examples, fits on the
/// first `tau` and tests on the last.
pub fn prediction_error<T: Scalar>(model: &FittedModel<T>, truth: &MetaParams<T>, tau: usize, trials: usize, seed: u64) -> Result<PredictionError> {
    if tau == 0 || trials == 0 {
        return Err(Error::InvalidArgument("tau and trials must be positive".into()));
    }
    if model.d() != truth.d() {
        return Err(Error::DimensionMismatch("model and truth dimensions differ".into()));
    }
    let rows: Vec<[f64; 6]> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream(seed, StreamTag::Prediction, trial as u64);
            let task = sample_task(truth, tau + 1, &mut rng, CovariateDist::Gaussian)?;
            let beta = truth.w_col(task.true_component.expect("generated tasks are labelled"));
            let train = task.truncated(tau);
            let rss = crate::classify::residual_sums(&train, &model.w_hat)?;
            let post = PosteriorWeights::from_residuals(&rss, &model.s2_hat, &model.p_hat, tau)?;
            let b_map = model.w_hat.column(post.argmax());
            let b_bayes = mix_columns(model, &post.normalized);
            let x_test = task.x.row(tau);
            let y_test = task.y[tau];
            let sq = |v: T| v.as_f64() * v.as_f64();
            let train_mse = |b: &[T]| {
                let fit = train.x.matvec(b).expect("dimensions checked");
                fit.iter().zip(&train.y).map(|(&f, &y)| sq(y - f)).sum::<f64>() / tau as f64
            };
            let param = |b: &[T]| sq(dist(b, &beta));
            Ok([
                train_mse(&b_map),
                sq(y_test - dot(x_test, &b_map)),
                train_mse(&b_bayes),
                sq(y_test - dot(x_test, &b_bayes)),
                param(&b_map),
                param(&b_bayes),
            ])
        })
        .collect::<Result<_>>()?;
    let n = trials as f64;
    let mean = |c: usize| rows.iter().map(|r| r[c]).sum::<f64>() / n;
    let se = |c: usize, m: f64| {
        if trials < 2 {
            return f64::NAN;
        }
        let var = rows.iter().map(|r| (r[c] - m) * (r[c] - m)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    let (map_test, bayes_test) = (mean(1), mean(3));
    Ok(PredictionError {
        trials,
        tau,
        map_train_mse: mean(0),
        map_test_mse: map_test,
        bayes_train_mse: mean(2),
        bayes_test_mse: bayes_test,
        map_param_sq_error: mean(4),
        bayes_param_sq_error: mean(5),
        map_test_se: se(1, map_test),
        bayes_test_se: se(3, bayes_test),
        noise_floor: truth.mean_noise_variance().as_f64(),
    })
}

/// Norm of each column, handy for reports.
pub fn column_norms<T: Scalar>(m: &Matrix<T>) -> Vec<f64> {
    m.columns().iter().map(|c| norm(c).as_f64()).collect()
}
