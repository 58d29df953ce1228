//! Independent reference implementations and the checks built on them.
//!
//! Each `check_*` draws one random instance from its seed and returns a
//! description of the first disagreement. The integration tests and the
//! acceptance run both drive these.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use metareg::classify::{classify_objectives, classify_task};
use metareg::cluster::{single_linkage, DistanceMatrix, Partition};
use metareg::em::{em_fit, EmConfig};
use metareg::linalg::{least_squares, top_k_eig};
use metareg::predict::PosteriorWeights;
use metareg::rng::{stream, StreamRng, StreamTag};
use metareg::subspace::{half_estimates, moment_matrix};
use metareg::{ClusterModel, FittedModel, Matrix, MetaParams, SymMatrix, TaskBatch};

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> StreamRng {
    stream(seed, StreamTag::Auxiliary, 0)
}

pub fn gaussian(rng: &mut StreamRng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut StreamRng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

pub fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- eigen

/// Random 8x8 symmetric matrix, top 3 eigenpairs by magnitude against a full
/// decomposition. Subspaces are compared through their projectors.
pub fn check_top_k_eig(seed: u64) -> Check {
    let mut r = rng(seed);
    let (d, k) = (8, 3);
    let g = gaussian_matrix(d, d, &mut r);
    let a = Matrix::from_fn(d, d, |i, j| 0.5 * (g[(i, j)] + g[(j, i)]));
    let (values, u) = top_k_eig(&SymMatrix::new(a.clone()).map_err(|e| e.to_string())?, k).map_err(|e| e.to_string())?;

    let eig = SymmetricEigen::new(to_na(&a));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    let gap = eig.eigenvalues[order[k - 1]].abs() - eig.eigenvalues[order[k]].abs();
    if gap < 1e-3 {
        // Near-degenerate cut: the subspace is not well defined. Values still are.
        for i in 0..k {
            let want = eig.eigenvalues[order[i]];
            ensure((values[i].abs() - want.abs()).abs() < 1e-8, || format!("seed {seed}: |eigenvalue {i}| {} vs {want}", values[i]))?;
        }
        return Ok(());
    }
    let mut p_ref = DMatrix::<f64>::zeros(d, d);
    for i in 0..k {
        let want = eig.eigenvalues[order[i]];
        ensure((values[i] - want).abs() < 1e-8, || format!("seed {seed}: eigenvalue {i} {} vs {want}", values[i]))?;
        let v = eig.eigenvectors.column(order[i]);
        p_ref += &v * v.transpose();
    }
    let p = u.projector();
    let diff = (to_na(&p) - p_ref).abs().max();
    ensure(diff < 1e-8, || format!("seed {seed}: projector differs by {diff:e}"))?;
    // Sign convention: largest-magnitude entry of every vector is positive.
    for c in u.basis().columns() {
        let big = c.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        ensure(big > 0.0, || format!("seed {seed}: sign convention violated"))?;
    }
    Ok(())
}

// ---------------------------------------------------------- least squares

/// Least squares against the SVD pseudoinverse, including rank-deficient designs.
pub fn check_least_squares(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = r.random_range(1..7usize);
    let m = r.random_range(n..n + 12);
    let mut x = gaussian_matrix(m, n, &mut r);
    let deficient = n >= 2 && r.random_bool(0.3);
    if deficient {
        // Last column copies a scaled first column.
        for i in 0..m {
            x[(i, n - 1)] = 2.0 * x[(i, 0)];
        }
    }
    let y: Vec<f64> = (0..m).map(|_| gaussian(&mut r)).collect();
    let got = least_squares(&x, &y).map_err(|e| e.to_string())?;
    let pinv = to_na(&x).pseudo_inverse(1e-10).map_err(|e| e.to_string())?;
    let want = pinv * nalgebra::DVector::from_column_slice(&y);
    for i in 0..n {
        ensure((got[i] - want[i]).abs() < 1e-9, || {
            format!("seed {seed} ({m}x{n}, deficient {deficient}): coefficient {i} {} vs {}", got[i], want[i])
        })?;
    }
    Ok(())
}

// --------------------------------------------------------- single linkage

/// Textbook agglomeration: merge the pair of clusters with the smallest
/// minimum cross distance until `k` remain.
pub fn naive_single_linkage(h: &Matrix<f64>, k: usize) -> Vec<usize> {
    let n = h.rows();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        if h[(i, j)] < best.0 {
                            best = (h[(i, j)], a, b);
                        }
                    }
                }
            }
        }
        let merged = clusters.remove(best.2);
        clusters[best.1].extend(merged);
    }
    let mut raw = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            raw[i] = c;
        }
    }
    Partition::from_labels(&raw).labels().to_vec()
}

/// 12 random points in the plane, squared distances, random `k`.
pub fn check_single_linkage(seed: u64) -> Check {
    let mut r = rng(seed);
    let n = 12;
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (gaussian(&mut r), gaussian(&mut r))).collect();
    let h = Matrix::from_fn(n, n, |i, j| (pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2));
    let k = r.random_range(1..=n);
    let got = single_linkage(&DistanceMatrix::new(h.clone(), 1).unwrap(), k).map_err(|e| e.to_string())?;
    let want = naive_single_linkage(&h, k);
    ensure(got.labels() == want.as_slice(), || format!("seed {seed}, k={k}: {:?} vs {want:?}", got.labels()))
}

// --------------------------------------------------------- classification

/// Objective by explicit loops over examples and coordinates.
pub fn direct_objectives(task: &TaskBatch<f64>, model: &ClusterModel<f64>) -> Vec<f64> {
    (0..model.k())
        .map(|l| {
            let mut rss = 0.0;
            for j in 0..task.t() {
                let mut fit = 0.0;
                for i in 0..task.d() {
                    fit += task.x[(j, i)] * model.w_tilde[(i, l)];
                }
                rss += (task.y[j] - fit).powi(2);
            }
            let r2 = model.r2_tilde[l];
            rss / (2.0 * r2) + task.t() as f64 / 2.0 * r2.ln()
        })
        .collect()
}

pub fn random_task(d: usize, t: usize, r: &mut StreamRng) -> TaskBatch<f64> {
    let x = gaussian_matrix(t, d, r);
    let y = (0..t).map(|_| gaussian(r)).collect();
    TaskBatch::new(x, y, None).unwrap()
}

pub fn check_classify(seed: u64) -> Check {
    let mut r = rng(seed);
    let d = r.random_range(1..10usize);
    let k = r.random_range(1..8usize);
    let t = r.random_range(1..30usize);
    let model = ClusterModel {
        assignments: vec![],
        w_tilde: gaussian_matrix(d, k, &mut r),
        r2_tilde: (0..k).map(|_| r.random_range(0.05..3.0)).collect(),
        p_tilde: vec![1.0 / k as f64; k],
    };
    let task = random_task(d, t, &mut r);
    let want = direct_objectives(&task, &model);
    let got = classify_objectives(&task, &model).map_err(|e| e.to_string())?;
    for l in 0..k {
        ensure((got[l] - want[l]).abs() <= 1e-10 * want[l].abs().max(1.0), || {
            format!("seed {seed}: objective {l} {} vs {}", got[l], want[l])
        })?;
    }
    let best = (0..k).fold(0, |b, l| if want[l] < want[b] { l } else { b });
    let chosen = classify_task(&task, &model).map_err(|e| e.to_string())?;
    // Near-ties may legitimately resolve either way at rounding level.
    ensure(chosen == best || (want[chosen] - want[best]).abs() < 1e-9 * want[best].abs().max(1.0), || {
        format!("seed {seed}: chose {chosen}, oracle {best}")
    })
}

// --------------------------------------------------------- posterior weights

/// Weights computed to 60 digits for inputs whose log-weights are far outside
/// the range where plain `exp` works: `(rss, s2, p, tau, log_w, w)`.
pub const POSTERIOR_REFERENCE: &[(&[f64], &[f64], &[f64], usize, &[f64], &[f64])] = &[
    (
        &[1000.0, 1003.5, 2000.0],
        &[0.01, 0.0101, 0.5],
        &[0.2, 0.3, 0.5],
        200,
        &[-49541.092419313623925, -49219.899809073013774, -1931.3784291245654144],
        &[0.0, 0.0, 1.0],
    ),
    (
        &[5.0, 5.0, 5.0, 5.0],
        &[1e-3, 2e-3, 4e-3, 8e-3],
        &[0.25, 0.25, 0.25, 0.25],
        1000,
        &[952.49134512994867704, 1855.9177548499759963, 2134.3441645700033286, 2100.2705742900306674],
        &[0.0, 1.2048878984127876564e-121, 0.99999999999999840769, 1.5923105140836142023e-15],
    ),
    (
        &[12.25, 40.0],
        &[0.5, 0.45],
        &[1e-6, 0.999999],
        60,
        &[-5.2710951411659148668, -20.489214557911795798],
        &[0.99999975404559474893, 2.4595440525106837543e-7],
    ),
    (
        &[0.0, 1e-3, 2e4],
        &[1e-4, 1e-4, 3.0],
        &[0.4, 0.4, 0.2],
        30,
        &[137.23881484776858531, 132.23881484776858545, -3351.421955575789079],
        &[0.99330714907571514354, 0.0066928509242848564603, 0.0],
    ),
];

pub fn check_posterior_reference() -> Check {
    for (c, &(rss, s2, p, tau, lw, w)) in POSTERIOR_REFERENCE.iter().enumerate() {
        let got = PosteriorWeights::<f64>::from_residuals(rss, s2, p, tau).map_err(|e| e.to_string())?;
        for i in 0..rss.len() {
            ensure((got.log_w[i] - lw[i]).abs() <= 1e-13 * lw[i].abs().max(1.0), || {
                format!("case {c}: log weight {i} {} vs {}", got.log_w[i], lw[i])
            })?;
            // Relative error is bounded by the rounding of log_w itself.
            let tol = 1e-9 * w[i] + 1e-300;
            ensure((got.normalized[i] - w[i]).abs() <= tol, || {
                format!("case {c}: weight {i} {:e} vs {:e}", got.normalized[i], w[i])
            })?;
        }
    }
    Ok(())
}

/// Random moderate inputs where direct `exp` and normalization are exact enough.
pub fn check_posterior_direct(seed: u64) -> Check {
    let mut r = rng(seed);
    let k = r.random_range(1..10usize);
    let tau = r.random_range(1..20usize);
    let rss: Vec<f64> = (0..k).map(|_| r.random_range(0.0..20.0)).collect();
    let s2: Vec<f64> = (0..k).map(|_| r.random_range(0.3..3.0)).collect();
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let direct: Vec<f64> = (0..k)
        .map(|i| (-rss[i] / (2.0 * s2[i])).exp() * s2[i].powf(-(tau as f64) / 2.0) * p[i])
        .collect();
    let z: f64 = direct.iter().sum();
    let got = PosteriorWeights::<f64>::from_residuals(&rss, &s2, &p, tau).map_err(|e| e.to_string())?;
    for i in 0..k {
        let want = direct[i] / z;
        ensure((got.normalized[i] - want).abs() <= 1e-12 * want.max(1e-300) + 1e-300, || {
            format!("seed {seed}: weight {i} {} vs {want}", got.normalized[i])
        })?;
    }
    Ok(())
}

// -------------------------------------------------------------------- EM

/// Mean per-task log-likelihood recomputed from scratch.
pub fn direct_log_likelihood(tasks: &[TaskBatch<f64>], model: &FittedModel<f64>) -> f64 {
    let k = model.k();
    let total: f64 = tasks
        .iter()
        .map(|task| {
            let terms: Vec<f64> = (0..k)
                .map(|l| {
                    let s2 = model.s2_hat[l];
                    let mut rss = 0.0;
                    for j in 0..task.t() {
                        let fit: f64 = (0..task.d()).map(|i| task.x[(j, i)] * model.w_hat[(i, l)]).sum();
                        rss += (task.y[j] - fit).powi(2);
                    }
                    model.p_hat[l].ln() - task.t() as f64 / 2.0 * (2.0 * std::f64::consts::PI * s2).ln() - rss / (2.0 * s2)
                })
                .collect();
            let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
        })
        .sum();
    total / tasks.len() as f64
}

/// Small random mixture and a random start.
pub fn em_instance(seed: u64) -> (Vec<TaskBatch<f64>>, FittedModel<f64>) {
    let mut r = rng(seed);
    let d = r.random_range(2..5usize);
    let k = r.random_range(2..4usize);
    let w = gaussian_matrix(d, k, &mut r);
    let s: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let n = r.random_range(20..40usize);
    let tasks = (0..n)
        .map(|_| {
            let z = r.random_range(0..k);
            let t = r.random_range(2..8usize);
            let x = gaussian_matrix(t, d, &mut r);
            let y = (0..t)
                .map(|j| (0..d).map(|i| x[(j, i)] * w[(i, z)]).sum::<f64>() + s[z] * gaussian(&mut r))
                .collect();
            TaskBatch::new(x, y, Some(z)).unwrap()
        })
        .collect();
    let init = FittedModel::new(
        gaussian_matrix(d, k, &mut r),
        (0..k).map(|_| r.random_range(0.3..2.0)).collect(),
        vec![1.0 / k as f64; k],
    )
    .unwrap();
    (tasks, init)
}

/// Every prefix run of EM ends on a model whose recomputed likelihood equals
/// the trace entry, and the trace never drops by more than 1e-8.
pub fn check_em_monotone(seed: u64) -> Check {
    const ITERS: usize = 15;
    let (tasks, init) = em_instance(seed);
    let cfg = EmConfig {
        max_iters: ITERS,
        tol: f64::NEG_INFINITY,
        ..EmConfig::default()
    };
    let full = em_fit(&tasks, &init, &cfg).map_err(|e| e.to_string())?;
    for w in full.trace.windows(2) {
        ensure(w[1] >= w[0] - 1e-8, || format!("seed {seed}: likelihood fell from {} to {}", w[0], w[1]))?;
    }
    for i in 0..=ITERS {
        let part = em_fit(&tasks, &init, &EmConfig { max_iters: i, ..cfg }).map_err(|e| e.to_string())?;
        let want = direct_log_likelihood(&tasks, &part.model);
        let got = full.trace[i];
        ensure((got - want).abs() <= 1e-9 * want.abs().max(1.0), || {
            format!("seed {seed}, iteration {i}: trace {got} vs recomputed {want}")
        })?;
        for row in 0..part.responsibilities.rows() {
            let s: f64 = part.responsibilities.row(row).iter().sum();
            ensure((s - 1.0).abs() < 1e-12, || format!("seed {seed}: responsibilities sum to {s}"))?;
        }
    }
    Ok(())
}

// -------------------------------------------------------- moment matrix

/// `(2n)^-1 sum_i (b1 b2ᵀ + b2 b1ᵀ)` by explicit loops.
pub fn naive_moment(tasks: &[TaskBatch<f64>]) -> Matrix<f64> {
    let d = tasks[0].d();
    let mut m = Matrix::zeros(d, d);
    for task in tasks {
        let h = task.t() / 2;
        let mean = |from: usize, to: usize| -> Vec<f64> {
            (0..d)
                .map(|i| (from..to).map(|j| task.y[j] * task.x[(j, i)]).sum::<f64>() / (to - from) as f64)
                .collect()
        };
        let (b1, b2) = (mean(0, h), mean(h, 2 * h));
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] += b1[a] * b2[b] + b2[a] * b1[b];
            }
        }
    }
    m.scaled(1.0 / (2.0 * tasks.len() as f64))
}

pub fn check_moment_naive(seed: u64) -> Check {
    let mut r = rng(seed);
    let d = r.random_range(1..6usize);
    let n = r.random_range(1..600usize);
    let tasks: Vec<TaskBatch<f64>> = (0..n)
        .map(|_| {
            let t = r.random_range(2..9usize);
            random_task(d, t, &mut r)
        })
        .collect();
    let got = moment_matrix(&tasks).map_err(|e| e.to_string())?;
    let want = naive_moment(&tasks);
    let diff = got.matrix().max_abs_diff(&want);
    ensure(diff < 1e-12, || format!("seed {seed}: moment matrix differs by {diff:e}"))
}

/// `E[M_hat] = sum_j p_j w_j w_jᵀ`: every entry of one large estimate within
/// five standard errors, the errors taken from the per-task terms.
pub fn check_moment_unbiased(meta: &MetaParams<f64>, n: usize, t: usize, seed: u64) -> Check {
    use metareg::datagen::TaskSource;
    let d = meta.d();
    let source = TaskSource::new(meta, seed);
    let tasks = source.tasks(StreamTag::Light1, n, t).map_err(|e| e.to_string())?;
    let m = moment_matrix(&tasks).map_err(|e| e.to_string())?;
    let mut truth = Matrix::<f64>::zeros(d, d);
    for l in 0..meta.k() {
        let w = meta.w_col(l);
        for a in 0..d {
            for b in 0..d {
                truth[(a, b)] += meta.p()[l] * w[a] * w[b];
            }
        }
    }
    let mut sum_sq = Matrix::<f64>::zeros(d, d);
    for task in &tasks {
        let h = half_estimates(task).map_err(|e| e.to_string())?;
        for a in 0..d {
            for b in 0..d {
                let term = 0.5 * (h.b1[a] * h.b2[b] + h.b2[a] * h.b1[b]);
                sum_sq[(a, b)] += (term - m.matrix()[(a, b)]).powi(2);
            }
        }
    }
    for a in 0..d {
        for b in 0..d {
            let se = (sum_sq[(a, b)] / (n as f64 - 1.0) / n as f64).sqrt();
            let dev = (m.matrix()[(a, b)] - truth[(a, b)]).abs();
            ensure(dev <= 5.0 * se, || format!("seed {seed}: entry ({a},{b}) off by {dev:e}, {:.1} SE", dev / se))?;
        }
    }
    Ok(())
}
