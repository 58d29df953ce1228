mod oracles;

use metareg::eval::{clustering_accuracy, estimation_error, estimation_error_aligned, hungarian, match_components, subspace_error};
use metareg::{FittedModel, Matrix, MetaParams, Subspace};
use oracles::{gaussian_matrix, rng};
use rand::Rng;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn cost_of(c: &Matrix<f64>, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum()
}

#[test]
fn hungarian_matches_brute_force() {
    let mut r = rng(1);
    for _ in 0..200 {
        let n = r.random_range(1..=6usize);
        // Integer costs make ties common.
        let c = Matrix::from_fn(n, n, |_, _| r.random_range(0..5) as f64);
        let got = hungarian(&c);
        let mut seen = vec![false; n];
        for &j in &got {
            assert!(!seen[j], "not a permutation: {got:?}");
            seen[j] = true;
        }
        let best = permutations(n).iter().map(|p| cost_of(&c, p)).fold(f64::INFINITY, f64::min);
        assert_eq!(cost_of(&c, &got), best);
    }
}

#[test]
fn clustering_accuracy_matches_exhaustive_matching() {
    let mut r = rng(2);
    for _ in 0..200 {
        let k = r.random_range(1..=5usize);
        let n = r.random_range(1..40usize);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let best = permutations(k)
            .iter()
            .map(|p| pred.iter().zip(&truth).filter(|(&a, &b)| p[a] == b).count())
            .max()
            .unwrap();
        let got = clustering_accuracy(&pred, &truth).unwrap();
        assert!((got - best as f64 / n as f64).abs() < 1e-15);
    }
    assert_eq!(clustering_accuracy(&[2, 2, 0], &[0, 0, 1]).unwrap(), 1.0);
}

fn meta(k: usize, d: usize, seed: u64) -> MetaParams<f64> {
    let mut r = rng(seed);
    let w = gaussian_matrix(d, k, &mut r).scaled(0.1);
    let s: Vec<f64> = (0..k).map(|_| r.random_range(0.2..0.6)).collect();
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let z: f64 = raw.iter().sum();
    MetaParams::new(w, s, raw.iter().map(|v| v / z).collect()).unwrap()
}

fn perturb(m: &MetaParams<f64>, scale: f64, seed: u64) -> FittedModel<f64> {
    let mut r = rng(seed);
    let mut f = FittedModel::from_meta(m);
    let noise = gaussian_matrix(m.d(), m.k(), &mut r);
    f.w_hat = Matrix::from_fn(m.d(), m.k(), |i, j| f.w_hat[(i, j)] + scale * 0.1 * noise[(i, j)]);
    for l in 0..m.k() {
        f.s2_hat[l] *= 1.0 + scale * r.random_range(-0.01..0.01);
        f.p_hat[l] *= 1.0 + scale * r.random_range(-0.05..0.05);
    }
    f
}

// Smallest eps for which every inequality holds, by bisection on the inequalities themselves.
fn epsilon_by_search(est: &FittedModel<f64>, truth: &MetaParams<f64>, t_l2: usize) -> f64 {
    let d = truth.d() as f64;
    let holds = |eps: f64| {
        (0..truth.k()).all(|i| {
            let s = truth.s()[i];
            let p = truth.p()[i];
            let dw: f64 = (0..truth.d()).map(|a| (est.w_hat[(a, i)] - truth.w()[(a, i)]).powi(2)).sum::<f64>().sqrt();
            dw <= eps * s
                && (est.s2_hat[i] - s * s).abs() <= eps / d.sqrt() * s * s
                && (est.p_hat[i] - p).abs() <= eps * (t_l2 as f64 / d).sqrt() * p
        })
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while !holds(hi) {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[test]
fn epsilon_matches_inequality_search() {
    for seed in 0..50 {
        let m = meta(4, 6, seed);
        let est = perturb(&m, 1.0, 100 + seed);
        let got = estimation_error_aligned(&est, &m, 30).unwrap().epsilon;
        let want = epsilon_by_search(&est, &m, 30);
        assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn epsilon_is_homogeneous_and_zero_at_truth() {
    let m = meta(3, 5, 7);
    assert_eq!(estimation_error(&FittedModel::from_meta(&m), &m, 10).unwrap().epsilon, 0.0);
    let a = estimation_error_aligned(&perturb(&m, 1.0, 1), &m, 10).unwrap().epsilon;
    let b = estimation_error_aligned(&perturb(&m, 2.0, 1), &m, 10).unwrap().epsilon;
    assert!((b - 2.0 * a).abs() < 1e-9 * a, "{a} {b}");
}

#[test]
fn single_binding_constraint() {
    let w = Matrix::from_columns(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
    let m = MetaParams::new(w, vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
    let mut est = FittedModel::from_meta(&m);
    est.w_hat[(0, 0)] += 0.1 * 0.5;
    let e = estimation_error_aligned(&est, &m, 10).unwrap();
    assert!((e.epsilon - 0.1).abs() < 1e-12);
    assert_eq!(e.s2_term, 0.0);
}

#[test]
fn matching_undoes_a_shuffle() {
    for seed in 0..30 {
        let m = meta(5, 8, seed);
        let est = perturb(&m, 0.5, seed + 1);
        let mut r = rng(seed + 2);
        let mut shuffle: Vec<usize> = (0..5).collect();
        for i in (1..5).rev() {
            shuffle.swap(i, r.random_range(0..=i));
        }
        let shuffled = est.permuted(&shuffle);
        let perm = match_components(&shuffled, &m).unwrap();
        assert_eq!(shuffled.permuted(&perm), est);
        assert_eq!(estimation_error(&shuffled, &m, 10).unwrap(), estimation_error_aligned(&est, &m, 10).unwrap());
    }
}

#[test]
fn subspace_error_vanishes_on_the_true_span() {
    let m = meta(3, 7, 3);
    let q = metareg::linalg::svd(m.w());
    let u = Subspace::new(Matrix::from_fn(7, 3, |i, j| q.u_rows[(j, i)])).unwrap();
    assert!(subspace_error(&u, &m).unwrap() < 1e-12);
    let off = Subspace::new(Matrix::from_fn(7, 1, |i, _| if i == 0 { 1.0 } else { 0.0 })).unwrap();
    assert!(subspace_error(&off, &m).unwrap() > 0.0);
}
