use super::eig::sym_eigen_ql;
use super::matrix::{dot, Matrix, SymMatrix};
use crate::error::{Error, Result};
use crate::Scalar;

/// Cholesky is abandoned when `min L_jj^2 / max G_jj` drops below this.
const PIVOT_RATIO: f64 = 1e-10;
const MAX_SVD_SWEEPS: usize = 60;

/// Which path produced a least-squares solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Solver {
    Cholesky,
    /// Minimum-norm solution through a pseudoinverse.
    Pseudoinverse,
}

/// Minimizer of `|X b - y|^2`; the minimum-norm one when `XᵀX` is singular.
pub fn least_squares<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<Vec<T>> {
    least_squares_with_path(x, y).map(|(b, _)| b)
}

pub fn least_squares_with_path<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<(Vec<T>, Solver)> {
    if x.rows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows but {} targets",
            x.rows(),
            y.len()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Empty("least-squares design"));
    }
    let gram = x.gram();
    let rhs = x.tr_matvec(y)?;
    if let Some(b) = cholesky_solve(&gram, &rhs) {
        return Ok((b, Solver::Cholesky));
    }
    Ok((svd_min_norm(x, y), Solver::Pseudoinverse))
}

/// Solves `G b = r` for a Gram matrix `G = XᵀX` with `r = Xᵀy`, falling back
/// to the eigen-pseudoinverse of `G` (same minimum-norm answer) when singular.
pub fn solve_normal_equations<T: Scalar>(gram: &SymMatrix<T>, rhs: &[T]) -> Result<(Vec<T>, Solver)> {
    if gram.dim() != rhs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} Gram with right-hand side of length {}",
            gram.dim(),
            gram.dim(),
            rhs.len()
        )));
    }
    if let Some(b) = cholesky_solve(gram.matrix(), rhs) {
        return Ok((b, Solver::Cholesky));
    }
    let eig = sym_eigen_ql(gram);
    let d = gram.dim();
    let top = eig.values.first().map_or(T::zero(), |v| v.abs());
    let cut = top * T::of_usize(d.max(1)) * T::epsilon() * T::lit(16.0);
    let mut b = vec![T::zero(); d];
    for (i, &lam) in eig.values.iter().enumerate() {
        if lam <= cut {
            continue;
        }
        let v = eig.vectors.column(i);
        let coef = dot(&v, rhs) / lam;
        for (bj, vj) in b.iter_mut().zip(&v) {
            *bj += coef * *vj;
        }
    }
    Ok((b, Solver::Pseudoinverse))
}

fn cholesky_solve<T: Scalar>(g: &Matrix<T>, rhs: &[T]) -> Option<Vec<T>> {
    let n = g.rows();
    let max_diag = (0..n).fold(T::zero(), |m, i| m.max(g[(i, i)]));
    if max_diag <= T::zero() {
        return None;
    }
    let floor = T::lit(PIVOT_RATIO) * max_diag;
    let mut l = Matrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut s = g[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if !(s > floor) {
            return None;
        }
        s = s.sqrt();
        l[(j, j)] = s;
        for i in (j + 1)..n {
            let v = (g[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j])) / s;
            l[(i, j)] = v;
        }
    }
    // L z = rhs, then Lᵀ b = z.
    let mut z = vec![T::zero(); n];
    for i in 0..n {
        z[i] = (rhs[i] - dot(&l.row(i)[..i], &z[..i])) / l[(i, i)];
    }
    let mut b = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
    Some(b)
}

/// Singular values and right singular vectors by one-sided Jacobi.
pub struct Svd<T> {
    /// Unsorted singular values, one per column of the input.
    pub sigma: Vec<T>,
    /// Row `i` is the left singular vector for `sigma[i]` (zero when `sigma[i]` is).
    pub u_rows: Matrix<T>,
    /// Row `i` is the right singular vector for `sigma[i]`.
    pub v_rows: Matrix<T>,
}

/// One-sided Jacobi SVD of an `m x d` matrix.
pub fn svd<T: Scalar>(x: &Matrix<T>) -> Svd<T> {
    let d = x.cols();
    // Rows of `a` are the columns of X.
    let mut a = x.transpose();
    let mut v = Matrix::<T>::identity(d);
    let eps = T::epsilon();
    for _ in 0..MAX_SVD_SWEEPS {
        let mut rotated = false;
        for p in 0..d {
            for q in (p + 1)..d {
                let alpha = dot(a.row(p), a.row(p));
                let beta = dot(a.row(q), a.row(q));
                let gamma = dot(a.row(p), a.row(q));
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut a, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<T> = (0..d).map(|i| dot(a.row(i), a.row(i)).sqrt()).collect();
    for (i, &s) in sigma.iter().enumerate() {
        let inv = if s > T::zero() { T::one() / s } else { T::zero() };
        a.row_mut(i).iter_mut().for_each(|x| *x *= inv);
    }
    Svd {
        sigma,
        u_rows: a,
        v_rows: v,
    }
}

fn rotate_pair<T: Scalar>(m: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let cols = m.cols();
    let (head, tail) = m.as_mut_slice().split_at_mut(q * cols);
    for (x, y) in head[p * cols..(p + 1) * cols].iter_mut().zip(&mut tail[..cols]) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn svd_min_norm<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Vec<T> {
    let dec = svd(x);
    let d = x.cols();
    let top = dec.sigma.iter().fold(T::zero(), |m, &s| m.max(s));
    let cut = top * T::of_usize(x.rows().max(d)) * T::epsilon();
    let mut b = vec![T::zero(); d];
    for (i, &s) in dec.sigma.iter().enumerate() {
        if s <= cut {
            continue;
        }
        let coef = dot(dec.u_rows.row(i), y) / s;
        for (bj, &vj) in b.iter_mut().zip(dec.v_rows.row(i)) {
            *bj += coef * vj;
        }
    }
    b
}
