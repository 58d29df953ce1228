use super::matrix::{Matrix, SymMatrix};
use crate::error::{Error, Result};
use crate::model::Subspace;
use crate::Scalar;

const MAX_SWEEPS: usize = 100;
const MAX_QL_ITERS: usize = 60;

/// Full eigendecomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen<T> {
    /// Eigenvalues, ordered by absolute value, largest first.
    pub values: Vec<T>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Matrix<T>,
    pub sweeps: usize,
}

/// Cyclic Jacobi. Stops once `off(A) <= 1e-12 * |A|_F` (or the single
/// precision floor) or after 100 sweeps.
pub fn sym_eigen<T: Scalar>(a: &SymMatrix<T>) -> SymEigen<T> {
    let n = a.dim();
    let mut m = a.matrix().clone();
    // Rows of `vt` are the eigenvectors; rotating rows keeps updates contiguous.
    let mut vt = Matrix::<T>::identity(n);
    let fro = m.frobenius_norm();
    let target = T::tol(1e-12) * fro;
    let mut sweeps = 0;

    while sweeps < MAX_SWEEPS && off_diagonal(&m) > target {
        sweeps += 1;
        // Early sweeps skip small entries; later ones drop those below rounding.
        let thresh = if sweeps < 4 { T::lit(0.2) * upper_abs_sum(&m) / T::of_usize(n * n) } else { T::zero() };
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let (app, aqq) = (m[(p, p)], m[(q, q)]);
                let g = T::lit(100.0) * apq.abs();
                if sweeps > 4 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    m[(p, q)] = T::zero();
                    m[(q, p)] = T::zero();
                    continue;
                }
                if apq.abs() <= thresh {
                    continue;
                }
                let theta = (aqq - app) / (apq + apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                rotate(&mut m, &mut vt, p, q, c, s);
                m[(p, p)] = app - t * apq;
                m[(q, q)] = aqq + t * apq;
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps index order on ties.
    order.sort_by(|&i, &j| m[(j, j)].abs().partial_cmp(&m[(i, i)].abs()).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let v = vt.row(i);
        // Fix the sign: the largest-magnitude entry is positive.
        let lead = v.iter().fold(T::zero(), |b, &x| if x.abs() > b.abs() { x } else { b });
        let sign = if lead < T::zero() { -T::one() } else { T::one() };
        for (r, &x) in v.iter().enumerate() {
            vectors[(r, col)] = sign * x;
        }
    }
    SymEigen {
        values,
        vectors,
        sweeps,
    }
}

fn off_diagonal<T: Scalar>(m: &Matrix<T>) -> T {
    let n = m.rows();
    let mut s = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[(i, j)] * m[(i, j)];
            }
        }
    }
    s.sqrt()
}

fn upper_abs_sum<T: Scalar>(m: &Matrix<T>) -> T {
    let n = m.rows();
    (0..n).flat_map(|i| m.row(i)[i + 1..].iter()).map(|v| v.abs()).sum()
}

// Applies Jᵀ M J with J the (p, q) Givens rotation, and the same rotation to
// the eigenvector rows. Rows p and q are rotated in place; symmetry then gives
// columns p and q. The caller sets the two diagonal entries.
fn rotate<T: Scalar>(m: &mut Matrix<T>, vt: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let n = m.rows();
    rotate_rows(m, p, q, c, s);
    for k in 0..n {
        if k != p && k != q {
            m[(k, p)] = m[(p, k)];
            m[(k, q)] = m[(q, k)];
        }
    }
    m[(p, q)] = T::zero();
    m[(q, p)] = T::zero();
    rotate_rows(vt, p, q, c, s);
}

fn rotate_rows<T: Scalar>(m: &mut Matrix<T>, p: usize, q: usize, c: T, s: T) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (a, b) in rp.iter_mut().zip(rq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Householder tridiagonalization followed by implicit QL. An order of
/// magnitude faster than [`sym_eigen`] at a few hundred dimensions; used where
/// the full spectrum is needed repeatedly. Same ordering and sign convention.
pub fn sym_eigen_ql<T: Scalar>(a: &SymMatrix<T>) -> SymEigen<T> {
    let n = a.dim();
    if n == 0 {
        return SymEigen {
            values: Vec::new(),
            vectors: Matrix::zeros(0, 0),
            sweeps: 0,
        };
    }
    let mut v = a.matrix().clone();
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    tridiagonalize(&mut v, &mut d, &mut e);
    // QL rotates pairs of eigenvector columns; keep them as rows.
    let mut vt = v.transpose();
    let sweeps = tridiagonal_ql(&mut vt, &mut d, &mut e);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].abs().partial_cmp(&d[i].abs()).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        let row = vt.row(i);
        let lead = row.iter().fold(T::zero(), |b, &x| if x.abs() > b.abs() { x } else { b });
        let sign = if lead < T::zero() { -T::one() } else { T::one() };
        for (r, &x) in row.iter().enumerate() {
            vectors[(r, col)] = sign * x;
        }
    }
    SymEigen {
        values,
        vectors,
        sweeps,
    }
}

// Householder reduction to tridiagonal form (the EISPACK tred2 scheme).
// On return `v` holds the orthogonal transform, `d` the diagonal and
// `e[1..]` the subdiagonal.
fn tridiagonalize<T: Scalar>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let scale: T = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = T::zero();
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
                v[(j, i)] = T::zero();
            }
        } else {
            for dk in d[..i].iter_mut() {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e[..i].iter_mut() {
                *ej = T::zero();
            }
            for j in 0..i {
                let f = d[j];
                v[(j, i)] = f;
                let mut g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            let mut f = T::zero();
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let (f, g) = (d[j], e[j]);
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }
    // Accumulate the transformations.
    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = T::zero();
    }
    v[(n - 1, n - 1)] = T::one();
    e[0] = T::zero();
}

// Implicit QL with Wilkinson-style shifts on the tridiagonal (d, e); rows of
// `vt` are rotated along. Returns the total iteration count.
fn tridiagonal_ql<T: Scalar>(vt: &mut Matrix<T>, d: &mut [T], e: &mut [T]) -> usize {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let eps = T::epsilon();
    let (mut f, mut tst1) = (T::zero(), T::zero());
    let mut iterations = 0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                iterations += 1;
                let g = d[l];
                let mut p = (d[l + 1] - g) / (e[l] + e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d[l + 2..].iter_mut() {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let (mut c, mut c2, mut c3) = (T::one(), T::one(), T::one());
                let el1 = e[l + 1];
                let (mut s, mut s2) = (T::zero(), T::zero());
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    rotate_rows(vt, i, i + 1, c, s);
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if !(e[l].abs() > eps * tst1) || iter >= MAX_QL_ITERS {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    iterations
}

/// The `k` eigenpairs of largest absolute eigenvalue.
pub fn top_k_eig<T: Scalar>(a: &SymMatrix<T>, k: usize) -> Result<(Vec<T>, Subspace<T>)> {
    let d = a.dim();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= d, got k={k}, d={d}")));
    }
    let eig = sym_eigen(a);
    let u = Matrix::from_fn(d, k, |i, j| eig.vectors[(i, j)]);
    Ok((eig.values[..k].to_vec(), Subspace::new(u)?))
}
