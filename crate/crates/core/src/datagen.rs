//! Seeded synthetic meta-parameters and task pools.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::model::{MetaParams, PoolSizes, TaskBatch, TaskPool};
use crate::rng::{stream, StreamRng, StreamTag};
use crate::Scalar;

/// How the regression vectors are laid out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GenPreset {
    /// Random orthonormal columns with noise scale `sigma`, jointly rescaled
    /// by `1/sqrt(1 + sigma^2)` so that every `s_i^2 + |w_i|^2 = 1`.
    Orthonormal { sigma: f64 },
    /// Columns uniform on the unit sphere, rescaled the same way.
    RandomUnit { sigma: f64 },
    /// `w_i = (delta/sqrt 2) e_i`, `s_i = sigma`. If that exceeds unit scale
    /// it is shrunk to fit when `rescale` is set and rejected otherwise.
    LowerBound { delta: f64, sigma: f64, rescale: bool },
}

/// Covariate distribution. Both are isotropic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateDist {
    #[default]
    Gaussian,
    Rademacher,
}

pub fn sample_meta_params<T: Scalar>(k: usize, d: usize, preset: GenPreset, seed: u64) -> Result<MetaParams<T>> {
    if k == 0 || d < k {
        return Err(Error::InvalidArgument(format!("need d >= k >= 1, got k={k}, d={d}")));
    }
    let mut rng = stream(seed, StreamTag::Meta, 0);
    let (w, s) = match preset {
        GenPreset::Orthonormal { sigma } => {
            check_positive("sigma", sigma)?;
            let w = orthonormal_columns(d, k, &mut rng);
            scaled_unit(w, sigma)
        }
        GenPreset::RandomUnit { sigma } => {
            check_positive("sigma", sigma)?;
            let cols: Vec<Vec<f64>> = (0..k).map(|_| unit_vector(d, &mut rng)).collect();
            scaled_unit(Matrix::from_columns(&cols)?, sigma)
        }
        GenPreset::LowerBound { delta, sigma, rescale } => {
            check_positive("delta", delta)?;
            check_positive("sigma", sigma)?;
            let a = delta / 2f64.sqrt();
            let rho = (a * a + sigma * sigma).sqrt();
            let c = if rho <= 1.0 + 1e-12 {
                1.0
            } else if rescale {
                1.0 / rho
            } else {
                return Err(Error::InvalidArgument(format!(
                    "lower-bound preset has delta^2/2 + sigma^2 = {:.6} > 1 and rescaling is off",
                    rho * rho
                )));
            };
            let w = Matrix::from_fn(d, k, |i, j| if i == j { c * a } else { 0.0 });
            (w, vec![c * sigma; k])
        }
    };
    let p = vec![1.0 / k as f64; k];
    MetaParams::new(w, s, p).map(|m| m.cast())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
    }
}

fn scaled_unit(mut w: Matrix<f64>, sigma: f64) -> (Matrix<f64>, Vec<f64>) {
    let c = 1.0 / (1.0 + sigma * sigma).sqrt();
    w.scale(c);
    let k = w.cols();
    (w, vec![c * sigma; k])
}

fn gaussian_vec(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit_vector(d: usize, rng: &mut StreamRng) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(d, rng);
        let n = norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

// Gaussian matrix orthonormalized by modified Gram-Schmidt, two passes.
fn orthonormal_columns(d: usize, k: usize, rng: &mut StreamRng) -> Matrix<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v = gaussian_vec(d, rng);
        for _ in 0..2 {
            for q in &cols {
                let c = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(x, &qi)| *x -= c * qi);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            cols.push(v);
        }
    }
    Matrix::from_columns(&cols).expect("k columns of length d")
}

/// Draws one task with `t` examples from `rng`.
pub fn sample_task<T: Scalar>(meta: &MetaParams<T>, t: usize, rng: &mut StreamRng, covariates: CovariateDist) -> Result<TaskBatch<T>> {
    if t == 0 {
        return Err(Error::TooFewExamples { needed: 1, got: 0 });
    }
    let d = meta.d();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut z = meta.k() - 1;
    for (i, p) in meta.p().iter().enumerate() {
        acc += p.as_f64();
        if u < acc {
            z = i;
            break;
        }
    }
    let mut x = Matrix::zeros(t, d);
    for v in x.as_mut_slice() {
        *v = match covariates {
            CovariateDist::Gaussian => T::lit(rng.sample(StandardNormal)),
            CovariateDist::Rademacher => {
                if rng.random::<bool>() {
                    T::one()
                } else {
                    -T::one()
                }
            }
        };
    }
    let w = meta.w_col(z);
    let s = meta.s()[z];
    let y = (0..t)
        .map(|j| dot(x.row(j), &w) + s * T::lit(rng.sample(StandardNormal)))
        .collect();
    TaskBatch::new(x, y, Some(z))
}

/// Deterministic task factory: task `index` of dataset `tag` always comes
/// from the same stream.
#[derive(Clone, Debug)]
pub struct TaskSource<'a, T> {
    pub meta: &'a MetaParams<T>,
    pub seed: u64,
    pub covariates: CovariateDist,
}

impl<'a, T: Scalar> TaskSource<'a, T> {
    pub fn new(meta: &'a MetaParams<T>, seed: u64) -> Self {
        Self {
            meta,
            seed,
            covariates: CovariateDist::Gaussian,
        }
    }

    pub fn task(&self, tag: StreamTag, index: usize, t: usize) -> Result<TaskBatch<T>> {
        let mut rng = stream(self.seed, tag, index as u64);
        sample_task(self.meta, t, &mut rng, self.covariates)
    }

    /// Tasks `0..n` of a dataset, generated in parallel.
    pub fn tasks(&self, tag: StreamTag, n: usize, t: usize) -> Result<Vec<TaskBatch<T>>> {
        (0..n).into_par_iter().map(|i| self.task(tag, i, t)).collect()
    }

    pub fn pool(&self, sizes: PoolSizes) -> Result<TaskPool<T>> {
        sizes.validate()?;
        TaskPool::new(
            self.tasks(StreamTag::Light1, sizes.n_l1, sizes.t_l1)?,
            self.tasks(StreamTag::Heavy, sizes.n_h, sizes.t_h)?,
            self.tasks(StreamTag::Light2, sizes.n_l2, sizes.t_l2)?,
            sizes,
        )
    }
}

/// All three datasets for `sizes`, each task on its own stream.
pub fn sample_pool<T: Scalar>(meta: &MetaParams<T>, sizes: PoolSizes, seed: u64) -> Result<TaskPool<T>> {
    TaskSource::new(meta, seed).pool(sizes)
}
