//! MAP and posterior-mean regression vectors for a new task.

use crate::classify::residual_sums;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::model::{FittedModel, TaskBatch};
use crate::Scalar;

/// Posterior over components for one task.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorWeights<T> {
    /// `-R_i / (2 s2_i) - tau ln s_i + ln p_i`, unnormalized.
    pub log_w: Vec<T>,
    /// `exp(log_w)` normalized to sum to one.
    pub normalized: Vec<T>,
}

impl<T: Scalar> PosteriorWeights<T> {
    /// Builds the weights from per-component residual sums over `tau` examples.
    pub fn from_residuals(rss: &[T], s2: &[T], p: &[T], tau: usize) -> Result<Self> {
        if rss.len() != s2.len() || rss.len() != p.len() {
            return Err(Error::DimensionMismatch("residuals, variances and weights differ in length".into()));
        }
        if let Some(i) = (0..s2.len()).find(|&i| !(s2[i] > T::zero() && p[i] > T::zero())) {
            return Err(Error::NonPositiveParameter(i));
        }
        let tau = T::of_usize(tau);
        let half = T::lit(0.5);
        let log_w: Vec<T> = (0..rss.len())
            .map(|i| -rss[i] / (s2[i] + s2[i]) - tau * half * s2[i].ln() + p[i].ln())
            .collect();
        let normalized = softmax(&log_w);
        Ok(Self { log_w, normalized })
    }

    /// Component with the largest weight; the first one on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.log_w.iter().enumerate().skip(1) {
            if v > self.log_w[best] {
                best = i;
            }
        }
        best
    }
}

/// Log-sum-exp normalization.
pub fn softmax<T: Scalar>(log_w: &[T]) -> Vec<T> {
    let max = log_w.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = log_w.iter().map(|&v| (v - max).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Posterior weights with `tau` equal to the task's example count.
pub fn posterior_log_weights<T: Scalar>(task: &TaskBatch<T>, model: &FittedModel<T>) -> Result<PosteriorWeights<T>> {
    let rss = residual_sums(task, &model.w_hat)?;
    PosteriorWeights::from_residuals(&rss, &model.s2_hat, &model.p_hat, task.t())
}

pub fn predict_map<T: Scalar>(task: &TaskBatch<T>, model: &FittedModel<T>) -> Result<(usize, Vec<T>)> {
    let i = posterior_log_weights(task, model)?.argmax();
    Ok((i, model.w_hat.column(i)))
}

pub fn predict_bayes<T: Scalar>(task: &TaskBatch<T>, model: &FittedModel<T>) -> Result<Vec<T>> {
    let post = posterior_log_weights(task, model)?;
    Ok(mix_columns(model, &post.normalized))
}

pub(crate) fn mix_columns<T: Scalar>(model: &FittedModel<T>, weights: &[T]) -> Vec<T> {
    model.w_hat.matvec(weights).expect("one weight per component")
}

/// `xᵀ beta`.
pub fn predict_y<T: Scalar>(x: &[T], beta: &[T]) -> Result<T> {
    if x.len() != beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "covariate of length {} vs regression vector of length {}",
            x.len(),
            beta.len()
        )));
    }
    Ok(dot(x, beta))
}
