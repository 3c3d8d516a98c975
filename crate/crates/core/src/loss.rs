//! Leaf distributions and the per-leaf losses a stump is scored with.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::linalg::dot;
use crate::{Error, Result};

/// Unnormalized log-probabilities over `k` classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LeafParams {
    pub theta: Vec<f64>,
}

impl LeafParams {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta }
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            theta: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax_prob(&self.theta)
    }
}

/// An oblique stump: the test `w·x >= 0` picks `theta1`, otherwise `theta0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StumpParams {
    pub w: Vec<f64>,
    pub theta0: LeafParams,
    pub theta1: LeafParams,
}

impl StumpParams {
    /// True when `x` is routed to the right leaf (`theta1`).
    #[inline]
    pub fn goes_right(&self, x: &[f64]) -> bool {
        dot(&self.w, x) >= 0.0
    }

    pub fn leaf_for(&self, x: &[f64]) -> &LeafParams {
        if self.goes_right(x) {
            &self.theta1
        } else {
            &self.theta0
        }
    }
}

pub fn log_sum_exp(theta: &[f64]) -> f64 {
    let m = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + theta.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

pub fn softmax_prob(theta: &[f64]) -> Vec<f64> {
    let m = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = theta.iter().map(|t| (t - m).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

fn check_label(y: usize, k: usize) -> Result<()> {
    if y >= k {
        return Err(Error::LabelOutOfRange { label: y, k });
    }
    Ok(())
}

/// `-theta[y] + log sum exp(theta)`.
pub fn log_loss(theta: &[f64], y: usize) -> Result<f64> {
    check_label(y, theta.len())?;
    Ok(log_sum_exp(theta) - theta[y])
}

/// `softmax(theta) - onehot(y)`.
pub fn log_loss_grad(theta: &[f64], y: usize) -> Result<Vec<f64>> {
    check_label(y, theta.len())?;
    let mut g = softmax_prob(theta);
    g[y] -= 1.0;
    Ok(g)
}

/// `||theta - target||^2`.
pub fn squared_loss(theta: &[f64], target: &[f64]) -> Result<f64> {
    if theta.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: target.len(),
        });
    }
    Ok(theta.iter().zip(target).map(|(t, y)| (t - y) * (t - y)).sum())
}

pub fn squared_loss_grad(theta: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: target.len(),
        });
    }
    Ok(theta.iter().zip(target).map(|(t, y)| 2.0 * (t - y)).collect())
}

/// The convex per-leaf loss used inside stump objectives.
///
/// For classification the squared loss compares `theta` with the one-hot
/// encoding of the label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LeafLoss {
    #[default]
    Log,
    Squared,
}

impl LeafLoss {
    pub fn value(self, theta: &[f64], y: usize) -> f64 {
        match self {
            LeafLoss::Log => log_sum_exp(theta) - theta[y],
            LeafLoss::Squared => theta
                .iter()
                .enumerate()
                .map(|(c, t)| {
                    let d = t - if c == y { 1.0 } else { 0.0 };
                    d * d
                })
                .sum(),
        }
    }

    /// Loss of `theta` against every class, so hot loops can look it up.
    pub fn values_by_class(self, theta: &[f64]) -> Vec<f64> {
        match self {
            LeafLoss::Log => {
                let lse = log_sum_exp(theta);
                theta.iter().map(|t| lse - t).collect()
            }
            LeafLoss::Squared => {
                let base: f64 = theta.iter().map(|t| t * t).sum();
                theta.iter().map(|t| base - t * t + (t - 1.0) * (t - 1.0)).collect()
            }
        }
    }

    /// Sum of `d loss(theta, c) / d theta` weighted by `counts[c]`, added to `out`.
    pub fn accumulate_grad(self, theta: &[f64], counts: &[f64], scale: f64, out: &mut [f64]) {
        let total: f64 = counts.iter().sum();
        if total == 0.0 {
            return;
        }
        match self {
            LeafLoss::Log => {
                let p = softmax_prob(theta);
                for c in 0..theta.len() {
                    out[c] += scale * (total * p[c] - counts[c]);
                }
            }
            LeafLoss::Squared => {
                for c in 0..theta.len() {
                    out[c] += scale * 2.0 * (total * theta[c] - counts[c]);
                }
            }
        }
    }

    /// Closed-form leaf minimizing the summed loss over a leaf with the given
    /// class counts, with additive smoothing.
    pub fn optimal_leaf(self, counts: &[usize], smoothing: f64) -> Result<LeafParams> {
        match self {
            LeafLoss::Log => optimal_leaf_logloss(counts, smoothing),
            LeafLoss::Squared => {
                let k = counts.len() as f64;
                let n: usize = counts.iter().sum();
                let denom = n as f64 + k * smoothing;
                if denom <= 0.0 {
                    return Err(Error::EmptyDataset);
                }
                Ok(LeafParams::new(
                    counts.iter().map(|&c| (c as f64 + smoothing) / denom).collect(),
                ))
            }
        }
    }
}

/// Empirical class log-probabilities with additive smoothing `eps`:
/// `theta[c] = ln((counts[c] + eps) / (n + k eps))`.
///
/// With `eps = 0` classes absent from the leaf get `-inf`; these leaves are
/// only meant for exact-loss comparisons, never for stored trees.
pub fn optimal_leaf_logloss(counts: &[usize], smoothing: f64) -> Result<LeafParams> {
    if !(smoothing >= 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing must be >= 0, got {smoothing}")));
    }
    let n: usize = counts.iter().sum();
    if n == 0 && smoothing == 0.0 {
        return Err(Error::EmptyDataset);
    }
    let denom = n as f64 + counts.len() as f64 * smoothing;
    Ok(LeafParams::new(
        counts
            .iter()
            .map(|&c| ((c as f64 + smoothing) / denom).ln())
            .collect(),
    ))
}

/// Summed leaf loss of the stump over `idx`, with `w·x = 0` routed right.
pub fn stump_empirical_loss(s: &StumpParams, d: &Dataset, idx: &[usize], loss: LeafLoss) -> f64 {
    let by0 = loss.values_by_class(&s.theta0.theta);
    let by1 = loss.values_by_class(&s.theta1.theta);
    idx.iter()
        .map(|&i| {
            let y = d.label(i);
            if s.goes_right(d.row(i)) {
                by1[y]
            } else {
                by0[y]
            }
        })
        .sum()
}

/// Natural-log entropy of a count vector, with `0 ln 0 = 0`.
pub fn entropy(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `H(parent) - n_L/n H(left) - n_R/n H(right)` from per-class counts.
pub fn information_gain(left: &[usize], right: &[usize]) -> f64 {
    let parent: Vec<usize> = left.iter().zip(right).map(|(a, b)| a + b).collect();
    let n_l: usize = left.iter().sum();
    let n_r: usize = right.iter().sum();
    let n = (n_l + n_r) as f64;
    if n == 0.0 {
        return 0.0;
    }
    entropy(&parent) - (n_l as f64 / n) * entropy(left) - (n_r as f64 / n) * entropy(right)
}

pub fn class_counts(labels: &[usize], k: usize) -> Vec<usize> {
    let mut c = vec![0; k];
    for &y in labels {
        c[y] += 1;
    }
    c
}
