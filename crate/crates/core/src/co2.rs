//! Continuous optimization of oblique stumps.
//!
//! The empirical stump loss is piecewise constant in `w`. For one example with
//! `a = w·x` it is bounded above by
//!
//! ```text
//! max(-a + l(theta0, y), a + l(theta1, y)) - |a|
//! ```
//!
//! which is a difference of convex functions of `(w, theta0, theta1)`. Summed
//! over the data and minimized under `||w||^2 <= nu`, this is the surrogate
//! objective. Each outer round of the convex-concave procedure replaces `-|a|`
//! by its tangent `-sign(w_anchor·x) a` at the current iterate and runs a few
//! epochs of projected mini-batch subgradient descent with momentum on the
//! resulting convex problem.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::linalg::{dot, sq_norm};
use crate::loss::{stump_empirical_loss, LeafLoss, StumpParams};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Co2Hyper {
    /// Bound on `||w||^2`.
    pub nu: f64,
    /// Initial learning rate.
    pub eta: f64,
    /// Epochs per convex-concave round.
    pub tau: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub max_cccp_rounds: usize,
    /// Minimum relative surrogate decrease that counts as progress.
    pub rel_tol: f64,
    /// Factor applied to the learning rate after `lr_patience` stalled rounds.
    pub lr_decay: f64,
    pub lr_patience: usize,
    /// Optimization stops once the learning rate falls below `eta * min_lr_factor`.
    pub min_lr_factor: f64,
    /// Refit both leaves in closed form on the final partition.
    pub refit_leaves: bool,
}

impl Default for Co2Hyper {
    fn default() -> Self {
        Self {
            nu: 10.0,
            eta: 0.01,
            tau: 5,
            batch_size: 100,
            momentum: 0.9,
            max_cccp_rounds: 20,
            rel_tol: 1e-4,
            lr_decay: 0.5,
            lr_patience: 2,
            min_lr_factor: 1.0 / 128.0,
            refit_leaves: true,
        }
    }
}

impl Co2Hyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.to_string()));
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return bad("nu must be positive");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if self.tau == 0 || self.batch_size == 0 || self.max_cccp_rounds == 0 || self.lr_patience == 0 {
            return bad("tau, batch_size, max_cccp_rounds and lr_patience must be >= 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad("lr_decay must be in (0, 1)");
        }
        if !(self.rel_tol >= 0.0) || !(self.min_lr_factor > 0.0 && self.min_lr_factor <= 1.0) {
            return bad("rel_tol must be >= 0 and min_lr_factor in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub surrogate: f64,
    pub empirical: f64,
    pub norm: f64,
    pub eta: f64,
}

/// Per-round history of one optimization; row 0 is the initialization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CccpTrace {
    pub rows: Vec<TraceRow>,
}

impl CccpTrace {
    pub fn surrogates(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.surrogate).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(out, "round,surrogate,empirical,norm,eta")?;
        }
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.round, r.surrogate, r.empirical, r.norm, r.eta)?;
        }
        Ok(())
    }
}

#[inline]
fn sign_pos(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn bound_from_parts(a: f64, l0: f64, l1: f64) -> f64 {
    (-a + l0).max(a + l1) - a.abs()
}

/// Upper bound on the stump loss of one example.
pub fn pointwise_bound(s: &StumpParams, x: &[f64], y: usize, loss: LeafLoss) -> f64 {
    let a = dot(&s.w, x);
    bound_from_parts(a, loss.value(&s.theta0.theta, y), loss.value(&s.theta1.theta, y))
}

/// Sum of [`pointwise_bound`] over `idx`; never below the empirical loss.
pub fn surrogate_loss(s: &StumpParams, d: &Dataset, idx: &[usize], loss: LeafLoss) -> f64 {
    let by0 = loss.values_by_class(&s.theta0.theta);
    let by1 = loss.values_by_class(&s.theta1.theta);
    idx.iter()
        .map(|&i| {
            let y = d.label(i);
            bound_from_parts(dot(&s.w, d.row(i)), by0[y], by1[y])
        })
        .sum()
}

/// Rescales `w` onto the ball `||w||^2 <= nu` when outside it. Returns
/// whether a rescale happened.
pub fn project_ball(w: &mut [f64], nu: f64) -> bool {
    let sq = sq_norm(w);
    if sq <= nu {
        return false;
    }
    let scale = (nu / sq).sqrt();
    w.iter_mut().for_each(|v| *v *= scale);
    true
}

/// Objective of the convex subproblem obtained by linearizing `-|w·x|` at
/// `w_anchor`: `sum max(-a + l0, a + l1) - sign(w_anchor·x) a`.
pub fn cccp_subproblem_objective(
    s: &StumpParams,
    d: &Dataset,
    idx: &[usize],
    w_anchor: &[f64],
    loss: LeafLoss,
) -> f64 {
    let signs: Vec<f64> = idx.iter().map(|&i| sign_pos(dot(w_anchor, d.row(i)))).collect();
    subproblem_objective(s, d, idx, &signs, loss)
}

fn subproblem_objective(s: &StumpParams, d: &Dataset, idx: &[usize], signs: &[f64], loss: LeafLoss) -> f64 {
    let by0 = loss.values_by_class(&s.theta0.theta);
    let by1 = loss.values_by_class(&s.theta1.theta);
    idx.iter()
        .zip(signs)
        .map(|(&i, &sg)| {
            let y = d.label(i);
            let a = dot(&s.w, d.row(i));
            (-a + by0[y]).max(a + by1[y]) - sg * a
        })
        .sum()
}

/// Batch-averaged subgradient of the convex subproblem.
#[derive(Clone, Debug, PartialEq)]
pub struct StumpGradient {
    pub w: Vec<f64>,
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
}

impl StumpGradient {
    fn zeros(p: usize, k: usize) -> Self {
        Self {
            w: vec![0.0; p],
            theta0: vec![0.0; k],
            theta1: vec![0.0; k],
        }
    }

    fn clear(&mut self) {
        self.w.iter_mut().for_each(|v| *v = 0.0);
        self.theta0.iter_mut().for_each(|v| *v = 0.0);
        self.theta1.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Scratch space for one batch: per-class arm counts.
struct BatchScratch {
    counts0: Vec<f64>,
    counts1: Vec<f64>,
}

/// Accumulates the averaged subgradient of `rows` (row index, anchor sign)
/// into `g`. Ties between the two arms take the `theta0` arm.
fn accumulate_subgradient<I>(
    s: &StumpParams,
    d: &Dataset,
    rows: I,
    loss: LeafLoss,
    g: &mut StumpGradient,
    scratch: &mut BatchScratch,
) where
    I: Iterator<Item = (usize, f64)>,
{
    let by0 = loss.values_by_class(&s.theta0.theta);
    let by1 = loss.values_by_class(&s.theta1.theta);
    scratch.counts0.iter_mut().for_each(|v| *v = 0.0);
    scratch.counts1.iter_mut().for_each(|v| *v = 0.0);
    let mut m = 0usize;
    for (i, sg) in rows {
        m += 1;
        let x = d.row(i);
        let y = d.label(i);
        let a = dot(&s.w, x);
        let coef = if -a + by0[y] >= a + by1[y] {
            scratch.counts0[y] += 1.0;
            -(1.0 + sg)
        } else {
            scratch.counts1[y] += 1.0;
            1.0 - sg
        };
        if coef != 0.0 {
            for (gw, xv) in g.w.iter_mut().zip(x) {
                *gw += coef * xv;
            }
        }
    }
    if m == 0 {
        return;
    }
    let inv = 1.0 / m as f64;
    g.w.iter_mut().for_each(|v| *v *= inv);
    loss.accumulate_grad(&s.theta0.theta, &scratch.counts0, inv, &mut g.theta0);
    loss.accumulate_grad(&s.theta1.theta, &scratch.counts1, inv, &mut g.theta1);
}

/// Subgradient of the linearized subproblem averaged over `batch`.
pub fn cccp_subgradient(
    s: &StumpParams,
    d: &Dataset,
    batch: &[usize],
    w_anchor: &[f64],
    loss: LeafLoss,
) -> Result<StumpGradient> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = s.theta0.k();
    let mut g = StumpGradient::zeros(s.w.len(), k);
    let mut scratch = BatchScratch {
        counts0: vec![0.0; k],
        counts1: vec![0.0; k],
    };
    let rows = batch.iter().map(|&i| (i, sign_pos(dot(w_anchor, d.row(i)))));
    accumulate_subgradient(s, d, rows, loss, &mut g, &mut scratch);
    Ok(g)
}

fn check_stump(s: &StumpParams, d: &Dataset) -> Result<()> {
    if s.w.len() != d.p() {
        return Err(Error::DimensionMismatch {
            expected: d.p(),
            got: s.w.len(),
        });
    }
    for theta in [&s.theta0, &s.theta1] {
        if theta.k() != d.k() {
            return Err(Error::DimensionMismatch {
                expected: d.k(),
                got: theta.k(),
            });
        }
    }
    Ok(())
}

fn trace_row(s: &StumpParams, d: &Dataset, idx: &[usize], loss: LeafLoss, round: usize, eta: f64) -> TraceRow {
    TraceRow {
        round,
        surrogate: surrogate_loss(s, d, idx, loss),
        empirical: stump_empirical_loss(s, d, idx, loss),
        norm: sq_norm(&s.w).sqrt(),
        eta,
    }
}

/// Minimizes the surrogate objective over `idx` starting from `init`.
///
/// Each round anchors the linearization at the current `w`, runs `tau`
/// shuffled mini-batch epochs of heavy-ball subgradient descent with a
/// projection after every step, and keeps the iterate with the lowest
/// subproblem objective (evaluated on all of `idx` after each epoch). Since
/// the subproblem majorizes the surrogate and agrees with it at the anchor,
/// the surrogate never increases from one round to the next.
///
/// Rounds whose relative surrogate decrease is below `rel_tol` count as
/// stalled; after `lr_patience` stalled rounds the learning rate is multiplied
/// by `lr_decay`. Optimization stops after `max_cccp_rounds` or once the
/// learning rate drops below `eta * min_lr_factor`.
pub fn cccp_optimize<R: Rng + ?Sized>(
    d: &Dataset,
    idx: &[usize],
    init: &StumpParams,
    h: &Co2Hyper,
    loss: LeafLoss,
    rng: &mut R,
) -> Result<(StumpParams, CccpTrace)> {
    h.validate()?;
    check_stump(init, d)?;
    if idx.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (p, k, n) = (d.p(), d.k(), idx.len());

    let mut cur = init.clone();
    project_ball(&mut cur.w, h.nu);
    let mut eta = h.eta;
    let eta_floor = h.eta * h.min_lr_factor;

    let mut trace = CccpTrace::default();
    let first = trace_row(&cur, d, idx, loss, 0, eta);
    if !first.surrogate.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut best_surrogate = first.surrogate;
    let mut best = cur.clone();
    trace.rows.push(first);

    let mut signs = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut g = StumpGradient::zeros(p, k);
    let mut vel = StumpGradient::zeros(p, k);
    let mut scratch = BatchScratch {
        counts0: vec![0.0; k],
        counts1: vec![0.0; k],
    };
    let mut stalled = 0;

    for round in 1..=h.max_cccp_rounds {
        for (sg, &i) in signs.iter_mut().zip(idx) {
            *sg = sign_pos(dot(&cur.w, d.row(i)));
        }
        vel.clear();
        let mut round_best = cur.clone();
        let mut round_best_obj = subproblem_objective(&cur, d, idx, &signs, loss);

        for _ in 0..h.tau {
            order.shuffle(rng);
            for chunk in order.chunks(h.batch_size) {
                g.clear();
                let rows = chunk.iter().map(|&pos| (idx[pos], signs[pos]));
                accumulate_subgradient(&cur, d, rows, loss, &mut g, &mut scratch);
                heavy_ball(&mut cur.w, &mut vel.w, &g.w, eta, h.momentum);
                heavy_ball(&mut cur.theta0.theta, &mut vel.theta0, &g.theta0, eta, h.momentum);
                heavy_ball(&mut cur.theta1.theta, &mut vel.theta1, &g.theta1, eta, h.momentum);
                project_ball(&mut cur.w, h.nu);
            }
            let obj = subproblem_objective(&cur, d, idx, &signs, loss);
            if !obj.is_finite() {
                return Err(Error::NonFinite);
            }
            if obj < round_best_obj {
                round_best_obj = obj;
                round_best.clone_from(&cur);
            }
        }
        cur = round_best;

        let row = trace_row(&cur, d, idx, loss, round, eta);
        let gain = (best_surrogate - row.surrogate) / best_surrogate.abs().max(f64::MIN_POSITIVE);
        if row.surrogate < best_surrogate {
            best_surrogate = row.surrogate;
            best.clone_from(&cur);
        }
        trace.rows.push(row);

        if gain >= h.rel_tol {
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= h.lr_patience {
                stalled = 0;
                eta *= h.lr_decay;
                if eta < eta_floor {
                    break;
                }
            }
        }
    }
    Ok((best, trace))
}

#[inline]
fn heavy_ball(param: &mut [f64], vel: &mut [f64], grad: &[f64], eta: f64, momentum: f64) {
    for ((x, v), g) in param.iter_mut().zip(vel.iter_mut()).zip(grad) {
        *v = momentum * *v - eta * g;
        *x += *v;
    }
}

/// Refits both leaves in closed form on the partition induced by `s.w`.
pub fn refit_leaves(s: &mut StumpParams, d: &Dataset, idx: &[usize], loss: LeafLoss, smoothing: f64) -> Result<()> {
    let mut left = vec![0usize; d.k()];
    let mut right = vec![0usize; d.k()];
    for &i in idx {
        if s.goes_right(d.row(i)) {
            right[d.label(i)] += 1;
        } else {
            left[d.label(i)] += 1;
        }
    }
    s.theta0 = loss.optimal_leaf(&left, smoothing)?;
    s.theta1 = loss.optimal_leaf(&right, smoothing)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Co2Stump {
    pub params: StumpParams,
    pub trace: CccpTrace,
    /// True when the optimized stump lost to its initialization (or diverged)
    /// and the projected initialization was returned instead.
    pub used_fallback: bool,
}

/// Loss of the hard partition induced by `w` when both leaves take their
/// unsmoothed optimal values: `n * H(y | side)` for the log loss (so lower is
/// exactly higher information gain) and the summed Gini impurity for the
/// squared loss. Also reports whether one side is empty.
pub fn partition_loss(w: &[f64], d: &Dataset, idx: &[usize], loss: LeafLoss) -> (f64, bool) {
    let mut sides = [vec![0usize; d.k()], vec![0usize; d.k()]];
    for &i in idx {
        sides[usize::from(dot(w, d.row(i)) >= 0.0)][d.label(i)] += 1;
    }
    let one_sided = sides.iter().any(|c| c.iter().all(|&v| v == 0));
    let total = sides
        .iter()
        .map(|counts| {
            let n: usize = counts.iter().sum();
            if n == 0 {
                return 0.0;
            }
            let n = n as f64;
            match loss {
                LeafLoss::Log => counts
                    .iter()
                    .filter(|&&c| c > 0)
                    .map(|&c| c as f64 * (n.ln() - (c as f64).ln()))
                    .sum::<f64>(),
                LeafLoss::Squared => {
                    n * (1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
                }
            }
        })
        .sum();
    (total, one_sided)
}

/// Full per-node procedure: project the initialization, optimize, optionally
/// refit leaves, and fall back to the initialization if the optimized split
/// is one-sided or its partition is worse.
///
/// Splits are compared through [`partition_loss`] rather than through the
/// smoothed leaves: smoothing penalizes every extra leaf, so a smoothed
/// comparison would favour sending everything to one side.
pub fn train_co2_stump<R: Rng + ?Sized>(
    d: &Dataset,
    idx: &[usize],
    init: &StumpParams,
    h: &Co2Hyper,
    loss: LeafLoss,
    smoothing: f64,
    rng: &mut R,
) -> Result<Co2Stump> {
    let mut start = init.clone();
    project_ball(&mut start.w, h.nu);
    let (start_loss, _) = partition_loss(&start.w, d, idx, loss);
    match cccp_optimize(d, idx, &start, h, loss, rng) {
        Ok((mut params, trace)) => {
            if h.refit_leaves {
                refit_leaves(&mut params, d, idx, loss, smoothing)?;
            }
            let (out_loss, one_sided) = partition_loss(&params.w, d, idx, loss);
            let used_fallback = one_sided || out_loss > start_loss;
            Ok(Co2Stump {
                params: if used_fallback { start } else { params },
                trace,
                used_fallback,
            })
        }
        Err(Error::NonFinite) => Ok(Co2Stump {
            params: start,
            trace: CccpTrace::default(),
            used_fallback: true,
        }),
        Err(e) => Err(e),
    }
}
