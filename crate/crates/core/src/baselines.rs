//! Baseline split finders: exhaustive axis-aligned thresholds (the random
//! forest building block, also used to initialize the oblique trainers) and an
//! OC1-style coordinate descent over oblique weights.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::linalg::dot;
use crate::loss::{entropy, LeafLoss, StumpParams};
use crate::{Error, Result};

/// Univariate test `x[feature] >= threshold` (true goes right).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSplit {
    /// 0-based raw feature index.
    pub feature: usize,
    pub threshold: f64,
}

/// Information gain from a left count vector and the parent totals.
fn gain_from_left(left: &[usize], total: &[usize], right: &mut [usize], parent_h: f64) -> f64 {
    let mut n_l = 0;
    let mut n_r = 0;
    for c in 0..total.len() {
        right[c] = total[c] - left[c];
        n_l += left[c];
        n_r += right[c];
    }
    let n = (n_l + n_r) as f64;
    parent_h - (n_l as f64 / n) * entropy(left) - (n_r as f64 / n) * entropy(right)
}

fn node_is_splittable(d: &Dataset, idx: &[usize]) -> Result<Vec<usize>> {
    if idx.len() < 2 {
        return Err(Error::NoValidSplit);
    }
    let counts = d.class_counts(idx);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::NoValidSplit);
    }
    Ok(counts)
}

/// Gains closer than this are treated as ties, so the documented tie rule is
/// not at the mercy of summation order.
const GAIN_TIE_TOL: f64 = 1e-12;

/// Midpoint between two distinct sorted values that still separates them.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m <= lo {
        hi
    } else {
        m
    }
}

/// Best information-gain threshold over `q` randomly chosen features.
///
/// Features are visited in a random order; features that are constant on the
/// node are skipped without counting towards `q`, so `q` informative features
/// are examined whenever that many exist. Ties (gains within 1e-12) resolve
/// to the lower feature index, then the lower threshold.
pub fn best_axis_aligned_split<R: Rng + ?Sized>(
    d: &Dataset,
    idx: &[usize],
    q: usize,
    rng: &mut R,
) -> Result<(AxisSplit, f64)> {
    let total = node_is_splittable(d, idx)?;
    if q == 0 {
        return Err(Error::InvalidArgument("q must be >= 1".into()));
    }
    let parent_h = entropy(&total);
    let k = d.k();
    let mut features: Vec<usize> = (0..d.p_raw()).collect();
    features.shuffle(rng);

    let mut best: Option<(AxisSplit, f64)> = None;
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
    let mut left = vec![0usize; k];
    let mut right = vec![0usize; k];
    let mut examined = 0;
    for &f in &features {
        if examined == q {
            break;
        }
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (d.row(i)[f], d.label(i))));
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[pairs.len() - 1].0 {
            continue;
        }
        examined += 1;
        left.iter_mut().for_each(|c| *c = 0);
        for j in 0..pairs.len() - 1 {
            left[pairs[j].1] += 1;
            if pairs[j].0 == pairs[j + 1].0 {
                continue;
            }
            let gain = gain_from_left(&left, &total, &mut right, parent_h);
            let t = midpoint(pairs[j].0, pairs[j + 1].0);
            let better = match &best {
                None => true,
                Some((b, g)) => {
                    gain > *g + GAIN_TIE_TOL || ((gain - *g).abs() <= GAIN_TIE_TOL && f < b.feature)
                }
            };
            if better {
                best = Some((AxisSplit { feature: f, threshold: t }, gain));
            }
        }
    }
    best.ok_or(Error::NoValidSplit)
}

fn partition_counts(d: &Dataset, idx: &[usize], w: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut left = vec![0; d.k()];
    let mut right = vec![0; d.k()];
    for &i in idx {
        if dot(w, d.row(i)) >= 0.0 {
            right[d.label(i)] += 1;
        } else {
            left[d.label(i)] += 1;
        }
    }
    (left, right)
}

/// Information gain of the partition induced by `w` over `idx`.
pub fn oblique_gain(d: &Dataset, idx: &[usize], w: &[f64]) -> f64 {
    let (left, right) = partition_counts(d, idx, w);
    crate::loss::information_gain(&left, &right)
}

/// Oblique stump equivalent to an axis split: `w = e_f` with the threshold in
/// the homogeneous slot, so `w·x = x_f - t`. Leaves are fit on each side.
pub fn axis_split_to_stump(
    split: AxisSplit,
    d: &Dataset,
    idx: &[usize],
    loss: LeafLoss,
    smoothing: f64,
) -> Result<StumpParams> {
    if split.feature >= d.p_raw() {
        return Err(Error::InvalidArgument(format!(
            "feature {} out of range for {} raw features",
            split.feature,
            d.p_raw()
        )));
    }
    let mut w = vec![0.0; d.p()];
    w[split.feature] = 1.0;
    w[d.p() - 1] = split.threshold;
    fit_leaves(w, d, idx, loss, smoothing)
}

fn fit_leaves(w: Vec<f64>, d: &Dataset, idx: &[usize], loss: LeafLoss, smoothing: f64) -> Result<StumpParams> {
    let (left, right) = partition_counts(d, idx, &w);
    Ok(StumpParams {
        w,
        theta0: loss.optimal_leaf(&left, smoothing)?,
        theta1: loss.optimal_leaf(&right, smoothing)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oc1Config {
    pub max_passes: usize,
    pub n_perturbations: usize,
    pub stagnation_eps: f64,
}

impl Default for Oc1Config {
    fn default() -> Self {
        Self {
            max_passes: 10,
            n_perturbations: 5,
            stagnation_eps: 1e-9,
        }
    }
}

/// Best value for coordinate `m` with the others fixed.
///
/// `proj[z] = w·x_z` for the current `w`. Datum `z` sits on the boundary when
/// `w_m = u_z = -(proj[z] - w_m x_zm) / x_zm`; sorting these critical values and
/// sweeping them enumerates every partition reachable by moving `w_m`. Returns
/// the candidate value and its gain, if any candidate beats `current_gain`.
fn best_coordinate_value(
    d: &Dataset,
    idx: &[usize],
    w: &[f64],
    proj: &[f64],
    m: usize,
    total: &[usize],
    parent_h: f64,
    current_gain: f64,
) -> Option<(f64, f64)> {
    let k = d.k();
    let wm = w[m];
    // (critical value, label, moves_right_when_increasing)
    let mut events: Vec<(f64, usize, bool)> = Vec::with_capacity(idx.len());
    let mut left = vec![0usize; k];
    for (pos, &i) in idx.iter().enumerate() {
        let xm = d.row(i)[m];
        let y = d.label(i);
        if xm == 0.0 {
            if proj[pos] < 0.0 {
                left[y] += 1;
            }
            continue;
        }
        let rest = proj[pos] - wm * xm;
        let u = -rest / xm;
        if !u.is_finite() {
            continue;
        }
        // At w_m -> -inf, x_m > 0 data sit left and x_m < 0 data sit right.
        if xm > 0.0 {
            left[y] += 1;
        }
        events.push((u, y, xm > 0.0));
    }
    if events.is_empty() {
        return None;
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut right = vec![0usize; k];
    let mut best: Option<(f64, f64)> = None;
    let mut consider = |value: f64, left: &[usize], right: &mut [usize]| {
        let g = gain_from_left(left, total, right, parent_h);
        if g > current_gain && best.map_or(true, |(_, bg)| g > bg) {
            best = Some((value, g));
        }
    };
    let first = events[0].0;
    consider(first - 1.0 - first.abs(), &left, &mut right);
    let mut j = 0;
    while j < events.len() {
        let u = events[j].0;
        while j < events.len() && events[j].0 == u {
            let (_, y, moves_right) = events[j];
            if moves_right {
                left[y] -= 1;
            } else {
                left[y] += 1;
            }
            j += 1;
        }
        let value = if j < events.len() {
            midpoint(u, events[j].0)
        } else {
            u + 1.0 + u.abs()
        };
        consider(value, &left, &mut right);
    }
    best
}

/// OC1-style coordinate descent on information gain starting from `init`.
///
/// Passes over all coordinates (the homogeneous offset included) repeat until
/// a pass improves the gain by less than `stagnation_eps`. On stagnation up to
/// `n_perturbations` random single-coordinate perturbations are tried; an
/// improving one restarts the passes. Every accepted move is re-scored on the
/// actual partition, so the returned gain is never below the initial one.
pub fn oc1_optimize<R: Rng + ?Sized>(
    d: &Dataset,
    idx: &[usize],
    init: &StumpParams,
    cfg: &Oc1Config,
    loss: LeafLoss,
    smoothing: f64,
    rng: &mut R,
) -> Result<StumpParams> {
    let total = node_is_splittable(d, idx)?;
    if init.w.len() != d.p() {
        return Err(Error::DimensionMismatch {
            expected: d.p(),
            got: init.w.len(),
        });
    }
    let parent_h = entropy(&total);
    let mut w = init.w.clone();
    let mut gain = oblique_gain(d, idx, &w);
    let mut proj: Vec<f64> = idx.iter().map(|&i| dot(&w, d.row(i))).collect();

    let mut passes = 0;
    while passes < cfg.max_passes {
        passes += 1;
        let pass_start = gain;
        for m in 0..d.p() {
            let Some((value, _)) = best_coordinate_value(d, idx, &w, &proj, m, &total, parent_h, gain) else {
                continue;
            };
            let mut cand = w.clone();
            cand[m] = value;
            let g = oblique_gain(d, idx, &cand);
            if g > gain {
                let delta = value - w[m];
                for (pr, &i) in proj.iter_mut().zip(idx) {
                    *pr += delta * d.row(i)[m];
                }
                w = cand;
                gain = g;
            }
        }
        if gain - pass_start >= cfg.stagnation_eps {
            continue;
        }
        let mut escaped = false;
        for _ in 0..cfg.n_perturbations {
            let m = rng.gen_range(0..d.p());
            let scale = w[m].abs().max(1.0);
            let mut cand = w.clone();
            cand[m] += rng.gen_range(-1.0..1.0) * scale;
            let g = oblique_gain(d, idx, &cand);
            if g > gain + cfg.stagnation_eps {
                w = cand;
                gain = g;
                proj = idx.iter().map(|&i| dot(&w, d.row(i))).collect();
                escaped = true;
                break;
            }
        }
        if !escaped {
            break;
        }
    }
    fit_leaves(w, d, idx, loss, smoothing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(xs: &[f64], ys: &[usize], k: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        Dataset::from_rows(&rows, ys.to_vec(), k).unwrap()
    }

    #[test]
    fn four_point_axis_split() {
        let d = line(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (split, gain) = best_axis_aligned_split(&d, &d.indices(), 1, &mut rng).unwrap();
        assert_eq!(split, AxisSplit { feature: 0, threshold: 2.5 });
        assert!((gain - 2f64.ln()).abs() < 1e-12);

        let s = axis_split_to_stump(split, &d, &d.indices(), LeafLoss::Log, 0.0).unwrap();
        assert_eq!(crate::loss::stump_empirical_loss(&s, &d, &d.indices(), LeafLoss::Log), 0.0);
        assert_eq!(s.w, vec![1.0, 2.5]);
    }

    #[test]
    fn no_split_on_pure_or_constant_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pure = line(&[1.0, 2.0, 3.0], &[1, 1, 1], 2);
        assert!(matches!(
            best_axis_aligned_split(&pure, &pure.indices(), 1, &mut rng),
            Err(Error::NoValidSplit)
        ));
        let flat = Dataset::from_rows(&[vec![1.0, 5.0], vec![1.0, 5.0]], vec![0, 1], 2).unwrap();
        assert!(matches!(
            best_axis_aligned_split(&flat, &flat.indices(), 2, &mut rng),
            Err(Error::NoValidSplit)
        ));
        let single = line(&[1.0], &[0], 2);
        assert!(best_axis_aligned_split(&single, &[0], 1, &mut rng).is_err());
    }

    #[test]
    fn constant_features_do_not_use_up_q() {
        // Feature 0 is constant; with q = 1 the informative feature 1 is still found.
        let rows = vec![vec![3.0, 0.0], vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 3.0]];
        let d = Dataset::from_rows(&rows, vec![0, 0, 1, 1], 2).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (split, _) = best_axis_aligned_split(&d, &d.indices(), 1, &mut rng).unwrap();
            assert_eq!(split.feature, 1);
        }
    }

    #[test]
    fn boundary_value_routes_right() {
        let d = line(&[1.0, 2.0], &[0, 1], 2);
        let s = axis_split_to_stump(AxisSplit { feature: 0, threshold: 2.0 }, &d, &d.indices(), LeafLoss::Log, 1.0)
            .unwrap();
        assert!(s.goes_right(d.row(1)));
        assert!(!s.goes_right(d.row(0)));
        assert_eq!(crate::linalg::sq_norm(&s.w), 1.0 + 4.0);
    }

    #[test]
    fn ties_prefer_lower_feature() {
        // Two identical informative features.
        let rows = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let d = Dataset::from_rows(&rows, vec![0, 1], 2).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (split, _) = best_axis_aligned_split(&d, &d.indices(), 2, &mut rng).unwrap();
            assert_eq!(split.feature, 0);
            assert_eq!(split.threshold, 0.5);
        }
    }

    #[test]
    fn oc1_fixed_point_on_axis_separable_data() {
        let d = line(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1], 2);
        let idx = d.indices();
        let init = axis_split_to_stump(AxisSplit { feature: 0, threshold: 2.5 }, &d, &idx, LeafLoss::Log, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = oc1_optimize(&d, &idx, &init, &Oc1Config::default(), LeafLoss::Log, 1.0, &mut rng).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn oc1_skips_all_zero_coordinates() {
        // Feature 1 is identically zero: no critical values exist for it.
        let rows = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
        let d = Dataset::from_rows(&rows, vec![0, 1, 0, 1], 2).unwrap();
        let idx = d.indices();
        let w = vec![1.0, 0.0, 0.5];
        let proj: Vec<f64> = idx.iter().map(|&i| dot(&w, d.row(i))).collect();
        let total = d.class_counts(&idx);
        assert!(best_coordinate_value(&d, &idx, &w, &proj, 1, &total, entropy(&total), 0.0).is_none());
    }

    #[test]
    fn oc1_finds_oblique_separator() {
        // Labels split by x1 + x2 >= 0; the axis initialization cannot separate
        // them, two coordinate moves can.
        let pts = [
            (-2.0, 1.0, 0),
            (-1.0, 0.5, 0),
            (0.5, -1.0, 0),
            (1.0, -2.0, 0),
            (-1.0, 2.0, 1),
            (-0.5, 1.0, 1),
            (1.0, -0.5, 1),
            (2.0, -1.0, 1),
        ];
        let rows: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
        let y: Vec<usize> = pts.iter().map(|p| p.2).collect();
        let d = Dataset::from_rows(&rows, y, 2).unwrap();
        let idx = d.indices();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (split, axis_gain) = best_axis_aligned_split(&d, &idx, 2, &mut rng).unwrap();
        assert!(axis_gain < 2f64.ln() - 1e-6);
        let init = axis_split_to_stump(split, &d, &idx, LeafLoss::Log, 1.0).unwrap();
        let out = oc1_optimize(&d, &idx, &init, &Oc1Config::default(), LeafLoss::Log, 1.0, &mut rng).unwrap();
        let gain = oblique_gain(&d, &idx, &out.w);
        assert!((gain - 2f64.ln()).abs() < 1e-12, "gain {gain}");
    }

    #[test]
    fn oc1_never_loses_gain() {
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 25;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let d = Dataset::from_rows(&rows, y, 3).unwrap();
            let idx = d.indices();
            let Ok((split, g0)) = best_axis_aligned_split(&d, &idx, 1, &mut rng) else {
                continue;
            };
            let init = axis_split_to_stump(split, &d, &idx, LeafLoss::Log, 1.0).unwrap();
            let out = oc1_optimize(&d, &idx, &init, &Oc1Config::default(), LeafLoss::Log, 1.0, &mut rng).unwrap();
            assert!(oblique_gain(&d, &idx, &out.w) >= g0);
        }
    }
}
