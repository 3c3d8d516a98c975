//! Bagged ensembles, probability averaging and hyperparameter validation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    apply_preprocess, bootstrap_sample, densify_augment_to, rebalance_indices, Dataset, LabelMap,
    PreprocessStats, SparseDataset,
};
use crate::linalg::argmax;
use crate::loss::softmax_prob;
use crate::metrics::{error_rate, ConfusionMatrix};
use crate::seeds;
use crate::tree::{grow_tree, GrowConfig, StumpTrainer, Tree};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub preprocess: PreprocessStats,
    /// Multiplies the averaged distribution when classes were rebalanced.
    pub class_weights: Option<Vec<f64>>,
    pub config: GrowConfig,
    pub seed: u64,
    pub labels: LabelMap,
    pub k: usize,
    pub p_raw: usize,
}

/// How each tree's training sample is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sampling {
    /// Uniform with replacement, `n` draws.
    #[default]
    Bootstrap,
    /// `per_class` draws from every class; predictions are reweighted.
    Rebalance { per_class: usize },
}

/// Trains `n_trees` trees in parallel on `threads` workers (0 means all cores).
///
/// Tree `t` uses seed `derive(seed, t)`, so the result is identical for any
/// thread count.
pub fn train_forest(
    d: &Dataset,
    n_trees: usize,
    cfg: &GrowConfig,
    seed: u64,
    threads: usize,
    sampling: Sampling,
) -> Result<Forest> {
    if n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees must be >= 1".into()));
    }
    cfg.validate()?;
    let all = d.indices();
    let class_weights = match sampling {
        Sampling::Bootstrap => None,
        Sampling::Rebalance { per_class } => {
            let mut rng = seeds::stream(seed, seeds::BOOTSTRAP_STREAM);
            Some(rebalance_indices(d, &all, per_class, &mut rng)?.1)
        }
    };
    let grow_one = |t: usize| -> Result<Tree> {
        let tree_seed = seeds::derive(seed, t as u64);
        let mut rng = seeds::stream(tree_seed, seeds::BOOTSTRAP_STREAM);
        let sample = match sampling {
            Sampling::Bootstrap => bootstrap_sample(d.n(), &mut rng)?,
            Sampling::Rebalance { per_class } => rebalance_indices(d, &all, per_class, &mut rng)?.0,
        };
        grow_tree(d, &sample, cfg, tree_seed)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let trees = pool.install(|| {
        (0..n_trees)
            .into_par_iter()
            .map(grow_one)
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(Forest {
        trees,
        preprocess: d.preprocess().clone(),
        class_weights,
        config: cfg.clone(),
        seed,
        labels: d.labels().clone(),
        k: d.k(),
        p_raw: d.p_raw(),
    })
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Densifies and preprocesses a sparse dataset into this forest's input
    /// space. Labels must already use this forest's label map.
    pub fn prepare(&self, d: &SparseDataset) -> Result<Dataset> {
        let dense = densify_augment_to(d, self.p_raw)?;
        apply_preprocess(&dense, &self.preprocess)
    }

    /// Maps a raw feature vector (length `p_raw`) to the augmented input space.
    pub fn prepare_row(&self, x_raw: &[f64]) -> Result<Vec<f64>> {
        if x_raw.len() != self.p_raw {
            return Err(Error::DimensionMismatch {
                expected: self.p_raw,
                got: x_raw.len(),
            });
        }
        let mut row = Vec::with_capacity(self.p_raw + 1);
        row.extend_from_slice(x_raw);
        row.push(crate::dataset::HOMOGENEOUS);
        self.preprocess.apply_row(&mut row)?;
        Ok(row)
    }

    /// Averages the class distributions of the first `m` trees on an
    /// already-prepared row.
    pub fn predict_proba_prefix(&self, x: &[f64], m: usize) -> Result<Vec<f64>> {
        if m == 0 || m > self.trees.len() {
            return Err(Error::InvalidArgument(format!(
                "prefix size {m} outside 1..={}",
                self.trees.len()
            )));
        }
        let mut acc = vec![0.0; self.k];
        for t in &self.trees[..m] {
            add_assign(&mut acc, &softmax_prob(t.leaf_theta(x)?));
        }
        Ok(self.finish(acc, m))
    }

    /// Class distribution for an already-prepared row.
    pub fn predict_proba_prepared(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.predict_proba_prefix(x, self.trees.len())
    }

    fn finish(&self, mut acc: Vec<f64>, m: usize) -> Vec<f64> {
        let m = m as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        if let Some(w) = &self.class_weights {
            acc.iter_mut().zip(w).for_each(|(a, w)| *a *= w);
            let z: f64 = acc.iter().sum();
            if z > 0.0 {
                acc.iter_mut().for_each(|a| *a /= z);
            }
        }
        acc
    }

    /// Class distribution for a raw feature vector.
    pub fn predict_proba(&self, x_raw: &[f64]) -> Result<Vec<f64>> {
        self.predict_proba_prepared(&self.prepare_row(x_raw)?)
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predict(&self, x_raw: &[f64]) -> Result<usize> {
        self.predict_proba(x_raw).map(|p| argmax(&p))
    }

    pub fn predict_prepared(&self, x: &[f64]) -> Result<usize> {
        self.predict_proba_prepared(x).map(|p| argmax(&p))
    }

    fn check_dataset(&self, d: &Dataset) -> Result<()> {
        if d.p_raw() != self.p_raw {
            return Err(Error::DimensionMismatch {
                expected: self.p_raw,
                got: d.p_raw(),
            });
        }
        if d.k() > self.k {
            return Err(Error::LabelOutOfRange {
                label: d.k() - 1,
                k: self.k,
            });
        }
        Ok(())
    }

    /// Confusion matrix over a prepared dataset.
    pub fn confusion(&self, d: &Dataset) -> Result<ConfusionMatrix> {
        self.check_dataset(d)?;
        let mut cm = ConfusionMatrix::new(self.k);
        for i in 0..d.n() {
            cm.add(d.label(i), self.predict_prepared(d.row(i))?)?;
        }
        Ok(cm)
    }

    /// Test error (percent) of every prefix `1..=n_trees` of the ensemble.
    pub fn prefix_error_curve(&self, d: &Dataset) -> Result<Vec<f64>> {
        self.check_dataset(d)?;
        let mut wrong = vec![0u64; self.trees.len()];
        let mut acc = vec![0.0; self.k];
        for i in 0..d.n() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for (m, t) in self.trees.iter().enumerate() {
                add_assign(&mut acc, &softmax_prob(t.leaf_theta(d.row(i))?));
                if argmax(&self.finish(acc.clone(), m + 1)) != d.label(i) {
                    wrong[m] += 1;
                }
            }
        }
        let n = d.n() as f64;
        Ok(wrong.into_iter().map(|w| 100.0 * w as f64 / n).collect())
    }
}

fn add_assign(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

/// Search space for [`grid_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nu_set: Vec<f64>,
    pub eta_set: Vec<f64>,
    /// Candidate `q` values are `round(p_raw ^ e)` for each exponent `e`.
    pub q_exponents: Vec<f64>,
    pub validation_trees: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nu_set: vec![0.1, 1.0, 4.0, 10.0, 43.0, 100.0],
            eta_set: vec![0.03, 0.01, 0.003],
            q_exponents: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            validation_trees: 30,
        }
    }
}

impl GridSpec {
    /// Distinct candidate `q` values for a raw dimension, in increasing order.
    pub fn q_values(&self, p_raw: usize) -> Vec<usize> {
        let mut qs: Vec<usize> = self
            .q_exponents
            .iter()
            .map(|&e| ((p_raw as f64).powf(e).round() as usize).clamp(1, p_raw.max(1)))
            .collect();
        qs.sort_unstable();
        qs.dedup();
        qs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub nu: f64,
    pub eta: f64,
    pub q: usize,
    pub val_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub nu: f64,
    pub eta: f64,
    pub q: usize,
    /// Random-forest validation error (percent) per candidate `q`.
    pub q_table: Vec<(usize, f64)>,
    /// One row per `(nu, eta)` pair, in grid order.
    pub table: Vec<GridRow>,
}

impl GridResult {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "nu,eta,q,val_error")?;
        for r in &self.table {
            writeln!(out, "{},{},{},{}", r.nu, r.eta, r.q, r.val_error)?;
        }
        Ok(())
    }
}

/// Two-stage validation: first `q` with axis-aligned forests, then `(nu, eta)`
/// with CO2 forests using the chosen `q`.
///
/// Both datasets must already live in the same preprocessed space. Ties prefer
/// the smaller `q`, then smaller `nu`, then smaller `eta`.
pub fn grid_search(
    train: &Dataset,
    val: &Dataset,
    grid: &GridSpec,
    template: &GrowConfig,
    seed: u64,
    threads: usize,
) -> Result<GridResult> {
    if grid.nu_set.is_empty() || grid.eta_set.is_empty() || grid.q_exponents.is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    if grid.validation_trees == 0 {
        return Err(Error::InvalidArgument("validation_trees must be >= 1".into()));
    }
    let score = |cfg: &GrowConfig| -> Result<f64> {
        let f = train_forest(train, grid.validation_trees, cfg, seed, threads, Sampling::Bootstrap)?;
        error_rate(&f.confusion(val)?)
    };

    let mut q_table = Vec::new();
    for q in grid.q_values(train.p_raw()) {
        let cfg = GrowConfig {
            trainer: StumpTrainer::Axis,
            q,
            ..template.clone()
        };
        q_table.push((q, score(&cfg)?));
    }
    let (best_q, _) = q_table
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("nonempty q grid");

    let mut table = Vec::new();
    for &nu in &grid.nu_set {
        for &eta in &grid.eta_set {
            let mut cfg = GrowConfig {
                trainer: StumpTrainer::Co2,
                q: best_q,
                ..template.clone()
            };
            cfg.co2.nu = nu;
            cfg.co2.eta = eta;
            table.push(GridRow {
                nu,
                eta,
                q: best_q,
                val_error: score(&cfg)?,
            });
        }
    }
    let best = table
        .iter()
        .min_by(|a, b| {
            a.val_error
                .total_cmp(&b.val_error)
                .then(a.nu.total_cmp(&b.nu))
                .then(a.eta.total_cmp(&b.eta))
        })
        .expect("nonempty grid");
    Ok(GridResult {
        nu: best.nu,
        eta: best.eta,
        q: best_q,
        q_table,
        table,
    })
}
