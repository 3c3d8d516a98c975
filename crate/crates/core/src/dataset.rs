//! LIBSVM input, dense homogeneous design matrices and sampling utilities.
//!
//! Raw features are stored densely with one extra trailing column that is
//! constantly `-1`, so an oblique split `w` carries its offset in its last
//! entry and `w·x >= 0` is the whole test.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::BufRead;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Value of the homogeneous coordinate appended to every row.
pub const HOMOGENEOUS: f64 = -1.0;

/// Bijection between raw LIBSVM labels and contiguous class indices.
///
/// Index `c` maps to the `c`-th smallest raw label seen at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMap {
    raw: Vec<f64>,
}

impl LabelMap {
    pub fn from_raw(mut raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite label".into()));
        }
        raw.sort_by(f64::total_cmp);
        raw.dedup();
        if raw.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { raw })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn index_of(&self, raw: f64) -> Option<usize> {
        self.raw.binary_search_by(|v| v.total_cmp(&raw)).ok()
    }

    pub fn raw_label(&self, class: usize) -> f64 {
        self.raw[class]
    }

    pub fn raw_labels(&self) -> &[f64] {
        &self.raw
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseExample {
    pub label: usize,
    /// `(1-based feature index, value)`, strictly increasing in index.
    pub features: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseDataset {
    pub examples: Vec<SparseExample>,
    pub p_raw: usize,
    pub labels: LabelMap,
}

impl SparseDataset {
    pub fn n(&self) -> usize {
        self.examples.len()
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }
}

/// Parses one LIBSVM line into its raw label and features.
///
/// Returns `Ok(None)` for blank lines and `#` comments. `line_no` is only used
/// for error messages.
pub fn parse_libsvm_line(line: &str, line_no: usize) -> Result<Option<(f64, Vec<(usize, f64)>)>> {
    let content = match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    };
    let mut tokens = content.split_whitespace();
    let Some(label_tok) = tokens.next() else {
        return Ok(None);
    };
    let err = |msg: String| Error::Parse { line: line_no, msg };
    let label: f64 = label_tok
        .parse()
        .map_err(|_| err(format!("bad label {label_tok:?}")))?;
    if !label.is_finite() {
        return Err(err(format!("non-finite label {label_tok:?}")));
    }
    let mut features = Vec::new();
    let mut last = 0usize;
    for tok in tokens {
        let (idx, val) = tok
            .split_once(':')
            .ok_or_else(|| err(format!("expected <index>:<value>, got {tok:?}")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| err(format!("bad feature index {idx:?}")))?;
        if idx == 0 {
            return Err(err("feature indices are 1-based".into()));
        }
        if idx <= last {
            return Err(err(format!("feature index {idx} not increasing")));
        }
        let val: f64 = val
            .parse()
            .map_err(|_| err(format!("bad feature value {val:?}")))?;
        if !val.is_finite() {
            return Err(err(format!("non-finite value at feature {idx}")));
        }
        features.push((idx, val));
        last = idx;
    }
    Ok(Some((label, features)))
}

/// Parses a LIBSVM stream.
///
/// Without a `label_map` the distinct raw labels are sorted and numbered from
/// zero. With one (typically the training map), every label must already be
/// known and `k` is taken from the map.
pub fn parse_libsvm<R: BufRead>(reader: R, label_map: Option<&LabelMap>) -> Result<SparseDataset> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(row) = parse_libsvm_line(&line, i + 1)? {
            rows.push((i + 1, row));
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let labels = match label_map {
        Some(m) => m.clone(),
        None => LabelMap::from_raw(rows.iter().map(|(_, (l, _))| *l).collect())?,
    };
    let mut p_raw = 0;
    let mut examples = Vec::with_capacity(rows.len());
    for (line, (raw, features)) in rows {
        let label = labels.index_of(raw).ok_or_else(|| Error::Parse {
            line,
            msg: format!("label {raw} not in label map"),
        })?;
        if let Some(&(idx, _)) = features.last() {
            p_raw = p_raw.max(idx);
        }
        examples.push(SparseExample { label, features });
    }
    Ok(SparseDataset {
        examples,
        p_raw,
        labels,
    })
}

pub fn parse_libsvm_str(text: &str, label_map: Option<&LabelMap>) -> Result<SparseDataset> {
    parse_libsvm(text.as_bytes(), label_map)
}

/// Writes a dataset back in LIBSVM text form using raw labels.
pub fn write_libsvm(d: &SparseDataset) -> String {
    let mut out = String::new();
    for ex in &d.examples {
        let _ = write!(out, "{}", d.labels.raw_label(ex.label));
        for (i, v) in &ex.features {
            let _ = write!(out, " {i}:{v}");
        }
        out.push('\n');
    }
    out
}

/// Dense, row-major design matrix with a trailing homogeneous column.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<usize>,
    p: usize,
    k: usize,
    labels: LabelMap,
    preprocess: PreprocessStats,
}

impl Dataset {
    /// Builds a dataset from raw rows (without the homogeneous column).
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<usize>, k: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if rows.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                got: y.len(),
            });
        }
        let p_raw = rows[0].len();
        let mut x = Vec::with_capacity(rows.len() * (p_raw + 1));
        for r in rows {
            if r.len() != p_raw {
                return Err(Error::DimensionMismatch {
                    expected: p_raw,
                    got: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite feature".into()));
            }
            x.extend_from_slice(r);
            x.push(HOMOGENEOUS);
        }
        if let Some(&label) = y.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, k });
        }
        let labels = LabelMap::from_raw((0..k).map(|c| c as f64).collect())?;
        Ok(Self {
            x,
            y,
            p: p_raw + 1,
            k,
            labels,
            preprocess: PreprocessStats::identity(p_raw),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Augmented dimension (raw features plus the homogeneous slot).
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn p_raw(&self) -> usize {
        self.p - 1
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn preprocess(&self) -> &PreprocessStats {
        &self.preprocess
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.y[i]
    }

    pub fn labels_slice(&self) -> &[usize] {
        &self.y
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.n()).collect()
    }

    pub fn class_counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        counts
    }

    /// Copies the selected rows (repeats allowed) into a new dataset.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut x = Vec::with_capacity(idx.len() * self.p);
        let mut y = Vec::with_capacity(idx.len());
        for &i in idx {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Ok(Self {
            x,
            y,
            p: self.p,
            k: self.k,
            labels: self.labels.clone(),
            preprocess: self.preprocess.clone(),
        })
    }
}

/// Densifies a sparse dataset and appends the homogeneous column.
pub fn densify_augment(d: &SparseDataset) -> Result<Dataset> {
    densify_augment_to(d, d.p_raw)
}

/// Like [`densify_augment`] but pads to a fixed raw dimension, as needed when a
/// test file never mentions the trailing training features.
pub fn densify_augment_to(d: &SparseDataset, p_raw: usize) -> Result<Dataset> {
    if d.examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if d.p_raw > p_raw {
        return Err(Error::DimensionMismatch {
            expected: p_raw,
            got: d.p_raw,
        });
    }
    let p = p_raw + 1;
    let mut x = vec![0.0; d.n() * p];
    let mut y = Vec::with_capacity(d.n());
    for (r, ex) in d.examples.iter().enumerate() {
        let row = &mut x[r * p..(r + 1) * p];
        for &(i, v) in &ex.features {
            row[i - 1] = v;
        }
        row[p - 1] = HOMOGENEOUS;
        y.push(ex.label);
    }
    Ok(Dataset {
        x,
        y,
        p,
        k: d.k(),
        labels: d.labels.clone(),
        preprocess: PreprocessStats::identity(p_raw),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessMode {
    None,
    Minmax01,
    Zscore,
}

impl std::str::FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "minmax01" => Ok(Self::Minmax01),
            "zscore" => Ok(Self::Zscore),
            other => Err(Error::InvalidArgument(format!("unknown preprocess mode {other:?}"))),
        }
    }
}

/// Per-raw-feature affine map `v -> (v - offset) * scale`.
///
/// Features with zero spread get `scale = 0` and therefore map to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub mode: PreprocessMode,
    /// `lo` for minmax01, `mean` for zscore, 0 for none.
    pub offset: Vec<f64>,
    /// `hi` for minmax01, `std` for zscore, 1 for none.
    pub spread: Vec<f64>,
}

impl PreprocessStats {
    pub fn identity(p_raw: usize) -> Self {
        Self {
            mode: PreprocessMode::None,
            offset: vec![0.0; p_raw],
            spread: vec![1.0; p_raw],
        }
    }

    pub fn p_raw(&self) -> usize {
        self.offset.len()
    }

    #[inline]
    fn map(&self, j: usize, v: f64) -> f64 {
        match self.mode {
            PreprocessMode::None => v,
            PreprocessMode::Minmax01 => {
                let range = self.spread[j] - self.offset[j];
                if range > 0.0 {
                    (v - self.offset[j]) / range
                } else {
                    0.0
                }
            }
            PreprocessMode::Zscore => {
                if self.spread[j] > 0.0 {
                    (v - self.offset[j]) / self.spread[j]
                } else {
                    0.0
                }
            }
        }
    }

    /// Maps the raw part of an augmented row in place.
    pub fn apply_row(&self, row: &mut [f64]) -> Result<()> {
        if row.len() != self.p_raw() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.p_raw() + 1,
                got: row.len(),
            });
        }
        let p_raw = self.p_raw();
        for (j, v) in row[..p_raw].iter_mut().enumerate() {
            *v = self.map(j, *v);
        }
        Ok(())
    }
}

/// Computes scaling statistics over the raw columns of a training set.
pub fn fit_preprocess(d: &Dataset, mode: PreprocessMode) -> PreprocessStats {
    let p_raw = d.p_raw();
    let n = d.n() as f64;
    match mode {
        PreprocessMode::None => PreprocessStats::identity(p_raw),
        PreprocessMode::Minmax01 => {
            let mut lo = vec![f64::INFINITY; p_raw];
            let mut hi = vec![f64::NEG_INFINITY; p_raw];
            for i in 0..d.n() {
                for (j, &v) in d.row(i)[..p_raw].iter().enumerate() {
                    lo[j] = lo[j].min(v);
                    hi[j] = hi[j].max(v);
                }
            }
            PreprocessStats {
                mode,
                offset: lo,
                spread: hi,
            }
        }
        PreprocessMode::Zscore => {
            let mut mean = vec![0.0; p_raw];
            for i in 0..d.n() {
                for (m, &v) in mean.iter_mut().zip(&d.row(i)[..p_raw]) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; p_raw];
            for i in 0..d.n() {
                for (j, &v) in d.row(i)[..p_raw].iter().enumerate() {
                    let c = v - mean[j];
                    var[j] += c * c;
                }
            }
            PreprocessStats {
                mode,
                offset: mean,
                spread: var.into_iter().map(|s| (s / n).sqrt()).collect(),
            }
        }
    }
}

/// Applies training statistics to a dataset; the homogeneous column is left
/// untouched and the stats are recorded on the result.
pub fn apply_preprocess(d: &Dataset, stats: &PreprocessStats) -> Result<Dataset> {
    if stats.p_raw() != d.p_raw() {
        return Err(Error::DimensionMismatch {
            expected: stats.p_raw(),
            got: d.p_raw(),
        });
    }
    let mut out = d.clone();
    for row in out.x.chunks_exact_mut(out.p) {
        stats.apply_row(row)?;
    }
    out.preprocess = stats.clone();
    Ok(out)
}

/// Draws `n` indices uniformly with replacement from `[0, n)`.
pub fn bootstrap_sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok((0..n).map(|_| rng.gen_range(0..n)).collect())
}

/// Resamples every class to exactly `target_per_class` examples.
///
/// Undersized classes are drawn with replacement, oversized (or exact) ones
/// without. The returned weights undo the resampling at prediction time:
/// `weight[c] = k * count[c] / n`, which averages to one.
pub fn rebalance_classes<R: Rng + ?Sized>(
    d: &Dataset,
    target_per_class: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<f64>)> {
    rebalance_indices(d, &d.indices(), target_per_class, rng)
}

/// [`rebalance_classes`] restricted to a pool of row indices.
pub fn rebalance_indices<R: Rng + ?Sized>(
    d: &Dataset,
    pool: &[usize],
    target_per_class: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if target_per_class == 0 {
        return Err(Error::InvalidArgument("target_per_class must be >= 1".into()));
    }
    let k = d.k();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for &i in pool {
        by_class[d.label(i)].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(c));
    }
    let n = pool.len() as f64;
    let mut out = Vec::with_capacity(k * target_per_class);
    for members in &by_class {
        if members.len() < target_per_class {
            out.extend((0..target_per_class).map(|_| members[rng.gen_range(0..members.len())]));
        } else {
            out.extend(
                index::sample(rng, members.len(), target_per_class)
                    .into_iter()
                    .map(|j| members[j]),
            );
        }
    }
    let weights = by_class
        .iter()
        .map(|m| k as f64 * m.len() as f64 / n)
        .collect();
    Ok((out, weights))
}

/// Splits `[0, n)` into (train, holdout) with `round(fraction * n)` held out.
pub fn holdout_split<R: Rng + ?Sized>(
    n: usize,
    fraction: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n_hold = ((n as f64) * fraction).round() as usize;
    if n_hold == 0 || n_hold >= n {
        return Err(Error::InvalidArgument(format!(
            "holdout of {n_hold} rows out of {n} leaves an empty side"
        )));
    }
    let perm = index::sample(rng, n, n);
    let held: BTreeSet<usize> = perm.iter().take(n_hold).collect();
    let train = (0..n).filter(|i| !held.contains(i)).collect();
    Ok((train, held.into_iter().collect()))
}
