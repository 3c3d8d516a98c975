//! Breadth-first greedy induction of a single oblique tree.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::baselines::{axis_split_to_stump, best_axis_aligned_split, oc1_optimize, Oc1Config};
use crate::co2::{train_co2_stump, CccpTrace, Co2Hyper};
use crate::dataset::Dataset;
use crate::linalg::{argmax, dot};
use crate::loss::{optimal_leaf_logloss, softmax_prob, LeafLoss, StumpParams};
use crate::seeds;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Internal { w: Vec<f64>, left: usize, right: usize },
    Leaf { theta: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root; children always have larger ids than their parent.
    pub nodes: Vec<Node>,
    /// Longest root-to-leaf path; a lone leaf has depth 0.
    pub depth: usize,
    pub k: usize,
    /// Augmented input dimension.
    pub p: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StumpTrainer {
    Co2,
    Axis,
    Oc1,
}

impl std::str::FromStr for StumpTrainer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "co2" => Ok(Self::Co2),
            "axis" => Ok(Self::Axis),
            "oc1" => Ok(Self::Oc1),
            other => Err(Error::InvalidArgument(format!("unknown trainer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowConfig {
    /// `None` grows until every leaf is pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub trainer: StumpTrainer,
    pub co2: Co2Hyper,
    pub oc1: Oc1Config,
    /// Number of candidate features for the axis-aligned search.
    pub q: usize,
    pub loss: LeafLoss,
    /// Additive smoothing for leaf distributions.
    pub leaf_smoothing: f64,
}

impl Default for GrowConfig {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            trainer: StumpTrainer::Co2,
            co2: Co2Hyper::default(),
            oc1: Oc1Config::default(),
            q: 1,
            loss: LeafLoss::Log,
            leaf_smoothing: 1.0,
        }
    }
}

impl GrowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == Some(0) {
            return Err(Error::InvalidArgument("max_depth must be >= 1".into()));
        }
        if self.q == 0 {
            return Err(Error::InvalidArgument("q must be >= 1".into()));
        }
        if !(self.leaf_smoothing > 0.0 && self.leaf_smoothing.is_finite()) {
            return Err(Error::InvalidArgument("leaf_smoothing must be positive".into()));
        }
        if self.trainer == StumpTrainer::Co2 {
            self.co2.validate()?;
        }
        Ok(())
    }
}

/// Optimization history of one CO2 node.
#[derive(Clone, Debug)]
pub struct NodeTrace {
    pub node: usize,
    pub trace: CccpTrace,
    pub used_fallback: bool,
}

struct Pending {
    id: usize,
    idx: Vec<usize>,
    depth: usize,
}

/// Grows one tree on `sample` (row indices into `d`, repeats allowed).
///
/// Node `i` draws its randomness from stream `i` of `seed`, so the tree does
/// not depend on the order nodes are processed in.
pub fn grow_tree(d: &Dataset, sample: &[usize], cfg: &GrowConfig, seed: u64) -> Result<Tree> {
    grow_tree_traced(d, sample, cfg, seed).map(|(t, _)| t)
}

/// [`grow_tree`] that also returns the optimization trace of every CO2 node.
pub fn grow_tree_traced(
    d: &Dataset,
    sample: &[usize],
    cfg: &GrowConfig,
    seed: u64,
) -> Result<(Tree, Vec<NodeTrace>)> {
    cfg.validate()?;
    if sample.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut nodes: Vec<Option<Node>> = vec![None];
    let mut traces = Vec::new();
    let mut depth = 0;
    let mut queue = VecDeque::new();
    queue.push_back(Pending {
        id: 0,
        idx: sample.to_vec(),
        depth: 0,
    });

    while let Some(Pending { id, idx, depth: node_depth }) = queue.pop_front() {
        let counts = d.class_counts(&idx);
        let leaf = |counts: &[usize]| -> Result<Node> {
            Ok(Node::Leaf {
                theta: optimal_leaf_logloss(counts, cfg.leaf_smoothing)?.theta,
            })
        };
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let capped = cfg.max_depth.is_some_and(|m| node_depth >= m);
        if pure || capped || idx.len() < cfg.min_samples_split {
            nodes[id] = Some(leaf(&counts)?);
            depth = depth.max(node_depth);
            continue;
        }
        let mut rng = seeds::stream(seed, id as u64);
        let stump = match train_stump(d, &idx, cfg, &mut rng) {
            Ok((stump, trace)) => {
                if let Some(t) = trace {
                    traces.push(NodeTrace { node: id, ..t });
                }
                stump
            }
            Err(Error::NoValidSplit) => {
                nodes[id] = Some(leaf(&counts)?);
                depth = depth.max(node_depth);
                continue;
            }
            Err(e) => return Err(e),
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| !stump.goes_right(d.row(i)));
        if left_idx.is_empty() || right_idx.is_empty() {
            nodes[id] = Some(leaf(&counts)?);
            depth = depth.max(node_depth);
            continue;
        }
        let left = nodes.len();
        let right = left + 1;
        nodes.push(None);
        nodes.push(None);
        nodes[id] = Some(Node::Internal {
            w: stump.w,
            left,
            right,
        });
        queue.push_back(Pending {
            id: left,
            idx: left_idx,
            depth: node_depth + 1,
        });
        queue.push_back(Pending {
            id: right,
            idx: right_idx,
            depth: node_depth + 1,
        });
    }

    let nodes = nodes
        .into_iter()
        .map(|n| n.expect("every allocated node is filled"))
        .collect();
    Ok((
        Tree {
            nodes,
            depth,
            k: d.k(),
            p: d.p(),
        },
        traces,
    ))
}

fn train_stump<R: rand::Rng>(
    d: &Dataset,
    idx: &[usize],
    cfg: &GrowConfig,
    rng: &mut R,
) -> Result<(StumpParams, Option<NodeTrace>)> {
    let q = cfg.q.min(d.p_raw()).max(1);
    let (split, _) = best_axis_aligned_split(d, idx, q, rng)?;
    let init = axis_split_to_stump(split, d, idx, cfg.loss, cfg.leaf_smoothing)?;
    match cfg.trainer {
        StumpTrainer::Axis => Ok((init, None)),
        StumpTrainer::Oc1 => Ok((
            oc1_optimize(d, idx, &init, &cfg.oc1, cfg.loss, cfg.leaf_smoothing, rng)?,
            None,
        )),
        StumpTrainer::Co2 => {
            let out = train_co2_stump(d, idx, &init, &cfg.co2, cfg.loss, cfg.leaf_smoothing, rng)?;
            Ok((
                out.params,
                Some(NodeTrace {
                    node: 0,
                    trace: out.trace,
                    used_fallback: out.used_fallback,
                }),
            ))
        }
    }
}

impl Tree {
    pub fn n_internal(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Internal { .. }))
            .count()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.len() - self.n_internal()
    }

    /// Leaf log-probabilities reached by an augmented input.
    pub fn leaf_theta(&self, x: &[f64]) -> Result<&[f64]> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: x.len(),
            });
        }
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Internal { w, left, right } => {
                    id = if dot(w, x) >= 0.0 { *right } else { *left };
                }
                Node::Leaf { theta } => return Ok(theta),
            }
        }
    }
}

/// Class distribution for an augmented input (`w·x >= 0` goes right).
pub fn tree_predict_proba(t: &Tree, x: &[f64]) -> Result<Vec<f64>> {
    t.leaf_theta(x).map(softmax_prob)
}

/// Fraction of rows whose argmax prediction (ties to the lowest class) is wrong.
pub fn tree_training_error(t: &Tree, d: &Dataset) -> Result<f64> {
    if d.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut wrong = 0;
    for i in 0..d.n() {
        if argmax(t.leaf_theta(d.row(i))?) != d.label(i) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / d.n() as f64)
}

impl Tree {
    /// The tree that growing with `max_depth = depth` would have produced from
    /// the same sample and seed.
    ///
    /// Node randomness depends only on node ids, and breadth-first ids of the
    /// first `depth` levels do not depend on what happens below them, so
    /// cutting the full tree and refitting the new leaves from the routed
    /// sample gives exactly the depth-capped tree.
    pub fn truncate(&self, depth: usize, d: &Dataset, sample: &[usize], smoothing: f64) -> Result<Tree> {
        let mut counts = vec![vec![0usize; self.k]; self.nodes.len()];
        for &i in sample {
            let x = d.row(i);
            let mut id = 0;
            loop {
                counts[id][d.label(i)] += 1;
                match &self.nodes[id] {
                    Node::Internal { w, left, right } => {
                        id = if dot(w, x) >= 0.0 { *right } else { *left };
                    }
                    Node::Leaf { .. } => break,
                }
            }
        }
        let mut nodes = Vec::new();
        let mut max_depth = 0;
        let mut queue = VecDeque::from([(0usize, 0usize)]);
        while let Some((old, level)) = queue.pop_front() {
            max_depth = max_depth.max(level);
            match &self.nodes[old] {
                Node::Internal { w, left, right } if level < depth => {
                    let l = nodes.len() + queue.len() + 1;
                    nodes.push(Node::Internal {
                        w: w.clone(),
                        left: l,
                        right: l + 1,
                    });
                    queue.push_back((*left, level + 1));
                    queue.push_back((*right, level + 1));
                }
                Node::Internal { .. } => nodes.push(Node::Leaf {
                    theta: optimal_leaf_logloss(&counts[old], smoothing)?.theta,
                }),
                leaf @ Node::Leaf { .. } => nodes.push(leaf.clone()),
            }
        }
        Ok(Tree {
            nodes,
            depth: max_depth,
            k: self.k,
            p: self.p,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthPoint {
    pub depth: usize,
    pub train_error: f64,
    pub val_error: f64,
}

/// Training and validation error (fractions) of one tree grown on all of
/// `train`, capped at each depth `1..=max_depth`.
pub fn depth_curve(
    train: &Dataset,
    val: &Dataset,
    cfg: &GrowConfig,
    max_depth: usize,
    seed: u64,
) -> Result<Vec<DepthPoint>> {
    if max_depth == 0 {
        return Err(Error::InvalidArgument("max_depth must be >= 1".into()));
    }
    let sample = train.indices();
    let cfg = GrowConfig {
        max_depth: Some(max_depth),
        ..cfg.clone()
    };
    let full = grow_tree(train, &sample, &cfg, seed)?;
    (1..=max_depth)
        .map(|depth| {
            let t = full.truncate(depth, train, &sample, cfg.leaf_smoothing)?;
            Ok(DepthPoint {
                depth,
                train_error: tree_training_error(&t, train)?,
                val_error: tree_training_error(&t, val)?,
            })
        })
        .collect()
}
