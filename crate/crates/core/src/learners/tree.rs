//! CART trees with greedy axis-aligned splits: Gini impurity for
//! classification, squared error for regression. Each split examines a
//! random subset of `min_features_per_split` features. Candidate cut
//! points come from a per-fit binning of each feature (see [`Binned`]).

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{majority, Matrix, Task, TreeParams};
use crate::seed;

pub(crate) fn tree_rng(seed: u64, tree: usize) -> seed::Rng {
    seed::rng(seed, &[seed::tag("tree"), tree as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

struct Split {
    feature: usize,
    bin: usize,
    threshold: f64,
    /// Weighted child impurity (lower is better).
    score: f64,
}

/// Rows of one node: distinct row indices plus each row's multiplicity in
/// the (possibly bootstrapped) training sample.
struct Sample<'a> {
    y: &'a [f64],
    weight: &'a [u32],
}

impl Sample<'_> {
    fn size(&self, idx: &[usize]) -> usize {
        idx.iter().map(|&i| self.weight[i] as usize).sum()
    }

    fn leaf_value(&self, idx: &[usize], task: Task) -> f64 {
        let (y, w) = (self.y, self.weight);
        match task {
            Task::Regression => idx.iter().map(|&i| w[i] as f64 * y[i]).sum::<f64>() / self.size(idx) as f64,
            Task::Classification { num_classes } => {
                let mut counts = vec![0usize; num_classes];
                for &i in idx {
                    counts[y[i] as usize] += w[i] as usize;
                }
                majority(&counts) as f64
            }
        }
    }
}

/// Largest number of candidate cut points examined per feature.
pub const MAX_BINS: usize = 256;

/// Features of a training matrix coded as bin indices. A feature with at
/// most [`MAX_BINS`] distinct values gets one bin per value, so every
/// partition an exact search could produce is still available; wider
/// features are cut at quantiles of their distinct values.
pub(crate) struct Binned {
    /// Column-major bin codes, `codes[f * n + i]`.
    codes: Vec<u8>,
    /// Thresholds between consecutive bins: bin `b` holds `cuts[f][b-1] < v <= cuts[f][b]`.
    cuts: Vec<Vec<f64>>,
    n: usize,
}

impl Binned {
    pub(crate) fn new(x: &Matrix) -> Self {
        let (n, d) = (x.nrows(), x.ncols);
        let mut codes = vec![0u8; n * d];
        let mut cuts = Vec::with_capacity(d);
        let mut column = Vec::with_capacity(n);
        for f in 0..d {
            column.clear();
            column.extend((0..n).map(|i| x.row(i)[f]));
            let mut distinct = column.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let edges: Vec<usize> = if distinct.len() <= MAX_BINS {
                (1..distinct.len()).collect()
            } else {
                let mut e: Vec<usize> = (1..MAX_BINS).map(|b| b * distinct.len() / MAX_BINS).collect();
                e.dedup();
                e
            };
            // cut between distinct[e - 1] and distinct[e]
            let fc: Vec<f64> = edges
                .iter()
                .map(|&e| {
                    let (lo, hi) = (distinct[e - 1], distinct[e]);
                    lo + (hi - lo) / 2.0
                })
                .collect();
            for (i, &v) in column.iter().enumerate() {
                codes[f * n + i] = fc.partition_point(|&c| c < v) as u8;
            }
            cuts.push(fc);
        }
        Self { codes, cuts, n }
    }

    fn column(&self, f: usize) -> &[u8] {
        &self.codes[f * self.n..(f + 1) * self.n]
    }
}

/// Visits the bins occupied by `idx` in ascending order. `mark` is called
/// once per row with its bin; `occupied` is then filled in bin order.
fn occupied_bins(codes: &[u8], idx: &[usize], occupied: &mut Vec<u8>, mut mark: impl FnMut(usize, usize)) {
    let mut mask = [0u64; 4];
    for &i in idx {
        let b = codes[i] as usize;
        mask[b >> 6] |= 1 << (b & 63);
        mark(b, i);
    }
    occupied.clear();
    for (w, &word) in mask.iter().enumerate() {
        let mut m = word;
        while m != 0 {
            occupied.push((w * 64 + m.trailing_zeros() as usize) as u8);
            m &= m - 1;
        }
    }
}

/// Size times variance, from count, sum and sum of squares.
fn sse(n: f64, sum: f64, sumsq: f64) -> f64 {
    (sumsq - sum * sum / n).max(0.0)
}

/// Size times Gini impurity.
fn gini(n: u32, counts: impl Iterator<Item = u32>) -> f64 {
    let n = n as f64;
    n - counts.map(|c| (c as f64) * (c as f64)).sum::<f64>() / n
}

/// Scratch space reused across the nodes of one tree.
struct Scratch {
    reg: Vec<(u32, f64, f64)>,
    cls: Vec<u32>,
    occupied: Vec<u8>,
}

impl Scratch {
    fn new(task: Task) -> Self {
        let classes = match task {
            Task::Regression => 0,
            Task::Classification { num_classes } => num_classes,
        };
        Self {
            reg: vec![(0, 0.0, 0.0); MAX_BINS],
            cls: vec![0; MAX_BINS * classes],
            occupied: Vec::with_capacity(MAX_BINS),
        }
    }
}

/// Best cut over `features`, scanning cuts feature by feature and bin by
/// bin; the first cut with the lowest weighted impurity wins.
fn best_split(
    binned: &Binned,
    sample: &Sample<'_>,
    idx: &[usize],
    features: &[usize],
    task: Task,
    scratch: &mut Scratch,
) -> Option<Split> {
    let mut best: Option<Split> = None;
    let mut consider = |f: usize, bin: usize, score: f64| {
        if best.as_ref().is_none_or(|b| score < b.score) {
            best = Some(Split {
                feature: f,
                bin,
                threshold: binned.cuts[f][bin],
                score,
            });
        }
    };
    let Scratch { reg, cls, occupied } = scratch;
    let (y, w) = (sample.y, sample.weight);
    match task {
        Task::Regression => {
            let n = sample.size(idx) as f64;
            let (total, total_sq) = idx.iter().fold((0.0, 0.0), |(s, q), &i| {
                let wy = w[i] as f64 * y[i];
                (s + wy, q + wy * y[i])
            });
            for &f in features {
                occupied_bins(binned.column(f), idx, occupied, |b, i| {
                    let e = &mut reg[b];
                    let wy = w[i] as f64 * y[i];
                    e.0 += w[i];
                    e.1 += wy;
                    e.2 += wy * y[i];
                });
                let (mut ln, mut ls, mut lq) = (0.0, 0.0, 0.0);
                for &b in &occupied[..occupied.len().saturating_sub(1)] {
                    let (c, s, q) = reg[b as usize];
                    ln += c as f64;
                    ls += s;
                    lq += q;
                    let score = sse(ln, ls, lq) + sse(n - ln, total - ls, total_sq - lq);
                    consider(f, b as usize, score);
                }
                for &b in occupied.iter() {
                    reg[b as usize] = (0, 0.0, 0.0);
                }
            }
        }
        Task::Classification { num_classes: k } => {
            let mut total = vec![0u32; k];
            for &i in idx {
                total[y[i] as usize] += w[i];
            }
            let n = sample.size(idx) as u32;
            let mut left = vec![0u32; k];
            for &f in features {
                occupied_bins(binned.column(f), idx, occupied, |b, i| {
                    cls[b * k + y[i] as usize] += w[i]
                });
                left.iter_mut().for_each(|c| *c = 0);
                let mut ln = 0;
                for &b in &occupied[..occupied.len().saturating_sub(1)] {
                    let row = &cls[b as usize * k..(b as usize + 1) * k];
                    for (l, &c) in left.iter_mut().zip(row) {
                        *l += c;
                        ln += c;
                    }
                    let right = total.iter().zip(&left).map(|(t, l)| t - l);
                    let score = gini(ln, left.iter().copied()) + gini(n - ln, right);
                    consider(f, b as usize, score);
                }
                for &b in occupied.iter() {
                    cls[b as usize * k..(b as usize + 1) * k]
                        .iter_mut()
                        .for_each(|c| *c = 0);
                }
            }
        }
    }
    best
}

fn is_pure(y: &[f64], idx: &[usize]) -> bool {
    idx.iter().all(|&i| y[i] == y[idx[0]])
}

impl DecisionTree {
    /// Grows a tree on the rows listed in `idx` (repeats allowed).
    pub fn fit(x: &Matrix, y: &[f64], idx: &[usize], task: Task, params: &TreeParams, rng: &mut seed::Rng) -> Self {
        Self::fit_binned(&Binned::new(x), y, idx, task, params, rng)
    }

    pub(crate) fn fit_binned(
        binned: &Binned,
        y: &[f64],
        idx: &[usize],
        task: Task,
        params: &TreeParams,
        rng: &mut seed::Rng,
    ) -> Self {
        let mut weight = vec![0u32; y.len()];
        for &i in idx {
            weight[i] += 1;
        }
        let rows: Vec<usize> = (0..y.len()).filter(|&i| weight[i] > 0).collect();
        let sample = Sample { y, weight: &weight };
        let mut tree = DecisionTree { nodes: Vec::new() };
        let mut scratch = Scratch::new(task);
        tree.grow(binned, &sample, rows, 0, task, params, rng, &mut scratch);
        tree
    }

    #[allow(clippy::too_many_arguments)]
    fn grow(
        &mut self,
        binned: &Binned,
        sample: &Sample<'_>,
        idx: Vec<usize>,
        depth: usize,
        task: Task,
        params: &TreeParams,
        rng: &mut seed::Rng,
        scratch: &mut Scratch,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: sample.leaf_value(&idx, task),
        });
        let depth_ok = params.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || sample.size(&idx) < params.min_samples_split || is_pure(sample.y, &idx) {
            return id;
        }
        let d = binned.cuts.len();
        let m = params.min_features_per_split.min(d);
        let features: Vec<usize> = if m >= d {
            (0..d).collect()
        } else {
            let mut f = index::sample(rng, d, m).into_vec();
            f.sort_unstable();
            f
        };
        let Some(split) = best_split(binned, sample, &idx, &features, task, scratch) else {
            return id;
        };
        let codes = binned.column(split.feature);
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| codes[i] as usize <= split.bin);
        let left = self.grow(binned, sample, l, depth + 1, task, params, rng, scratch);
        let right = self.grow(binned, sample, r, depth + 1, task, params, rng, scratch);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match self.nodes[node] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, n: usize) -> usize {
            match t.nodes[n] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn num_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}
