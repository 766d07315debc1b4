//! RBF support vector machines trained with an SMO-type decomposition
//! solver (maximal-violating pair with second-order working-set selection).
//!
//! Classification trains one binary soft-margin machine per class pair and
//! predicts by pairwise voting. Regression solves the ε-insensitive dual
//! over `2n` variables.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{majority, squared_distance, Matrix};
use crate::error::{Error, Result};

/// Stopping tolerance on the maximal KKT violation.
pub const SOLVER_TOLERANCE: f64 = 1e-3;
/// Width of the insensitive tube for regression, in months.
pub const SVR_EPSILON: f64 = 0.1;

const TAU: f64 = 1e-12;
const FULL_KERNEL_ENTRIES: usize = 1 << 23;

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    // four independent sums so the loop is not one long dependency chain
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail = squared_distance(ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    (-gamma * ((acc[0] + acc[1]) + (acc[2] + acc[3]) + tail)).exp()
}

/// Kernel rows over a fixed point set, either precomputed or cached on demand.
struct KernelRows<'a> {
    x: &'a Matrix,
    gamma: f64,
    full: Option<Vec<f64>>,
    cache: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(x: &'a Matrix, gamma: f64) -> Self {
        let n = x.nrows();
        let full = (n * n <= FULL_KERNEL_ENTRIES).then(|| {
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                k[i * n + i] = 1.0;
                for j in 0..i {
                    let v = rbf(x.row(i), x.row(j), gamma);
                    k[i * n + j] = v;
                    k[j * n + i] = v;
                }
            }
            k
        });
        Self {
            x,
            gamma,
            full,
            cache: vec![None; n],
            order: VecDeque::new(),
            capacity: (FULL_KERNEL_ENTRIES / n.max(1)).max(2),
        }
    }

    fn row(&mut self, i: usize) -> &[f64] {
        let n = self.x.nrows();
        if let Some(full) = &self.full {
            return &full[i * n..(i + 1) * n];
        }
        if self.cache[i].is_none() {
            if self.order.len() >= self.capacity {
                let old = self.order.pop_front().unwrap();
                self.cache[old] = None;
            }
            let xi = self.x.row(i);
            self.cache[i] = Some((0..n).map(|j| rbf(xi, self.x.row(j), self.gamma)).collect());
            self.order.push_back(i);
        }
        self.cache[i].as_deref().unwrap()
    }
}

/// Result of one dual solve: `min ½ αᵀQα + pᵀα` s.t. `yᵀα = const`, `0 ≤ α ≤ C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutcome {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
    /// Final maximal violation `m(α) − M(α)`.
    pub gap: f64,
}

/// Dual solver over `l` variables whose kernel index is `var % n`, with signs `y`.
fn solve(
    kernel: &mut KernelRows<'_>,
    p: &[f64],
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolverOutcome> {
    let l = p.len();
    let n = kernel.x.nrows();
    let mut alpha = vec![0.0; l];
    // y·∇f; with y = ±1 the selection rules below become sign-free
    let mut yg: Vec<f64> = p.iter().zip(y).map(|(g, s)| s * g).collect();
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let in_up = |t: usize, a: f64| if y[t] > 0.0 { !upper(a) } else { !lower(a) };
    let in_low = |t: usize, a: f64| if y[t] > 0.0 { !lower(a) } else { !upper(a) };
    let mut up: Vec<bool> = (0..l).map(|t| in_up(t, 0.0)).collect();
    let mut low: Vec<bool> = (0..l).map(|t| in_low(t, 0.0)).collect();
    let mut iterations = 0;
    let mut gap;
    let mut ki_copy = vec![0.0; n];
    // Working-set selection only scans `active`; gradients stay exact for all
    // variables, so the active set can be rebuilt from scratch at any time.
    let mut active: Vec<usize> = (0..l).collect();
    let rebuild_every = l.min(1000);
    let mut since_rebuild = 0;

    loop {
        if since_rebuild >= rebuild_every {
            since_rebuild = 0;
            shrink(&mut active, &yg, &up, &low);
        }
        since_rebuild += 1;
        let (i, j, gmax, gmax2) = select(kernel, &active, &yg, &up, &low);
        gap = gmax + gmax2;
        if i == usize::MAX || j == usize::MAX || gap < tol {
            if active.len() < l {
                // confirm on the full set before stopping
                active = (0..l).collect();
                since_rebuild = 0;
                let (i, j, gmax, gmax2) = select(kernel, &active, &yg, &up, &low);
                gap = gmax + gmax2;
                if !(i == usize::MAX || j == usize::MAX || gap < tol) {
                    shrink(&mut active, &yg, &up, &low);
                    continue;
                }
            }
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NotConverged { iterations, gap });
        }
        iterations += 1;
        let (grad_i, grad_j) = (y[i] * yg[i], y[j] * yg[j]);

        let kij = kernel.row(i % n)[j % n];
        let qij = y[i] * y[j] * kij;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = {
                let q = 2.0 + 2.0 * qij;
                if q > 0.0 {
                    q
                } else {
                    TAU
                }
            };
            let delta = (-grad_i - grad_j) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = {
                let q = 2.0 - 2.0 * qij;
                if q > 0.0 {
                    q
                } else {
                    TAU
                }
            };
            let delta = (grad_i - grad_j) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        for t in [i, j] {
            up[t] = in_up(t, alpha[t]);
            low[t] = in_low(t, alpha[t]);
        }
        let (si, sj) = (y[i] * (alpha[i] - old_i), y[j] * (alpha[j] - old_j));
        ki_copy.copy_from_slice(kernel.row(i % n));
        let kj = kernel.row(j % n);
        for chunk in yg.chunks_mut(n) {
            for ((v, &a), &b) in chunk.iter_mut().zip(&ki_copy).zip(kj) {
                *v += si * a + sj * b;
            }
        }
    }

    // ρ: mean of y·G over free variables, else the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for (t, &yg) in yg.iter().enumerate() {
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg)
            } else {
                lb = lb.max(yg)
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok(SolverOutcome {
        alpha,
        rho,
        iterations,
        gap: gap.max(0.0),
    })
}

/// Second-order working-set selection over `active` (ascending indices).
/// Returns `(i, j, m, -M)`; an index is `usize::MAX` when none qualifies.
fn select(
    kernel: &mut KernelRows<'_>,
    active: &[usize],
    yg: &[f64],
    up: &[bool],
    low: &[bool],
) -> (usize, usize, f64, f64) {
    let n = kernel.x.nrows();
    // i: maximal violator in I_up
    let mut gmax = f64::NEG_INFINITY;
    let mut i = usize::MAX;
    for &t in active {
        if up[t] && -yg[t] >= gmax {
            gmax = -yg[t];
            i = t;
        }
    }
    let mut gmax2 = f64::NEG_INFINITY;
    let mut j = usize::MAX;
    let mut obj_min = f64::INFINITY;
    if i != usize::MAX {
        let ki = kernel.row(i % n);
        for &t in active {
            if !low[t] {
                continue;
            }
            let v = yg[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let k = ki[if t >= n { t - n } else { t }];
                let quad = 2.0 - 2.0 * k;
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= obj_min {
                    j = t;
                    obj_min = obj;
                }
            }
        }
    }
    (i, j, gmax, gmax2)
}

/// Keeps the variables that could still enter a violating pair: free ones, and
/// bounded ones whose gradient is not already beyond the current extremes.
fn shrink(active: &mut Vec<usize>, yg: &[f64], up: &[bool], low: &[bool]) {
    let (mut m_up, mut m_low) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for ((&v, &u), &w) in yg.iter().zip(up).zip(low) {
        if u {
            m_up = m_up.max(-v);
        }
        if w {
            m_low = m_low.max(v);
        }
    }
    active.clear();
    active.extend((0..yg.len()).filter(|&t| match (up[t], low[t]) {
        (true, false) => yg[t] <= m_low,
        (false, true) => -yg[t] <= m_up,
        _ => true,
    }));
}

fn iteration_cap(n: usize) -> usize {
    // ten passes over every pair of variables
    (10 * n * n).max(100_000)
}

/// Decision function `Σ coef_i k(sv_i, x) − rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySvm {
    pub support: Matrix,
    pub coef: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
}

impl BinarySvm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, &c) in self.coef.iter().enumerate() {
            s += c * rbf(self.support.row(i), x, self.gamma);
        }
        s - self.rho
    }

    /// Soft-margin classifier for `labels` in {+1, −1}. Also returns the raw
    /// dual solution for inspection.
    pub fn train_classifier(x: &Matrix, labels: &[f64], c: f64, gamma: f64) -> Result<(Self, SolverOutcome)> {
        let n = x.nrows();
        let mut kernel = KernelRows::new(x, gamma);
        let p = vec![-1.0; n];
        let out = solve(&mut kernel, &p, labels, c, SOLVER_TOLERANCE, iteration_cap(n))?;
        let coef: Vec<f64> = out.alpha.iter().zip(labels).map(|(a, y)| a * y).collect();
        Ok((Self::compact(x, &coef, out.rho, gamma), out))
    }

    fn train_regressor(x: &Matrix, targets: &[f64], c: f64, gamma: f64) -> Result<Self> {
        let n = x.nrows();
        let mut kernel = KernelRows::new(x, gamma);
        let mut p = Vec::with_capacity(2 * n);
        p.extend(targets.iter().map(|t| SVR_EPSILON - t));
        p.extend(targets.iter().map(|t| SVR_EPSILON + t));
        let mut y = vec![1.0; n];
        y.extend(vec![-1.0; n]);
        let out = solve(&mut kernel, &p, &y, c, SOLVER_TOLERANCE, iteration_cap(2 * n))?;
        let coef: Vec<f64> = (0..n).map(|i| out.alpha[i] - out.alpha[i + n]).collect();
        Ok(Self::compact(x, &coef, out.rho, gamma))
    }

    fn compact(x: &Matrix, coef: &[f64], rho: f64, gamma: f64) -> Self {
        let keep: Vec<usize> = (0..coef.len()).filter(|&i| coef[i] != 0.0).collect();
        Self {
            support: x.select(&keep),
            coef: keep.iter().map(|&i| coef[i]).collect(),
            rho,
            gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMachine {
    pub positive: usize,
    pub negative: usize,
    pub machine: BinarySvm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SvmModel {
    Regression(BinarySvm),
    /// One-vs-one machines; `positive` is always the lower class.
    Classification {
        num_classes: usize,
        pairs: Vec<PairMachine>,
    },
}

impl SvmModel {
    pub fn fit_regression(x: &Matrix, y: &[f64], c: f64, gamma: f64) -> Result<Self> {
        Ok(SvmModel::Regression(BinarySvm::train_regressor(x, y, c, gamma)?))
    }

    pub fn fit_classification(x: &Matrix, labels: &[usize], num_classes: usize, c: f64, gamma: f64) -> Result<Self> {
        let present: Vec<usize> = (0..num_classes).filter(|k| labels.contains(k)).collect();
        let mut jobs = Vec::new();
        for (a_pos, &a) in present.iter().enumerate() {
            for &b in &present[a_pos + 1..] {
                jobs.push((a, b));
            }
        }
        let pairs = crate::par::map_slice(&jobs, |&(a, b)| {
            let idx: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == a || labels[i] == b)
                .collect();
            let sub = x.select(&idx);
            let signs: Vec<f64> = idx.iter().map(|&i| if labels[i] == a { 1.0 } else { -1.0 }).collect();
            BinarySvm::train_classifier(&sub, &signs, c, gamma).map(|(machine, _)| PairMachine {
                positive: a,
                negative: b,
                machine,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        Ok(SvmModel::Classification { num_classes, pairs })
    }

    pub fn num_machines(&self) -> usize {
        match self {
            SvmModel::Regression(_) => 1,
            SvmModel::Classification { pairs, .. } => pairs.len(),
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        match self {
            SvmModel::Regression(m) => m.decision(x),
            SvmModel::Classification { num_classes, pairs } => {
                let mut votes = vec![0usize; *num_classes];
                for p in pairs {
                    if p.machine.decision(x) > 0.0 {
                        votes[p.positive] += 1;
                    } else {
                        votes[p.negative] += 1;
                    }
                }
                majority(&votes) as f64
            }
        }
    }

    pub fn predict(&self, z: &Matrix) -> Vec<f64> {
        (0..z.nrows()).map(|i| self.predict_row(z.row(i))).collect()
    }
}
