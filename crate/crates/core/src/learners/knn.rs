use serde::{Deserialize, Serialize};

use super::{majority, squared_distance, Matrix, Task};

/// Brute-force k-nearest-neighbour model over standardised rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub k: usize,
    pub task: Task,
}

/// Indices of the `limit` training rows closest to `query`, nearest first.
/// Equal distances are ordered by training index.
pub fn neighbor_order(train: &Matrix, query: &[f64], limit: usize) -> Vec<usize> {
    let n = train.nrows();
    let limit = limit.min(n);
    let mut cand: Vec<(f64, usize)> = (0..n).map(|i| (squared_distance(train.row(i), query), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if limit == 0 {
        return Vec::new();
    }
    if limit < n {
        cand.select_nth_unstable_by(limit - 1, cmp);
        cand.truncate(limit);
    }
    cand.sort_unstable_by(cmp);
    cand.into_iter().map(|(_, i)| i).collect()
}

impl KnnModel {
    pub fn fit(x: Matrix, y: Vec<f64>, k: usize, task: Task) -> Self {
        Self { x, y, k, task }
    }

    pub fn effective_k(&self) -> usize {
        self.k.min(self.y.len())
    }

    pub fn predict_row(&self, q: &[f64]) -> f64 {
        let order = neighbor_order(&self.x, q, self.effective_k());
        aggregate(&order, &self.y, self.task)
    }

    pub fn predict(&self, z: &Matrix) -> Vec<f64> {
        (0..z.nrows()).map(|i| self.predict_row(z.row(i))).collect()
    }
}

/// Mean (regression) or majority vote (classification) over `neighbors`.
pub(crate) fn aggregate(neighbors: &[usize], y: &[f64], task: Task) -> f64 {
    match task {
        Task::Regression => {
            let mut sum = 0.0;
            for &i in neighbors {
                sum += y[i];
            }
            sum / neighbors.len() as f64
        }
        Task::Classification { num_classes } => {
            let mut counts = vec![0usize; num_classes];
            for &i in neighbors {
                counts[y[i] as usize] += 1;
            }
            majority(&counts) as f64
        }
    }
}
