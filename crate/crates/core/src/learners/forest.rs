use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tree::{tree_rng, Binned};
use super::{majority, DecisionTree, Matrix, Task, TreeParams};
use crate::{par, seed};

/// Bagged CART trees. Prediction is the mean (regression) or the majority
/// vote of the trees' class predictions, ties to the lower class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub task: Task,
}

impl RandomForest {
    pub fn fit(
        x: &Matrix,
        y: &[f64],
        task: Task,
        params: &TreeParams,
        num_trees: usize,
        bootstrap: bool,
        seed: u64,
    ) -> Self {
        let n = x.nrows();
        let binned = Binned::new(x);
        let trees = par::map_range(num_trees, |t| {
            let idx: Vec<usize> = if bootstrap {
                let mut rng = seed::rng(seed, &[seed::tag("bootstrap"), t as u64]);
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            DecisionTree::fit_binned(&binned, y, &idx, task, params, &mut tree_rng(seed, t))
        });
        Self { trees, task }
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match self.task {
            Task::Regression => {
                let mut sum = 0.0;
                for t in &self.trees {
                    sum += t.predict_row(row);
                }
                sum / self.trees.len() as f64
            }
            Task::Classification { num_classes } => {
                let mut votes = vec![0usize; num_classes];
                for t in &self.trees {
                    votes[t.predict_row(row) as usize] += 1;
                }
                majority(&votes) as f64
            }
        }
    }

    pub fn predict(&self, z: &Matrix) -> Vec<f64> {
        (0..z.nrows()).map(|i| self.predict_row(z.row(i))).collect()
    }
}
