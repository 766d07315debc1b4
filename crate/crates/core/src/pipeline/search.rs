use serde::{Deserialize, Serialize};

use super::config::{SearchConfig, SearchSpace};
use crate::error::{Error, Result};
use crate::learners::{self, neighbor_order, HyperParams, LearnerKind, Matrix, Standardizer, Task};
use crate::metrics::{f1_multiclass, r2_score};
use crate::{par, seed};

/// Training rows prepared for device-level cross-validation.
#[derive(Debug, Clone, Copy)]
pub struct CvData<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [f64],
    /// Fold index of every row; rows of one device share a fold.
    pub folds: &'a [usize],
    pub k: usize,
}

impl CvData<'_> {
    fn fold_rows(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.y.len()).partition(|&i| self.folds[i] != fold)
    }

    fn num_features(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub learner: LearnerKind,
    pub best: HyperParams,
    /// Mean validation score of `best`: R² for regression, macro F1 for classification.
    pub cv_score: f64,
    pub candidates: usize,
    pub failed: usize,
}

pub fn sample_candidates(
    space: &SearchSpace,
    kind: LearnerKind,
    n: usize,
    num_features: usize,
    seed: u64,
) -> Vec<HyperParams> {
    (0..n)
        .map(|i| {
            let mut rng = seed::rng(seed, &[seed::tag("candidate"), seed::tag(kind.name()), i as u64]);
            space.sample(kind, num_features, &mut rng)
        })
        .collect()
}

fn score(task: Task, y: &[f64], y_hat: &[f64]) -> Result<f64> {
    match task {
        Task::Regression => r2_score(y, y_hat),
        Task::Classification { num_classes } => {
            let t: Vec<usize> = y.iter().map(|&v| v as usize).collect();
            let p: Vec<usize> = y_hat.iter().map(|&v| v as usize).collect();
            Ok(f1_multiclass(&t, &p, num_classes)?.f1_macro)
        }
    }
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Mean validation score over the folds of `data`.
pub fn cross_validate(params: &HyperParams, task: Task, data: &CvData, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for fold in 0..data.k {
        let (train, val) = data.fold_rows(fold);
        if train.is_empty() || val.is_empty() {
            return Err(Error::DegenerateLabels(format!("fold {fold} is empty")));
        }
        let fold_seed = seed::derive(seed, &[seed::tag("cv-fit"), fold as u64]);
        let model = learners::fit(params, task, &pick(data.x, &train), &pick(data.y, &train), fold_seed)?;
        let pred = model.predict(&pick(data.x, &val))?;
        total += score(task, &pick(data.y, &val), &pred)?;
    }
    Ok(total / data.k as f64)
}

/// Scores every KNN candidate from one neighbour ranking per fold. Gives the
/// same numbers as fitting a `KnnModel` per candidate.
fn knn_scores(candidates: &[HyperParams], task: Task, data: &CvData) -> Vec<f64> {
    let ks: Vec<usize> = candidates
        .iter()
        .map(|p| match p {
            HyperParams::Knn { k } => *k,
            _ => unreachable!("knn fast path only sees knn candidates"),
        })
        .collect();
    let mut totals = vec![0.0; candidates.len()];
    for fold in 0..data.k {
        let (train, val) = data.fold_rows(fold);
        let y_train = pick(data.y, &train);
        let y_val = pick(data.y, &val);
        let degenerate = train.is_empty()
            || val.is_empty()
            || (matches!(task, Task::Classification { .. }) && y_train.iter().all(|&v| v == y_train[0]));
        if degenerate {
            return vec![f64::NEG_INFINITY; candidates.len()];
        }
        let train_rows = pick(data.x, &train);
        let st = Standardizer::fit(&train_rows);
        let z = Matrix::from_rows(&st.transform_rows(&train_rows));
        let limit = ks.iter().copied().max().unwrap_or(1).min(train.len());
        let orders = par::map_slice(&val, |&i| neighbor_order(&z, &st.transform(&data.x[i]), limit));
        let fold_scores = par::map_slice(&ks, |&k| {
            let k = k.min(train.len());
            let pred: Vec<f64> = orders
                .iter()
                .map(|o| learners::aggregate(&o[..k], &y_train, task))
                .collect();
            score(task, &y_val, &pred).unwrap_or(f64::NEG_INFINITY)
        });
        for (t, s) in totals.iter_mut().zip(fold_scores) {
            *t += s;
        }
    }
    totals.into_iter().map(|t| t / data.k as f64).collect()
}

/// Randomised hyperparameter search with device-level K-fold CV. Candidates
/// that fail in any fold score −∞; the best mean score wins and ties go to
/// the earlier candidate.
pub fn random_search(
    config: &SearchConfig,
    kind: LearnerKind,
    task: Task,
    data: &CvData,
    seed: u64,
) -> Result<SearchOutcome> {
    config.validate()?;
    let n = config.budget(kind);
    let candidates = sample_candidates(&config.space, kind, n, data.num_features(), seed);
    let scores = if kind == LearnerKind::Knn {
        knn_scores(&candidates, task, data)
    } else {
        par::map_range(n, |i| {
            let cand_seed = seed::derive(seed, &[seed::tag("fit"), i as u64]);
            match cross_validate(&candidates[i], task, data, cand_seed) {
                Ok(s) => s,
                Err(e) => {
                    log::debug!("{kind} candidate {i} failed: {e}");
                    f64::NEG_INFINITY
                }
            }
        })
    };
    let failed = scores.iter().filter(|s| !s.is_finite()).count();
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    let best = best.ok_or_else(|| Error::DegenerateLabels(format!("all {n} {kind} candidates failed")))?;
    log::info!(
        "{kind}: best of {n} candidates scores {:.4} ({failed} failed)",
        scores[best]
    );
    Ok(SearchOutcome {
        learner: kind,
        best: candidates[best],
        cv_score: scores[best],
        candidates: n,
        failed,
    })
}
