use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::features::{hex, FeatureSettings};
use crate::learners::{HyperParams, LearnerKind, TreeParams};
use crate::metrics::DEFAULT_MAPE_EPSILON;

/// Sampling ranges for every tunable hyperparameter. Integer ranges are
/// inclusive; `c` and `gamma` are sampled log-uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub k: (usize, usize),
    pub c: (f64, f64),
    pub gamma: (f64, f64),
    pub max_depth: (usize, usize),
    pub min_samples_split: (usize, usize),
    pub min_features_per_split: (usize, usize),
    pub num_trees: (usize, usize),
    pub bootstrap: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            k: (100, 2000),
            c: (1e-2, 1e3),
            gamma: (1e-4, 1e1),
            max_depth: (2, 32),
            min_samples_split: (2, 100),
            min_features_per_split: (1, 56),
            num_trees: (10, 300),
            bootstrap: true,
        }
    }
}

fn int_range(name: &str, (lo, hi): (usize, usize), min: usize) -> Result<()> {
    if lo < min || lo > hi {
        return Err(invalid(format!("search range {name} = [{lo}, {hi}] is invalid")));
    }
    Ok(())
}

fn log_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(invalid(format!("search range {name} = [{lo}, {hi}] is invalid")));
    }
    Ok(())
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..=hi.ln()).exp()
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        int_range("k", self.k, 1)?;
        log_range("c", self.c)?;
        log_range("gamma", self.gamma)?;
        int_range("max_depth", self.max_depth, 1)?;
        int_range("min_samples_split", self.min_samples_split, 2)?;
        int_range("min_features_per_split", self.min_features_per_split, 1)?;
        int_range("num_trees", self.num_trees, 1)
    }

    /// Draws one candidate. The feature-subset range is clamped to the
    /// `num_features` columns actually present.
    pub fn sample(&self, kind: LearnerKind, num_features: usize, rng: &mut impl Rng) -> HyperParams {
        let tree = |rng: &mut _| {
            let hi = self.min_features_per_split.1.min(num_features).max(1);
            let lo = self.min_features_per_split.0.min(hi);
            TreeParams {
                max_depth: Some(uniform(rng, self.max_depth)),
                min_samples_split: uniform(rng, self.min_samples_split),
                min_features_per_split: uniform(rng, (lo, hi)),
            }
        };
        match kind {
            LearnerKind::Knn => HyperParams::Knn {
                k: uniform(rng, self.k),
            },
            LearnerKind::Svm => HyperParams::Svm {
                c: log_uniform(rng, self.c),
                gamma: log_uniform(rng, self.gamma),
            },
            LearnerKind::Dt => HyperParams::Dt(tree(rng)),
            LearnerKind::Rf => {
                let tree = tree(rng);
                HyperParams::Rf {
                    tree,
                    num_trees: uniform(rng, self.num_trees),
                    bootstrap: self.bootstrap,
                }
            }
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub num_candidates: usize,
    pub k_folds: usize,
    /// Per-learner overrides of `num_candidates`, keyed by learner name.
    pub budgets: BTreeMap<LearnerKind, usize>,
    pub space: SearchSpace,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            num_candidates: 1000,
            k_folds: 5,
            budgets: BTreeMap::from([(LearnerKind::Svm, 50)]),
            space: SearchSpace::default(),
        }
    }
}

impl SearchConfig {
    pub fn budget(&self, kind: LearnerKind) -> usize {
        self.budgets.get(&kind).copied().unwrap_or(self.num_candidates)
    }

    /// Same budget for every learner.
    pub fn with_uniform_budget(mut self, n: usize) -> Self {
        self.num_candidates = n;
        self.budgets.clear();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_candidates == 0 || self.budgets.values().any(|&b| b == 0) {
            return Err(invalid("search budgets must be at least one candidate"));
        }
        if self.k_folds < 2 {
            return Err(invalid("cross-validation needs at least two folds"));
        }
        self.space.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub bin_months: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            bin_months: 1.0,
        }
    }
}

/// Everything a run depends on besides its input data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    pub seed: u64,
    pub features: FeatureSettings,
    pub split: SplitConfig,
    pub search: SearchConfig,
    pub mape_epsilon: f64,
    pub resolutions: Vec<u32>,
    pub learners: Vec<LearnerKind>,
    /// Also run the regression experiment without the spectrum columns.
    pub spectrum_ablation: bool,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            features: FeatureSettings::default(),
            split: SplitConfig::default(),
            search: SearchConfig::default(),
            mape_epsilon: DEFAULT_MAPE_EPSILON,
            resolutions: (1..=9).collect(),
            learners: LearnerKind::ALL.to_vec(),
            spectrum_ablation: true,
        }
    }
}

impl ToolkitConfig {
    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        if self.features.group_size == 0 || self.features.block_bytes == 0 {
            return Err(invalid("group size and block size must be positive"));
        }
        if !(self.mape_epsilon > 0.0) {
            return Err(invalid("MAPE epsilon must be positive"));
        }
        if self.resolutions.contains(&0) {
            return Err(invalid("resolutions are whole months >= 1"));
        }
        if self.learners.is_empty() {
            return Err(invalid("no learners selected"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}
