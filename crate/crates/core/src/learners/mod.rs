//! From-scratch learners: k-nearest neighbours, RBF support vector machines,
//! CART decision trees and random forests, each as regressor and classifier.
//!
//! All inputs are standardised with statistics fitted on the training rows
//! before they reach a learner, so models only ever see z-scores.

mod forest;
mod knn;
mod standardize;
mod svm;
mod tree;

use serde::{Deserialize, Serialize};

use crate::datasetio::UsageClasses;
use crate::error::{invalid, Error, Result};

pub use forest::RandomForest;
pub(crate) use knn::aggregate;
pub use knn::{neighbor_order, KnnModel};
pub use standardize::Standardizer;
pub use svm::{BinarySvm, SolverOutcome, SvmModel, SOLVER_TOLERANCE, SVR_EPSILON};
pub use tree::{DecisionTree, TreeNode};

const MODEL_FORMAT: &str = "sram-trained-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Knn,
    Svm,
    Dt,
    Rf,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] = [LearnerKind::Knn, LearnerKind::Svm, LearnerKind::Dt, LearnerKind::Rf];

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Knn => "knn",
            LearnerKind::Svm => "svm",
            LearnerKind::Dt => "dt",
            LearnerKind::Rf => "rf",
        }
    }
}

impl std::fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "knn" => Ok(LearnerKind::Knn),
            "svm" => Ok(LearnerKind::Svm),
            "dt" | "tree" => Ok(LearnerKind::Dt),
            "rf" | "forest" => Ok(LearnerKind::Rf),
            other => Err(Error::Parse(format!("unknown learner `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification { num_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Size of the random feature subset examined at each split.
    pub min_features_per_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_features_per_split: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "lowercase")]
pub enum HyperParams {
    Knn {
        k: usize,
    },
    Svm {
        c: f64,
        gamma: f64,
    },
    Dt(TreeParams),
    Rf {
        #[serde(flatten)]
        tree: TreeParams,
        num_trees: usize,
        bootstrap: bool,
    },
}

impl HyperParams {
    pub fn kind(&self) -> LearnerKind {
        match self {
            HyperParams::Knn { .. } => LearnerKind::Knn,
            HyperParams::Svm { .. } => LearnerKind::Svm,
            HyperParams::Dt(_) => LearnerKind::Dt,
            HyperParams::Rf { .. } => LearnerKind::Rf,
        }
    }

    fn validate(&self) -> Result<()> {
        let tree_ok =
            |t: &TreeParams| t.min_samples_split >= 2 && t.min_features_per_split >= 1 && t.max_depth != Some(0);
        let ok = match self {
            HyperParams::Knn { k } => *k >= 1,
            HyperParams::Svm { c, gamma } => *c > 0.0 && *gamma > 0.0 && c.is_finite() && gamma.is_finite(),
            HyperParams::Dt(t) => tree_ok(t),
            HyperParams::Rf { tree, num_trees, .. } => tree_ok(tree) && *num_trees >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("hyperparameters out of range: {self:?}")))
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub ncols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        Self {
            ncols,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.data.len().checked_div(self.ncols).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn select(&self, idx: &[usize]) -> Matrix {
        Matrix {
            ncols: self.ncols,
            data: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
        }
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Most frequent class, ties to the lowest index.
pub(crate) fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedModel {
    Knn(KnnModel),
    Svm(SvmModel),
    Tree(DecisionTree),
    Forest(RandomForest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub version: u32,
    pub params: HyperParams,
    pub task: Task,
    pub seed: u64,
    pub standardizer: Standardizer,
    /// Hash of the feature schema the model was trained against, if any.
    pub schema_hash: Option<String>,
    /// How usage months map to class indices, for classifiers trained on usage.
    #[serde(default)]
    pub usage_classes: Option<UsageClasses>,
    pub fitted: FittedModel,
}

fn class_labels(y: &[f64], num_classes: usize) -> Result<Vec<usize>> {
    y.iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < num_classes {
                Ok(v as usize)
            } else {
                Err(invalid(format!("label {v} is not a class in 0..{num_classes}")))
            }
        })
        .collect()
}

/// Fits a model. Rows are standardised internally; for classification `y`
/// holds class indices.
pub fn fit(params: &HyperParams, task: Task, x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<TrainedModel> {
    params.validate()?;
    if x.is_empty() {
        return Err(invalid("cannot fit on an empty training set"));
    }
    if x.len() != y.len() {
        return Err(invalid(format!("{} rows but {} targets", x.len(), y.len())));
    }
    let width = x[0].len();
    if width == 0 || x.iter().any(|r| r.len() != width) {
        return Err(invalid("training rows must share a non-zero width"));
    }
    if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite training value"));
    }
    let labels = match task {
        Task::Regression => None,
        Task::Classification { num_classes } => {
            let labels = class_labels(y, num_classes)?;
            if labels.iter().all(|&l| l == labels[0]) {
                return Err(Error::DegenerateLabels("only one class in the training labels".into()));
            }
            Some(labels)
        }
    };
    let standardizer = Standardizer::fit(x);
    let z = Matrix::from_rows(&standardizer.transform_rows(x));
    let fitted = match (*params, task) {
        (HyperParams::Knn { k }, _) => FittedModel::Knn(KnnModel::fit(z, y.to_vec(), k, task)),
        (HyperParams::Svm { c, gamma }, Task::Regression) => {
            FittedModel::Svm(SvmModel::fit_regression(&z, y, c, gamma)?)
        }
        (HyperParams::Svm { c, gamma }, Task::Classification { num_classes }) => FittedModel::Svm(
            SvmModel::fit_classification(&z, labels.as_deref().unwrap(), num_classes, c, gamma)?,
        ),
        (HyperParams::Dt(tp), _) => {
            let idx: Vec<usize> = (0..z.nrows()).collect();
            FittedModel::Tree(DecisionTree::fit(&z, y, &idx, task, &tp, &mut tree::tree_rng(seed, 0)))
        }
        (
            HyperParams::Rf {
                tree,
                num_trees,
                bootstrap,
            },
            _,
        ) => FittedModel::Forest(RandomForest::fit(&z, y, task, &tree, num_trees, bootstrap, seed)),
    };
    Ok(TrainedModel {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        params: *params,
        task,
        seed,
        standardizer,
        schema_hash: None,
        usage_classes: None,
        fitted,
    })
}

impl TrainedModel {
    pub fn kind(&self) -> LearnerKind {
        self.params.kind()
    }

    pub fn num_features(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn with_schema_hash(mut self, hash: impl Into<String>) -> Self {
        self.schema_hash = Some(hash.into());
        self
    }

    pub fn with_usage_classes(mut self, classes: UsageClasses) -> Self {
        self.usage_classes = Some(classes);
        self
    }

    /// Raw predictions: months for regression, class indices (as reals) for classification.
    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let width = self.num_features();
        if let Some(r) = x.iter().find(|r| r.len() != width) {
            return Err(Error::SchemaMismatch {
                expected: format!("{width} features"),
                actual: format!("{} features", r.len()),
            });
        }
        let z = Matrix::from_rows(&self.standardizer.transform_rows(x));
        Ok(match &self.fitted {
            FittedModel::Knn(m) => m.predict(&z),
            FittedModel::Svm(m) => m.predict(&z),
            FittedModel::Tree(t) => (0..z.nrows()).map(|i| t.predict_row(z.row(i))).collect(),
            FittedModel::Forest(f) => f.predict(&z),
        })
    }

    pub fn predict_classes(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        match self.task {
            Task::Regression => Err(invalid("regression models do not predict classes")),
            Task::Classification { .. } => Ok(self.predict(x)?.into_iter().map(|v| v as usize).collect()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(Error::SchemaMismatch {
                expected: format!("{MODEL_FORMAT} v{MODEL_VERSION}"),
                actual: format!("{} v{}", m.format, m.version),
            });
        }
        Ok(m)
    }
}
