use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::ToolkitConfig;
use super::experiment::Evaluation;
use crate::error::{Error, Result};
use crate::learners::{HyperParams, LearnerKind};

pub const REPORT_FORMAT: &str = "sram-experiment-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerResult {
    pub learner: LearnerKind,
    pub best_params: HyperParams,
    pub cv_score: f64,
    pub candidates: usize,
    pub failed_candidates: usize,
    pub test: Evaluation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResults {
    pub with_spectrum: Vec<LearnerResult>,
    /// Empty when the ablation is disabled.
    pub without_spectrum: Vec<LearnerResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub majority_class: usize,
    pub f1_macro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionResult {
    pub resolution_months: u32,
    pub num_classes: usize,
    pub train_classes: usize,
    pub skipped: Option<String>,
    pub baseline: Option<Baseline>,
    pub learners: Vec<LearnerResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub devices: usize,
    pub train_devices: usize,
    pub test_devices: usize,
    pub train_rows: usize,
    pub test_rows: usize,
    pub num_features: usize,
    pub span_months: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub version: u32,
    pub toolkit_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub schema_hash: String,
    pub dataset: DatasetSummary,
    pub notes: Vec<String>,
    pub regression: Option<RegressionResults>,
    pub classification: Vec<ResolutionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

impl ExperimentReport {
    pub fn new(config: &ToolkitConfig, schema_hash: String, dataset: DatasetSummary, notes: Vec<String>) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            toolkit_version: crate::VERSION.into(),
            seed: config.seed,
            config_hash: config.hash(),
            schema_hash,
            dataset,
            notes,
            regression: None,
            classification: Vec::new(),
            wall_clock_seconds: None,
        }
    }

    fn learner_results_mut(&mut self) -> impl Iterator<Item = &mut LearnerResult> {
        let reg = self
            .regression
            .iter_mut()
            .flat_map(|r| r.with_spectrum.iter_mut().chain(r.without_spectrum.iter_mut()));
        reg.chain(self.classification.iter_mut().flat_map(|c| c.learners.iter_mut()))
    }

    /// The report with every wall-clock field removed. Two runs with the
    /// same inputs, seed and config give identical canonical forms.
    pub fn canonical(&self) -> Self {
        let mut r = self.clone();
        r.wall_clock_seconds = None;
        r.learner_results_mut().for_each(|l| l.wall_clock_seconds = None);
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn canonical_json(&self) -> String {
        self.canonical().to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.format != REPORT_FORMAT || r.version != REPORT_VERSION {
            return Err(Error::SchemaMismatch {
                expected: format!("{REPORT_FORMAT} v{REPORT_VERSION}"),
                actual: format!("{} v{}", r.format, r.version),
            });
        }
        Ok(r)
    }

    /// Plain-text tables for people.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let d = &self.dataset;
        let _ = writeln!(
            s,
            "devices {} (train {}, test {}), rows {} / {}, {} features, usage span {:.2} months",
            d.devices, d.train_devices, d.test_devices, d.train_rows, d.test_rows, d.num_features, d.span_months
        );
        let _ = writeln!(
            s,
            "seed {}  config {}  schema {}  version {}",
            self.seed,
            &self.config_hash[..12.min(self.config_hash.len())],
            &self.schema_hash[..12.min(self.schema_hash.len())],
            self.toolkit_version
        );
        if let Some(reg) = &self.regression {
            for (title, rows) in [
                ("regression", &reg.with_spectrum),
                ("regression without spectrum", &reg.without_spectrum),
            ] {
                if rows.is_empty() {
                    continue;
                }
                let _ = writeln!(
                    s,
                    "\n{title}\n{:<8}{:>10}{:>10}{:>10}  params",
                    "learner", "cv R2", "test R2", "MAPE %"
                );
                for l in rows {
                    if let Evaluation::Regression(t) = &l.test {
                        let _ = writeln!(
                            s,
                            "{:<8}{:>10.4}{:>10.4}{:>10.2}  {}",
                            l.learner.name(),
                            l.cv_score,
                            t.r2,
                            100.0 * t.mape,
                            params_text(&l.best_params)
                        );
                    }
                }
            }
        }
        if !self.classification.is_empty() {
            let _ = writeln!(s, "\nclassification (macro F1 on test devices)");
            let mut header = format!("{:<12}{:>8}{:>10}", "resolution", "classes", "baseline");
            let learners: Vec<LearnerKind> = self
                .classification
                .iter()
                .flat_map(|c| c.learners.iter().map(|l| l.learner))
                .fold(Vec::new(), |mut acc, k| {
                    if !acc.contains(&k) {
                        acc.push(k);
                    }
                    acc
                });
            for k in &learners {
                let _ = write!(header, "{:>8}", k.name());
            }
            let _ = writeln!(s, "{header}");
            for c in &self.classification {
                let _ = write!(s, "{:<12}{:>8}", format!("{} mo", c.resolution_months), c.num_classes);
                match (&c.skipped, &c.baseline) {
                    (Some(why), _) => {
                        let _ = writeln!(s, "  skipped: {why}");
                        continue;
                    }
                    (None, Some(b)) => {
                        let _ = write!(s, "{:>10.4}", b.f1_macro);
                    }
                    (None, None) => {
                        let _ = write!(s, "{:>10}", "-");
                    }
                }
                for k in &learners {
                    match c.learners.iter().find(|l| l.learner == *k) {
                        Some(l) => {
                            let _ = write!(s, "{:>8.4}", l.test.headline());
                        }
                        None => {
                            let _ = write!(s, "{:>8}", "-");
                        }
                    }
                }
                let _ = writeln!(s);
            }
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        if let Some(t) = self.wall_clock_seconds {
            let _ = writeln!(s, "wall clock {t:.1} s");
        }
        s
    }
}

pub fn params_text(p: &HyperParams) -> String {
    let depth = |d: Option<usize>| d.map_or("none".to_string(), |d| d.to_string());
    match p {
        HyperParams::Knn { k } => format!("k={k}"),
        HyperParams::Svm { c, gamma } => format!("C={c:.4e} gamma={gamma:.4e}"),
        HyperParams::Dt(t) => format!(
            "depth={} min_split={} features={}",
            depth(t.max_depth),
            t.min_samples_split,
            t.min_features_per_split
        ),
        HyperParams::Rf {
            tree,
            num_trees,
            bootstrap,
        } => format!(
            "trees={num_trees} depth={} min_split={} features={} bootstrap={bootstrap}",
            depth(tree.max_depth),
            tree.min_samples_split,
            tree.min_features_per_split
        ),
    }
}
