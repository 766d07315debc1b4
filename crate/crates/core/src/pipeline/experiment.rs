use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ToolkitConfig;
use super::cv::{device_folds, row_folds};
use super::report::{Baseline, DatasetSummary, ExperimentReport, LearnerResult, RegressionResults, ResolutionResult};
use super::search::{random_search, CvData, SearchOutcome};
use crate::bitcore::BitSampleSet;
use crate::datasetio::{
    stratified_device_split, DeviceLabel, DeviceManifest, LabeledDataset, SplitAssignment, SplitTag, UsageClasses,
};
use crate::error::{invalid, Error, Result};
use crate::features::{
    analyze_groups, fit_frequency_selection, FeatureSchema, FeatureSettings, SpectrumPlan, NUM_BASE_FEATURES,
};
use crate::learners::{self, HyperParams, LearnerKind, Task, TrainedModel};
use crate::metrics::{f1_multiclass, regression_score, ClassificationScore, RegressionScore};
use crate::{par, seed};

/// Feature table of a fleet with the frequency selection frozen on its
/// training devices.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub schema: FeatureSchema,
    pub split: SplitAssignment,
    pub dataset: LabeledDataset,
    /// Largest usage in the fleet; the upper edge of the last usage class.
    pub span_months: f64,
}

impl Prepared {
    pub fn train(&self) -> LabeledDataset {
        self.dataset.partition(SplitTag::Train)
    }

    pub fn test(&self) -> LabeledDataset {
        self.dataset.partition(SplitTag::Test)
    }
}

/// Which experiment a random stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Regression,
    /// Regression without the spectrum columns.
    Ablation,
    Classification {
        resolution_months: u32,
    },
}

/// Seed of the hyperparameter search for `kind` in `stage`.
pub fn search_seed(base: u64, stage: Stage, kind: LearnerKind) -> u64 {
    let stage_tags = match stage {
        Stage::Regression => [seed::tag("regression"), 0],
        Stage::Ablation => [seed::tag("ablation"), 0],
        Stage::Classification { resolution_months } => [seed::tag("classification"), resolution_months as u64],
    };
    seed::derive(base, &[stage_tags[0], stage_tags[1], seed::tag(kind.name())])
}

/// Seed of the final fit that follows a search seeded with `search_seed`.
pub fn fit_seed(search_seed: u64) -> u64 {
    seed::derive(search_seed, &[seed::tag("final")])
}

fn folds_seed(base: u64) -> u64 {
    seed::derive(base, &[seed::tag("cv")])
}

pub fn device_labels(devices: &[BitSampleSet]) -> Vec<DeviceLabel> {
    devices
        .iter()
        .map(|d| DeviceLabel {
            device_id: d.device_id().to_string(),
            usage_months: d.usage_months(),
        })
        .collect()
}

/// Analyses every device, fits the frequency selection on the training
/// groups of `split` and lays out the labelled feature table.
pub fn build_features<L>(
    labels: &[DeviceLabel],
    load: L,
    settings: &FeatureSettings,
    split: &SplitAssignment,
) -> Result<(FeatureSchema, LabeledDataset)>
where
    L: Fn(usize) -> Result<BitSampleSet> + Sync + Send,
{
    let tags: Vec<SplitTag> = labels
        .iter()
        .map(|d| {
            split
                .tag_of(&d.device_id)
                .ok_or_else(|| invalid(format!("device `{}` is not in the split", d.device_id)))
        })
        .collect::<Result<_>>()?;
    let analysed = par::map_range(labels.len(), |i| -> Result<(usize, Vec<_>)> {
        let samples = load(i)?;
        let plan = SpectrumPlan::new(samples.num_bits());
        Ok((samples.num_bits(), analyze_groups(&samples, settings, &plan)?))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let num_bits = analysed.first().map(|a| a.0).ok_or_else(|| invalid("no devices"))?;
    if let Some((i, a)) = analysed.iter().enumerate().find(|(_, a)| a.0 != num_bits) {
        return Err(Error::SchemaMismatch {
            expected: format!("{num_bits} bits"),
            actual: format!("{} bits on device `{}`", a.0, labels[i].device_id),
        });
    }

    let mut spectra: Vec<&[f64]> = Vec::new();
    let mut usages = Vec::new();
    for ((_, groups), (d, tag)) in analysed.iter().zip(labels.iter().zip(&tags)) {
        if *tag == SplitTag::Train {
            for g in groups {
                spectra.push(&g.spectrum);
                usages.push(d.usage_months);
            }
        }
    }
    let schema = fit_frequency_selection(&spectra, &usages, num_bits, settings)?;

    let mut dataset = LabeledDataset::empty(schema.names.clone());
    for ((_, groups), (d, &tag)) in analysed.iter().zip(labels.iter().zip(&tags)) {
        for g in groups {
            dataset.push(
                g.feature_vector(&schema.selected_freq_indices),
                d.usage_months,
                &d.device_id,
                tag,
            );
        }
    }
    Ok((schema, dataset))
}

fn split_for(labels: &[DeviceLabel], config: &ToolkitConfig) -> Result<SplitAssignment> {
    stratified_device_split(
        labels,
        config.split.train_fraction,
        config.split.bin_months,
        config.seed,
    )
}

fn max_usage(labels: &[DeviceLabel]) -> f64 {
    labels.iter().map(|d| d.usage_months).fold(0.0, f64::max)
}

/// Splits, analyses and labels in-memory devices.
pub fn prepare(devices: &[BitSampleSet], config: &ToolkitConfig) -> Result<Prepared> {
    config.validate()?;
    let labels = device_labels(devices);
    let split = split_for(&labels, config)?;
    let (schema, dataset) = build_features(&labels, |i| Ok(devices[i].clone()), &config.features, &split)?;
    Ok(Prepared {
        schema,
        split,
        dataset,
        span_months: max_usage(&labels),
    })
}

/// Like [`prepare`] but streams devices from disk one at a time.
pub fn prepare_manifest(manifest: &DeviceManifest, config: &ToolkitConfig) -> Result<Prepared> {
    config.validate()?;
    manifest.validate()?;
    let labels = manifest.labels();
    let split = split_for(&labels, config)?;
    let (schema, dataset) = build_features(&labels, |i| manifest.load_device(i), &config.features, &split)?;
    Ok(Prepared {
        schema,
        split,
        dataset,
        span_months: max_usage(&labels),
    })
}

/// Hyperparameter search on training rows with targets `y`.
pub fn tune(
    config: &ToolkitConfig,
    kind: LearnerKind,
    task: Task,
    train: &LabeledDataset,
    y: &[f64],
    stage: Stage,
) -> Result<SearchOutcome> {
    let devices = train.devices();
    let folds = device_folds(
        &devices,
        config.search.k_folds,
        config.split.bin_months,
        folds_seed(config.seed),
    )?;
    let rows = row_folds(&devices, &folds, &train.device_ids)?;
    let data = CvData {
        x: &train.rows,
        y,
        folds: &rows,
        k: config.search.k_folds,
    };
    random_search(&config.search, kind, task, &data, search_seed(config.seed, stage, kind))
}

/// Fits the final model of a stage on all training rows.
pub fn fit_final(
    config: &ToolkitConfig,
    params: &HyperParams,
    task: Task,
    train: &LabeledDataset,
    y: &[f64],
    stage: Stage,
) -> Result<TrainedModel> {
    let seed = fit_seed(search_seed(config.seed, stage, params.kind()));
    learners::fit(params, task, &train.rows, y, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum Evaluation {
    Regression(RegressionScore),
    Classification(ClassificationScore),
}

impl Evaluation {
    /// R² or macro F1.
    pub fn headline(&self) -> f64 {
        match self {
            Evaluation::Regression(s) => s.r2,
            Evaluation::Classification(s) => s.f1_macro,
        }
    }
}

/// Scores `model` on `data`. Classifiers need the usage class layout they
/// were trained with, either stored in the model or passed in.
pub fn evaluate_model(
    model: &TrainedModel,
    data: &LabeledDataset,
    classes: Option<UsageClasses>,
    mape_epsilon: f64,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(invalid("nothing to evaluate"));
    }
    match model.task {
        Task::Regression => {
            let pred = model.predict(&data.rows)?;
            Ok(Evaluation::Regression(regression_score(
                &data.usages,
                &pred,
                mape_epsilon,
            )?))
        }
        Task::Classification { num_classes } => {
            let classes = classes
                .or(model.usage_classes)
                .ok_or_else(|| invalid("classifier has no usage class layout"))?;
            if classes.num_classes() != num_classes {
                return Err(Error::SchemaMismatch {
                    expected: format!("{num_classes} classes"),
                    actual: format!("{} classes", classes.num_classes()),
                });
            }
            let truth: Vec<usize> = data.usages.iter().map(|&u| classes.class_of(u)).collect();
            let pred = model.predict_classes(&data.rows)?;
            Ok(Evaluation::Classification(f1_multiclass(&truth, &pred, num_classes)?))
        }
    }
}

fn run_learner(
    config: &ToolkitConfig,
    kind: LearnerKind,
    task: Task,
    train: &LabeledDataset,
    test: &LabeledDataset,
    classes: Option<UsageClasses>,
    stage: Stage,
) -> Result<LearnerResult> {
    let start = Instant::now();
    let y = match classes {
        Some(c) => c.labels(&train.usages),
        None => train.usages.clone(),
    };
    let outcome = tune(config, kind, task, train, &y, stage)?;
    let model = fit_final(config, &outcome.best, task, train, &y, stage)?;
    let test_score = evaluate_model(&model, test, classes, config.mape_epsilon)?;
    Ok(LearnerResult {
        learner: kind,
        best_params: outcome.best,
        cv_score: outcome.cv_score,
        candidates: outcome.candidates,
        failed_candidates: outcome.failed,
        test: test_score,
        wall_clock_seconds: Some(start.elapsed().as_secs_f64()),
    })
}

fn learner_set(
    config: &ToolkitConfig,
    task: Task,
    train: &LabeledDataset,
    test: &LabeledDataset,
    classes: Option<UsageClasses>,
    stage: Stage,
    notes: &mut Vec<String>,
) -> Result<Vec<LearnerResult>> {
    let mut out = Vec::new();
    for &kind in &config.learners {
        match run_learner(config, kind, task, train, test, classes, stage) {
            Ok(r) => out.push(r),
            Err(e @ Error::DegenerateLabels(_)) => {
                log::warn!("{kind} skipped: {e}");
                notes.push(format!("{stage:?}: {kind} skipped: {e}"));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn new_report(prepared: &Prepared, config: &ToolkitConfig) -> ExperimentReport {
    let train = prepared.split.train_devices.len();
    let test = prepared.split.test_devices.len();
    let train_rows = prepared
        .dataset
        .splits
        .iter()
        .filter(|&&t| t == SplitTag::Train)
        .count();
    let mut notes = Vec::new();
    for &kind in &config.learners {
        let budget = config.search.budget(kind);
        if budget != config.search.num_candidates {
            notes.push(format!(
                "{kind} search budget is {budget} candidates instead of {}",
                config.search.num_candidates
            ));
        }
    }
    ExperimentReport::new(
        config,
        prepared.schema.hash(),
        DatasetSummary {
            devices: train + test,
            train_devices: train,
            test_devices: test,
            train_rows,
            test_rows: prepared.dataset.len() - train_rows,
            num_features: prepared.schema.len(),
            span_months: prepared.span_months,
        },
        notes,
    )
}

fn regression_into(report: &mut ExperimentReport, prepared: &Prepared, config: &ToolkitConfig) -> Result<()> {
    let train = prepared.train();
    let test = prepared.test();
    let with = learner_set(
        config,
        Task::Regression,
        &train,
        &test,
        None,
        Stage::Regression,
        &mut report.notes,
    )?;
    let without = if config.spectrum_ablation {
        let train = train.truncate_features(NUM_BASE_FEATURES);
        let test = test.truncate_features(NUM_BASE_FEATURES);
        learner_set(
            config,
            Task::Regression,
            &train,
            &test,
            None,
            Stage::Ablation,
            &mut report.notes,
        )?
    } else {
        Vec::new()
    };
    report.regression = Some(RegressionResults {
        with_spectrum: with,
        without_spectrum: without,
    });
    Ok(())
}

/// Majority class of the training labels, scored on the test labels.
pub fn majority_baseline(train: &[usize], test: &[usize], num_classes: usize) -> Result<Baseline> {
    let mut counts = vec![0usize; num_classes];
    for &c in train {
        counts[c] += 1;
    }
    let mut majority_class = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[majority_class] {
            majority_class = c;
        }
    }
    let pred = vec![majority_class; test.len()];
    Ok(Baseline {
        majority_class,
        f1_macro: f1_multiclass(test, &pred, num_classes)?.f1_macro,
    })
}

fn classification_into(report: &mut ExperimentReport, prepared: &Prepared, config: &ToolkitConfig) -> Result<()> {
    let train = prepared.train();
    let test = prepared.test();
    for &r in &config.resolutions {
        let classes = UsageClasses::new(r, prepared.span_months)?;
        let num_classes = classes.num_classes();
        let train_y: Vec<usize> = train.usages.iter().map(|&u| classes.class_of(u)).collect();
        let test_y: Vec<usize> = test.usages.iter().map(|&u| classes.class_of(u)).collect();
        let mut occupied = train_y.clone();
        occupied.sort_unstable();
        occupied.dedup();
        let mut row = ResolutionResult {
            resolution_months: r,
            num_classes,
            train_classes: occupied.len(),
            skipped: None,
            baseline: None,
            learners: Vec::new(),
        };
        if occupied.len() < 2 {
            let why = format!("only {} occupied class(es) in the training devices", occupied.len());
            log::warn!("resolution {r}: skipped, {why}");
            row.skipped = Some(why);
            report.classification.push(row);
            continue;
        }
        row.baseline = Some(majority_baseline(&train_y, &test_y, num_classes)?);
        let task = Task::Classification { num_classes };
        let stage = Stage::Classification { resolution_months: r };
        row.learners = learner_set(config, task, &train, &test, Some(classes), stage, &mut report.notes)?;
        report.classification.push(row);
    }
    Ok(())
}

/// Tunes, trains and tests every configured regressor, plus the
/// no-spectrum ablation when enabled.
pub fn regression_experiment(prepared: &Prepared, config: &ToolkitConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = new_report(prepared, config);
    regression_into(&mut report, prepared, config)?;
    report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    Ok(report)
}

/// Re-tunes every configured classifier at each resolution.
pub fn classification_experiment(prepared: &Prepared, config: &ToolkitConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = new_report(prepared, config);
    classification_into(&mut report, prepared, config)?;
    report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    Ok(report)
}

/// Regression and classification on one prepared fleet, in one report.
pub fn full_experiment(prepared: &Prepared, config: &ToolkitConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = new_report(prepared, config);
    regression_into(&mut report, prepared, config)?;
    classification_into(&mut report, prepared, config)?;
    report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
    Ok(report)
}

pub fn run_regression_experiment(manifest: &DeviceManifest, config: &ToolkitConfig) -> Result<ExperimentReport> {
    regression_experiment(&prepare_manifest(manifest, config)?, config)
}

pub fn run_classification_experiment(manifest: &DeviceManifest, config: &ToolkitConfig) -> Result<ExperimentReport> {
    classification_experiment(&prepare_manifest(manifest, config)?, config)
}
