use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sram_ageing::agesim::{generate_fleet, ProfilePrior};
use sram_ageing::bitcore::{compute_instability, compute_p1};
use sram_ageing::datasetio::{
    stratified_device_split, DeviceManifest, LabeledDataset, SplitAssignment, SplitTag, UsageClasses,
};
use sram_ageing::features::{extract_features, pct_ones_stats, FeatureSchema, NUM_BASE_FEATURES};
use sram_ageing::learners::{LearnerKind, Task, TrainedModel};
use sram_ageing::pipeline::{
    build_features, classification_experiment, evaluate_model, fit_final, full_experiment, params_text,
    prepare_manifest, regression_experiment, tune, Evaluation, ExperimentReport, SearchOutcome, Stage,
};
use sram_ageing::render::{render_instability, render_p1, RenderMode, XyTable};
use sram_ageing::Error;

use crate::config::{Provenance, RunConfig};
use crate::{
    Cli, Command, DriftPreset, EvaluateArgs, FeaturesArgs, IngestArgs, ModeArg, PartitionArg, RenderArgs, ReportArgs,
    SimulateArgs, SplitArgs, TaskArg, TrainArgs, TuneArgs,
};

/// A JSON artifact with the provenance stanza in front.
#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    provenance: Provenance,
    #[serde(flatten)]
    body: &'a T,
}

fn write_json<T: Serialize>(path: &Path, command: &str, cfg: &RunConfig, body: &T) -> Result<()> {
    let doc = Stamped {
        provenance: Provenance::new(command, cfg),
        body,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.seed)?;
    match &cli.command {
        Command::Simulate(a) => simulate(a, cfg),
        Command::Ingest(a) => ingest(a, &cfg),
        Command::Features(a) => features(a, cfg),
        Command::Split(a) => split(a, cfg),
        Command::Tune(a) => tune_cmd(a, cfg),
        Command::Train(a) => train(a, &cfg),
        Command::Evaluate(a) => evaluate(a, &cfg),
        Command::Render(a) => render(a, &cfg),
        Command::Report(a) => report(a, cfg),
    }
}

fn simulate(a: &SimulateArgs, mut cfg: RunConfig) -> Result<()> {
    let f = &mut cfg.fleet;
    if let Some(n) = a.devices {
        f.num_devices = n;
    }
    if let Some(n) = a.samples {
        f.num_samples = n;
    }
    if let Some(n) = a.sram_bytes {
        f.sram_bytes = n;
    }
    if let Some(u) = a.usage_min {
        f.usage_range.0 = u;
    }
    if let Some(u) = a.usage_max {
        f.usage_range.1 = u;
    }
    if let Some(s) = a.noise_scale {
        f.noise_scale = s;
    }
    match a.drift {
        Some(DriftPreset::Strong) => f.profile_prior = ProfilePrior::strong(),
        Some(DriftPreset::None) => f.profile_prior = ProfilePrior::none(),
        None => {}
    }
    create_dir(&a.out)?;
    let manifest = generate_fleet(&cfg.fleet, &a.out)?;
    write_json(
        &a.out.join("simulate.json"),
        "simulate",
        &cfg,
        &serde_json::json!({ "fleet": cfg.fleet }),
    )?;
    println!(
        "simulated {} devices x {} samples x {} bytes into {}",
        manifest.devices.len(),
        cfg.fleet.num_samples,
        cfg.fleet.sram_bytes,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct DeviceSummary {
    device_id: String,
    usage_months: f64,
    samples: usize,
    bits: usize,
    mean_p1: f64,
    mean_instability: f64,
    pct1s_mean: f64,
}

fn ingest(a: &IngestArgs, cfg: &RunConfig) -> Result<()> {
    let manifest = DeviceManifest::load(&a.manifest)?;
    let rows = sram_ageing::par::map_range(manifest.devices.len(), |i| -> sram_ageing::Result<DeviceSummary> {
        let d = manifest.load_device(i)?;
        let all: Vec<usize> = (0..d.num_samples()).collect();
        let p1 = compute_p1(&d, &all)?;
        Ok(DeviceSummary {
            device_id: d.device_id().to_string(),
            usage_months: d.usage_months(),
            samples: d.num_samples(),
            bits: d.num_bits(),
            mean_p1: p1.mean(),
            mean_instability: compute_instability(&p1).mean(),
            pct1s_mean: pct_ones_stats(&d).mean,
        })
    })
    .into_iter()
    .collect::<sram_ageing::Result<Vec<_>>>()?;
    println!(
        "{:<16}{:>10}{:>9}{:>9}{:>10}{:>10}",
        "device", "usage", "samples", "bits", "mean P1", "mean I"
    );
    for r in &rows {
        println!(
            "{:<16}{:>10.3}{:>9}{:>9}{:>10.4}{:>10.4}",
            r.device_id, r.usage_months, r.samples, r.bits, r.mean_p1, r.mean_instability
        );
    }
    if let Some(out) = &a.out {
        write_json(out, "ingest", cfg, &serde_json::json!({ "devices": rows }))?;
    }
    Ok(())
}

fn features(a: &FeaturesArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(g) = a.group_size {
        cfg.toolkit.features.group_size = g;
    }
    if let Some(b) = a.block_bytes {
        cfg.toolkit.features.block_bytes = b;
    }
    cfg.toolkit.validate()?;
    let manifest = DeviceManifest::load(&a.manifest)?;
    let labels = manifest.labels();
    let split = match &a.split {
        Some(p) => read_json::<SplitAssignment>(p)?,
        None => stratified_device_split(
            &labels,
            cfg.toolkit.split.train_fraction,
            cfg.toolkit.split.bin_months,
            cfg.toolkit.seed,
        )?,
    };
    let (schema, dataset) = build_features(&labels, |i| manifest.load_device(i), &cfg.toolkit.features, &split)?;
    create_dir(&a.out)?;
    dataset.save_csv(a.out.join("features.csv"))?;
    write_json(&a.out.join("schema.json"), "features", &cfg, &schema)?;
    if a.split.is_none() {
        write_json(&a.out.join("split.json"), "features", &cfg, &split)?;
    }
    println!(
        "{} rows x {} features from {} devices; schema {}",
        dataset.len(),
        schema.len(),
        labels.len(),
        &schema.hash()[..12]
    );
    Ok(())
}

fn split(a: &SplitArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(f) = a.train_fraction {
        cfg.toolkit.split.train_fraction = f;
    }
    let labels = match (&a.manifest, &a.dataset) {
        (Some(m), _) => DeviceManifest::load(m)?.labels(),
        (None, Some(d)) => LabeledDataset::load_csv(d)?.devices(),
        (None, None) => bail!("either --manifest or --dataset is required"),
    };
    let split = stratified_device_split(
        &labels,
        cfg.toolkit.split.train_fraction,
        cfg.toolkit.split.bin_months,
        cfg.toolkit.seed,
    )?;
    write_json(&a.out, "split", &cfg, &split)?;
    println!(
        "{} train / {} test devices",
        split.train_devices.len(),
        split.test_devices.len()
    );
    Ok(())
}

/// Output of `tune`, input of `train`.
#[derive(Debug, Serialize, Deserialize)]
struct TunedFile {
    task: TaskArg,
    resolution_months: Option<u32>,
    span_months: f64,
    no_spectrum: bool,
    results: Vec<SearchOutcome>,
}

impl Serialize for TaskArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            TaskArg::Regression => "regression",
            TaskArg::Classification => "classification",
        })
    }
}

impl<'de> Deserialize<'de> for TaskArg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match String::deserialize(d)?.as_str() {
            "regression" => Ok(TaskArg::Regression),
            "classification" => Ok(TaskArg::Classification),
            other => Err(serde::de::Error::custom(format!("unknown task `{other}`"))),
        }
    }
}

fn max_usage(ds: &LabeledDataset) -> f64 {
    ds.usages.iter().copied().fold(0.0, f64::max)
}

fn check_split(ds: &LabeledDataset, split: &SplitAssignment) -> Result<()> {
    for (id, tag) in ds.device_ids.iter().zip(&ds.splits) {
        if split.tag_of(id) != Some(*tag) {
            return Err(Error::SchemaMismatch {
                expected: format!("device `{id}` tagged as in the split file"),
                actual: format!("`{}` in the dataset", tag.as_str()),
            }
            .into());
        }
    }
    Ok(())
}

struct TaskSetup {
    task: Task,
    classes: Option<UsageClasses>,
    stage: Stage,
}

fn task_setup(task: TaskArg, resolution: Option<u32>, span: f64, no_spectrum: bool) -> Result<TaskSetup> {
    Ok(match task {
        TaskArg::Regression => TaskSetup {
            task: Task::Regression,
            classes: None,
            stage: if no_spectrum {
                Stage::Ablation
            } else {
                Stage::Regression
            },
        },
        TaskArg::Classification => {
            let r = resolution
                .ok_or_else(|| sram_ageing::Error::InvalidArgument("classification needs --resolution".into()))?;
            let classes = UsageClasses::new(r, span)?;
            TaskSetup {
                task: Task::Classification {
                    num_classes: classes.num_classes(),
                },
                classes: Some(classes),
                stage: Stage::Classification { resolution_months: r },
            }
        }
    })
}

fn targets(ds: &LabeledDataset, classes: Option<UsageClasses>) -> Vec<f64> {
    match classes {
        Some(c) => c.labels(&ds.usages),
        None => ds.usages.clone(),
    }
}

fn parse_learners(names: &[String], default: &[LearnerKind]) -> Result<Vec<LearnerKind>> {
    if names.is_empty() || names.iter().any(|n| n == "all") {
        return Ok(if names.is_empty() {
            default.to_vec()
        } else {
            LearnerKind::ALL.to_vec()
        });
    }
    Ok(names.iter().map(|n| n.parse()).collect::<sram_ageing::Result<_>>()?)
}

fn tune_cmd(a: &TuneArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(n) = a.candidates {
        cfg.toolkit.search = cfg.toolkit.search.clone().with_uniform_budget(n);
    }
    cfg.toolkit.validate()?;
    let mut ds = LabeledDataset::load_csv(&a.dataset)?;
    if let Some(p) = &a.split {
        check_split(&ds, &read_json(p)?)?;
    }
    let span = max_usage(&ds);
    if a.no_spectrum {
        ds = ds.truncate_features(NUM_BASE_FEATURES);
    }
    let setup = task_setup(a.task, a.resolution, span, a.no_spectrum)?;
    let train_ds = ds.partition(SplitTag::Train);
    let y = targets(&train_ds, setup.classes);
    let mut results = Vec::new();
    for kind in parse_learners(&a.learners, &cfg.toolkit.learners)? {
        let out = tune(&cfg.toolkit, kind, setup.task, &train_ds, &y, setup.stage)?;
        println!(
            "{:<5} cv {:.4}  {}  ({} candidates, {} failed)",
            kind.name(),
            out.cv_score,
            params_text(&out.best),
            out.candidates,
            out.failed
        );
        results.push(out);
    }
    let file = TunedFile {
        task: a.task,
        resolution_months: a.resolution,
        span_months: span,
        no_spectrum: a.no_spectrum,
        results,
    };
    write_json(&a.out, "tune", &cfg, &file)
}

fn train(a: &TrainArgs, cfg: &RunConfig) -> Result<()> {
    let tuned: TunedFile = read_json(&a.tuned)?;
    let outcome = match &a.learner {
        None => tuned.results.first(),
        Some(name) => {
            let kind: LearnerKind = name.parse()?;
            tuned.results.iter().find(|r| r.learner == kind)
        }
    }
    .ok_or_else(|| sram_ageing::Error::InvalidArgument("no matching learner in the tuned file".into()))?;
    let mut ds = LabeledDataset::load_csv(&a.dataset)?;
    if tuned.no_spectrum {
        ds = ds.truncate_features(NUM_BASE_FEATURES);
    }
    let setup = task_setup(
        tuned.task,
        tuned.resolution_months,
        tuned.span_months,
        tuned.no_spectrum,
    )?;
    let train_ds = ds.partition(SplitTag::Train);
    let y = targets(&train_ds, setup.classes);
    let mut model = fit_final(&cfg.toolkit, &outcome.best, setup.task, &train_ds, &y, setup.stage)?;
    if let Some(c) = setup.classes {
        model = model.with_usage_classes(c);
    }
    if let Some(p) = &a.schema {
        let schema = FeatureSchema::from_json(&read_text(p)?)?;
        model = model.with_schema_hash(schema.hash());
    }
    write_json(&a.out, "train", cfg, &model)?;
    println!("trained {} on {} rows", outcome.learner, train_ds.len());
    Ok(())
}

#[derive(Serialize)]
struct EvaluationFile {
    learner: LearnerKind,
    rows: usize,
    devices: usize,
    #[serde(flatten)]
    score: Evaluation,
}

fn evaluate(a: &EvaluateArgs, cfg: &RunConfig) -> Result<()> {
    let model = TrainedModel::from_json(&read_text(&a.model)?)?;
    let schema = match &a.schema {
        Some(p) => Some(FeatureSchema::from_json(&read_text(p)?)?),
        None => None,
    };
    if let (Some(s), Some(h)) = (&schema, &model.schema_hash) {
        if s.hash() != *h {
            return Err(Error::SchemaMismatch {
                expected: format!("schema {}", &h[..12.min(h.len())]),
                actual: format!("schema {}", &s.hash()[..12]),
            }
            .into());
        }
    }
    let mut data = match (&a.dataset, &a.manifest) {
        (Some(p), _) => {
            let ds = LabeledDataset::load_csv(p)?;
            match a.partition {
                PartitionArg::Train => ds.partition(SplitTag::Train),
                PartitionArg::Test => ds.partition(SplitTag::Test),
                PartitionArg::All => ds,
            }
        }
        (None, Some(m)) => {
            let schema = schema.as_ref().expect("clap requires --schema with --manifest");
            let manifest = DeviceManifest::load(m)?;
            let split: Option<SplitAssignment> = a.split.as_deref().map(read_json).transpose()?;
            let keep: Vec<usize> = (0..manifest.devices.len())
                .filter(|&i| {
                    split
                        .as_ref()
                        .is_none_or(|s| s.tag_of(&manifest.devices[i].device_id) == Some(SplitTag::Test))
                })
                .collect();
            let vectors = sram_ageing::par::map_slice(&keep, |&i| extract_features(&manifest.load_device(i)?, schema))
                .into_iter()
                .collect::<sram_ageing::Result<Vec<_>>>()?;
            let mut ds = LabeledDataset::empty(schema.names.clone());
            for v in vectors.into_iter().flatten() {
                ds.push(v.values, v.usage_months, &v.device_id, SplitTag::Test);
            }
            ds
        }
        (None, None) => bail!("either --dataset or --manifest is required"),
    };
    if model.num_features() == NUM_BASE_FEATURES && data.feature_names.len() > NUM_BASE_FEATURES {
        data = data.truncate_features(NUM_BASE_FEATURES);
    }
    let score = evaluate_model(&model, &data, None, cfg.toolkit.mape_epsilon)?;
    match &score {
        Evaluation::Regression(s) => println!(
            "{:<5} R2 {:.4}  MAPE {:.2} %  ({} rows)",
            model.kind().name(),
            s.r2,
            100.0 * s.mape,
            data.len()
        ),
        Evaluation::Classification(s) => println!(
            "{:<5} macro F1 {:.4}  ({} rows, {} classes)",
            model.kind().name(),
            s.f1_macro,
            data.len(),
            s.per_class.len()
        ),
    }
    if let Some(out) = &a.out {
        let file = EvaluationFile {
            learner: model.kind(),
            rows: data.len(),
            devices: data.devices().len(),
            score,
        };
        write_json(out, "evaluate", cfg, &file)?;
    }
    Ok(())
}

fn render(a: &RenderArgs, cfg: &RunConfig) -> Result<()> {
    if a.devices.len() > 2 {
        bail!(sram_ageing::Error::InvalidArgument(
            "render takes one or two devices".into()
        ));
    }
    let manifest = DeviceManifest::load(&a.manifest)?;
    let block_bytes = a.block_bytes.unwrap_or(cfg.toolkit.features.block_bytes);
    let mode = match a.mode {
        ModeArg::Unsorted => RenderMode::Unsorted,
        ModeArg::RowRanked => RenderMode::RowRanked,
    };
    create_dir(&a.out)?;
    let mut maps = Vec::new();
    for id in &a.devices {
        let idx = manifest
            .devices
            .iter()
            .position(|e| &e.device_id == id)
            .ok_or_else(|| sram_ageing::Error::InvalidArgument(format!("no device `{id}` in the manifest")))?;
        let d = manifest.load_device(idx)?;
        let all: Vec<usize> = (0..d.num_samples()).collect();
        let p1 = compute_p1(&d, &all)?;
        let stem = sanitize(id);
        render_p1(&p1, mode).write_pgm(a.out.join(format!("{stem}_p1.pgm")))?;
        render_instability(&compute_instability(&p1), mode).write_pgm(a.out.join(format!("{stem}_instability.pgm")))?;
        XyTable::p1_blocks(&p1, block_bytes)?.write(a.out.join(format!("{stem}_p1_blocks")))?;
        maps.push((id.clone(), p1));
    }
    let named: Vec<(&str, &_)> = maps.iter().map(|(n, m)| (n.as_str(), m)).collect();
    XyTable::spectra(&named)?.write(a.out.join("spectrum"))?;
    println!("wrote renderings for {} device(s) to {}", maps.len(), a.out.display());
    Ok(())
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn report(a: &ReportArgs, mut cfg: RunConfig) -> Result<()> {
    if let Some(p) = &a.from {
        let report = ExperimentReport::from_json(&read_text(p)?)?;
        print!("{}", report.table());
        return Ok(());
    }
    if let Some(n) = a.candidates {
        cfg.toolkit.search = cfg.toolkit.search.clone().with_uniform_budget(n);
    }
    cfg.toolkit.validate()?;
    let manifest_path = a.manifest.as_ref().expect("clap requires --manifest without --from");
    let manifest = DeviceManifest::load(manifest_path)?;
    let prepared = prepare_manifest(&manifest, &cfg.toolkit)?;
    let report = match (a.no_regression, a.no_classification) {
        (false, false) => full_experiment(&prepared, &cfg.toolkit)?,
        (false, true) => regression_experiment(&prepared, &cfg.toolkit)?,
        (true, false) => classification_experiment(&prepared, &cfg.toolkit)?,
        (true, true) => bail!(sram_ageing::Error::InvalidArgument("nothing to run".into())),
    };
    print!("{}", report.table());
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("report.json"), "report", &cfg, &report.canonical())?;
        fs::write(out.join("report.txt"), report.canonical().table()).map_err(|e| Error::io(out, e))?;
        let timing = serde_json::json!({ "wall_clock_seconds": report.wall_clock_seconds });
        fs::write(out.join("timing.json"), timing.to_string() + "\n").map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}
