//! Dump ingestion, device manifests, device-level stratified splits and the
//! labelled feature table.
//!
//! A manifest is a JSON document:
//!
//! ```json
//! {
//!   "format": "sram-manifest",
//!   "version": 1,
//!   "bit_order": "lsb-first",
//!   "devices": [
//!     { "device_id": "m3-101", "usage_months": 7.25, "sram_bytes": 65536,
//!       "dumps": ["m3-101/0000.bin", "m3-101/0001.bin"] }
//!   ]
//! }
//! ```
//!
//! Dump paths are resolved against the manifest's directory. Each dump is a
//! raw byte image of the SRAM, exactly `sram_bytes` long, with no framing.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bitcore::{BitOrder, BitSampleSet};
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::seed;

pub const MANIFEST_FORMAT: &str = "sram-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub device_id: String,
    pub usage_months: f64,
    pub sram_bytes: usize,
    pub dumps: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceManifest {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub bit_order: BitOrder,
    pub devices: Vec<ManifestEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// A device id with its usage label; what splitting and folding operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLabel {
    pub device_id: String,
    pub usage_months: f64,
}

impl DeviceManifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            bit_order: BitOrder::LsbFirst,
            devices: entries,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MANIFEST_FORMAT {
            return Err(Error::Manifest(format!("unknown format `{}`", self.format)));
        }
        if self.version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!("unsupported version {}", self.version)));
        }
        let mut seen = HashSet::new();
        for e in &self.devices {
            if !seen.insert(e.device_id.as_str()) {
                return Err(Error::DuplicateDevice(e.device_id.clone()));
            }
            if !(e.usage_months >= 0.0 && e.usage_months.is_finite()) {
                return Err(Error::Manifest(format!(
                    "device {} has invalid usage {}",
                    e.device_id, e.usage_months
                )));
            }
            if e.sram_bytes == 0 || e.dumps.is_empty() {
                return Err(Error::Manifest(format!(
                    "device {} needs a positive size and at least one dump",
                    e.device_id
                )));
            }
        }
        if let Some(first) = self.devices.first() {
            if let Some(other) = self.devices.iter().find(|e| e.sram_bytes != first.sram_bytes) {
                return Err(Error::Manifest(format!(
                    "devices {} and {} differ in SRAM size",
                    first.device_id, other.device_id
                )));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<DeviceLabel> {
        self.devices
            .iter()
            .map(|e| DeviceLabel {
                device_id: e.device_id.clone(),
                usage_months: e.usage_months,
            })
            .collect()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Reads every dump of device `index`.
    pub fn load_device(&self, index: usize) -> Result<BitSampleSet> {
        let entry = &self.devices[index];
        let mut dumps = Vec::with_capacity(entry.dumps.len());
        for p in &entry.dumps {
            let path = self.resolve(p);
            let mut buf = Vec::with_capacity(entry.sram_bytes);
            fs::File::open(&path)
                .and_then(|mut f| f.read_to_end(&mut buf))
                .map_err(|e| Error::io(&path, e))?;
            if buf.len() != entry.sram_bytes {
                return Err(Error::SizeMismatch {
                    path,
                    expected: entry.sram_bytes,
                    actual: buf.len(),
                });
            }
            dumps.push(buf);
        }
        BitSampleSet::from_dumps(&entry.device_id, entry.usage_months, &dumps, self.bit_order)
    }

    pub fn max_usage(&self) -> f64 {
        self.devices.iter().map(|e| e.usage_months).fold(0.0, f64::max)
    }
}

/// Loads every device of the manifest at `manifest_path`, in manifest order.
pub fn ingest(manifest_path: impl AsRef<Path>) -> Result<Vec<BitSampleSet>> {
    ingest_manifest(&DeviceManifest::load(manifest_path)?)
}

pub fn ingest_manifest(manifest: &DeviceManifest) -> Result<Vec<BitSampleSet>> {
    par::map_range(manifest.devices.len(), |i| manifest.load_device(i))
        .into_iter()
        .collect()
}

/// Writes one raw dump file, creating parent directories.
pub fn write_dump(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub train_fraction: f64,
    pub bin_months: f64,
    pub train_devices: Vec<String>,
    pub test_devices: Vec<String>,
}

impl SplitAssignment {
    pub fn tag_of(&self, device_id: &str) -> Option<SplitTag> {
        if self.train_devices.iter().any(|d| d == device_id) {
            Some(SplitTag::Train)
        } else if self.test_devices.iter().any(|d| d == device_id) {
            Some(SplitTag::Test)
        } else {
            None
        }
    }
}

/// Stratum index of a usage value for bins of `bin_months`.
pub fn usage_bin(usage_months: f64, bin_months: f64) -> i64 {
    (usage_months / bin_months).floor() as i64
}

/// Largest-remainder apportionment of `total` over strata of the given
/// sizes, proportionally to `fraction`. Ties go to the earlier stratum.
pub(crate) fn apportion(sizes: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let quotas: Vec<f64> = sizes.iter().map(|&n| n as f64 * fraction).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - counts[a] as f64;
        let fb = quotas[b] - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        if counts[i] < sizes[i] {
            counts[i] += 1;
        }
    }
    counts
}

/// Splits devices into train and test sets, stratified by usage bins of
/// `bin_months`. No device ever lands in both.
pub fn stratified_device_split(
    devices: &[DeviceLabel],
    train_fraction: f64,
    bin_months: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    if !(bin_months > 0.0) {
        return Err(invalid("stratification bin width must be positive"));
    }
    let mut strata: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, d) in devices.iter().enumerate() {
        strata.entry(usage_bin(d.usage_months, bin_months)).or_default().push(i);
    }
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let total = (devices.len() as f64 * train_fraction + 1e-9).floor() as usize;
    let quotas = apportion(&sizes, train_fraction, total);

    let mut is_train = vec![false; devices.len()];
    for ((&bin, members), &quota) in strata.iter().zip(&quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut seed::rng(seed, &[seed::tag("split"), bin as u64]));
        for &i in &shuffled[..quota] {
            is_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (d, t) in devices.iter().zip(is_train) {
        if t {
            train.push(d.device_id.clone());
        } else {
            test.push(d.device_id.clone());
        }
    }
    Ok(SplitAssignment {
        seed,
        train_fraction,
        bin_months,
        train_devices: train,
        test_devices: test,
    })
}

/// Number of usage classes at `resolution_months` for usages in `[0, span]`.
pub fn num_classes(span_months: f64, resolution_months: u32) -> usize {
    ((span_months / resolution_months as f64).ceil() as usize).max(1)
}

/// Usage class at the given resolution; the maximum usage falls into the last class.
pub fn discretize_usage(usage_months: f64, resolution_months: u32, span_months: f64) -> usize {
    let class = (usage_months / resolution_months as f64).floor().max(0.0) as usize;
    class.min(num_classes(span_months, resolution_months) - 1)
}

/// Class layout used to turn usage months into labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsageClasses {
    pub resolution_months: u32,
    pub span_months: f64,
}

impl UsageClasses {
    pub fn new(resolution_months: u32, span_months: f64) -> Result<Self> {
        if resolution_months == 0 {
            return Err(invalid("resolution must be at least one month"));
        }
        if !(span_months >= 0.0 && span_months.is_finite()) {
            return Err(invalid(format!("invalid usage span {span_months}")));
        }
        Ok(Self {
            resolution_months,
            span_months,
        })
    }

    pub fn num_classes(&self) -> usize {
        num_classes(self.span_months, self.resolution_months)
    }

    pub fn class_of(&self, usage_months: f64) -> usize {
        discretize_usage(usage_months, self.resolution_months, self.span_months)
    }

    pub fn labels(&self, usages: &[f64]) -> Vec<f64> {
        usages.iter().map(|&u| self.class_of(u) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::Parse(format!("unknown split tag `{other}`"))),
        }
    }
}

/// Feature rows with their usage label, device and split.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub usages: Vec<f64>,
    pub device_ids: Vec<String>,
    pub splits: Vec<SplitTag>,
}

impl LabeledDataset {
    pub fn empty(feature_names: Vec<String>) -> Self {
        Self {
            feature_names,
            rows: Vec::new(),
            usages: Vec::new(),
            device_ids: Vec::new(),
            splits: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<f64>, usage: f64, device_id: &str, split: SplitTag) {
        self.rows.push(row);
        self.usages.push(usage);
        self.device_ids.push(device_id.to_string());
        self.splits.push(split);
    }

    /// Rows carrying `tag`.
    pub fn partition(&self, tag: SplitTag) -> LabeledDataset {
        self.filter_rows(|i| self.splits[i] == tag)
    }

    pub fn filter_rows(&self, keep: impl Fn(usize) -> bool) -> LabeledDataset {
        let mut out = LabeledDataset::empty(self.feature_names.clone());
        for i in (0..self.len()).filter(|&i| keep(i)) {
            out.push(
                self.rows[i].clone(),
                self.usages[i],
                &self.device_ids[i],
                self.splits[i],
            );
        }
        out
    }

    /// Keeps only the first `n` feature columns.
    pub fn truncate_features(&self, n: usize) -> LabeledDataset {
        LabeledDataset {
            feature_names: self.feature_names[..n].to_vec(),
            rows: self.rows.iter().map(|r| r[..n].to_vec()).collect(),
            ..self.clone()
        }
    }

    /// Distinct devices with their usage, in order of first appearance.
    pub fn devices(&self) -> Vec<DeviceLabel> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (id, &u) in self.device_ids.iter().zip(&self.usages) {
            if seen.insert(id.as_str()) {
                out.push(DeviceLabel {
                    device_id: id.clone(),
                    usage_months: u,
                });
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::Parse(e.to_string());
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.extend(["device_id", "usage_months", "split"]);
        wr.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.rows[i].iter().map(f64::to_string).collect();
            rec.push(self.device_ids[i].clone());
            rec.push(self.usages[i].to_string());
            rec.push(self.splits[i].as_str().to_string());
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let csv_err = |e: csv::Error| Error::Parse(e.to_string());
        let header = rd.headers().map_err(csv_err)?.clone();
        let n = header.len();
        if n < 3 || &header[n - 3] != "device_id" || &header[n - 2] != "usage_months" || &header[n - 1] != "split" {
            return Err(Error::Parse(
                "dataset header must end with device_id,usage_months,split".into(),
            ));
        }
        let mut ds = LabeledDataset::empty(header.iter().take(n - 3).map(str::to_string).collect());
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let row = rec.iter().take(n - 3).map(num).collect::<Result<Vec<_>>>()?;
            ds.push(row, num(&rec[n - 2])?, &rec[n - 3], rec[n - 1].parse()?);
        }
        Ok(ds)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}
