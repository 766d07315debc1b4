//! Usage-correlated features of grouped P1 maps.
//!
//! Every group of `group_size` startup samples yields one feature vector:
//!
//! | index | name                | meaning                                            |
//! |-------|---------------------|----------------------------------------------------|
//! | 0..3  | `pct1s_{max,mean,min}` | spread of the per-sample share of ones          |
//! | 3     | `p1_addr_intercept` | OLS intercept of P1 against address in `[0, 1]`     |
//! | 4     | `p1_addr_slope`     | OLS slope of the same fit                           |
//! | 5     | `p1_addr_spearman`  | rank correlation of blockwise P1 with block index   |
//! | 6..   | `spectrum_*`        | DFT amplitudes of the P1 map at selected bins       |
//!
//! The spectrum bins are chosen once, on training devices only, by
//! [`fit_frequency_selection`] and frozen into a [`FeatureSchema`].

use std::sync::Arc;

use rustfft::{num_complex::Complex, Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bitcore::{compute_p1, group_ranges, BitSampleSet, P1Map};
use crate::error::{invalid, Error, Result};
use crate::metrics::{average_ranks, pearson_r, spearman_r};
use crate::par;

pub const BASE_FEATURE_NAMES: [&str; 6] = [
    "pct1s_max",
    "pct1s_mean",
    "pct1s_min",
    "p1_addr_intercept",
    "p1_addr_slope",
    "p1_addr_spearman",
];
pub const NUM_BASE_FEATURES: usize = BASE_FEATURE_NAMES.len();
pub const DEFAULT_SELECTED_BINS: usize = 50;
pub const NUM_FEATURES: usize = NUM_BASE_FEATURES + DEFAULT_SELECTED_BINS;

const SCHEMA_FORMAT: &str = "sram-feature-schema";
const SCHEMA_VERSION: u32 = 1;

/// What the `p1_addr_spearman` feature is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpearmanMode {
    /// Blockwise P1 against block index.
    #[default]
    Blockwise,
    /// Every bit's P1 against its address. Slow on full-size memories.
    PerBit,
}

/// Which raw samples feed the `pct1s_*` features of a group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PctOnesScope {
    #[default]
    Group,
    Device,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSettings {
    pub group_size: usize,
    pub block_bytes: usize,
    pub num_selected_bins: usize,
    /// Highest spectrum bin considered for selection; `None` = all bins up to B/2.
    pub max_candidate_bin: Option<usize>,
    pub spearman_mode: SpearmanMode,
    pub pct_ones_scope: PctOnesScope,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        Self {
            group_size: 10,
            block_bytes: 1024,
            num_selected_bins: DEFAULT_SELECTED_BINS,
            max_candidate_bin: None,
            spearman_mode: SpearmanMode::Blockwise,
            pct_ones_scope: PctOnesScope::Group,
        }
    }
}

impl FeatureSettings {
    /// Number of leading spectrum bins kept per group for a memory of `num_bits`.
    pub fn spectrum_len(&self, num_bits: usize) -> usize {
        let full = num_bits / 2;
        self.max_candidate_bin.map_or(full, |m| m.min(full)) + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub format: String,
    pub version: u32,
    pub num_bits: usize,
    pub settings: FeatureSettings,
    pub names: Vec<String>,
    pub selected_freq_indices: Vec<usize>,
}

impl FeatureSchema {
    pub fn new(num_bits: usize, settings: FeatureSettings, selected: Vec<usize>) -> Result<Self> {
        let schema = Self {
            format: SCHEMA_FORMAT.into(),
            version: SCHEMA_VERSION,
            num_bits,
            settings,
            names: feature_names(selected.len()),
            selected_freq_indices: selected,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != SCHEMA_FORMAT || self.version != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch {
                expected: format!("{SCHEMA_FORMAT} v{SCHEMA_VERSION}"),
                actual: format!("{} v{}", self.format, self.version),
            });
        }
        if self.names != feature_names(self.selected_freq_indices.len()) {
            return Err(invalid("feature names do not match the selected bins"));
        }
        let top = self.num_bits / 2;
        let increasing = self.selected_freq_indices.windows(2).all(|w| w[0] < w[1]);
        if !increasing || self.selected_freq_indices.iter().any(|&b| b > top) {
            return Err(invalid(format!(
                "selected bins must be strictly increasing within 0..={top}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn feature_names(num_bins: usize) -> Vec<String> {
    BASE_FEATURE_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain((0..num_bins).map(|i| format!("spectrum_{i}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub device_id: String,
    pub usage_months: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PctOnesStats {
    pub max: f64,
    pub mean: f64,
    pub min: f64,
}

/// Max/mean/min over samples of the fraction of bits reading 1.
pub fn pct_ones_stats(samples: &BitSampleSet) -> PctOnesStats {
    pct_ones_in_range(samples, 0..samples.num_samples())
}

fn pct_ones_in_range(samples: &BitSampleSet, range: std::ops::Range<usize>) -> PctOnesStats {
    let bits = samples.num_bits() as f64;
    let n = range.len() as f64;
    let mut stats = PctOnesStats {
        max: f64::NEG_INFINITY,
        mean: 0.0,
        min: f64::INFINITY,
    };
    for j in range {
        let frac = samples.ones_in_sample(j) as f64 / bits;
        stats.max = stats.max.max(frac);
        stats.min = stats.min.min(frac);
        stats.mean += frac;
    }
    stats.mean /= n;
    stats
}

/// Mean P1 of each consecutive block of `block_bytes` bytes.
pub fn blockwise_p1(p1: &P1Map, block_bytes: usize) -> Result<Vec<f64>> {
    let block_bits = block_bytes * 8;
    if block_bits == 0 || !p1.len().is_multiple_of(block_bits) {
        return Err(invalid(format!(
            "{} bits cannot be split into {block_bytes}-byte blocks",
            p1.len()
        )));
    }
    let denom = block_bits as f64 * p1.num_samples_used() as f64;
    Ok(p1
        .counts()
        .chunks(block_bits)
        .map(|c| c.iter().map(|&v| v as u64).sum::<u64>() as f64 / denom)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AddressRegression {
    pub intercept: f64,
    pub slope: f64,
    /// 0 when the correlation is undefined (see `spearman_defined`).
    pub spearman: f64,
    pub spearman_defined: bool,
}

/// Least-squares line of P1 against the normalised bit address `i / (B - 1)`,
/// plus the rank correlation between P1 and address.
pub fn p1_address_regression(p1: &P1Map, block_bytes: usize, mode: SpearmanMode) -> Result<AddressRegression> {
    let b = p1.len();
    if b < 2 {
        return Err(invalid("address regression needs at least two bits"));
    }
    let values = p1.values();
    let mean_p = p1.mean();
    let scale = 1.0 / (b - 1) as f64;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let dx = i as f64 * scale - 0.5;
        sxx += dx * dx;
        sxy += dx * (v - mean_p);
    }
    let slope = sxy / sxx;
    let intercept = mean_p - 0.5 * slope;

    let correlation = match mode {
        SpearmanMode::Blockwise => {
            let blocks = blockwise_p1(p1, block_bytes)?;
            let index: Vec<f64> = (0..blocks.len()).map(|i| i as f64).collect();
            spearman_r(&blocks, &index)
        }
        SpearmanMode::PerBit => {
            // address ranks are the addresses themselves
            let index: Vec<f64> = (1..=b).map(|i| i as f64).collect();
            pearson_r(&average_ranks(&values), &index)
        }
    };
    let (spearman, spearman_defined) = match correlation {
        Ok(r) => (r, true),
        Err(e) => {
            log::warn!("P1/address correlation undefined ({e}); feature set to 0");
            (0.0, false)
        }
    };
    Ok(AddressRegression {
        intercept,
        slope,
        spearman,
        spearman_defined,
    })
}

/// Reusable FFT plan for P1 spectra of a fixed width.
#[derive(Clone)]
pub struct SpectrumPlan {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
}

impl std::fmt::Debug for SpectrumPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrumPlan").field("len", &self.len).finish()
    }
}

impl SpectrumPlan {
    pub fn new(len: usize) -> Self {
        Self {
            fft: FftPlanner::new().plan_fft_forward(len),
            len,
        }
    }

    /// One-sided amplitude spectrum (bins `0..=B/2`) of the mean-removed P1.
    pub fn amplitudes(&self, p1: &P1Map) -> Result<Vec<f64>> {
        if p1.len() != self.len {
            return Err(invalid(format!(
                "plan built for {} bits, map has {}",
                self.len,
                p1.len()
            )));
        }
        let mean = p1.mean();
        let n = p1.num_samples_used() as f64;
        let mut buf: Vec<Complex<f64>> = p1
            .counts()
            .iter()
            .map(|&c| Complex::new(c as f64 / n - mean, 0.0))
            .collect();
        self.fft.process(&mut buf);
        Ok(buf[..=self.len / 2].iter().map(|c| c.norm()).collect())
    }
}

pub fn p1_spectrum(p1: &P1Map) -> Result<Vec<f64>> {
    if p1.len() < 2 {
        return Err(invalid("spectrum needs at least two bits"));
    }
    SpectrumPlan::new(p1.len()).amplitudes(p1)
}

/// Spectrum bins ranked by |Spearman correlation| with usage, strongest
/// first, ties to the lower bin. The DC bin and bins with an undefined
/// correlation are left out.
pub fn rank_frequency_bins<S: AsRef<[f64]> + Sync>(
    train_spectra: &[S],
    train_usages: &[f64],
) -> Result<Vec<(usize, f64)>> {
    if train_spectra.len() != train_usages.len() {
        return Err(invalid("one usage value per spectrum required"));
    }
    let width = train_spectra
        .first()
        .map(|s| s.as_ref().len())
        .ok_or_else(|| invalid("no training spectra"))?;
    if train_spectra.iter().any(|s| s.as_ref().len() != width) {
        return Err(invalid("training spectra differ in length"));
    }
    let first = train_usages[0];
    if train_usages.iter().all(|&u| u == first) {
        return Err(invalid("frequency selection needs at least two distinct usage values"));
    }
    let usage_ranks = average_ranks(train_usages);
    let scores = par::map_range(width.saturating_sub(1), |k| {
        let bin = k + 1;
        let column: Vec<f64> = train_spectra.iter().map(|s| s.as_ref()[bin]).collect();
        pearson_r(&average_ranks(&column), &usage_ranks)
            .ok()
            .map(|r| (bin, r.abs()))
    });
    let mut ranked: Vec<(usize, f64)> = scores.into_iter().flatten().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Freezes the `settings.num_selected_bins` spectrum bins most correlated
/// with usage. Only training-partition spectra may be passed in.
pub fn fit_frequency_selection<S: AsRef<[f64]> + Sync>(
    train_spectra: &[S],
    train_usages: &[f64],
    num_bits: usize,
    settings: &FeatureSettings,
) -> Result<FeatureSchema> {
    let k = settings.num_selected_bins;
    let ranked = rank_frequency_bins(train_spectra, train_usages)?;
    if ranked.len() < k {
        return Err(invalid(format!(
            "only {} spectrum bins have a defined correlation, {k} requested",
            ranked.len()
        )));
    }
    let mut selected: Vec<usize> = ranked[..k].iter().map(|&(bin, _)| bin).collect();
    selected.sort_unstable();
    FeatureSchema::new(num_bits, settings.clone(), selected)
}

/// Values of `spectrum` at `indices`, in the order given.
pub fn select_bins(spectrum: &[f64], indices: &[usize]) -> Vec<f64> {
    indices.iter().map(|&i| spectrum[i]).collect()
}

/// Schema-independent analysis of one sample group: the six scalar
/// features plus the leading spectrum bins.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAnalysis {
    pub base: [f64; NUM_BASE_FEATURES],
    pub spectrum: Vec<f64>,
}

impl GroupAnalysis {
    pub fn feature_vector(&self, selected: &[usize]) -> Vec<f64> {
        let mut v = Vec::with_capacity(NUM_BASE_FEATURES + selected.len());
        v.extend_from_slice(&self.base);
        v.extend(select_bins(&self.spectrum, selected));
        v
    }
}

/// Analyses every complete group of a device.
pub fn analyze_groups(
    samples: &BitSampleSet,
    settings: &FeatureSettings,
    plan: &SpectrumPlan,
) -> Result<Vec<GroupAnalysis>> {
    let device_pct = match settings.pct_ones_scope {
        PctOnesScope::Device => Some(pct_ones_stats(samples)),
        PctOnesScope::Group => None,
    };
    let keep = settings.spectrum_len(samples.num_bits());
    group_ranges(samples.num_samples(), settings.group_size)?
        .into_iter()
        .map(|range| {
            let p1 = compute_p1(samples, &range.clone().collect::<Vec<_>>())?;
            let pct = device_pct.unwrap_or_else(|| pct_ones_in_range(samples, range));
            let reg = p1_address_regression(&p1, settings.block_bytes, settings.spearman_mode)?;
            let mut spectrum = plan.amplitudes(&p1)?;
            spectrum.truncate(keep);
            Ok(GroupAnalysis {
                base: [pct.max, pct.mean, pct.min, reg.intercept, reg.slope, reg.spearman],
                spectrum,
            })
        })
        .collect()
}

/// One feature vector per P1 group of `samples`, laid out per `schema`.
pub fn extract_features(samples: &BitSampleSet, schema: &FeatureSchema) -> Result<Vec<FeatureVector>> {
    if samples.num_bits() != schema.num_bits {
        return Err(Error::SchemaMismatch {
            expected: format!("{} bits", schema.num_bits),
            actual: format!("{} bits", samples.num_bits()),
        });
    }
    let plan = SpectrumPlan::new(samples.num_bits());
    let groups = analyze_groups(samples, &schema.settings, &plan)?;
    Ok(groups
        .iter()
        .map(|g| FeatureVector {
            device_id: samples.device_id().to_string(),
            usage_months: samples.usage_months(),
            values: g.feature_vector(&schema.selected_freq_indices),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitcore::BitSampleSet;

    // P1_i = i / (B - 1), exact as counts over B - 1 samples
    fn ramp_map(bits: usize) -> P1Map {
        P1Map::from_counts((0..bits as u32).collect(), bits as u32 - 1).unwrap()
    }

    #[test]
    fn pct_ones_examples() {
        let ones = BitSampleSet::from_bits("d", 0.0, &vec![vec![1u8; 8]; 3]).unwrap();
        let s = pct_ones_stats(&ones);
        assert_eq!((s.max, s.mean, s.min), (1.0, 1.0, 1.0));

        let mut a = vec![0u8; 10 * 8];
        a[..32].fill(1);
        let mut b = vec![0u8; 10 * 8];
        b[..48].fill(1);
        let two = BitSampleSet::from_bits("d", 0.0, &[a, b]).unwrap();
        let s = pct_ones_stats(&two);
        assert_eq!((s.max, s.mean, s.min), (0.6, 0.5, 0.4));

        let single = BitSampleSet::from_bits("d", 0.0, &[vec![1, 1, 0, 0, 0, 0, 0, 0]]).unwrap();
        let s = pct_ones_stats(&single);
        assert_eq!((s.max, s.mean, s.min), (0.25, 0.25, 0.25));
    }

    #[test]
    fn blockwise_examples() {
        let full = P1Map::from_counts(vec![5; 524_288], 10).unwrap();
        let blocks = blockwise_p1(&full, 1024).unwrap();
        assert_eq!(blocks.len(), 64);
        assert!(blocks.iter().all(|&v| v == 0.5));

        let mut counts = vec![0u32; 8];
        counts.extend(vec![4u32; 8]);
        let m = P1Map::from_counts(counts, 4).unwrap();
        assert_eq!(blockwise_p1(&m, 1).unwrap(), vec![0.0, 1.0]);
        assert!(blockwise_p1(&m, 3).is_err());
    }

    #[test]
    fn regression_examples() {
        let flat = P1Map::from_counts(vec![1; 64], 2).unwrap();
        let r = p1_address_regression(&flat, 1, SpearmanMode::Blockwise).unwrap();
        assert!((r.intercept - 0.5).abs() < 1e-15);
        assert!(r.slope.abs() < 1e-15);
        assert!(!r.spearman_defined);
        assert_eq!(r.spearman, 0.0);

        let ramp = ramp_map(64);
        let r = p1_address_regression(&ramp, 1, SpearmanMode::Blockwise).unwrap();
        assert!((r.slope - 1.0).abs() < 1e-12, "{r:?}");
        assert!(r.intercept.abs() < 1e-12);
        assert!((r.spearman - 1.0).abs() < 1e-12);
        let r = p1_address_regression(&ramp, 1, SpearmanMode::PerBit).unwrap();
        assert!((r.spearman - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_spectrum_peaks_at_its_bin() {
        let b = 256usize;
        let k = 5usize;
        let denom = 1_000_000u32;
        // counts quantise 0.5 + 0.1 cos(.) to 1e-6
        let counts: Vec<u32> = (0..b)
            .map(|i| {
                let v = 0.5 + 0.1 * (2.0 * std::f64::consts::PI * (k * i) as f64 / b as f64).cos();
                (v * denom as f64).round() as u32
            })
            .collect();
        let p1 = P1Map::from_counts(counts, denom).unwrap();
        let amp = p1_spectrum(&p1).unwrap();
        assert_eq!(amp.len(), b / 2 + 1);
        assert!((amp[k] - 0.05 * b as f64).abs() < 1e-3);
        for (i, &a) in amp.iter().enumerate() {
            if i != k {
                assert!(a < 1e-3, "bin {i} = {a}");
            }
        }
    }

    #[test]
    fn constant_map_has_flat_spectrum() {
        let p1 = P1Map::from_counts(vec![3; 64], 10).unwrap();
        assert!(p1_spectrum(&p1).unwrap().iter().all(|&a| a < 1e-12));
    }

    #[test]
    fn selection_prefers_usage_coupled_bin() {
        let usages: Vec<f64> = (0..20).map(|u| u as f64).collect();
        let spectra: Vec<Vec<f64>> = usages
            .iter()
            .enumerate()
            .map(|(r, &u)| {
                (0..9)
                    .map(|bin| match bin {
                        3 => u,
                        // constant plus a deterministic wiggle uncorrelated with row order
                        _ => 1.0 + ((r * 7 + bin * 3) % 5) as f64 * 0.01,
                    })
                    .collect()
            })
            .collect();
        let ranked = rank_frequency_bins(&spectra, &usages).unwrap();
        assert_eq!(ranked[0].0, 3);
        assert!((ranked[0].1 - 1.0).abs() < 1e-12);

        let settings = FeatureSettings {
            num_selected_bins: 8,
            ..Default::default()
        };
        let schema = fit_frequency_selection(&spectra, &usages, 16, &settings).unwrap();
        assert_eq!(schema.selected_freq_indices, (1..=8).collect::<Vec<_>>());

        let too_many = FeatureSettings {
            num_selected_bins: 9,
            ..Default::default()
        };
        assert!(fit_frequency_selection(&spectra, &usages, 16, &too_many).is_err());
        assert!(rank_frequency_bins(&spectra, &[1.0; 20]).is_err());
    }

    #[test]
    fn bin_selection_follows_index_order() {
        let spectrum: Vec<f64> = (0..10).map(|i| i as f64 * 1.5).collect();
        let idx = [2, 7, 4];
        let perm = [4, 2, 7];
        let a = select_bins(&spectrum, &idx);
        let b = select_bins(&spectrum, &perm);
        assert_eq!(b, vec![a[2], a[0], a[1]]);
    }

    #[test]
    fn zero_device_features() {
        let s = BitSampleSet::from_bits("d", 3.0, &vec![vec![0u8; 64]; 10]).unwrap();
        let settings = FeatureSettings {
            block_bytes: 1,
            num_selected_bins: 2,
            ..Default::default()
        };
        let schema = FeatureSchema::new(64, settings, vec![1, 5]).unwrap();
        let fv = extract_features(&s, &schema).unwrap();
        assert_eq!(fv.len(), 1);
        let v = &fv[0].values;
        assert_eq!(v.len(), 8);
        assert_eq!(&v[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(v[4], 0.0);
        assert!(v[6..].iter().all(|&a| a == 0.0));
    }

    #[test]
    fn schema_validation_and_json() {
        let schema = FeatureSchema::new(64, FeatureSettings::default(), vec![1, 3, 9]).unwrap();
        assert_eq!(schema.len(), 9);
        let back = FeatureSchema::from_json(&schema.to_json()).unwrap();
        assert_eq!(back, schema);
        assert_eq!(back.hash(), schema.hash());
        assert!(FeatureSchema::new(64, FeatureSettings::default(), vec![3, 1]).is_err());
        assert!(FeatureSchema::new(64, FeatureSettings::default(), vec![33]).is_err());
        let mut bad = schema.clone();
        bad.version = 9;
        assert!(matches!(bad.validate(), Err(Error::SchemaMismatch { .. })));
    }

    #[test]
    fn default_schema_has_56_named_features() {
        let schema = FeatureSchema::new(524_288, FeatureSettings::default(), (1..=50).collect()).unwrap();
        assert_eq!(schema.len(), NUM_FEATURES);
        assert_eq!(schema.names[5], "p1_addr_spearman");
        assert_eq!(schema.names[55], "spectrum_49");
    }
}
