//! Synthetic SRAM ageing: a statistical stand-in for NBTI drift.
//!
//! Each cell has a latent skew `s` (positive favours a startup 1). A power-up
//! reads 1 with probability `logistic(s / noise_scale)`. Ageing adds
//! `usage · drift_rate · footprint[i]` plus a usage-scaled address gradient
//! and a few low-frequency cosine terms. Drift is monotone in usage; the
//! recovery phase of real NBTI is not modelled.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bitcore::BitSampleSet;
use crate::datasetio::{write_dump, DeviceManifest, ManifestEntry};
use crate::error::{invalid, Result};
use crate::{par, seed};

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellPopulation {
    pub skew: Vec<f64>,
    pub noise_scale: f64,
}

impl CellPopulation {
    pub fn num_bits(&self) -> usize {
        self.skew.len()
    }
}

/// Two-component zero-mean normal mixture for pristine skews, in units of
/// the noise scale: a wide component of stable cells and a narrow one of
/// near-balanced cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkewPrior {
    pub unstable_fraction: f64,
    pub unstable_scale: f64,
    pub stable_scale: f64,
}

impl Default for SkewPrior {
    fn default() -> Self {
        Self {
            unstable_fraction: 0.15,
            unstable_scale: 0.5,
            stable_scale: 4.0,
        }
    }
}

impl SkewPrior {
    pub fn sample(&self, num_bits: usize, noise_scale: f64, rng: &mut impl Rng) -> CellPopulation {
        let narrow = Normal::new(0.0, self.unstable_scale * noise_scale).expect("finite scale");
        let wide = Normal::new(0.0, self.stable_scale * noise_scale).expect("finite scale");
        let skew = (0..num_bits)
            .map(|_| {
                if rng.random::<f64>() < self.unstable_fraction {
                    narrow.sample(rng)
                } else {
                    wide.sample(rng)
                }
            })
            .collect();
        CellPopulation { skew, noise_scale }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgeingProfile {
    /// Stress direction per cell: +1 drifts toward a startup 1, −1 toward 0.
    pub footprint: Vec<i8>,
    pub drift_rate: f64,
    /// Extra skew per month at the top address, linear from 0 at address 0.
    pub address_gradient: f64,
    /// `(bin, amplitude per month)` cosines over the address space.
    pub low_freq_components: Vec<(usize, f64)>,
}

impl AgeingProfile {
    pub fn pristine(num_bits: usize) -> Self {
        Self {
            footprint: vec![0; num_bits],
            drift_rate: 0.0,
            address_gradient: 0.0,
            low_freq_components: Vec::new(),
        }
    }

    pub fn aged_skew(&self, pop: &CellPopulation, usage_months: f64) -> Vec<f64> {
        let b = pop.num_bits();
        let top = (b.max(2) - 1) as f64;
        pop.skew
            .iter()
            .zip(&self.footprint)
            .enumerate()
            .map(|(i, (&s, &f))| {
                let mut shift = self.drift_rate * f as f64 + self.address_gradient * i as f64 / top;
                for &(bin, amp) in &self.low_freq_components {
                    shift += amp * (2.0 * PI * (bin * i) as f64 / b as f64).cos();
                }
                s + usage_months * shift
            })
            .collect()
    }

    /// Per-cell probability of reading 1 after `usage_months` of use.
    pub fn startup_probabilities(&self, pop: &CellPopulation, usage_months: f64) -> Vec<f64> {
        self.aged_skew(pop, usage_months)
            .into_iter()
            .map(|s| logistic(s / pop.noise_scale))
            .collect()
    }
}

/// How device ageing profiles are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfilePrior {
    pub drift_rate: f64,
    pub address_gradient: f64,
    pub low_freq_components: Vec<(usize, f64)>,
    /// Share of cells inside `active_region` that the firmware stresses.
    pub active_fraction: f64,
    /// Share of stressed cells pushed toward 1.
    pub positive_fraction: f64,
    /// Stressed address range as fractions of the memory, `[start, end)`.
    pub active_region: (f64, f64),
    /// One footprint for the whole fleet instead of one per device.
    pub shared_footprint: bool,
}

impl Default for ProfilePrior {
    fn default() -> Self {
        Self::strong()
    }
}

impl ProfilePrior {
    /// Drift large compared to the startup noise, with a broad low-frequency
    /// spatial pattern (bins 1 to 20). The rate is kept low enough that
    /// stressed cells do not all saturate within a year and a half.
    pub fn strong() -> Self {
        Self {
            drift_rate: 0.1,
            address_gradient: -0.05,
            low_freq_components: (1..=20).map(|bin| (bin, 0.05)).collect(),
            active_fraction: 0.5,
            positive_fraction: 0.75,
            active_region: (0.0, 1.0),
            shared_footprint: true,
        }
    }

    /// No ageing at all.
    pub fn none() -> Self {
        Self {
            drift_rate: 0.0,
            address_gradient: 0.0,
            low_freq_components: Vec::new(),
            ..Self::strong()
        }
    }

    pub fn sample(&self, num_bits: usize, rng: &mut impl Rng) -> AgeingProfile {
        let lo = (self.active_region.0 * num_bits as f64).round() as usize;
        let hi = (self.active_region.1 * num_bits as f64).round() as usize;
        let footprint = (0..num_bits)
            .map(|i| {
                let active = rng.random::<f64>() < self.active_fraction;
                let positive = rng.random::<f64>() < self.positive_fraction;
                match (i >= lo && i < hi && active, positive) {
                    (false, _) => 0,
                    (true, true) => 1,
                    (true, false) => -1,
                }
            })
            .collect();
        AgeingProfile {
            footprint,
            drift_rate: self.drift_rate,
            address_gradient: self.address_gradient,
            low_freq_components: self.low_freq_components.clone(),
        }
    }
}

/// Draws `num_samples` independent power-ups of one device.
pub fn simulate_device(
    device_id: &str,
    pop: &CellPopulation,
    profile: &AgeingProfile,
    usage_months: f64,
    num_samples: usize,
    seed: u64,
) -> Result<BitSampleSet> {
    if !(usage_months >= 0.0) {
        return Err(invalid(format!("usage {usage_months} must be non-negative")));
    }
    if !pop.num_bits().is_multiple_of(8) || profile.footprint.len() != pop.num_bits() {
        return Err(invalid("population and footprint must share a byte-aligned width"));
    }
    if num_samples == 0 {
        return Err(invalid("at least one sample required"));
    }
    // P(bit = 1) = P(u32 draw < threshold)
    let scale = 4_294_967_296.0;
    let thresholds: Vec<u64> = profile
        .startup_probabilities(pop, usage_months)
        .into_iter()
        .map(|p| (p * scale).round() as u64)
        .collect();
    let bytes = pop.num_bits() / 8;
    let samples = par::map_range(num_samples, |j| {
        let mut rng = seed::rng(seed, &[seed::tag("power-up"), j as u64]);
        let mut dump = vec![0u8; bytes];
        for (k, byte) in dump.iter_mut().enumerate() {
            for bit in 0..8 {
                if (rng.next_u32() as u64) < thresholds[k * 8 + bit] {
                    *byte |= 1 << bit;
                }
            }
        }
        dump
    });
    BitSampleSet::from_packed(device_id, usage_months, pop.num_bits(), samples.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetConfig {
    pub num_devices: usize,
    pub num_samples: usize,
    pub sram_bytes: usize,
    /// Usages are drawn uniformly from this interval, in months.
    pub usage_range: (f64, f64),
    pub noise_scale: f64,
    pub skew_prior: SkewPrior,
    pub profile_prior: ProfilePrior,
    pub seed: u64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            num_devices: 20,
            num_samples: 100,
            sram_bytes: 2048,
            usage_range: (1.0, 19.0),
            noise_scale: 1.0,
            skew_prior: SkewPrior::default(),
            profile_prior: ProfilePrior::strong(),
            seed: 0,
        }
    }
}

impl FleetConfig {
    pub fn device_id(&self, i: usize) -> String {
        format!("sim-{i:04}")
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.usage_range;
        if !(lo >= 0.0 && hi > lo) {
            return Err(invalid("usage range must be non-negative and span at least two values"));
        }
        if self.sram_bytes == 0 || self.num_samples == 0 || !(self.noise_scale > 0.0) {
            return Err(invalid("fleet needs positive size, sample count and noise scale"));
        }
        Ok(())
    }

    pub fn device_usage(&self, i: usize) -> f64 {
        let (lo, hi) = self.usage_range;
        seed::rng(self.seed, &[seed::tag("usage"), i as u64]).random_range(lo..=hi)
    }

    /// Simulates device `i` of the fleet.
    pub fn simulate(&self, i: usize) -> Result<BitSampleSet> {
        let bits = self.sram_bytes * 8;
        let pop = self.skew_prior.sample(
            bits,
            self.noise_scale,
            &mut seed::rng(self.seed, &[seed::tag("skew"), i as u64]),
        );
        let profile_rng = if self.profile_prior.shared_footprint {
            seed::rng(self.seed, &[seed::tag("footprint")])
        } else {
            seed::rng(self.seed, &[seed::tag("footprint"), i as u64])
        };
        let profile = self.profile_prior.sample(bits, &mut { profile_rng });
        simulate_device(
            &self.device_id(i),
            &pop,
            &profile,
            self.device_usage(i),
            self.num_samples,
            seed::derive(self.seed, &[seed::tag("device"), i as u64]),
        )
    }
}

/// The whole fleet in memory, device order = index order.
pub fn simulate_fleet(config: &FleetConfig) -> Result<Vec<BitSampleSet>> {
    config.validate()?;
    (0..config.num_devices).map(|i| config.simulate(i)).collect()
}

/// Writes the fleet as raw dumps plus `manifest.json` under `out_dir` and
/// returns the manifest.
pub fn generate_fleet(config: &FleetConfig, out_dir: &Path) -> Result<DeviceManifest> {
    config.validate()?;
    let mut entries = Vec::with_capacity(config.num_devices);
    for i in 0..config.num_devices {
        let dev = config.simulate(i)?;
        let mut dumps = Vec::with_capacity(dev.num_samples());
        for j in 0..dev.num_samples() {
            let rel: PathBuf = ["dumps", dev.device_id(), &format!("{j:05}.bin")].iter().collect();
            write_dump(&out_dir.join(&rel), dev.sample(j))?;
            dumps.push(rel);
        }
        entries.push(ManifestEntry {
            device_id: dev.device_id().to_string(),
            usage_months: dev.usage_months(),
            sram_bytes: config.sram_bytes,
            dumps,
        });
    }
    let manifest = DeviceManifest::new(entries, out_dir)?;
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
