//! Packed startup-dump storage and the two per-bit statistics: probability of
//! one (P1) and bit instability.
//!
//! Bit `i` of a sample lives in byte `i / 8` at position `i % 8`, least
//! significant bit first. Dumps recorded with the opposite convention are
//! normalised at construction time via [`BitOrder::MsbFirst`].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BitOrder {
    #[default]
    LsbFirst,
    MsbFirst,
}

/// A stack of `N` startup dumps of one device, each `B` bits long.
#[derive(Debug, Clone, PartialEq)]
pub struct BitSampleSet {
    device_id: String,
    usage_months: f64,
    num_bits: usize,
    num_samples: usize,
    data: Vec<u8>,
}

impl BitSampleSet {
    /// Builds a set from `dumps` (one byte image per sample).
    pub fn from_dumps<D: AsRef<[u8]>>(
        device_id: impl Into<String>,
        usage_months: f64,
        dumps: &[D],
        order: BitOrder,
    ) -> Result<Self> {
        let first = dumps
            .first()
            .ok_or_else(|| invalid("a sample set needs at least one dump"))?;
        let bytes = first.as_ref().len();
        let mut data = Vec::with_capacity(bytes * dumps.len());
        for (j, d) in dumps.iter().enumerate() {
            let d = d.as_ref();
            if d.len() != bytes {
                return Err(invalid(format!("dump {j} has {} bytes, expected {bytes}", d.len())));
            }
            match order {
                BitOrder::LsbFirst => data.extend_from_slice(d),
                BitOrder::MsbFirst => data.extend(d.iter().map(|b| b.reverse_bits())),
            }
        }
        Self::from_packed(device_id, usage_months, bytes * 8, data)
    }

    /// Builds a set from already packed, LSB-first data of `num_bits` bits per sample.
    pub fn from_packed(
        device_id: impl Into<String>,
        usage_months: f64,
        num_bits: usize,
        data: Vec<u8>,
    ) -> Result<Self> {
        if num_bits == 0 || !num_bits.is_multiple_of(8) {
            return Err(invalid(format!(
                "bit count {num_bits} must be a positive multiple of 8"
            )));
        }
        if !(usage_months >= 0.0 && usage_months.is_finite()) {
            return Err(invalid(format!("usage {usage_months} must be non-negative")));
        }
        let bytes = num_bits / 8;
        if data.is_empty() || !data.len().is_multiple_of(bytes) {
            return Err(invalid(format!(
                "{} bytes of data do not form whole {bytes}-byte samples",
                data.len()
            )));
        }
        Ok(Self {
            device_id: device_id.into(),
            usage_months,
            num_bits,
            num_samples: data.len() / bytes,
            data,
        })
    }

    /// Builds a set from explicit 0/1 rows. Mostly useful for tests.
    pub fn from_bits(device_id: impl Into<String>, usage_months: f64, rows: &[Vec<u8>]) -> Result<Self> {
        let width = rows.first().map(Vec::len).ok_or_else(|| invalid("no samples"))?;
        if width % 8 != 0 {
            return Err(invalid(format!("row width {width} is not byte aligned")));
        }
        let mut data = vec![0u8; width / 8 * rows.len()];
        for (j, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(invalid(format!("row {j} has {} bits, expected {width}", row.len())));
            }
            for (i, &b) in row.iter().enumerate() {
                match b {
                    0 => {}
                    1 => data[j * width / 8 + i / 8] |= 1 << (i % 8),
                    other => return Err(invalid(format!("bit value {other} is not 0 or 1"))),
                }
            }
        }
        Self::from_packed(device_id, usage_months, width, data)
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn usage_months(&self) -> f64 {
        self.usage_months
    }

    pub fn num_bits(&self) -> usize {
        self.num_bits
    }

    pub fn num_bytes(&self) -> usize {
        self.num_bits / 8
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    /// Packed LSB-first bytes of sample `j`.
    pub fn sample(&self, j: usize) -> &[u8] {
        let n = self.num_bytes();
        &self.data[j * n..(j + 1) * n]
    }

    pub fn bit(&self, sample: usize, bit: usize) -> u8 {
        (self.sample(sample)[bit / 8] >> (bit % 8)) & 1
    }

    pub fn ones_in_sample(&self, j: usize) -> u64 {
        self.sample(j).iter().map(|b| b.count_ones() as u64).sum()
    }

    /// Same device with every bit inverted.
    pub fn complemented(&self) -> Self {
        Self {
            data: self.data.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    /// Restricts the set to a contiguous sample range.
    pub fn slice_samples(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.num_samples {
            return Err(invalid(format!(
                "sample range {range:?} outside 0..{}",
                self.num_samples
            )));
        }
        let n = self.num_bytes();
        Ok(Self {
            data: self.data[range.start * n..range.end * n].to_vec(),
            num_samples: range.len(),
            ..self.clone()
        })
    }
}

/// Per-bit probability of one, stored as exact counts over a fixed number of samples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct P1Map {
    ones: Vec<u32>,
    num_samples: u32,
}

impl P1Map {
    pub fn from_counts(ones: Vec<u32>, num_samples: u32) -> Result<Self> {
        if num_samples == 0 {
            return Err(invalid("P1 needs at least one sample"));
        }
        if let Some(c) = ones.iter().find(|&&c| c > num_samples) {
            return Err(invalid(format!("count {c} exceeds sample count {num_samples}")));
        }
        Ok(Self { ones, num_samples })
    }

    pub fn len(&self) -> usize {
        self.ones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ones.is_empty()
    }

    pub fn num_samples_used(&self) -> u32 {
        self.num_samples
    }

    pub fn counts(&self) -> &[u32] {
        &self.ones
    }

    pub fn value(&self, i: usize) -> f64 {
        self.ones[i] as f64 / self.num_samples as f64
    }

    pub fn values(&self) -> Vec<f64> {
        let n = self.num_samples as f64;
        self.ones.iter().map(|&c| c as f64 / n).collect()
    }

    pub fn mean(&self) -> f64 {
        let total: u64 = self.ones.iter().map(|&c| c as u64).sum();
        total as f64 / (self.num_samples as f64 * self.ones.len() as f64)
    }

    /// P1 over the union of the two underlying (disjoint) sample sets.
    pub fn merge(&self, other: &P1Map) -> Result<P1Map> {
        if self.len() != other.len() {
            return Err(invalid("cannot merge P1 maps of different widths"));
        }
        let ones = self.ones.iter().zip(&other.ones).map(|(a, b)| a + b).collect();
        P1Map::from_counts(ones, self.num_samples + other.num_samples)
    }
}

/// Symmetrised P1: `min(P1, 1 - P1)`, 0 for a fully stable cell, 0.5 for a coin flip.
#[derive(Debug, Clone, PartialEq)]
pub struct InstabilityMap {
    values: Vec<f64>,
}

impl InstabilityMap {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// P1 of every bit over the samples listed in `sample_indices`.
pub fn compute_p1(samples: &BitSampleSet, sample_indices: &[usize]) -> Result<P1Map> {
    if sample_indices.is_empty() {
        return Err(invalid("compute_p1 needs a non-empty sample index set"));
    }
    let mut ones = vec![0u32; samples.num_bits()];
    for &j in sample_indices {
        if j >= samples.num_samples() {
            return Err(invalid(format!(
                "sample index {j} out of range 0..{}",
                samples.num_samples()
            )));
        }
        accumulate(&mut ones, samples.sample(j));
    }
    P1Map::from_counts(ones, sample_indices.len() as u32)
}

fn accumulate(ones: &mut [u32], bytes: &[u8]) {
    for (k, &byte) in bytes.iter().enumerate() {
        let mut b = byte;
        while b != 0 {
            ones[k * 8 + b.trailing_zeros() as usize] += 1;
            b &= b - 1;
        }
    }
}

pub fn compute_instability(p1: &P1Map) -> InstabilityMap {
    let n = p1.num_samples_used();
    let values = p1.counts().iter().map(|&c| c.min(n - c) as f64 / n as f64).collect();
    InstabilityMap { values }
}

/// One P1 map per consecutive, non-overlapping group of `group_size` samples.
/// A trailing partial group is dropped.
pub fn group_p1(samples: &BitSampleSet, group_size: usize) -> Result<Vec<P1Map>> {
    group_ranges(samples.num_samples(), group_size)?
        .into_iter()
        .map(|r| compute_p1(samples, &r.collect::<Vec<_>>()))
        .collect()
}

/// Sample ranges used by [`group_p1`].
pub fn group_ranges(num_samples: usize, group_size: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if group_size == 0 {
        return Err(invalid("group size must be at least 1"));
    }
    if group_size > num_samples {
        return Err(invalid(format!(
            "group size {group_size} exceeds the {num_samples} available samples"
        )));
    }
    Ok((0..num_samples / group_size)
        .map(|g| g * group_size..(g + 1) * group_size)
        .collect())
}
