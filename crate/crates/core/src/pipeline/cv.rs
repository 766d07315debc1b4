use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::datasetio::{usage_bin, DeviceLabel};
use crate::error::{invalid, Result};
use crate::seed;

/// Assigns each device to one of `k` folds, stratified by usage bin.
///
/// Devices of a stratum are shuffled and dealt round-robin, and the dealer
/// position carries over between strata so small strata do not all pile
/// into fold 0. Within a stratum fold sizes differ by at most one.
pub fn device_folds(devices: &[DeviceLabel], k: usize, bin_months: f64, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(invalid("cross-validation needs at least two folds"));
    }
    if devices.len() < k {
        return Err(invalid(format!("{} devices cannot fill {k} folds", devices.len())));
    }
    if !(bin_months > 0.0) {
        return Err(invalid("stratification bin width must be positive"));
    }
    let mut strata: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, d) in devices.iter().enumerate() {
        strata.entry(usage_bin(d.usage_months, bin_months)).or_default().push(i);
    }
    let mut fold = vec![0; devices.len()];
    let mut next = 0;
    for (&bin, members) in &strata {
        let mut members = members.clone();
        members.shuffle(&mut seed::rng(seed, &[seed::tag("folds"), bin as u64]));
        for i in members {
            fold[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(fold)
}

/// Expands a per-device fold assignment to rows.
pub fn row_folds(devices: &[DeviceLabel], device_fold: &[usize], row_devices: &[String]) -> Result<Vec<usize>> {
    let lookup: BTreeMap<&str, usize> = devices
        .iter()
        .zip(device_fold)
        .map(|(d, &f)| (d.device_id.as_str(), f))
        .collect();
    row_devices
        .iter()
        .map(|id| {
            lookup
                .get(id.as_str())
                .copied()
                .ok_or_else(|| invalid(format!("row of unknown device `{id}`")))
        })
        .collect()
}
