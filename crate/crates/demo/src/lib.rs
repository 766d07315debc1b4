//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The page simulates one device at a chosen usage and then asks for three
//! views of it: the P1 / instability bit maps, the spatial spectrum, and the
//! block-mean P1 against address with its least-squares line.

use sram_ageing::agesim::{simulate_device, ProfilePrior, SkewPrior};
use sram_ageing::bitcore::{compute_instability, compute_p1, InstabilityMap, P1Map};
use sram_ageing::features::{blockwise_p1, p1_address_regression, p1_spectrum, SpearmanMode};
use sram_ageing::render::{render_instability, render_p1, GrayImage, RenderMode, SENTINEL_SHADE};
use sram_ageing::seed;
use wasm_bindgen::prelude::*;

fn js_err(e: sram_ageing::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// One simulated device, reduced to its per-bit statistics.
#[wasm_bindgen]
pub struct DeviceView {
    p1: P1Map,
    instability: InstabilityMap,
}

#[wasm_bindgen]
impl DeviceView {
    /// Simulates `samples` power-ups of a `sram_bytes` memory after
    /// `usage_months` of use. `drift_scale` multiplies the strong ageing
    /// preset (0 = no ageing). The same `seed` gives the same cells and
    /// footprint at every usage, so views at different usages compare.
    #[wasm_bindgen(constructor)]
    pub fn new(
        usage_months: f64,
        drift_scale: f64,
        samples: usize,
        sram_bytes: usize,
        seed: u64,
    ) -> Result<DeviceView, JsError> {
        let bits = sram_bytes * 8;
        let pop = SkewPrior::default().sample(bits, 1.0, &mut seed::rng(seed, &[seed::tag("skew")]));
        let base = ProfilePrior::strong();
        let prior = ProfilePrior {
            drift_rate: base.drift_rate * drift_scale,
            address_gradient: base.address_gradient * drift_scale,
            low_freq_components: base
                .low_freq_components
                .iter()
                .map(|&(bin, amp)| (bin, amp * drift_scale))
                .collect(),
            ..base
        };
        let profile = prior.sample(bits, &mut seed::rng(seed, &[seed::tag("footprint")]));
        let device = simulate_device("demo", &pop, &profile, usage_months, samples, seed).map_err(js_err)?;
        let all: Vec<usize> = (0..device.num_samples()).collect();
        let p1 = compute_p1(&device, &all).map_err(js_err)?;
        let instability = compute_instability(&p1);
        Ok(DeviceView { p1, instability })
    }

    pub fn num_bits(&self) -> usize {
        self.p1.len()
    }

    pub fn mean_p1(&self) -> f64 {
        self.p1.mean()
    }

    pub fn mean_instability(&self) -> f64 {
        self.instability.mean()
    }

    /// Width of the bit-map images.
    pub fn image_width(&self) -> usize {
        render_p1(&self.p1, RenderMode::Unsorted).width
    }

    pub fn image_height(&self) -> usize {
        render_p1(&self.p1, RenderMode::Unsorted).height
    }

    /// RGBA pixels of the P1 map, ready for `ImageData`.
    pub fn p1_rgba(&self, ranked: bool) -> Vec<u8> {
        rgba(&render_p1(&self.p1, mode(ranked)), self.p1.len())
    }

    pub fn instability_rgba(&self, ranked: bool) -> Vec<u8> {
        rgba(&render_instability(&self.instability, mode(ranked)), self.p1.len())
    }

    /// One-sided DFT amplitudes of the mean-removed P1, bins 0 to B/2.
    pub fn spectrum(&self) -> Result<Vec<f64>, JsError> {
        p1_spectrum(&self.p1).map_err(js_err)
    }

    pub fn block_p1(&self, block_bytes: usize) -> Result<Vec<f64>, JsError> {
        blockwise_p1(&self.p1, block_bytes).map_err(js_err)
    }

    /// `[intercept, slope, spearman]` of P1 against normalised address.
    pub fn address_trend(&self, block_bytes: usize) -> Result<Vec<f64>, JsError> {
        let r = p1_address_regression(&self.p1, block_bytes, SpearmanMode::Blockwise).map_err(js_err)?;
        Ok(vec![r.intercept, r.slope, r.spearman])
    }
}

fn mode(ranked: bool) -> RenderMode {
    if ranked {
        RenderMode::RowRanked
    } else {
        RenderMode::Unsorted
    }
}

/// Gray to RGBA. Padding cells get a faint blue tint so they stand out
/// from data of the same shade.
fn rgba(img: &GrayImage, data_cells: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.pixels.len() * 4);
    for (i, &g) in img.pixels.iter().enumerate() {
        if i >= data_cells {
            debug_assert_eq!(g, SENTINEL_SHADE);
            out.extend_from_slice(&[g, g, g + 60, 255]);
        } else {
            out.extend_from_slice(&[g, g, g, 255]);
        }
    }
    out
}
