use proptest::collection::vec;
use proptest::prelude::*;

use sram_ageing::agesim::FleetConfig;
use sram_ageing::bitcore::{compute_instability, compute_p1, group_p1, BitOrder, BitSampleSet};
use sram_ageing::datasetio::{
    discretize_usage, num_classes, stratified_device_split, DeviceLabel, LabeledDataset, SplitTag,
};
use sram_ageing::features::{blockwise_p1, p1_spectrum};
use sram_ageing::learners::{fit, HyperParams, Task, TrainedModel, TreeParams};
use sram_ageing::metrics::{average_ranks, f1_multiclass, r2_score, spearman_r};
use sram_ageing::render::{grid_shape, render_bitmap, GrayImage, RenderMode};

/// `samples` rows of `bytes * 8` bits.
fn bit_rows(max_samples: usize, max_bytes: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    (1..=max_samples, 1..=max_bytes).prop_flat_map(|(s, b)| vec(vec(0u8..=1, b * 8), s))
}

fn all_indices(set: &BitSampleSet) -> Vec<usize> {
    (0..set.num_samples()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn p1_counts_are_column_sums(rows in bit_rows(12, 4)) {
        let set = BitSampleSet::from_bits("d", 1.0, &rows).unwrap();
        let p1 = compute_p1(&set, &all_indices(&set)).unwrap();
        for i in 0..set.num_bits() {
            let ones: u32 = rows.iter().map(|r| r[i] as u32).sum();
            prop_assert_eq!(p1.counts()[i], ones);
            prop_assert_eq!(set.bit(0, i), rows[0][i]);
        }
        let total: u64 = (0..set.num_samples()).map(|j| set.ones_in_sample(j)).sum();
        prop_assert_eq!(total, p1.counts().iter().map(|&c| c as u64).sum::<u64>());
    }

    #[test]
    fn instability_is_the_smaller_side(rows in bit_rows(12, 4)) {
        let set = BitSampleSet::from_bits("d", 1.0, &rows).unwrap();
        let p1 = compute_p1(&set, &all_indices(&set)).unwrap();
        let inst = compute_instability(&p1);
        let flipped = compute_p1(&set.complemented(), &all_indices(&set)).unwrap();
        for (i, &v) in inst.values().iter().enumerate() {
            let p = p1.value(i);
            prop_assert!((0.0..=0.5).contains(&v));
            prop_assert!((v - p.min(1.0 - p)).abs() < 1e-12);
            prop_assert!((flipped.value(i) - (1.0 - p)).abs() < 1e-12);
        }
        let flipped_inst = compute_instability(&flipped);
        prop_assert_eq!(flipped_inst.values(), inst.values());
    }

    #[test]
    fn merged_groups_equal_the_whole(rows in bit_rows(12, 3), group in 1usize..5) {
        let set = BitSampleSet::from_bits("d", 1.0, &rows).unwrap();
        let used = set.num_samples() / group * group;
        prop_assume!(used > 0);
        let groups = group_p1(&set, group).unwrap();
        prop_assert_eq!(groups.len(), set.num_samples() / group);
        let merged = groups[1..].iter().fold(groups[0].clone(), |acc, g| acc.merge(g).unwrap());
        let whole = compute_p1(&set, &(0..used).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(merged, whole);
    }

    #[test]
    fn msb_dumps_are_bit_reversed_lsb_dumps(dumps in vec(vec(any::<u8>(), 3), 1..6)) {
        let reversed: Vec<Vec<u8>> = dumps.iter().map(|d| d.iter().map(|b| b.reverse_bits()).collect()).collect();
        let lsb = BitSampleSet::from_dumps("d", 0.0, &dumps, BitOrder::LsbFirst).unwrap();
        let msb = BitSampleSet::from_dumps("d", 0.0, &reversed, BitOrder::MsbFirst).unwrap();
        prop_assert_eq!(lsb, msb);
    }

    #[test]
    fn block_means_average_to_the_map_mean(rows in bit_rows(6, 8), block in 1usize..4) {
        let set = BitSampleSet::from_bits("d", 1.0, &rows).unwrap();
        prop_assume!(set.num_bytes().is_multiple_of(block));
        let p1 = compute_p1(&set, &all_indices(&set)).unwrap();
        let blocks = blockwise_p1(&p1, block).unwrap();
        prop_assert_eq!(blocks.len(), set.num_bytes() / block);
        let mean = blocks.iter().sum::<f64>() / blocks.len() as f64;
        prop_assert!((mean - p1.mean()).abs() < 1e-12);
        prop_assert!(blocks.iter().all(|b| (0.0..=1.0).contains(b)));
    }

    #[test]
    fn spectrum_is_finite_and_nonnegative(rows in bit_rows(6, 8)) {
        let set = BitSampleSet::from_bits("d", 1.0, &rows).unwrap();
        let p1 = compute_p1(&set, &all_indices(&set)).unwrap();
        let amps = p1_spectrum(&p1).unwrap();
        prop_assert!(amps.iter().all(|a| a.is_finite() && *a >= 0.0));
        prop_assert!(amps.len() <= p1.len());
    }

    #[test]
    fn ranks_sum_to_the_triangle_number(x in vec(-5i32..5, 1..40)) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let r = average_ranks(&x);
        let n = x.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..x.len() {
            for j in 0..x.len() {
                if x[i] < x[j] {
                    prop_assert!(r[i] < r[j]);
                }
                if x[i] == x[j] {
                    prop_assert_eq!(r[i], r[j]);
                }
            }
        }
    }

    #[test]
    fn spearman_ignores_monotone_transforms(pairs in vec((-50i32..50, -50i32..50), 3..40)) {
        let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let Ok(rho) = spearman_r(&x, &y) else { return Ok(()) };
        prop_assert!((-1.0..=1.0).contains(&rho));
        let xt: Vec<f64> = x.iter().map(|v| (v / 10.0).exp() + v.powi(3)).collect();
        prop_assert!((spearman_r(&xt, &y).unwrap() - rho).abs() < 1e-12);
        prop_assert!((spearman_r(&y, &x).unwrap() - rho).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((spearman_r(&neg, &y).unwrap() + rho).abs() < 1e-12);
    }

    #[test]
    fn r2_is_one_only_for_exact_predictions(y in vec(-100.0f64..100.0, 2..30), shift in 0.1f64..10.0) {
        prop_assume!(y.iter().any(|v| (v - y[0]).abs() > 1e-6));
        prop_assert_eq!(r2_score(&y, &y).unwrap(), 1.0);
        let off: Vec<f64> = y.iter().map(|v| v + shift).collect();
        prop_assert!(r2_score(&y, &off).unwrap() < 1.0);
    }

    #[test]
    fn f1_is_bounded_and_perfect_on_identity(labels in vec(0usize..4, 1..50)) {
        let perfect = f1_multiclass(&labels, &labels, 4).unwrap();
        let present = (0..4).filter(|c| labels.contains(c)).count();
        // absent classes score zero
        prop_assert!((perfect.f1_macro - present as f64 / 4.0).abs() < 1e-12);
        let shifted: Vec<usize> = labels.iter().map(|l| (l + 1) % 4).collect();
        let s = f1_multiclass(&labels, &shifted, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&s.f1_macro));
        prop_assert_eq!(s.per_class.iter().map(|c| c.support).sum::<usize>(), labels.len());
    }

    #[test]
    fn usage_classes_cover_the_span(u in 0.0f64..48.0, extra in 0.0f64..12.0, res in 1u32..13) {
        let span = u + extra;
        let c = discretize_usage(u, res, span);
        prop_assert!(c < num_classes(span, res));
        prop_assert!(discretize_usage(span, res, span) == num_classes(span, res) - 1);
    }

    #[test]
    fn device_split_is_a_partition(usages in vec(0.0f64..24.0, 2..60), frac in 0.1f64..0.9, seed in any::<u64>()) {
        let devices: Vec<DeviceLabel> = usages
            .iter()
            .enumerate()
            .map(|(i, &u)| DeviceLabel { device_id: format!("d{i}"), usage_months: u })
            .collect();
        let split = stratified_device_split(&devices, frac, 3.0, seed).unwrap();
        let mut all: Vec<&String> = split.train_devices.iter().chain(&split.test_devices).collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), devices.len());
        prop_assert_eq!(split.train_devices.len(), (devices.len() as f64 * frac + 1e-9).floor() as usize);
        let again = stratified_device_split(&devices, frac, 3.0, seed).unwrap();
        prop_assert_eq!(split, again);
    }

    #[test]
    fn dataset_csv_round_trips_exactly(
        rows in vec(vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), 1..20),
        usage in 0.0f64..30.0,
    ) {
        let mut ds = LabeledDataset::empty(vec!["a".into(), "b".into(), "c".into()]);
        for (i, r) in rows.into_iter().enumerate() {
            let tag = if i % 3 == 0 { SplitTag::Test } else { SplitTag::Train };
            ds.push(r, usage + i as f64, &format!("dev,{i}"), tag);
        }
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        prop_assert_eq!(LabeledDataset::read_csv(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn grid_is_the_smallest_square_ish_cover(n in 1usize..5000) {
        let (h, w) = grid_shape(n);
        prop_assert!(h * w >= n);
        prop_assert!(h <= w);
        prop_assert!((w - 1) * (w - 1) < n);
        prop_assert!(h * w - n < w);
    }

    #[test]
    fn images_round_trip_and_rank_rows(values in vec(0.0f64..=1.0, 1..300)) {
        let img = render_bitmap(&values, 1.0, RenderMode::RowRanked);
        prop_assert_eq!(GrayImage::from_pgm(&img.to_pgm()).unwrap(), img.clone());
        let w = img.width;
        for r in 0..img.height {
            let filled = values.len().saturating_sub(r * w).min(w);
            let row = &img.row(r)[..filled];
            prop_assert!(row.windows(2).all(|p| p[0] <= p[1]));
        }
        let plain = render_bitmap(&values, 1.0, RenderMode::Unsorted);
        let mut a = plain.pixels.clone();
        let mut b = img.pixels.clone();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }
}

fn toy_problem(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = sram_ageing::seed::rng(seed, &[]);
    let x: Vec<Vec<f64>> = (0..60)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let y = x.iter().map(|r| 3.0 * r[0] - r[1] * r[1] + 0.5).collect();
    (x, y)
}

use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn models_survive_json(seed in any::<u64>(), which in 0usize..4) {
        let (x, y) = toy_problem(seed);
        let tree = TreeParams { max_depth: Some(6), min_samples_split: 2, min_features_per_split: 2 };
        let params = [
            HyperParams::Knn { k: 3 },
            HyperParams::Svm { c: 2.0, gamma: 0.5 },
            HyperParams::Dt(tree),
            HyperParams::Rf { tree, num_trees: 5, bootstrap: true },
        ][which];
        let model = fit(&params, Task::Regression, &x, &y, seed).unwrap();
        let back = TrainedModel::from_json(&model.to_json()).unwrap();
        prop_assert_eq!(&back, &model);
        let p = model.predict(&x).unwrap();
        prop_assert_eq!(back.predict(&x).unwrap(), p.clone());
        prop_assert!(p.iter().all(|v| v.is_finite()));
        let again = fit(&params, Task::Regression, &x, &y, seed).unwrap();
        prop_assert_eq!(again, model);
    }

    #[test]
    fn standardised_columns_are_centred(seed in any::<u64>()) {
        let (x, _) = toy_problem(seed);
        let s = sram_ageing::learners::Standardizer::fit(&x);
        let z = s.transform_rows(&x);
        for f in 0..3 {
            let col: Vec<f64> = z.iter().map(|r| r[f]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var.sqrt() - 1.0).abs() < 0.05);
        }
    }
}

#[test]
fn simulated_devices_depend_only_on_seed_and_index() {
    let cfg = FleetConfig {
        num_devices: 4,
        num_samples: 8,
        sram_bytes: 64,
        seed: 42,
        ..FleetConfig::default()
    };
    let a = cfg.simulate(2).unwrap();
    let b = FleetConfig {
        num_devices: 9,
        ..cfg.clone()
    }
    .simulate(2)
    .unwrap();
    assert_eq!(a, b);
    assert_ne!(a, cfg.simulate(1).unwrap());
    assert_ne!(
        a,
        FleetConfig {
            seed: 43,
            ..cfg.clone()
        }
        .simulate(2)
        .unwrap()
    );
    assert_eq!(a.usage_months(), cfg.device_usage(2));
    let (lo, hi) = cfg.usage_range;
    assert!((lo..=hi).contains(&a.usage_months()));
}
