//! Instance-count distribution and dataset layout.

use std::fs;

use proptest::prelude::*;
use vrmatte::dataset::{
    build_dataset, count_seed, read_manifest, sample_instance_count, sample_seed, SourceConfig, Sources, SynthConfig, DEFAULT_COUNT_MEAN,
    DEFAULT_COUNT_STD, MANIFEST_FILE,
};

/// Probability of each count under a rounded normal clamped to `1..=max_n`,
/// by numeric integration of the density.
fn clamped_round_pmf(mean: f64, std: f64, max_n: usize) -> Vec<f64> {
    let density = |x: f64| (-(x - mean).powi(2) / (2.0 * std * std)).exp() / (std * (2.0 * std::f64::consts::PI).sqrt());
    let mass = |lo: f64, hi: f64| {
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        (0..n).map(|i| density(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
    };
    let far = mean.abs() + 12.0 * std;
    (1..=max_n)
        .map(|k| {
            let lo = if k == 1 { -far } else { k as f64 - 0.5 };
            let hi = if k == max_n { far } else { k as f64 + 0.5 };
            mass(lo, hi)
        })
        .collect()
}

#[test]
fn count_histogram_passes_chi_square_for_the_full_split() {
    let cfg = SynthConfig::full(SourceConfig::Procedural { backgrounds: 2, foregrounds: 10, foreground_size: 64, seed: 0 });
    let n = cfg.total_samples();
    assert_eq!((cfg.train_samples, cfg.val_samples), (9000, 1000));
    let mut hist = vec![0usize; cfg.max_instances];
    for i in 0..9000 {
        let k =
            sample_instance_count(count_seed(sample_seed(cfg.master_seed, i)), cfg.count_mean, cfg.count_std, cfg.max_instances).unwrap();
        hist[k - 1] += 1;
    }
    let pmf = clamped_round_pmf(DEFAULT_COUNT_MEAN, DEFAULT_COUNT_STD, 5);
    let chi2: f64 = hist.iter().zip(&pmf).map(|(&o, &p)| (o as f64 - 9000.0 * p).powi(2) / (9000.0 * p)).sum();
    // Upper 1% point of chi-square with 4 degrees of freedom.
    assert!(chi2 < 13.2767, "chi2 = {chi2}, histogram {hist:?}, n = {n}");

    let mean: f64 = pmf.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
    let var: f64 = pmf.iter().enumerate().map(|(i, p)| ((i + 1) as f64 - mean).powi(2) * p).sum();
    assert!((mean - 2.5581).abs() < 0.01, "{mean}");
    assert!((var.sqrt() - 1.1926).abs() < 0.01, "{}", var.sqrt());
}

#[test]
fn toy_preset_writes_forty_samples_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = SynthConfig::toy();
    cfg.frames = 4;
    cfg.height = 32;
    cfg.width = 32;
    cfg.sources = SourceConfig::Procedural { backgrounds: 10, foregrounds: 24, foreground_size: 32, seed: 11 };
    let sources = Sources::<f32>::from_config(&cfg.sources).unwrap();
    let a = build_dataset(&cfg, &sources, &dir.path().join("a")).unwrap();
    let b = build_dataset(&cfg, &sources, &dir.path().join("b")).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let records = read_manifest(&dir.path().join("a").join(MANIFEST_FILE)).unwrap();
    assert_eq!(records.len(), 40);
    let dirs = fs::read_dir(dir.path().join("a")).unwrap().filter(|e| e.as_ref().unwrap().file_type().unwrap().is_dir()).count();
    assert_eq!(dirs, 40);
    for (i, r) in records.iter().enumerate() {
        let want =
            sample_instance_count(count_seed(sample_seed(cfg.master_seed, i)), cfg.count_mean, cfg.count_std, cfg.max_instances).unwrap();
        assert_eq!(r.n_instances, want, "{}", r.sample_id);
        assert_eq!(r.instance_ids.len(), r.n_instances);
        for k in &r.instance_ids {
            assert!(dir.path().join("a").join(&r.sample_id).join(format!("matte_{k}")).is_dir());
        }
    }
}

proptest! {
    #[test]
    fn counts_stay_in_range(seed in any::<u64>(), mean in -3.0f64..8.0, std in 0.0f64..4.0, max_n in 1usize..8) {
        let k = sample_instance_count(seed, mean, std, max_n).unwrap();
        prop_assert!((1..=max_n).contains(&k));
        prop_assert_eq!(k, sample_instance_count(seed, mean, std, max_n).unwrap());
    }

    #[test]
    fn zero_spread_returns_the_rounded_mean(seed in any::<u64>(), k in 1usize..=5) {
        prop_assert_eq!(sample_instance_count(seed, k as f64, 0.0, 5).unwrap(), k);
    }
}
