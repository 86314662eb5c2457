use std::sync::Arc;

use chla::models::ann::AnnParams;
use chla::models::svr::{kernel_matrix, solve_dual, SvrParams};
use chla::models::{fit_rows, FeatureScaler, ModelParams, RfParams};
use chla::preprocess::{filter_outliers, match_references, split_indices};
use chla::spectra::{
    aggregate_bands, clip_wavelengths, derivative, BandSpectrum, RawSpectrum, Variant,
    WavelengthGrid,
};
use chla::synthgen::{instrument_grid, BioOpticalModel};
use proptest::prelude::*;

fn spectrum_from(values: Vec<f64>, start: f64, step: f64) -> RawSpectrum {
    let grid =
        WavelengthGrid::uniform(start, start + step * (values.len() - 1) as f64, step).unwrap();
    RawSpectrum::new(0, Arc::new(grid), values).unwrap()
}

fn fine_spectrum() -> impl Strategy<Value = RawSpectrum> {
    (
        prop::collection::vec(-5.0..20.0f64, 60..120),
        380.0..400.0f64,
    )
        .prop_map(|(v, start)| {
            let step = 540.0 / (v.len() - 1) as f64;
            spectrum_from(v, start, step)
        })
}

fn affine_fixture() -> (Vec<Vec<f64>>, Vec<f64>) {
    let x: Vec<Vec<f64>> = (0..30)
        .map(|i| vec![(i as f64 * 0.37).sin(), i as f64 / 10.0])
        .collect();
    let y = x.iter().map(|r| 3.0 * r[0] + r[1] * r[1]).collect();
    (x, y)
}

fn resolution() -> impl Strategy<Value = f64> {
    prop_oneof![Just(4.0), Just(8.0), Just(12.0), Just(20.0), 3.0..30.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_is_affine(s in fine_spectrum(), a in -3.0..3.0f64, c in -5.0..5.0f64, res in resolution()) {
        let scaled: Vec<f64> = s.reflectance().iter().map(|v| a * v + c).collect();
        let t = RawSpectrum::new(0, s.grid().clone(), scaled).unwrap();
        let bs = aggregate_bands(&s, res).unwrap();
        let bt = aggregate_bands(&t, res).unwrap();
        for (x, y) in bs.values().iter().zip(bt.values()) {
            prop_assert!((a * x + c - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn band_count_and_edges(s in fine_spectrum(), res in resolution()) {
        let b = aggregate_bands(&s, res).unwrap();
        let n = (500.0 / res + 1e-9).floor() as usize;
        prop_assert_eq!(b.values().len(), n);
        for (i, low) in b.band_lows().iter().enumerate() {
            prop_assert!((low - (400.0 + i as f64 * res)).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_is_linear_and_kills_constants(s in fine_spectrum(), a in -3.0..3.0f64, c in -5.0..5.0f64) {
        let b = aggregate_bands(&s, 8.0).unwrap();
        let shifted = BandSpectrum::new(
            8.0,
            b.band_lows().to_vec(),
            b.values().iter().map(|v| a * v + c).collect(),
            Variant::Raw,
        ).unwrap();
        let d = derivative(&b).unwrap();
        let ds = derivative(&shifted).unwrap();
        prop_assert_eq!(ds.values().len(), b.values().len() - 1);
        for (x, y) in d.values().iter().zip(ds.values()) {
            prop_assert!((a * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn nested_clips_compose(s in fine_spectrum(), lo in 400.0..500.0f64, w in 200.0..300.0f64, inset in 0.0..50.0f64) {
        let outer = clip_wavelengths(&s, lo, lo + w).unwrap();
        let twice = clip_wavelengths(&outer, lo + inset, lo + w - inset).unwrap();
        let once = clip_wavelengths(&s, lo + inset, lo + w - inset).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn outlier_filter_keeps_a_subsequence(
        levels in prop::collection::vec(0.0..10.0f64, 1..12),
        k in 0.5..6.0f64,
    ) {
        let window: Vec<RawSpectrum> = levels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                spectrum_from((0..20).map(|j| l + 0.01 * ((i * 7 + j * 3) % 5) as f64).collect(), 400.0, 1.0)
                    .with_timestamp(i as i64)
            })
            .collect();
        let kept = filter_outliers(window.clone(), k).unwrap();
        let mut it = window.iter();
        for s in &kept {
            prop_assert!(it.any(|w| w == s));
        }
        prop_assert_eq!(filter_outliers(window.clone(), 1e12).unwrap(), window);
    }

    #[test]
    fn pairing_respects_gap_and_reuse(
        mut spectra in prop::collection::vec(0i64..2000, 0..40),
        mut refs in prop::collection::vec(0i64..2000, 0..20),
        gap in 0i64..120,
    ) {
        spectra.sort_unstable();
        refs.sort_unstable();
        let pairs = match_references(&spectra, &refs, gap);
        prop_assert!(pairs.len() <= spectra.len().min(refs.len()));
        let mut used = std::collections::HashSet::new();
        for (r, s) in &pairs {
            prop_assert!((spectra[*s] - refs[*r]).abs() <= gap);
            prop_assert!(used.insert(*s));
        }
    }

    #[test]
    fn split_partitions(n in 2usize..500, ratio in 0.05..0.95f64, seed in any::<u64>()) {
        let (train, test) = split_indices(n, ratio, seed).unwrap();
        let expected = ((ratio * n as f64).ceil() as usize).clamp(1, n - 1);
        prop_assert_eq!(train.len(), expected);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(split_indices(n, ratio, seed).unwrap(), (train, test));
    }

    #[test]
    fn contrast_grows_with_chlorophyll(c in 0.0..199.0f64, dc in 0.01..1.0f64, turb in 0.0..2.0f64, level in 0.5..4.0f64) {
        let m = BioOpticalModel::default();
        let contrast = |c: f64| m.reflectance(c, turb, level, 700.0) - m.reflectance(c, turb, level, 665.0);
        prop_assert!(contrast(c + dc) > contrast(c));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn svr_duals_stay_feasible(
        ys in prop::collection::vec(-2.0..2.0f64, 4..20),
        gamma in 0.05..2.0f64,
        cost in 0.05..20.0f64,
    ) {
        let rows: Vec<Vec<f64>> = (0..ys.len()).map(|i| vec![i as f64 / 4.0, ((i * 5) % 7) as f64 / 3.0]).collect();
        let k = kernel_matrix(&rows, gamma);
        let sol = solve_dual(&k, &ys, cost, 0.1, 1e-3, 1_000_000, true).unwrap();
        prop_assert!(sol.beta.iter().all(|b| b.abs() <= cost + 1e-12));
        prop_assert!(sol.beta.iter().sum::<f64>().abs() <= 1e-9 * cost * ys.len() as f64);
        for w in sol.objective_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs()));
        }
    }

    #[test]
    fn standardized_features_ignore_affine_maps(scale in 0.1..50.0f64, shift in -100.0..100.0f64) {
        let (x, _) = affine_fixture();
        let moved: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| scale * v + shift).collect()).collect();
        let a = FeatureScaler::fit(&x.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        let b = FeatureScaler::fit(&moved.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        for (r, m) in x.iter().zip(&moved) {
            for (u, v) in a.transform(r).iter().zip(b.transform(m)) {
                prop_assert!((u - v).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn svr_ignores_affine_feature_maps(scale in 0.1..50.0f64, shift in -100.0..100.0f64) {
        let (x, y) = affine_fixture();
        let moved: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| scale * v + shift).collect()).collect();
        // the dual is convex, so a tight stopping rule makes both fits agree
        let params = ModelParams::Svr(SvrParams { tolerance: 1e-9, ..SvrParams::new(0.5, 10.0) });
        let a = fit_rows(&x.iter().map(|r| r.as_slice()).collect::<Vec<_>>(), &y, &params).unwrap();
        let b = fit_rows(&moved.iter().map(|r| r.as_slice()).collect::<Vec<_>>(), &y, &params).unwrap();
        for (r, m) in x.iter().zip(&moved) {
            let (pa, pb) = (a.predict(r).unwrap(), b.predict(m).unwrap());
            prop_assert!((pa - pb).abs() <= 1e-6 * (1.0 + pa.abs()), "{pa} vs {pb}");
        }
    }

    // Gradient descent on a non-convex loss amplifies rounding, so the
    // network is compared under power-of-two scalings, which are exact.
    #[test]
    fn ann_ignores_exact_feature_scaling(k in -6i32..6) {
        let (x, y) = affine_fixture();
        let scale = 2f64.powi(k);
        let moved: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| scale * v).collect()).collect();
        let params = ModelParams::Ann(AnnParams::new(4, 0.01, 100, 3));
        let a = fit_rows(&x.iter().map(|r| r.as_slice()).collect::<Vec<_>>(), &y, &params).unwrap();
        let b = fit_rows(&moved.iter().map(|r| r.as_slice()).collect::<Vec<_>>(), &y, &params).unwrap();
        for (r, m) in x.iter().zip(&moved) {
            prop_assert_eq!(a.predict(r).unwrap(), b.predict(m).unwrap());
        }
    }

    #[test]
    fn forest_predictions_stay_in_target_range(ys in prop::collection::vec(0.0..200.0f64, 10..40), seed in any::<u64>()) {
        let x: Vec<Vec<f64>> = (0..ys.len()).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let rows: Vec<&[f64]> = x.iter().map(|r| r.as_slice()).collect();
        let m = fit_rows(&rows, &ys, &ModelParams::Rf(RfParams::new(1, 1, 20, seed))).unwrap();
        let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        for probe in [-10.0, 0.5, 7.3, 100.0] {
            let p = m.predict(&[probe, 1.0]).unwrap();
            prop_assert!(p >= lo && p <= hi);
        }
    }
}

#[test]
fn clipped_instrument_grid_keeps_analysis_window() {
    let grid = Arc::new(instrument_grid());
    let s = RawSpectrum::new(0, grid.clone(), vec![1.0; grid.len()]).unwrap();
    let c = clip_wavelengths(&s, 400.0, 900.0).unwrap();
    let inside = grid
        .values()
        .iter()
        .filter(|w| (400.0..=900.0).contains(*w))
        .count();
    assert_eq!(c.wavelengths().len(), inside);
    assert!(c.wavelengths().iter().all(|w| (400.0..=900.0).contains(w)));
}

#[test]
fn ann_grid_prefers_flexible_lightly_penalized_network() {
    use chla::preprocess::{LabeledSample, WaterStatus};
    use chla::tuning::{grid_search, CvPlan, HyperGrid};

    let train: Vec<LabeledSample> = (0..80)
        .map(|i| {
            let a = i as f64 / 10.0;
            let b = ((i * 13) % 17) as f64 / 4.0;
            LabeledSample {
                sample_id: i,
                features: vec![a, b],
                chl_a: 20.0 + 10.0 * (a * 0.8).sin() + 2.0 * b,
                water_body: "N1".into(),
                status: WaterStatus::Natural,
                resolution_nm: 20.0,
                variant: Variant::Raw,
            }
        })
        .collect();
    let grid = HyperGrid::Ann {
        size: vec![1, 8],
        decay: vec![0.01, 1e5],
        max_iters: 300,
        seed: 1,
    };
    let (tune, _) = grid_search(&train, &grid, &CvPlan::default()).unwrap();
    let describe: Vec<String> = tune.points.iter().map(|p| p.describe()).collect();
    let idx = |size: usize, decay: f64| {
        tune.points
            .iter()
            .position(|p| matches!(p, ModelParams::Ann(a) if a.size == size && a.decay == decay))
            .unwrap()
    };
    let (a, b) = (idx(8, 0.01), idx(1, 1e5));
    assert!(
        tune.mean_rmse_per_point[a] < tune.mean_rmse_per_point[b],
        "{describe:?}"
    );
    assert_eq!(tune.best, a, "{describe:?} {:?}", tune.mean_rmse_per_point);
}
