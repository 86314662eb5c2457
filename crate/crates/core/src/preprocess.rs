//! Outlier screening of measurement windows, temporal pairing of spectra with
//! reference samples, and the random train/test split.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectra::{BandSpectrum, RawSpectrum, Variant};

/// Upper end of the photometer's measuring range, µg/L.
pub const MAX_CHL_A: f64 = 200.0;
/// Default outlier distance in units of the per-wavelength MAD.
pub const DEFAULT_OUTLIER_K: f64 = 3.0;
/// Default maximum time between a spectrum and its reference sample.
pub const DEFAULT_MAX_GAP_S: i64 = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid reference sample: {0}")]
    InvalidReference(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaterStatus {
    Natural,
    Artificial,
}

impl WaterStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            WaterStatus::Natural => "natural",
            WaterStatus::Artificial => "artificial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "natural" => Some(WaterStatus::Natural),
            "artificial" => Some(WaterStatus::Artificial),
            _ => None,
        }
    }
}

impl fmt::Display for WaterStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A photometer reading of a water sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSample {
    pub timestamp: i64,
    pub chl_a: f64,
    pub water_body: String,
    pub status: WaterStatus,
}

impl ReferenceSample {
    pub fn new(
        timestamp: i64,
        chl_a: f64,
        water_body: impl Into<String>,
        status: WaterStatus,
    ) -> Result<Self> {
        if !(0.0..=MAX_CHL_A).contains(&chl_a) {
            return Err(PreprocessError::InvalidReference(format!(
                "chlorophyll-a {chl_a} µg/L outside the photometer range [0, {MAX_CHL_A}]"
            )));
        }
        Ok(Self {
            timestamp,
            chl_a,
            water_body: water_body.into(),
            status,
        })
    }
}

/// One datapoint: band features plus the reference concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub sample_id: usize,
    pub features: Vec<f64>,
    pub chl_a: f64,
    pub water_body: String,
    pub status: WaterStatus,
    pub resolution_nm: f64,
    pub variant: Variant,
}

/// Checks that samples form one consistent dataset: nonempty finite features
/// and a single (resolution, variant, feature length) cell.
pub fn check_dataset(samples: &[LabeledSample]) -> Result<()> {
    let Some(first) = samples.first() else {
        return Ok(());
    };
    for s in samples {
        if s.features.is_empty() {
            return Err(PreprocessError::Contract(format!(
                "sample {} has no features",
                s.sample_id
            )));
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(PreprocessError::Contract(format!(
                "sample {} has non-finite features",
                s.sample_id
            )));
        }
        if s.features.len() != first.features.len()
            || s.variant != first.variant
            || s.resolution_nm != first.resolution_nm
        {
            return Err(PreprocessError::Contract(format!(
                "sample {} does not match the dataset cell ({} nm {}, {} features)",
                s.sample_id,
                first.resolution_nm,
                first.variant,
                first.features.len()
            )));
        }
    }
    Ok(())
}

/// Flags spectra whose reflectance deviates from the window's per-wavelength
/// median by more than `k` times the per-wavelength median absolute
/// deviation, at any wavelength. A wavelength whose MAD is exactly zero is not
/// tested. `true` means the spectrum is kept.
pub fn outlier_mask(window: &[RawSpectrum], k: f64) -> Result<Vec<bool>> {
    let Some(first) = window.first() else {
        return Err(PreprocessError::Contract("empty measurement window".into()));
    };
    if !(k > 0.0) {
        return Err(PreprocessError::Contract(format!(
            "outlier distance must be positive, got {k}"
        )));
    }
    if window.iter().any(|s| s.grid() != first.grid()) {
        return Err(PreprocessError::Contract(
            "spectra in one window must share a wavelength grid".into(),
        ));
    }
    let mut keep = vec![true; window.len()];
    let mut column = vec![0.0; window.len()];
    let mut deviations = vec![0.0; window.len()];
    let mut scratch = vec![0.0; window.len()];
    for j in 0..first.reflectance().len() {
        for (c, s) in column.iter_mut().zip(window) {
            *c = s.reflectance()[j];
        }
        scratch.copy_from_slice(&column);
        let med = median_in_place(&mut scratch);
        for (d, c) in deviations.iter_mut().zip(&column) {
            *d = (c - med).abs();
        }
        scratch.copy_from_slice(&deviations);
        let mad = median_in_place(&mut scratch);
        if mad == 0.0 {
            continue;
        }
        let limit = k * mad;
        for (flag, d) in keep.iter_mut().zip(&deviations) {
            if *d > limit {
                *flag = false;
            }
        }
    }
    Ok(keep)
}

/// Returns the survivors of [`outlier_mask`] in input order.
pub fn filter_outliers(window: Vec<RawSpectrum>, k: f64) -> Result<Vec<RawSpectrum>> {
    let keep = outlier_mask(&window, k)?;
    Ok(window
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect())
}

/// Splits time-sorted timestamps into measurement windows wherever
/// consecutive measurements are more than `max_gap_s` apart. Returns index
/// ranges.
pub fn measurement_windows(timestamps: &[i64], max_gap_s: i64) -> Vec<std::ops::Range<usize>> {
    let mut windows = Vec::new();
    let mut start = 0;
    for i in 1..timestamps.len() {
        if timestamps[i] - timestamps[i - 1] > max_gap_s {
            windows.push(start..i);
            start = i;
        }
    }
    if !timestamps.is_empty() {
        windows.push(start..timestamps.len());
    }
    windows
}

/// Matches each reference (in order) to the unused spectrum nearest in time,
/// provided the gap is at most `max_gap_s`. Ties go to the earlier spectrum.
/// Returns `(reference index, spectrum index)` pairs.
///
/// Both inputs must be sorted by time.
pub fn match_references(
    spectrum_times: &[i64],
    reference_times: &[i64],
    max_gap_s: i64,
) -> Vec<(usize, usize)> {
    let mut used = vec![false; spectrum_times.len()];
    let mut pairs = Vec::new();
    for (r, &t) in reference_times.iter().enumerate() {
        let from = spectrum_times.partition_point(|&s| s < t - max_gap_s);
        let mut best: Option<(i64, usize)> = None;
        for (i, &s) in spectrum_times.iter().enumerate().skip(from) {
            if s > t + max_gap_s {
                break;
            }
            if used[i] {
                continue;
            }
            let gap = (s - t).abs();
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, i));
            }
        }
        if let Some((_, i)) = best {
            used[i] = true;
            pairs.push((r, i));
        }
    }
    pairs
}

/// A band spectrum together with its acquisition time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedBands {
    pub timestamp: i64,
    pub bands: BandSpectrum,
}

/// Builds labeled samples from spectra and references paired by
/// [`match_references`]. The sample id is the reference's index.
pub fn pair_with_reference(
    spectra: &[TimedBands],
    refs: &[ReferenceSample],
    max_gap_s: i64,
) -> Vec<LabeledSample> {
    let spectrum_times: Vec<i64> = spectra.iter().map(|s| s.timestamp).collect();
    let reference_times: Vec<i64> = refs.iter().map(|r| r.timestamp).collect();
    match_references(&spectrum_times, &reference_times, max_gap_s)
        .into_iter()
        .map(|(r, s)| {
            let reference = &refs[r];
            let bands = &spectra[s].bands;
            LabeledSample {
                sample_id: r,
                features: bands.values().to_vec(),
                chl_a: reference.chl_a,
                water_body: reference.water_body.clone(),
                status: reference.status,
                resolution_nm: bands.resolution_nm(),
                variant: bands.variant(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub seed: u64,
}

/// Index form of [`split`]: a seeded permutation whose first
/// `ceil(ratio * n)` entries go to training. Both index lists are returned in
/// ascending order.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(PreprocessError::Contract(format!(
            "splitting needs at least two samples, got {n}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PreprocessError::Contract(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n_train = ((ratio * n as f64).ceil() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(samples: &[LabeledSample], ratio: f64, seed: u64) -> Result<SplitDataset> {
    let (train, test) = split_indices(samples.len(), ratio, seed)?;
    Ok(SplitDataset {
        train: train.into_iter().map(|i| samples[i].clone()).collect(),
        test: test.into_iter().map(|i| samples[i].clone()).collect(),
        seed,
    })
}

/// Median of a nonempty slice; reorders the slice. Even lengths average the
/// two middle values.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (lower, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        m
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + m)
    }
}
