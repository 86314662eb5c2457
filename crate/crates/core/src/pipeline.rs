//! Pre-processing of a whole campaign into per-(resolution, variant) datasets.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::preprocess::{
    self, filter_outliers, measurement_windows, pair_with_reference, LabeledSample,
    PreprocessError, ReferenceSample, TimedBands,
};
use crate::spectra::{
    aggregate_bands_with, clip_wavelengths, derivative, BandLayout, RawSpectrum, SpectraError,
    Variant, BAND_ANCHOR_NM, DEFAULT_WINDOW_NM,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Spectra(#[from] SpectraError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub window_nm: (f64, f64),
    pub outlier_k: f64,
    pub max_gap_s: i64,
    pub resolutions: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            window_nm: DEFAULT_WINDOW_NM,
            outlier_k: preprocess::DEFAULT_OUTLIER_K,
            max_gap_s: preprocess::DEFAULT_MAX_GAP_S,
            resolutions: vec![4.0, 8.0, 12.0, 20.0],
            variants: vec![Variant::Raw, Variant::Derivative],
        }
    }
}

/// One dataset of the experiment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCell {
    pub resolution_nm: f64,
    pub variant: Variant,
    /// Wavelength label of each feature column.
    pub positions: Vec<f64>,
    pub samples: Vec<LabeledSample>,
}

/// Outcome counts of [`preprocess_campaign`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PreprocessStats {
    pub spectra_in: usize,
    pub spectra_kept: usize,
    pub windows: usize,
    pub references: usize,
    pub paired: usize,
}

/// Clips to the wavelength window, drops outliers within each measurement
/// window, aggregates to every configured resolution (and differentiates for
/// the derivative variant), then pairs with the references.
///
/// Spectra and references are ordered by time first (stable), and a sample's
/// id is the index of its reference in that order. Pairing depends on
/// timestamps only, so every cell holds the same samples in the same order.
pub fn preprocess_campaign(
    spectra: &[RawSpectrum],
    references: &[ReferenceSample],
    cfg: &PreprocessConfig,
) -> Result<(Vec<DatasetCell>, PreprocessStats), PipelineError> {
    let mut order: Vec<usize> = (0..spectra.len()).collect();
    order.sort_by_key(|&i| spectra[i].timestamp());
    let mut refs = references.to_vec();
    refs.sort_by_key(|r| r.timestamp);

    let (low, high) = cfg.window_nm;
    let clipped = order
        .iter()
        .map(|&i| clip_wavelengths(&spectra[i], low, high))
        .collect::<Result<Vec<_>, _>>()?;
    let times: Vec<i64> = clipped.iter().map(|s| s.timestamp()).collect();
    let windows = measurement_windows(&times, cfg.max_gap_s);
    let mut kept = Vec::with_capacity(clipped.len());
    let mut rest = clipped.into_iter();
    for w in &windows {
        let window: Vec<RawSpectrum> = rest.by_ref().take(w.len()).collect();
        let survivors = filter_outliers(window, cfg.outlier_k)?;
        debug!("window {:?}: {} of {} kept", w, survivors.len(), w.len());
        kept.extend(survivors);
    }

    let mut stats = PreprocessStats {
        spectra_in: spectra.len(),
        spectra_kept: kept.len(),
        windows: windows.len(),
        references: refs.len(),
        paired: 0,
    };
    if refs.is_empty() {
        warn!("no reference samples; datasets will be empty");
    }

    let mut cells = Vec::new();
    for &res in &cfg.resolutions {
        let layout = BandLayout::new(BAND_ANCHOR_NM, high, res)?;
        let raw = kept
            .iter()
            .map(|s| aggregate_bands_with(s, &layout))
            .collect::<Result<Vec<_>, _>>()?;
        for &variant in &cfg.variants {
            let timed = raw
                .iter()
                .zip(&kept)
                .map(|(b, s)| {
                    let bands = match variant {
                        Variant::Raw => b.clone(),
                        Variant::Derivative => derivative(b)?,
                    };
                    Ok(TimedBands {
                        timestamp: s.timestamp(),
                        bands,
                    })
                })
                .collect::<Result<Vec<_>, SpectraError>>()?;
            let samples = pair_with_reference(&timed, &refs, cfg.max_gap_s);
            stats.paired = samples.len();
            cells.push(DatasetCell {
                resolution_nm: res,
                variant,
                positions: layout.feature_positions(variant),
                samples,
            });
        }
    }
    Ok((cells, stats))
}
