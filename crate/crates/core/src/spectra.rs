//! Spectral data types and the resolution / derivative transforms.
//!
//! A [`RawSpectrum`] lives on the instrument's fine wavelength grid. It is
//! clipped to the analysis window, then reduced to contiguous bands of a fixed
//! width by averaging its piecewise-linear interpolant over each band
//! ([`aggregate_bands`]). Band spectra can be differentiated once
//! ([`derivative`]) to remove absolute reflectance levels.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower edge of the first band, in nm.
pub const BAND_ANCHOR_NM: f64 = 400.0;
/// Default analysis window, in nm.
pub const DEFAULT_WINDOW_NM: (f64, f64) = (400.0, 900.0);

/// Slack for comparing a band edge against the window end.
const EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error("invalid wavelength grid: {0}")]
    InvalidGrid(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, SpectraError>;

/// Strictly increasing, finite, positive wavelengths in nm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WavelengthGrid(Vec<f64>);

impl WavelengthGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(SpectraError::InvalidGrid("grid is empty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(SpectraError::InvalidGrid(format!(
                "wavelength {bad} is not finite and positive"
            )));
        }
        if let Some(w) = values.windows(2).find(|w| w[1] <= w[0]) {
            return Err(SpectraError::InvalidGrid(format!(
                "wavelengths not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self(values))
    }

    /// Evenly spaced grid `start, start + step, ...` up to and including `end`.
    ///
    /// Points are computed as `start + i * step` (not by accumulation) so the
    /// grid is reproducible bit for bit.
    pub fn uniform(start: f64, end: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(end >= start) {
            return Err(SpectraError::InvalidGrid(format!(
                "cannot build grid from {start} to {end} with step {step}"
            )));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        Self::new((0..count).map(|i| start + i as f64 * step).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    pub fn span(&self) -> f64 {
        self.last() - self.first()
    }
}

impl TryFrom<Vec<f64>> for WavelengthGrid {
    type Error = SpectraError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<WavelengthGrid> for Vec<f64> {
    fn from(grid: WavelengthGrid) -> Self {
        grid.0
    }
}

/// One timestamped reflectance measurement (percent) on a fine grid.
///
/// The grid is reference counted: a measurement campaign produces thousands of
/// spectra on one instrument axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSpectrum {
    timestamp: i64,
    grid: Arc<WavelengthGrid>,
    reflectance: Vec<f64>,
}

impl RawSpectrum {
    pub fn new(timestamp: i64, grid: Arc<WavelengthGrid>, reflectance: Vec<f64>) -> Result<Self> {
        if reflectance.len() != grid.len() {
            return Err(SpectraError::Contract(format!(
                "{} reflectance values for a grid of {} wavelengths",
                reflectance.len(),
                grid.len()
            )));
        }
        if let Some(i) = reflectance.iter().position(|r| !r.is_finite()) {
            return Err(SpectraError::Contract(format!(
                "non-finite reflectance at {} nm",
                grid.values()[i]
            )));
        }
        Ok(Self {
            timestamp,
            grid,
            reflectance,
        })
    }

    /// Seconds since the Unix epoch (UTC).
    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn grid(&self) -> &Arc<WavelengthGrid> {
        &self.grid
    }

    pub fn wavelengths(&self) -> &[f64] {
        self.grid.values()
    }

    pub fn reflectance(&self) -> &[f64] {
        &self.reflectance
    }

    /// Value of the piecewise-linear interpolant at `wl`, held constant
    /// beyond the first and last grid points.
    pub fn interpolate(&self, wl: f64) -> f64 {
        let xs = self.grid.values();
        let ys = &self.reflectance;
        if wl <= xs[0] {
            return ys[0];
        }
        let last = xs.len() - 1;
        if wl >= xs[last] {
            return ys[last];
        }
        // first index with xs[i] > wl; i >= 1 here
        let i = xs.partition_point(|&x| x <= wl);
        lerp(xs[i - 1], ys[i - 1], xs[i], ys[i], wl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Raw,
    Derivative,
}

impl Variant {
    /// Short label used in file names and reports.
    pub fn tag(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Derivative => "der",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "raw" => Some(Variant::Raw),
            "der" | "derivative" => Some(Variant::Derivative),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Placement of contiguous equal-width bands: `start + i * resolution` for
/// every band that fits entirely below `end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandLayout {
    pub start_nm: f64,
    pub end_nm: f64,
    pub resolution_nm: f64,
}

impl BandLayout {
    pub fn new(start_nm: f64, end_nm: f64, resolution_nm: f64) -> Result<Self> {
        if !(resolution_nm > 0.0) || !resolution_nm.is_finite() {
            return Err(SpectraError::Range(format!(
                "resolution must be positive, got {resolution_nm}"
            )));
        }
        if !(end_nm > start_nm) {
            return Err(SpectraError::Range(format!(
                "empty band window [{start_nm}, {end_nm})"
            )));
        }
        if resolution_nm > end_nm - start_nm + EDGE_EPS {
            return Err(SpectraError::Range(format!(
                "resolution {resolution_nm} nm is wider than the window [{start_nm}, {end_nm})"
            )));
        }
        Ok(Self {
            start_nm,
            end_nm,
            resolution_nm,
        })
    }

    /// Default layout anchored at 400 nm over the default window.
    pub fn anchored(resolution_nm: f64) -> Result<Self> {
        Self::new(BAND_ANCHOR_NM, DEFAULT_WINDOW_NM.1, resolution_nm)
    }

    /// Number of full bands; a trailing partial band is dropped.
    pub fn band_count(&self) -> usize {
        ((self.end_nm - self.start_nm) / self.resolution_nm + EDGE_EPS).floor() as usize
    }

    pub fn band_lows(&self) -> Vec<f64> {
        (0..self.band_count())
            .map(|i| self.start_nm + i as f64 * self.resolution_nm)
            .collect()
    }

    /// Positions that label the features of a `variant` spectrum: band
    /// centers for raw spectra, interior band boundaries for derivatives.
    pub fn feature_positions(&self, variant: Variant) -> Vec<f64> {
        let lows = self.band_lows();
        match variant {
            Variant::Raw => lows.iter().map(|l| l + self.resolution_nm / 2.0).collect(),
            Variant::Derivative => lows.iter().skip(1).copied().collect(),
        }
    }
}

/// A spectrum aggregated to equal-width bands, raw or differentiated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpectrum {
    resolution_nm: f64,
    band_lows: Vec<f64>,
    values: Vec<f64>,
    variant: Variant,
}

impl BandSpectrum {
    pub fn new(
        resolution_nm: f64,
        band_lows: Vec<f64>,
        values: Vec<f64>,
        variant: Variant,
    ) -> Result<Self> {
        if !(resolution_nm > 0.0) {
            return Err(SpectraError::Contract(format!(
                "resolution must be positive, got {resolution_nm}"
            )));
        }
        let tol = 1e-9 * resolution_nm.max(1.0);
        if band_lows
            .windows(2)
            .any(|w| ((w[1] - w[0]) - resolution_nm).abs() > tol)
        {
            return Err(SpectraError::Contract(
                "band edges must be spaced exactly one resolution apart".into(),
            ));
        }
        let expected = match variant {
            Variant::Raw => band_lows.len(),
            Variant::Derivative => band_lows.len().saturating_sub(1),
        };
        if values.len() != expected {
            return Err(SpectraError::Contract(format!(
                "{variant} spectrum with {} bands needs {expected} values, got {}",
                band_lows.len(),
                values.len()
            )));
        }
        Ok(Self {
            resolution_nm,
            band_lows,
            values,
            variant,
        })
    }

    pub fn resolution_nm(&self) -> f64 {
        self.resolution_nm
    }

    pub fn band_lows(&self) -> &[f64] {
        &self.band_lows
    }

    pub fn band_centers(&self) -> Vec<f64> {
        self.band_lows
            .iter()
            .map(|l| l + self.resolution_nm / 2.0)
            .collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
}

/// Keeps exactly the grid points with `low <= wl <= high`.
pub fn clip_wavelengths(s: &RawSpectrum, low: f64, high: f64) -> Result<RawSpectrum> {
    if !(low < high) {
        return Err(SpectraError::Range(format!(
            "clip bounds must satisfy low < high, got [{low}, {high}]"
        )));
    }
    let xs = s.wavelengths();
    let begin = xs.partition_point(|&x| x < low);
    let end = xs.partition_point(|&x| x <= high);
    if begin >= end {
        return Err(SpectraError::Range(format!(
            "no wavelengths of [{}, {}] fall inside [{low}, {high}]",
            s.grid.first(),
            s.grid.last()
        )));
    }
    if begin == 0 && end == xs.len() {
        return Ok(s.clone());
    }
    let grid = WavelengthGrid(xs[begin..end].to_vec());
    Ok(RawSpectrum {
        timestamp: s.timestamp,
        grid: Arc::new(grid),
        reflectance: s.reflectance[begin..end].to_vec(),
    })
}

/// Aggregates `s` into bands of `resolution_nm` anchored at 400 nm over the
/// default 400–900 nm window.
pub fn aggregate_bands(s: &RawSpectrum, resolution_nm: f64) -> Result<BandSpectrum> {
    aggregate_bands_with(s, &BandLayout::anchored(resolution_nm)?)
}

/// Band value = mean of the linear interpolant over `[low, low + resolution)`,
/// i.e. its exact integral over the band divided by the band width.
///
/// Bands reaching a little past the ends of the grid (by less than a grid
/// step after clipping) see the end values held constant.
pub fn aggregate_bands_with(s: &RawSpectrum, layout: &BandLayout) -> Result<BandSpectrum> {
    if layout.resolution_nm > s.grid.span() + EDGE_EPS {
        return Err(SpectraError::Range(format!(
            "resolution {} nm is wider than the spectrum span of {} nm",
            layout.resolution_nm,
            s.grid.span()
        )));
    }
    if layout.end_nm <= s.grid.first() || layout.start_nm >= s.grid.last() {
        return Err(SpectraError::Range(format!(
            "band window [{}, {}) does not overlap the spectrum [{}, {}]",
            layout.start_nm,
            layout.end_nm,
            s.grid.first(),
            s.grid.last()
        )));
    }
    let lows = layout.band_lows();
    let values = lows
        .iter()
        .map(|&lo| integrate(s, lo, lo + layout.resolution_nm) / layout.resolution_nm)
        .collect();
    BandSpectrum::new(layout.resolution_nm, lows, values, Variant::Raw)
}

/// Forward differences between adjacent bands divided by the resolution
/// (percent per nm). The result has one value fewer than its input.
pub fn derivative(b: &BandSpectrum) -> Result<BandSpectrum> {
    if b.variant != Variant::Raw {
        return Err(SpectraError::Contract(
            "spectrum is already differentiated".into(),
        ));
    }
    if b.values.len() < 2 {
        return Err(SpectraError::Contract(format!(
            "derivative needs at least two bands, got {}",
            b.values.len()
        )));
    }
    let values = b
        .values
        .windows(2)
        .map(|w| (w[1] - w[0]) / b.resolution_nm)
        .collect();
    Ok(BandSpectrum {
        resolution_nm: b.resolution_nm,
        band_lows: b.band_lows.clone(),
        values,
        variant: Variant::Derivative,
    })
}

fn lerp(x0: f64, y0: f64, x1: f64, y1: f64, x: f64) -> f64 {
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Exact integral of the (end-clamped) linear interpolant over `[a, b]`.
fn integrate(s: &RawSpectrum, a: f64, b: f64) -> f64 {
    let xs = s.wavelengths();
    let ys = s.reflectance();
    let mut total = 0.0;
    let mut x_prev = a;
    let mut y_prev = s.interpolate(a);
    // interior knots strictly inside (a, b)
    let from = xs.partition_point(|&x| x <= a);
    for (&x, &y) in xs[from..].iter().zip(&ys[from..]) {
        if x >= b {
            break;
        }
        total += 0.5 * (y + y_prev) * (x - x_prev);
        x_prev = x;
        y_prev = y;
    }
    let y_end = s.interpolate(b);
    total + 0.5 * (y_end + y_prev) * (b - x_prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spectrum(grid: WavelengthGrid, f: impl Fn(f64) -> f64) -> RawSpectrum {
        let r = grid.values().iter().map(|&x| f(x)).collect();
        RawSpectrum::new(0, Arc::new(grid), r).unwrap()
    }

    fn instrument_grid() -> WavelengthGrid {
        WavelengthGrid::uniform(341.0, 1015.0, 0.65).unwrap()
    }

    #[test]
    fn grid_rejects_bad_values() {
        assert!(WavelengthGrid::new(vec![]).is_err());
        assert!(WavelengthGrid::new(vec![400.0, 400.0]).is_err());
        assert!(WavelengthGrid::new(vec![401.0, 400.0]).is_err());
        assert!(WavelengthGrid::new(vec![-1.0, 400.0]).is_err());
        assert!(WavelengthGrid::new(vec![400.0, f64::NAN]).is_err());
    }

    #[test]
    fn raw_spectrum_checks_lengths() {
        let grid = Arc::new(WavelengthGrid::new(vec![400.0, 401.0]).unwrap());
        assert!(RawSpectrum::new(0, grid.clone(), vec![1.0]).is_err());
        assert!(RawSpectrum::new(0, grid, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn clip_to_analysis_window() {
        let s = spectrum(instrument_grid(), |x| x / 100.0);
        let c = clip_wavelengths(&s, 400.0, 900.0).unwrap();
        assert!(c.grid().first() >= 400.0 && c.grid().first() < 400.65);
        assert!(c.grid().last() <= 900.0 && c.grid().last() > 899.35);
        let expected: Vec<f64> = s
            .wavelengths()
            .iter()
            .copied()
            .filter(|&x| (400.0..=900.0).contains(&x))
            .collect();
        assert_eq!(c.wavelengths(), expected.as_slice());
        for (x, r) in c.wavelengths().iter().zip(c.reflectance()) {
            assert_eq!(*r, x / 100.0);
        }
    }

    #[test]
    fn clip_full_range_is_identity() {
        let s = spectrum(instrument_grid(), |x| x.sin());
        let c = clip_wavelengths(&s, s.grid().first(), s.grid().last()).unwrap();
        assert_eq!(c, s);
    }

    #[test]
    fn clip_without_overlap_is_range_error() {
        let s = spectrum(WavelengthGrid::uniform(400.0, 900.0, 1.0).unwrap(), |_| 1.0);
        assert!(matches!(
            clip_wavelengths(&s, 950.0, 960.0),
            Err(SpectraError::Range(_))
        ));
        assert!(clip_wavelengths(&s, 500.0, 500.0).is_err());
    }

    #[test]
    fn constant_spectrum_is_preserved() {
        let s = spectrum(instrument_grid(), |_| 5.0);
        let s = clip_wavelengths(&s, 400.0, 900.0).unwrap();
        for res in [4.0, 8.0, 12.0, 20.0, 3.3] {
            let b = aggregate_bands(&s, res).unwrap();
            assert!(b.values().iter().all(|v| (v - 5.0).abs() < 1e-12));
        }
    }

    #[test]
    fn band_edges_at_4nm() {
        let s = spectrum(WavelengthGrid::uniform(400.0, 900.0, 0.5).unwrap(), |_| 1.0);
        let b = aggregate_bands(&s, 4.0).unwrap();
        assert_eq!(b.band_lows().len(), 125);
        for (i, lo) in b.band_lows().iter().enumerate() {
            assert_eq!(*lo, 400.0 + 4.0 * i as f64);
        }
        assert_eq!(b.band_lows()[124], 896.0);
    }

    #[test]
    fn partial_trailing_band_is_dropped() {
        assert_eq!(BandLayout::anchored(8.0).unwrap().band_count(), 62);
        assert_eq!(BandLayout::anchored(12.0).unwrap().band_count(), 41);
        assert_eq!(BandLayout::anchored(20.0).unwrap().band_count(), 25);
    }

    #[test]
    fn linear_spectrum_band_mean_is_midpoint() {
        let s = spectrum(WavelengthGrid::uniform(400.0, 900.0, 0.65).unwrap(), |x| {
            0.01 * (x - 400.0)
        });
        let b = aggregate_bands(&s, 4.0).unwrap();
        assert_relative_eq!(b.values()[0], 0.02, max_relative = 1e-12);
        assert_relative_eq!(b.values()[10], 0.01 * 42.0, max_relative = 1e-12);
    }

    #[test]
    fn resolution_wider_than_span_is_rejected() {
        let s = spectrum(WavelengthGrid::uniform(400.0, 410.0, 1.0).unwrap(), |_| 1.0);
        assert!(matches!(
            aggregate_bands(&s, 20.0),
            Err(SpectraError::Range(_))
        ));
        assert!(aggregate_bands(&s, 0.0).is_err());
        assert!(aggregate_bands(&s, 600.0).is_err());
    }

    #[test]
    fn derivative_examples() {
        let b = BandSpectrum::new(
            4.0,
            vec![400.0, 404.0, 408.0],
            vec![1.0, 3.0, 7.0],
            Variant::Raw,
        )
        .unwrap();
        let d = derivative(&b).unwrap();
        assert_eq!(d.values(), &[0.5, 1.0]);
        assert_eq!(d.variant(), Variant::Derivative);
        assert_eq!(d.band_lows(), b.band_lows());

        let flat =
            BandSpectrum::new(4.0, vec![400.0, 404.0], vec![2.0, 2.0], Variant::Raw).unwrap();
        assert_eq!(derivative(&flat).unwrap().values(), &[0.0]);
    }

    #[test]
    fn derivative_contract_errors() {
        let b = BandSpectrum::new(
            4.0,
            vec![400.0, 404.0, 408.0],
            vec![1.0, 3.0, 7.0],
            Variant::Raw,
        )
        .unwrap();
        let d = derivative(&b).unwrap();
        assert!(matches!(derivative(&d), Err(SpectraError::Contract(_))));
        let one = BandSpectrum::new(4.0, vec![400.0], vec![1.0], Variant::Raw).unwrap();
        assert!(matches!(derivative(&one), Err(SpectraError::Contract(_))));
    }

    #[test]
    fn band_spectrum_invariants() {
        assert!(BandSpectrum::new(4.0, vec![400.0, 405.0], vec![1.0, 2.0], Variant::Raw).is_err());
        assert!(BandSpectrum::new(4.0, vec![400.0, 404.0], vec![1.0], Variant::Raw).is_err());
        assert!(BandSpectrum::new(4.0, vec![400.0, 404.0], vec![1.0], Variant::Derivative).is_ok());
    }

    #[test]
    fn feature_positions() {
        let layout = BandLayout::anchored(20.0).unwrap();
        let raw = layout.feature_positions(Variant::Raw);
        let der = layout.feature_positions(Variant::Derivative);
        assert_eq!(raw.len(), 25);
        assert_eq!(raw[0], 410.0);
        assert_eq!(der.len(), 24);
        assert_eq!(der[0], 420.0);
    }
}
