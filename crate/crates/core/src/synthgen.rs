//! Forward bio-optical generator for labeled (spectrum, chlorophyll-a) data.
//!
//! A reflectance spectrum is a smooth, turbidity-scaled baseline with a
//! Gaussian absorption dip at 665 nm (and a minor one near 620 nm) whose
//! depth saturates in chlorophyll-a, plus a Gaussian reflectance peak at
//! 700 nm whose height grows with chlorophyll-a. Measurement noise has a
//! broadband per-spectrum component and a white per-wavelength component.
//!
//! This is not radiative transfer; it only has to carry a recoverable,
//! physically placed signal through the pipeline.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::preprocess::{ReferenceSample, WaterStatus, MAX_CHL_A};
use crate::spectra::{RawSpectrum, WavelengthGrid};

/// Instrument axis: 341–1015 nm sampled every 0.65 nm.
pub const INSTRUMENT_RANGE_NM: (f64, f64) = (341.0, 1015.0);
pub const INSTRUMENT_STEP_NM: f64 = 0.65;
/// Seconds between spectra within a measurement burst.
pub const SPECTRUM_CADENCE_S: i64 = 15;
/// Seconds between reference water samples.
pub const REFERENCE_INTERVAL_S: i64 = 300;
/// 2018-06-01T00:00:00Z
pub const CAMPAIGN_START: i64 = 1_527_811_200;
/// Below this concentration samples come from natural water bodies.
pub const ARTIFICIAL_THRESHOLD: f64 = 30.0;

pub fn instrument_grid() -> WavelengthGrid {
    WavelengthGrid::uniform(
        INSTRUMENT_RANGE_NM.0,
        INSTRUMENT_RANGE_NM.1,
        INSTRUMENT_STEP_NM,
    )
    .expect("instrument grid constants are valid")
}

/// Shape constants of the forward model. Widths are Gaussian standard
/// deviations in nm; levels are reflectance percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BioOpticalModel {
    pub dip_center_nm: f64,
    pub dip_width_nm: f64,
    pub dip_max_depth: f64,
    /// Concentration at which the dip reaches half its maximum depth.
    pub dip_half_saturation: f64,
    pub minor_dip_center_nm: f64,
    pub minor_dip_width_nm: f64,
    /// Minor dip depth relative to the main dip.
    pub minor_dip_ratio: f64,
    pub peak_center_nm: f64,
    pub peak_width_nm: f64,
    pub peak_max_height: f64,
    pub peak_half_saturation: f64,
    /// Broad scattering hump added per unit turbidity.
    pub turbidity_center_nm: f64,
    pub turbidity_width_nm: f64,
    pub turbidity_gain: f64,
    /// Logistic falloff of the baseline into the near infrared.
    pub nir_falloff_nm: f64,
    pub nir_falloff_width_nm: f64,
    pub nir_floor: f64,
    /// Share of the noise variance that is common to all wavelengths of a
    /// spectrum.
    pub broadband_noise_share: f64,
}

impl Default for BioOpticalModel {
    fn default() -> Self {
        Self {
            dip_center_nm: 665.0,
            dip_width_nm: 15.0,
            dip_max_depth: 1.5,
            dip_half_saturation: 50.0,
            minor_dip_center_nm: 620.0,
            minor_dip_width_nm: 12.0,
            minor_dip_ratio: 0.25,
            peak_center_nm: 700.0,
            peak_width_nm: 12.0,
            peak_max_height: 6.0,
            peak_half_saturation: 150.0,
            turbidity_center_nm: 580.0,
            turbidity_width_nm: 110.0,
            turbidity_gain: 1.8,
            nir_falloff_nm: 740.0,
            nir_falloff_width_nm: 30.0,
            nir_floor: 0.35,
            broadband_noise_share: 0.999,
        }
    }
}

impl BioOpticalModel {
    pub fn dip_depth(&self, chl_a: f64) -> f64 {
        self.dip_max_depth * chl_a / (chl_a + self.dip_half_saturation)
    }

    pub fn peak_height(&self, chl_a: f64) -> f64 {
        self.peak_max_height * chl_a / (chl_a + self.peak_half_saturation)
    }

    /// Chlorophyll-free reflectance.
    pub fn baseline(&self, turbidity: f64, level: f64, wl: f64) -> f64 {
        let hump = gaussian(wl, self.turbidity_center_nm, self.turbidity_width_nm);
        let falloff = self.nir_floor
            + (1.0 - self.nir_floor)
                / (1.0 + ((wl - self.nir_falloff_nm) / self.nir_falloff_width_nm).exp());
        (level + self.turbidity_gain * turbidity * hump) * falloff
    }

    /// Noise-free, unclamped reflectance.
    pub fn reflectance(&self, chl_a: f64, turbidity: f64, level: f64, wl: f64) -> f64 {
        let depth = self.dip_depth(chl_a);
        self.baseline(turbidity, level, wl)
            - depth * gaussian(wl, self.dip_center_nm, self.dip_width_nm)
            - self.minor_dip_ratio
                * depth
                * gaussian(wl, self.minor_dip_center_nm, self.minor_dip_width_nm)
            + self.peak_height(chl_a) * gaussian(wl, self.peak_center_nm, self.peak_width_nm)
    }
}

fn gaussian(x: f64, center: f64, width: f64) -> f64 {
    let z = (x - center) / width;
    (-0.5 * z * z).exp()
}

/// Conditions of one simulated measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// µg/L, within [0, 200].
    pub chl_a: f64,
    pub turbidity_level: f64,
    /// Baseline reflectance level, percent.
    pub baseline_level: f64,
    /// Standard deviation of the additive noise at each wavelength, percent.
    pub noise_sd: f64,
    pub seed: u64,
}

/// Simulates one spectrum (timestamp 0) on `grid`. Values are clamped at 0.
pub fn generate_spectrum(p: &SceneParams, grid: &Arc<WavelengthGrid>) -> RawSpectrum {
    generate_spectrum_with(&BioOpticalModel::default(), p, grid)
}

pub fn generate_spectrum_with(
    model: &BioOpticalModel,
    p: &SceneParams,
    grid: &Arc<WavelengthGrid>,
) -> RawSpectrum {
    let chl = p.chl_a.clamp(0.0, MAX_CHL_A);
    let mut values: Vec<f64> = grid
        .values()
        .iter()
        .map(|&wl| model.reflectance(chl, p.turbidity_level, p.baseline_level, wl))
        .collect();
    if p.noise_sd > 0.0 {
        let share = model.broadband_noise_share.clamp(0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        let broadband = Normal::new(0.0, p.noise_sd * share.sqrt())
            .expect("finite noise scale")
            .sample(&mut rng);
        let white =
            Normal::new(0.0, p.noise_sd * (1.0 - share).sqrt()).expect("finite noise scale");
        for v in &mut values {
            *v += broadband + white.sample(&mut rng);
        }
    }
    for v in &mut values {
        *v = v.max(0.0);
    }
    RawSpectrum::new(0, grid.clone(), values).expect("grid and values have equal length")
}

/// Histogram over concentration bins; draws pick a bin by weight, then a
/// uniform value inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationProfile {
    pub edges: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ConcentrationProfile {
    /// Skewed towards low concentrations with a thin tail up to 200 µg/L.
    pub fn low_skewed() -> Self {
        Self {
            edges: vec![0.0, 10.0, 20.0, 30.0, 50.0, 75.0, 100.0, 150.0, 200.0],
            weights: vec![22.0, 18.0, 12.0, 14.0, 11.0, 9.0, 8.0, 6.0],
        }
    }

    pub fn single_bin(low: f64, high: f64) -> Self {
        Self {
            edges: vec![low, high],
            weights: vec![1.0],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.edges.len() < 2 || self.weights.len() != self.edges.len() - 1 {
            return Err("profile needs n + 1 edges for n weights".into());
        }
        if self.edges.windows(2).any(|w| w[1] < w[0])
            || self.edges[0] < 0.0
            || self.edges[self.edges.len() - 1] > MAX_CHL_A
        {
            return Err("profile edges must increase within [0, 200]".into());
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err("profile weights must be nonnegative with a positive sum".into());
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut bin = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                bin = i;
                break;
            }
            u -= w;
        }
        let (lo, hi) = (self.edges[bin], self.edges[bin + 1]);
        (lo + rng.random::<f64>() * (hi - lo)).clamp(0.0, MAX_CHL_A)
    }
}

impl Default for ConcentrationProfile {
    fn default() -> Self {
        Self::low_skewed()
    }
}

/// Everything that defines a synthetic measurement campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    /// Number of reference samples.
    pub n: usize,
    pub profile: ConcentrationProfile,
    pub water_bodies: usize,
    pub noise_sd: f64,
    /// Spectra per reference, centered on the reference time.
    pub burst_len: usize,
    /// References per site visit before moving to the next day.
    pub visit_len: usize,
    pub seed: u64,
    pub model: BioOpticalModel,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            n: 422,
            profile: ConcentrationProfile::low_skewed(),
            water_bodies: 13,
            noise_sd: 0.2,
            burst_len: 7,
            visit_len: 12,
            seed: 1,
            model: BioOpticalModel::default(),
        }
    }
}

/// Time-sorted spectra and references of one campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCampaign {
    pub grid: Arc<WavelengthGrid>,
    pub spectra: Vec<RawSpectrum>,
    pub references: Vec<ReferenceSample>,
}

#[derive(Debug, Clone)]
struct WaterBody {
    name: String,
    status: WaterStatus,
    turbidity: f64,
    level: f64,
}

fn water_bodies(count: usize, rng: &mut ChaCha8Rng) -> Vec<WaterBody> {
    let count = count.max(1);
    let artificial = ((count as f64 * 3.0 / 13.0).round() as usize).clamp(1, count);
    let natural = count - artificial;
    let mut bodies = Vec::with_capacity(count);
    for i in 0..artificial {
        bodies.push(WaterBody {
            name: format!("A{}", i + 1),
            status: WaterStatus::Artificial,
            turbidity: rng.random_range(0.8..2.0),
            level: rng.random_range(2.0..4.0),
        });
    }
    for i in 0..natural {
        bodies.push(WaterBody {
            name: format!("N{}", i + 1),
            status: WaterStatus::Natural,
            turbidity: rng.random_range(0.2..1.0),
            level: rng.random_range(1.5..3.5),
        });
    }
    bodies
}

/// Uneven (harmonic) preference among bodies of one status.
fn pick_body(candidates: &[usize], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = (1..=candidates.len()).map(|k| 1.0 / k as f64).sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &c) in candidates.iter().enumerate() {
        let w = 1.0 / (k + 1) as f64;
        if u < w {
            return c;
        }
        u -= w;
    }
    candidates[candidates.len() - 1]
}

/// splitmix64 finalizer; derives independent per-item seeds.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `n` reference concentrations from `profile`, assigns them to water
/// bodies (natural below 30 µg/L, artificial above), and simulates a burst of
/// spectra at a 15 s cadence around every reference. References are 5 min
/// apart within a site visit; each visit is on a new day.
pub fn generate_dataset(
    n: usize,
    profile: &ConcentrationProfile,
    water_bodies: usize,
    seed: u64,
) -> SyntheticCampaign {
    generate_campaign(&CampaignConfig {
        n,
        profile: profile.clone(),
        water_bodies,
        seed,
        ..CampaignConfig::default()
    })
}

pub fn generate_campaign(cfg: &CampaignConfig) -> SyntheticCampaign {
    let grid = Arc::new(instrument_grid());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bodies = water_bodies(cfg.water_bodies, &mut rng);
    let natural: Vec<usize> = (0..bodies.len())
        .filter(|&i| bodies[i].status == WaterStatus::Natural)
        .collect();
    let artificial: Vec<usize> = (0..bodies.len())
        .filter(|&i| bodies[i].status == WaterStatus::Artificial)
        .collect();

    // (body, chl) per reference, grouped by body in draw order
    let mut draws: Vec<(usize, f64)> = (0..cfg.n)
        .map(|_| {
            let chl = cfg.profile.sample(&mut rng);
            let pool = if chl < ARTIFICIAL_THRESHOLD && !natural.is_empty() {
                &natural
            } else {
                &artificial
            };
            (pick_body(pool, &mut rng), chl)
        })
        .collect();
    draws.sort_by_key(|&(body, _)| body);

    let burst = cfg.burst_len.max(1) as i64;
    let visit_len = cfg.visit_len.max(1);
    let mut references = Vec::with_capacity(cfg.n);
    let mut spectra = Vec::with_capacity(cfg.n * burst as usize);
    let mut day = 0i64;
    let mut in_visit = 0usize;
    let mut last_body = usize::MAX;
    for (r, &(b, chl)) in draws.iter().enumerate() {
        if b != last_body || in_visit == visit_len {
            if last_body != usize::MAX {
                day += 1;
            }
            last_body = b;
            in_visit = 0;
        }
        let t = CAMPAIGN_START + day * 86_400 + 9 * 3600 + in_visit as i64 * REFERENCE_INTERVAL_S;
        in_visit += 1;

        let body = &bodies[b];
        let chl = (chl * 1000.0).round() / 1000.0;
        references.push(
            ReferenceSample::new(t, chl, body.name.clone(), body.status)
                .expect("profile draws stay within the photometer range"),
        );
        let turbidity = body.turbidity * rng.random_range(0.9..1.1);
        let level = body.level + rng.random_range(-0.15..0.15);
        for k in 0..burst {
            let offset = (k - (burst - 1) / 2) * SPECTRUM_CADENCE_S;
            let scene = SceneParams {
                chl_a: chl,
                turbidity_level: turbidity,
                baseline_level: level,
                noise_sd: cfg.noise_sd,
                seed: mix(cfg.seed, r as u64, k as u64),
            };
            spectra
                .push(generate_spectrum_with(&cfg.model, &scene, &grid).with_timestamp(t + offset));
        }
    }
    SyntheticCampaign {
        grid,
        spectra,
        references,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(chl: f64, noise: f64) -> SceneParams {
        SceneParams {
            chl_a: chl,
            turbidity_level: 1.0,
            baseline_level: 2.5,
            noise_sd: noise,
            seed: 4,
        }
    }

    fn at(s: &RawSpectrum, wl: f64) -> f64 {
        let i = s
            .wavelengths()
            .iter()
            .position(|&x| (x - wl).abs() < 0.33)
            .unwrap();
        s.reflectance()[i]
    }

    #[test]
    fn clear_water_is_pure_baseline() {
        let grid = Arc::new(instrument_grid());
        let s = generate_spectrum(&scene(0.0, 0.0), &grid);
        let m = BioOpticalModel::default();
        for (wl, r) in s.wavelengths().iter().zip(s.reflectance()) {
            assert_eq!(*r, m.baseline(1.0, 2.5, *wl).max(0.0));
        }
    }

    #[test]
    fn chlorophyll_deepens_dip_and_raises_peak() {
        let grid = Arc::new(instrument_grid());
        let low = generate_spectrum(&scene(10.0, 0.0), &grid);
        let high = generate_spectrum(&scene(150.0, 0.0), &grid);
        assert!(at(&high, 700.0) > at(&low, 700.0));
        assert!(at(&high, 665.0) < at(&low, 665.0));
    }

    #[test]
    fn peak_dip_contrast_increases_with_chlorophyll() {
        let m = BioOpticalModel::default();
        let contrast =
            |c: f64| m.reflectance(c, 1.0, 2.5, 700.0) - m.reflectance(c, 1.0, 2.5, 665.0);
        let mut prev = contrast(0.0);
        for c in 1..=200 {
            let cur = contrast(c as f64);
            assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn deterministic_and_nonnegative() {
        let grid = Arc::new(instrument_grid());
        let mut p = scene(80.0, 3.0);
        p.baseline_level = 0.2;
        let a = generate_spectrum(&p, &grid);
        assert_eq!(a, generate_spectrum(&p, &grid));
        assert!(a.reflectance().iter().all(|r| *r >= 0.0));
    }

    #[test]
    fn instrument_grid_shape() {
        let g = instrument_grid();
        assert_eq!(g.len(), 1037);
        assert_eq!(g.first(), 341.0);
        assert!((g.last() - 1014.4).abs() < 1e-9);
    }

    #[test]
    fn campaign_layout() {
        let c = generate_dataset(40, &ConcentrationProfile::low_skewed(), 13, 3);
        assert_eq!(c.references.len(), 40);
        assert_eq!(c.spectra.len(), 40 * 7);
        assert!(c
            .references
            .windows(2)
            .all(|w| w[0].timestamp < w[1].timestamp));
        assert!(c
            .spectra
            .windows(2)
            .all(|w| w[0].timestamp() < w[1].timestamp()));
        for r in &c.references {
            let expect = if r.chl_a < ARTIFICIAL_THRESHOLD {
                WaterStatus::Natural
            } else {
                WaterStatus::Artificial
            };
            assert_eq!(r.status, expect);
        }
    }

    #[test]
    fn single_reference() {
        let c = generate_dataset(1, &ConcentrationProfile::low_skewed(), 13, 3);
        assert_eq!(c.references.len(), 1);
    }

    #[test]
    fn single_bin_profile() {
        let c = generate_dataset(50, &ConcentrationProfile::single_bin(40.0, 50.0), 13, 8);
        assert!(c
            .references
            .iter()
            .all(|r| (40.0..=50.0).contains(&r.chl_a)));
    }

    #[test]
    fn profile_validation() {
        assert!(ConcentrationProfile::low_skewed().validate().is_ok());
        assert!(ConcentrationProfile::single_bin(0.0, 300.0)
            .validate()
            .is_err());
        let bad = ConcentrationProfile {
            edges: vec![0.0, 1.0],
            weights: vec![0.0],
        };
        assert!(bad.validate().is_err());
    }
}
