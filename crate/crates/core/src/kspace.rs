//! Conventional phase-velocity estimation in k-space.
//!
//! A volume is reduced to a lateral x time space-time map by averaging over
//! depth, transformed with a zero-padded 2D DFT, thresholded relative to the
//! spectral maximum, and each surviving temporal-frequency row contributes
//! `v = f / k` at its peak wavenumber. Row velocities are combined by a
//! magnitude-weighted mean and gated to the soft-tissue band.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{youngs_modulus_from_velocity, MaterialModel};
use crate::preprocess::{self, DEFAULT_CROP_DEPTH, DEFAULT_MEDIAN_KERNEL};
use crate::volume::WaveFieldVolume;

/// Depth-averaged displacement, laid out `[lateral][time]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeMap {
    values: Vec<f64>,
    width: usize,
    frames: usize,
    pub dx_m: f64,
    pub dt_s: f64,
}

impl SpaceTimeMap {
    pub fn new(
        values: Vec<f64>,
        width: usize,
        frames: usize,
        dx_m: f64,
        dt_s: f64,
    ) -> Result<Self> {
        if values.len() != width * frames {
            return Err(Error::InvalidArgument(format!(
                "map has {} values, expected {width} x {frames}",
                values.len()
            )));
        }
        if !(dx_m > 0.0 && dt_s > 0.0) {
            return Err(Error::InvalidArgument("map spacings must be > 0".into()));
        }
        Ok(Self {
            values,
            width,
            frames,
            dx_m,
            dt_s,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn get(&self, x: usize, t: usize) -> f64 {
        self.values[x * self.frames + t]
    }
    pub fn column(&self, x: usize) -> &[f64] {
        &self.values[x * self.frames..(x + 1) * self.frames]
    }

    pub fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

pub fn space_time_map(volume: &WaveFieldVolume) -> SpaceTimeMap {
    let (frames, depth, width) = (volume.frames(), volume.depth_px(), volume.width_px());
    let mut values = vec![0.0f64; width * frames];
    for t in 0..frames {
        let frame = volume.frame(t);
        for x in 0..width {
            let sum: f64 = (0..depth).map(|z| frame[z * width + x] as f64).sum();
            values[x * frames + t] = sum / depth as f64;
        }
    }
    SpaceTimeMap {
        values,
        width,
        frames,
        dx_m: volume.dx_m(),
        dt_s: volume.dt_s(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann if n < 2 => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
                .collect(),
        }
    }
}

impl std::str::FromStr for Window {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" | "rectangular" | "none" => Ok(Window::Rectangular),
            "hann" => Ok(Window::Hann),
            other => Err(Error::InvalidArgument(format!("unknown window '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KspaceOptions {
    /// Zero-padding factor applied to both axes.
    pub padding: usize,
    /// Bins below this fraction of the spectral maximum are discarded.
    pub threshold: f64,
    /// Accepted velocity band in m/s, inclusive.
    pub band: (f64, f64),
    /// Temporal window applied before the transform.
    pub window: Window,
    /// Refine each row's peak wavenumber on the continuous spatial spectrum.
    pub refine_wavenumber: bool,
    /// Minimum ratio of spectral maximum to median magnitude; 0 disables.
    pub min_peak_contrast: f64,
}

impl Default for KspaceOptions {
    fn default() -> Self {
        Self {
            padding: 4,
            threshold: 0.10,
            band: (1.0, 10.0),
            window: Window::Hann,
            refine_wavenumber: true,
            min_peak_contrast: 40.0,
        }
    }
}

impl KspaceOptions {
    /// Argmax on padded bins with a rectangular window, no contrast gate.
    pub fn bin_peak() -> Self {
        Self {
            window: Window::Rectangular,
            refine_wavenumber: false,
            min_peak_contrast: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.padding == 0 {
            return Err(Error::InvalidArgument("padding factor must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        let (lo, hi) = self.band;
        if !(lo >= 0.0 && hi > lo) {
            return Err(Error::InvalidArgument(format!(
                "invalid velocity band [{lo}, {hi}]"
            )));
        }
        if self.min_peak_contrast.is_nan() || self.min_peak_contrast < 0.0 {
            return Err(Error::InvalidArgument("peak contrast must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFailure {
    /// Nothing but zeros in the spectrum.
    NoSpectralPeak,
    /// Spectral maximum does not stand out from the background.
    LowContrast,
    /// Velocity outside the accepted band.
    OutOfBand,
}

impl std::fmt::Display for EstimateFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimateFailure::NoSpectralPeak => "no spectral peak",
            EstimateFailure::LowContrast => "low spectral contrast",
            EstimateFailure::OutOfBand => "velocity outside band",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub v_mps: f64,
    pub valid: bool,
    pub dominant_frequency_hz: f64,
    pub failure: Option<EstimateFailure>,
}

impl VelocityEstimate {
    fn failed(cause: EstimateFailure, v_mps: f64, dominant_frequency_hz: f64) -> Self {
        Self {
            v_mps,
            valid: false,
            dominant_frequency_hz,
            failure: Some(cause),
        }
    }
}

/// Spectral peaks below this fraction of the map's L1 norm are rounding noise.
const NUMERICAL_FLOOR: f64 = 1e-9;

/// Maximises a unimodal function on `[lo, hi]`.
fn golden_section_max(lo: f64, hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `|sum_n samples[n] * exp(-i 2 pi freq n step)|`
fn dtft_magnitude(samples: &[Complex64], freq: f64, step: f64) -> f64 {
    let rot = Complex64::from_polar(1.0, -2.0 * PI * freq * step);
    let mut phasor = Complex64::new(1.0, 0.0);
    let mut acc = Complex64::new(0.0, 0.0);
    for &s in samples {
        acc += s * phasor;
        phasor *= rot;
    }
    acc.norm()
}

fn median(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Phase velocity of the dominant propagating wave in a space-time map.
pub fn kspace_velocity(map: &SpaceTimeMap, options: &KspaceOptions) -> Result<VelocityEstimate> {
    options.validate()?;
    let (nx, nt) = (map.width, map.frames);
    if nx < 4 || nt < 4 {
        return Err(Error::InvalidArgument(format!(
            "map must be at least 4x4, got {nx}x{nt}"
        )));
    }
    let n_kx = nx * options.padding;
    let n_f = nt * options.padding;
    let df = 1.0 / (n_f as f64 * map.dt_s);
    let dk = 1.0 / (n_kx as f64 * map.dx_m);

    let mean = map.values.iter().sum::<f64>() / map.values.len() as f64;
    let window = options.window.coefficients(nt);
    let mut planner = FftPlanner::<f64>::new();

    // Temporal transform per lateral column; rows[j][x] is positive bin j + 1.
    let n_rows = (n_f - 1) / 2;
    let mut rows = vec![vec![Complex64::new(0.0, 0.0); nx]; n_rows];
    let fft_t = planner.plan_fft_forward(n_f);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_f];
    for x in 0..nx {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (t, (&v, &w)) in map.column(x).iter().zip(&window).enumerate() {
            buf[t] = Complex64::new((v - mean) * w, 0.0);
        }
        fft_t.process(&mut buf);
        for (j, row) in rows.iter_mut().enumerate() {
            row[x] = buf[j + 1];
        }
    }

    // Spatial transform per temporal row; keep nonzero, non-Nyquist wavenumbers.
    let n_k = (n_kx - 1) / 2;
    let fft_x = planner.plan_fft_forward(n_kx);
    let mut positive = vec![0.0f64; n_rows * n_k];
    let mut negative = vec![0.0f64; n_rows * n_k];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_kx];
    for (j, row) in rows.iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        buf[..nx].copy_from_slice(row);
        fft_x.process(&mut buf);
        for i in 0..n_k {
            positive[j * n_k + i] = buf[i + 1].norm();
            negative[j * n_k + i] = buf[n_kx - 1 - i].norm();
        }
    }

    let energy = |m: &[f64]| m.iter().map(|a| a * a).sum::<f64>();
    let (magnitudes, sign) = if energy(&negative) > energy(&positive) {
        (negative, -1.0)
    } else {
        (positive, 1.0)
    };

    let (peak_index, peak) =
        magnitudes
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, 0.0f64),
                |best, (i, m)| if m > best.1 { (i, m) } else { best },
            );
    // Residue of removing the mean from a constant map is not a peak.
    let scale: f64 = map.values.iter().map(|v| v.abs()).sum();
    if peak <= NUMERICAL_FLOOR * scale || n_k == 0 {
        return Ok(VelocityEstimate::failed(
            EstimateFailure::NoSpectralPeak,
            0.0,
            0.0,
        ));
    }
    let dominant_frequency_hz = (peak_index / n_k + 1) as f64 * df;
    if options.min_peak_contrast > 0.0 {
        let background = median(&mut magnitudes.clone());
        if peak < options.min_peak_contrast * background {
            return Ok(VelocityEstimate::failed(
                EstimateFailure::LowContrast,
                0.0,
                dominant_frequency_hz,
            ));
        }
    }

    let cutoff = options.threshold * peak;
    let mut weighted = 0.0;
    let mut total_weight = 0.0;
    for (j, row_mags) in magnitudes.chunks_exact(n_k).enumerate() {
        let (i, m) = row_mags
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, 0.0f64),
                |best, (i, m)| if m > best.1 { (i, m) } else { best },
            );
        if m < cutoff || m <= 0.0 {
            continue;
        }
        let f = (j + 1) as f64 * df;
        let mut k = (i + 1) as f64 * dk;
        if options.refine_wavenumber {
            let row = &rows[j];
            let lo = (k - dk).max(1e-3 * dk);
            k = golden_section_max(lo, k + dk, 1e-10 * dk, |kk| {
                dtft_magnitude(row, sign * kk, map.dx_m)
            });
        }
        weighted += m * f / k;
        total_weight += m;
    }
    if total_weight <= 0.0 {
        return Ok(VelocityEstimate::failed(
            EstimateFailure::NoSpectralPeak,
            0.0,
            dominant_frequency_hz,
        ));
    }
    let v_mps = weighted / total_weight;
    if !(v_mps >= options.band.0 && v_mps <= options.band.1) {
        return Ok(VelocityEstimate::failed(
            EstimateFailure::OutOfBand,
            v_mps,
            dominant_frequency_hz,
        ));
    }
    Ok(VelocityEstimate {
        v_mps,
        valid: true,
        dominant_frequency_hz,
        failure: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominantFrequencyOptions {
    pub padding: usize,
    pub window: Window,
    pub refine: bool,
}

impl Default for DominantFrequencyOptions {
    fn default() -> Self {
        Self {
            padding: 4,
            window: Window::Hann,
            refine: true,
        }
    }
}

/// Dominant temporal frequency of a volume.
///
/// Each lateral column is averaged over depth, its mean removed, and its
/// magnitude spectrum accumulated; the zero-frequency bin is excluded.
pub fn dominant_frequency(
    volume: &WaveFieldVolume,
    options: &DominantFrequencyOptions,
) -> Result<f64> {
    if volume.frames() < 8 {
        return Err(Error::InvalidArgument(format!(
            "dominant frequency needs >= 8 frames, got {}",
            volume.frames()
        )));
    }
    if options.padding == 0 {
        return Err(Error::InvalidArgument("padding factor must be >= 1".into()));
    }
    let map = space_time_map(volume);
    let nt = map.frames;
    let n_f = nt * options.padding;
    let df = 1.0 / (n_f as f64 * map.dt_s);
    let window = options.window.coefficients(nt);

    let columns: Vec<Vec<Complex64>> = (0..map.width)
        .filter_map(|x| {
            let col = map.column(x);
            let mean = col.iter().sum::<f64>() / nt as f64;
            col.iter().any(|&v| v != mean).then(|| {
                col.iter()
                    .zip(&window)
                    .map(|(&v, &w)| Complex64::new((v - mean) * w, 0.0))
                    .collect()
            })
        })
        .collect();
    if columns.is_empty() {
        return Err(Error::NoOscillation);
    }

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_f);
    let n_bins = (n_f - 1) / 2;
    let mut spectrum = vec![0.0f64; n_bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_f];
    for col in &columns {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        buf[..nt].copy_from_slice(col);
        fft.process(&mut buf);
        for (s, c) in spectrum.iter_mut().zip(&buf[1..]) {
            *s += c.norm();
        }
    }
    let (best, peak) = spectrum
        .iter()
        .copied()
        .enumerate()
        .fold((0, 0.0f64), |b, (i, m)| if m > b.1 { (i, m) } else { b });
    let scale: f64 = map.values.iter().map(|v| v.abs()).sum();
    if peak <= NUMERICAL_FLOOR * scale {
        return Err(Error::NoOscillation);
    }
    let f = (best + 1) as f64 * df;
    if !options.refine {
        return Ok(f);
    }
    let lo = (f - df).max(1e-3 * df);
    Ok(golden_section_max(lo, f + df, 1e-10 * df, |ff| {
        columns
            .iter()
            .map(|c| dtft_magnitude(c, ff, map.dt_s))
            .sum()
    }))
}

/// Conventional estimator: crop below the surface, median filter, depth
/// average, k-space velocity, material model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConventionalEstimator {
    /// Rows kept below the surface; `None` uses the volume as is.
    pub crop_depth: Option<usize>,
    /// Median kernel edge; `None` or 1 skips filtering.
    pub median_kernel: Option<usize>,
    pub kspace: KspaceOptions,
    pub model: MaterialModel,
}

impl Default for ConventionalEstimator {
    fn default() -> Self {
        Self {
            crop_depth: Some(DEFAULT_CROP_DEPTH),
            median_kernel: Some(DEFAULT_MEDIAN_KERNEL),
            kspace: KspaceOptions::default(),
            model: MaterialModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConventionalEstimate {
    /// Young's modulus; absent when the velocity estimate is invalid.
    pub e_pa: Option<f64>,
    pub velocity: VelocityEstimate,
}

impl ConventionalEstimator {
    pub fn with_model(model: MaterialModel) -> Self {
        Self {
            model,
            ..Self::default()
        }
    }

    /// Runs crop and median filter; a volume already cropped to the target
    /// depth with its surface at row 0 is left unchanged.
    pub fn preprocess(&self, volume: &WaveFieldVolume) -> Result<WaveFieldVolume> {
        let mut current = match self.crop_depth {
            Some(depth)
                if !(volume.depth_px() == depth && volume.meta.surface_index == Some(0)) =>
            {
                preprocess::crop_below_surface(volume, depth)?
            }
            _ => volume.clone(),
        };
        if let Some(kernel) = self.median_kernel.filter(|&k| k > 1) {
            current = preprocess::median_filter_3d(&current, kernel)?;
        }
        Ok(current)
    }

    pub fn estimate(&self, volume: &WaveFieldVolume) -> Result<ConventionalEstimate> {
        let prepared = self.preprocess(volume)?;
        self.estimate_prepared(&prepared)
    }

    /// Estimates on a volume that is already preprocessed.
    pub fn estimate_prepared(&self, volume: &WaveFieldVolume) -> Result<ConventionalEstimate> {
        let velocity = kspace_velocity(&space_time_map(volume), &self.kspace)?;
        let e_pa = if velocity.valid {
            Some(youngs_modulus_from_velocity(velocity.v_mps, &self.model)?)
        } else {
            None
        };
        Ok(ConventionalEstimate { e_pa, velocity })
    }
}

/// Default conventional pipeline with the given material model.
pub fn estimate_elasticity_conventional(
    volume: &WaveFieldVolume,
    model: &MaterialModel,
) -> Result<ConventionalEstimate> {
    ConventionalEstimator::with_model(*model).estimate(volume)
}

/// Mean over the valid per-frequency elasticities.
pub fn ensemble_estimate(per_frequency: &[(f64, bool)]) -> Result<f64> {
    if per_frequency.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let valid: Vec<f64> = per_frequency.iter().filter(|p| p.1).map(|p| p.0).collect();
    if valid.is_empty() {
        return Err(Error::AllInvalid);
    }
    Ok(valid.iter().sum::<f64>() / valid.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_wavefield, noise_sigma_for_snr, SceneSpec};
    use crate::volume::{AcquisitionMeta, Geometry};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 100 px at 40 um, 200 frames at 10 kHz: df = 50 Hz, dk = 250 1/m.
    fn exact_grid(depth: usize) -> Geometry {
        Geometry {
            width_px: 100,
            depth_px: depth,
            frames: 200,
            dx_m: 40e-6,
            dz_m: 5e-6,
            dt_s: 1e-4,
        }
    }

    fn unit_q() -> MaterialModel {
        MaterialModel::new(1.0, 1000.0, 0.5).unwrap()
    }

    fn plane_wave_map(geometry: Geometry, f: f64, v: f64, phase: f64) -> SpaceTimeMap {
        let values = (0..geometry.width_px)
            .flat_map(|x| {
                (0..geometry.frames).map(move |t| {
                    let arg =
                        2.0 * PI * f * (t as f64 * geometry.dt_s - x as f64 * geometry.dx_m / v);
                    (arg + phase).sin()
                })
            })
            .collect();
        SpaceTimeMap::new(
            values,
            geometry.width_px,
            geometry.frames,
            geometry.dx_m,
            geometry.dt_s,
        )
        .unwrap()
    }

    fn exact_scene(e_pa: f64) -> SceneSpec {
        let mut spec = SceneSpec::plane_wave(e_pa, 1000.0, exact_grid(160));
        spec.material = unit_q();
        spec
    }

    #[test]
    fn map_of_identical_depth_rows_is_any_row() {
        let g = Geometry {
            width_px: 5,
            depth_px: 3,
            frames: 6,
            ..exact_grid(3)
        };
        let v = WaveFieldVolume::from_fn(g, AcquisitionMeta::default(), |t, _, x| {
            (t * 7 + x) as f32 * 0.25
        })
        .unwrap();
        let m = space_time_map(&v);
        for x in 0..5 {
            for t in 0..6 {
                assert_eq!(m.get(x, t), v.get(t, 1, x) as f64);
            }
        }
    }

    #[test]
    fn map_of_single_row_is_transpose() {
        let g = Geometry {
            width_px: 4,
            depth_px: 1,
            frames: 9,
            ..exact_grid(1)
        };
        let v = WaveFieldVolume::from_fn(g, AcquisitionMeta::default(), |t, _, x| {
            (t as f32).sin() + x as f32
        })
        .unwrap();
        let m = space_time_map(&v);
        assert_eq!((m.width(), m.frames()), (4, 9));
        assert!((0..4).all(|x| (0..9).all(|t| m.get(x, t) == v.get(t, 0, x) as f64)));
    }

    #[test]
    fn map_matches_brute_force_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Geometry {
            width_px: 8,
            depth_px: 8,
            frames: 8,
            ..exact_grid(8)
        };
        let v = WaveFieldVolume::from_fn(g, AcquisitionMeta::default(), |_, _, x| {
            rng.random_range(-1.0f32..1.0) + x as f32
        })
        .unwrap();
        let m = space_time_map(&v);
        for x in 0..8 {
            for t in 0..8 {
                let mut acc = 0.0f64;
                for z in 0..8 {
                    acc += v.data()[t * 64 + z * 8 + x] as f64;
                }
                assert_eq!(m.get(x, t), acc / 8.0);
            }
        }
    }

    #[test]
    fn exact_bin_plane_wave() {
        let map = plane_wave_map(exact_grid(1), 1000.0, 4.0, 0.3);
        for options in [KspaceOptions::default(), KspaceOptions::bin_peak()] {
            let est = kspace_velocity(&map, &options).unwrap();
            assert!(est.valid, "{options:?} {est:?}");
            assert!((est.v_mps - 4.0).abs() <= 1e-6 * 4.0, "{options:?} {est:?}");
            assert_eq!(est.dominant_frequency_hz, 1000.0);
        }
    }

    #[test]
    fn zero_map_has_no_peak() {
        let map = SpaceTimeMap::new(vec![0.0; 100], 10, 10, 1e-4, 1e-4).unwrap();
        let est = kspace_velocity(&map, &KspaceOptions::default()).unwrap();
        assert!(!est.valid);
        assert_eq!(est.failure, Some(EstimateFailure::NoSpectralPeak));
        // a constant map is the same after mean removal
        let map = SpaceTimeMap::new(vec![0.7; 100], 10, 10, 1e-4, 1e-4).unwrap();
        assert_eq!(
            kspace_velocity(&map, &KspaceOptions::default())
                .unwrap()
                .failure,
            Some(EstimateFailure::NoSpectralPeak)
        );
    }

    #[test]
    fn slow_wave_fails_gate() {
        let map = plane_wave_map(exact_grid(1), 1000.0, 0.5, 0.0);
        let est = kspace_velocity(&map, &KspaceOptions::default()).unwrap();
        assert!(!est.valid);
        assert_eq!(est.failure, Some(EstimateFailure::OutOfBand));
        assert!((est.v_mps - 0.5).abs() < 0.05, "{est:?}");
    }

    #[test]
    fn pure_noise_is_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let normal = rand_distr::StandardNormal;
        let values = (0..118 * 208)
            .map(|_| rng.sample::<f64, _>(normal))
            .collect();
        let g = Geometry::acquisition();
        let map = SpaceTimeMap::new(values, 118, 208, g.dx_m, g.dt_s).unwrap();
        let est = kspace_velocity(&map, &KspaceOptions::default()).unwrap();
        assert!(!est.valid, "{est:?}");
    }

    #[test]
    fn rejects_tiny_maps_and_bad_options() {
        let map = SpaceTimeMap::new(vec![0.0; 9], 3, 3, 1e-4, 1e-4).unwrap();
        assert!(kspace_velocity(&map, &KspaceOptions::default()).is_err());
        let map = plane_wave_map(exact_grid(1), 1000.0, 4.0, 0.0);
        let bad = KspaceOptions {
            padding: 0,
            ..Default::default()
        };
        assert!(kspace_velocity(&map, &bad).is_err());
        let bad = KspaceOptions {
            band: (5.0, 2.0),
            ..Default::default()
        };
        assert!(kspace_velocity(&map, &bad).is_err());
    }

    #[test]
    fn off_bin_error_within_one_padded_bin() {
        // f and k both off the raw grids; error bounded by one padded bin per axis
        let g = exact_grid(1);
        let (f, v) = (730.0, 3.3);
        let est =
            kspace_velocity(&plane_wave_map(g, f, v, 1.1), &KspaceOptions::bin_peak()).unwrap();
        let df = 1.0 / (4.0 * 200.0 * g.dt_s);
        let dk = 1.0 / (4.0 * 100.0 * g.dx_m);
        let k = f / v;
        let worst = ((f + df) / (k - dk) - v)
            .abs()
            .max(((f - df) / (k + dk) - v).abs());
        assert!((est.v_mps - v).abs() <= worst, "{est:?} worst {worst}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn scale_and_offset_invariance(scale in 0.01f64..100.0, offset in -5.0f64..5.0, v in 1.5f64..8.0) {
            let g = Geometry { width_px: 40, frames: 64, ..exact_grid(1) };
            let map = plane_wave_map(g, 800.0, v, 0.2);
            let base = kspace_velocity(&map, &KspaceOptions::default()).unwrap();
            let scaled = kspace_velocity(&map.map_values(|x| x * scale), &KspaceOptions::default()).unwrap();
            prop_assert_eq!(base.valid, scaled.valid);
            // arbitrary scales perturb rounding on a flat spectral peak
            prop_assert!((base.v_mps - scaled.v_mps).abs() <= 1e-6 * base.v_mps.max(1.0));
            let halved = kspace_velocity(&map.map_values(|x| x * 0.5), &KspaceOptions::default()).unwrap();
            prop_assert_eq!(base, halved);
            let shifted = kspace_velocity(&map.map_values(|x| x + offset), &KspaceOptions::default()).unwrap();
            prop_assert_eq!(base.valid, shifted.valid);
            prop_assert!((base.v_mps - shifted.v_mps).abs() <= 1e-6 * base.v_mps.max(1.0));
        }

        #[test]
        fn valid_estimates_lie_in_band(v in 0.2f64..30.0, f in 100.0f64..2000.0, noise in 0.0f64..2.0, seed in any::<u64>()) {
            let g = Geometry { width_px: 32, frames: 64, ..Geometry::acquisition() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean = plane_wave_map(g, f, v, 0.0);
            let map = clean.map_values(|x| x + noise * rng.sample::<f64, _>(rand_distr::StandardNormal));
            let est = kspace_velocity(&map, &KspaceOptions::default()).unwrap();
            prop_assert!(!est.valid || (1.0..=10.0).contains(&est.v_mps));
        }
    }

    #[test]
    fn dominant_frequency_of_pure_sinusoid() {
        let g = Geometry {
            width_px: 6,
            depth_px: 2,
            ..exact_grid(2)
        };
        let v = WaveFieldVolume::from_fn(g, AcquisitionMeta::default(), |t, _, _| {
            (2.0 * PI * 1000.0 * t as f64 * 1e-4).sin() as f32
        })
        .unwrap();
        let exact = DominantFrequencyOptions {
            refine: false,
            ..Default::default()
        };
        assert_eq!(dominant_frequency(&v, &exact).unwrap(), 1000.0);
        let rect = DominantFrequencyOptions {
            refine: false,
            window: Window::Rectangular,
            ..Default::default()
        };
        assert_eq!(dominant_frequency(&v, &rect).unwrap(), 1000.0);
        let refined = dominant_frequency(&v, &DominantFrequencyOptions::default()).unwrap();
        assert!((refined - 1000.0).abs() < 1e-3, "{refined}");
    }

    #[test]
    fn dominant_frequency_errors() {
        let g = Geometry {
            width_px: 6,
            depth_px: 2,
            frames: 16,
            ..exact_grid(2)
        };
        let c = WaveFieldVolume::from_fn(g, AcquisitionMeta::default(), |_, _, _| 0.3).unwrap();
        assert!(matches!(
            dominant_frequency(&c, &Default::default()),
            Err(Error::NoOscillation)
        ));
        let short = Geometry { frames: 7, ..g };
        let s = WaveFieldVolume::zeros(short, AcquisitionMeta::default()).unwrap();
        assert!(dominant_frequency(&s, &Default::default()).is_err());
    }

    #[test]
    fn dominant_frequency_on_acquisition_grid() {
        let g = Geometry {
            depth_px: 128,
            ..Geometry::acquisition()
        };
        let spec = SceneSpec::plane_wave(56e3, 400.0, g);
        let v = generate_wavefield(&spec).unwrap();
        let padded_bin = 11_400.0 / (208.0 * 4.0);
        for refine in [false, true] {
            let opts = DominantFrequencyOptions {
                refine,
                ..Default::default()
            };
            let f = dominant_frequency(&v, &opts).unwrap();
            assert!((f - 400.0).abs() <= padded_bin, "{refine} {f}");
            assert!((f - 400.0).abs() <= padded_bin / 2.0, "{refine} {f}");
        }
    }

    #[test]
    fn conventional_on_exact_bin_scene() {
        let volume = generate_wavefield(&exact_scene(48e3)).unwrap();
        let model = MaterialModel::default();
        let est = estimate_elasticity_conventional(&volume, &model).unwrap();
        assert!(est.velocity.valid);
        assert!((est.velocity.v_mps - 4.0).abs() < 1e-3 * 4.0, "{est:?}");
        let e = est.e_pa.unwrap();
        assert!((e - 40_320.0).abs() < 2e-3 * 40_320.0, "{e}");

        // without filtering the recovery is exact
        let plain = ConventionalEstimator {
            median_kernel: None,
            ..ConventionalEstimator::with_model(model)
        };
        let est = plain.estimate(&volume).unwrap();
        assert!((est.velocity.v_mps - 4.0).abs() <= 1e-6 * 4.0, "{est:?}");
        assert!((est.e_pa.unwrap() - 40_320.0).abs() <= 1e-5 * 40_320.0);
    }

    #[test]
    fn conventional_on_zero_volume_is_invalid() {
        let meta = AcquisitionMeta {
            surface_index: Some(0),
            ..Default::default()
        };
        let v = WaveFieldVolume::zeros(exact_grid(128), meta).unwrap();
        let est = estimate_elasticity_conventional(&v, &MaterialModel::default()).unwrap();
        assert!(!est.velocity.valid);
        assert_eq!(est.e_pa, None);
    }

    #[test]
    fn conventional_on_noisy_gelatin_scene() {
        let mut spec = SceneSpec::plane_wave(56e3, 800.0, Geometry::acquisition());
        spec.surface_index = 37;
        spec.noise_sigma = noise_sigma_for_snr(1.0, 20.0);
        spec.lateral_attenuation_m = Some(10e-3);
        spec.depth_attenuation_m = Some(1e-3);
        spec.phase0 = 1.3;
        spec.seed = 42;
        let v = generate_wavefield(&spec).unwrap();
        let est = estimate_elasticity_conventional(&v, &MaterialModel::default()).unwrap();
        let e = est.e_pa.expect("valid estimate");
        assert!((e - 56e3).abs() < 0.1 * 56e3, "{est:?}");
    }

    #[test]
    fn ensemble_rules() {
        assert_eq!(
            ensemble_estimate(&[(10e3, true), (20e3, true), (30e3, true)]).unwrap(),
            20e3
        );
        assert_eq!(
            ensemble_estimate(&[(10e3, true), (99e3, false), (20e3, true)]).unwrap(),
            15e3
        );
        assert!(matches!(
            ensemble_estimate(&[(1.0, false)]),
            Err(Error::AllInvalid)
        ));
        assert!(ensemble_estimate(&[]).is_err());
    }
}
