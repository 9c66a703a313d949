//! Synthetic plane shear-wave fields with known ground-truth elasticity.
//!
//! Below the surface row the displacement is
//! `A * exp(-x dx / L_lat) * exp(-(z - z_s) dz / L_dep) * sin(2 pi f (t dt - x dx / v) + phi0)`
//! plus white Gaussian noise; above it only noise. Wave speed follows from the
//! scene's material model, so the k-space estimator has an exact oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{velocity_from_youngs_modulus, MaterialModel};
use crate::volume::{AcquisitionMeta, Geometry, WaveFieldVolume};

/// Depth retained below the surface by the standard crop.
pub const CROP_DEPTH_PX: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub source_id: String,
    pub e_true_pa: f64,
    pub excitation_frequency_hz: f64,
    pub amplitude: f64,
    /// 1/e decay length along propagation; `None` means no decay.
    pub lateral_attenuation_m: Option<f64>,
    /// 1/e decay length below the surface; `None` means no decay.
    pub depth_attenuation_m: Option<f64>,
    pub surface_index: usize,
    pub noise_sigma: f64,
    pub frequency_jitter_hz: f64,
    pub amplitude_damping_factor: f64,
    pub phase0: f64,
    #[serde(default)]
    pub dropout_fraction: f64,
    pub geometry: Geometry,
    /// Model used to turn `e_true_pa` into a wave speed.
    #[serde(default)]
    pub material: MaterialModel,
    pub seed: u64,
}

impl SceneSpec {
    /// Noise-free, unattenuated, undamped plane wave starting at depth 0.
    pub fn plane_wave(e_true_pa: f64, excitation_frequency_hz: f64, geometry: Geometry) -> Self {
        Self {
            source_id: String::new(),
            e_true_pa,
            excitation_frequency_hz,
            amplitude: 1.0,
            lateral_attenuation_m: None,
            depth_attenuation_m: None,
            surface_index: 0,
            noise_sigma: 0.0,
            frequency_jitter_hz: 0.0,
            amplitude_damping_factor: 1.0,
            phase0: 0.0,
            dropout_fraction: 0.0,
            geometry,
            material: MaterialModel::default(),
            seed: 0,
        }
    }

    /// Wave speed implied by the ground truth and the synthesis model.
    pub fn wave_speed(&self) -> Result<f64> {
        velocity_from_youngs_modulus(self.e_true_pa, &self.material)
    }

    pub fn is_damped(&self) -> bool {
        self.amplitude_damping_factor < 1.0 || self.frequency_jitter_hz > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScene(msg));
        self.geometry.validate()?;
        self.material.validate()?;
        if !(self.e_true_pa.is_finite() && self.e_true_pa > 0.0) {
            return bad(format!("e_true_pa must be > 0, got {}", self.e_true_pa));
        }
        if !(self.excitation_frequency_hz.is_finite() && self.excitation_frequency_hz > 0.0) {
            return bad(format!(
                "excitation frequency must be > 0, got {}",
                self.excitation_frequency_hz
            ));
        }
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return bad(format!("amplitude must be > 0, got {}", self.amplitude));
        }
        if !(0.0..=1.0).contains(&self.amplitude_damping_factor) {
            return bad(format!(
                "amplitude damping factor must lie in [0, 1], got {}",
                self.amplitude_damping_factor
            ));
        }
        if !(0.0..=1.0).contains(&self.dropout_fraction) {
            return bad(format!(
                "dropout fraction must lie in [0, 1], got {}",
                self.dropout_fraction
            ));
        }
        for (name, value) in [
            ("noise_sigma", self.noise_sigma),
            ("frequency_jitter_hz", self.frequency_jitter_hz),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return bad(format!("{name} must be >= 0, got {value}"));
            }
        }
        for (name, value) in [
            ("lateral_attenuation_m", self.lateral_attenuation_m),
            ("depth_attenuation_m", self.depth_attenuation_m),
        ] {
            if let Some(l) = value {
                if l.is_nan() || l <= 0.0 {
                    return bad(format!("{name} must be > 0, got {l}"));
                }
            }
        }
        if !self.phase0.is_finite() {
            return bad("phase0 must be finite".into());
        }
        if self.surface_index + CROP_DEPTH_PX > self.geometry.depth_px {
            return bad(format!(
                "surface {} + {} exceeds depth {}",
                self.surface_index, CROP_DEPTH_PX, self.geometry.depth_px
            ));
        }
        let duration = self.geometry.frames as f64 * self.geometry.dt_s;
        if duration * self.excitation_frequency_hz < 1.0 {
            return bad(format!(
                "{} frames at {} s cover less than one period of {} Hz",
                self.geometry.frames, self.geometry.dt_s, self.excitation_frequency_hz
            ));
        }
        Ok(())
    }
}

/// Noise standard deviation giving `snr_db` relative to a sinusoid of the
/// given amplitude (signal power `A^2 / 2`).
pub fn noise_sigma_for_snr(amplitude: f64, snr_db: f64) -> f64 {
    amplitude / (2.0 * 10f64.powf(snr_db / 10.0)).sqrt()
}

const DROPOUT_STREAM: u64 = 0x6a09_e667_f3bc_c909;

pub fn generate_wavefield(spec: &SceneSpec) -> Result<WaveFieldVolume> {
    spec.validate()?;
    let g = spec.geometry;
    let v = spec.wave_speed()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Drawn unconditionally so that damped and undamped arms share the noise stream.
    let jitter: f64 = StandardNormal.sample(&mut rng);
    let f_eff = spec.excitation_frequency_hz + spec.frequency_jitter_hz * jitter;
    let a_eff = spec.amplitude * spec.amplitude_damping_factor;

    let two_pi = 2.0 * std::f64::consts::PI;
    let lateral: Vec<f64> = (0..g.width_px)
        .map(|x| match spec.lateral_attenuation_m {
            Some(l) => (-(x as f64) * g.dx_m / l).exp(),
            None => 1.0,
        })
        .collect();
    let axial: Vec<f64> = (0..g.depth_px)
        .map(|z| {
            if z < spec.surface_index {
                0.0
            } else {
                match spec.depth_attenuation_m {
                    Some(l) => (-((z - spec.surface_index) as f64) * g.dz_m / l).exp(),
                    None => 1.0,
                }
            }
        })
        .collect();

    let mut data = Vec::with_capacity(g.voxel_count());
    let mut row = vec![0.0f64; g.width_px];
    for t in 0..g.frames {
        let time = t as f64 * g.dt_s;
        for (x, r) in row.iter_mut().enumerate() {
            let phase = two_pi * f_eff * (time - x as f64 * g.dx_m / v) + spec.phase0;
            *r = lateral[x] * phase.sin();
        }
        for (z, &depth_gain) in axial.iter().enumerate() {
            for &w in &row {
                let mut value = if z < spec.surface_index {
                    0.0
                } else {
                    a_eff * depth_gain * w
                };
                if spec.noise_sigma > 0.0 {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    value += spec.noise_sigma * n;
                }
                data.push(value as f32);
            }
        }
    }

    if spec.dropout_fraction > 0.0 {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ DROPOUT_STREAM);
        for value in data.iter_mut() {
            if mask_rng.random::<f64>() < spec.dropout_fraction {
                *value = 0.0;
            }
        }
    }

    let meta = AcquisitionMeta {
        excitation_frequency_hz: Some(spec.excitation_frequency_hz),
        ground_truth_e_pa: Some(spec.e_true_pa),
        damped: spec.is_damped(),
        source_id: spec.source_id.clone(),
        surface_index: Some(spec.surface_index),
    };
    WaveFieldVolume::new(data, g, meta)
}

/// Generates the undamped arm (damping factor 1, no jitter) and the damped
/// arm (the scene's own damping parameters) from the same seed.
pub fn generate_damping_pair(spec: &SceneSpec) -> Result<(WaveFieldVolume, WaveFieldVolume)> {
    let undamped_spec = SceneSpec {
        amplitude_damping_factor: 1.0,
        frequency_jitter_hz: 0.0,
        ..spec.clone()
    };
    let undamped = generate_wavefield(&undamped_spec)?;
    let mut damped = generate_wavefield(spec)?;
    damped.meta.damped = true;
    Ok((undamped, damped))
}

/// Parameters of a phantom benchmark: stiffness levels x phantoms x
/// positions, repeated at each excitation frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub levels_pa: Vec<f64>,
    pub frequencies_hz: Vec<f64>,
    pub phantoms_per_level: usize,
    pub positions_per_phantom: usize,
    pub master_seed: u64,
    pub geometry: Geometry,
    pub amplitude: f64,
    /// Overrides `noise_sigma` when set.
    pub snr_db: Option<f64>,
    pub noise_sigma: f64,
    pub lateral_attenuation_m: Option<f64>,
    pub depth_attenuation_m: Option<f64>,
    /// Inclusive range the per-position surface row is drawn from.
    pub surface_range: (usize, usize),
    pub random_phase: bool,
    pub frequency_jitter_hz: f64,
    pub amplitude_damping_factor: f64,
    pub dropout_fraction: f64,
    pub material: MaterialModel,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            levels_pa: vec![17e3, 56e3, 97e3, 139e3],
            frequencies_hz: vec![200.0, 400.0, 600.0, 800.0, 1000.0],
            phantoms_per_level: 5,
            positions_per_phantom: 25,
            master_seed: 2023,
            geometry: Geometry::acquisition(),
            amplitude: 1.0,
            snr_db: None,
            noise_sigma: 0.0,
            lateral_attenuation_m: Some(10e-3),
            depth_attenuation_m: Some(1e-3),
            surface_range: (20, 60),
            random_phase: true,
            frequency_jitter_hz: 0.0,
            amplitude_damping_factor: 1.0,
            dropout_fraction: 0.0,
            material: MaterialModel::default(),
        }
    }
}

impl SuiteConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.levels_pa.is_empty() {
            return bad("at least one stiffness level required");
        }
        if self.frequencies_hz.is_empty() {
            return bad("at least one excitation frequency required");
        }
        if self.phantoms_per_level == 0 || self.positions_per_phantom == 0 {
            return bad("phantoms and positions per phantom must be >= 1");
        }
        if self.surface_range.0 > self.surface_range.1 {
            return bad("surface_range must be (min, max) with min <= max");
        }
        Ok(())
    }

    fn noise(&self) -> f64 {
        match self.snr_db {
            Some(snr) => noise_sigma_for_snr(self.amplitude, snr),
            None => self.noise_sigma,
        }
    }
}

/// A scene together with its place in the benchmark design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteScene {
    pub level_index: usize,
    pub phantom_index: usize,
    pub position_index: usize,
    pub frequency_index: usize,
    pub spec: SceneSpec,
}

impl SuiteScene {
    /// Phantom identity, stable across frequencies and positions.
    pub fn phantom_id(&self) -> String {
        format!("L{}_P{}", self.level_index, self.phantom_index)
    }

    /// File stem unique across the whole suite.
    pub fn file_stem(&self) -> String {
        format!(
            "{}_F{:04}",
            self.spec.source_id,
            self.spec.excitation_frequency_hz.round() as u64
        )
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ p))
}

/// Expands a suite configuration into one scene per
/// (frequency, level, phantom, position), frequency-major.
///
/// Surface row and initial phase belong to the position and are shared
/// across frequencies; noise seeds are per scene.
pub fn generate_benchmark_suite(config: &SuiteConfig) -> Result<Vec<SuiteScene>> {
    config.validate()?;
    let noise = config.noise();
    let (s_min, s_max) = config.surface_range;
    let mut scenes = Vec::with_capacity(
        config.frequencies_hz.len()
            * config.levels_pa.len()
            * config.phantoms_per_level
            * config.positions_per_phantom,
    );
    for (fi, &frequency) in config.frequencies_hz.iter().enumerate() {
        for (li, &level) in config.levels_pa.iter().enumerate() {
            for p in 0..config.phantoms_per_level {
                for s in 0..config.positions_per_phantom {
                    let position_seed = mix(config.master_seed, &[li as u64, p as u64, s as u64]);
                    let mut rng = ChaCha8Rng::seed_from_u64(position_seed);
                    let surface_index = rng.random_range(s_min..=s_max);
                    let phase0 = if config.random_phase {
                        rng.random_range(0.0..std::f64::consts::TAU)
                    } else {
                        0.0
                    };
                    let spec = SceneSpec {
                        source_id: format!("L{li}_P{p}_S{s:02}"),
                        e_true_pa: level,
                        excitation_frequency_hz: frequency,
                        amplitude: config.amplitude,
                        lateral_attenuation_m: config.lateral_attenuation_m,
                        depth_attenuation_m: config.depth_attenuation_m,
                        surface_index,
                        noise_sigma: noise,
                        frequency_jitter_hz: config.frequency_jitter_hz,
                        amplitude_damping_factor: config.amplitude_damping_factor,
                        phase0,
                        dropout_fraction: config.dropout_fraction,
                        geometry: config.geometry,
                        material: config.material,
                        seed: mix(position_seed, &[0xf00d, fi as u64]),
                    };
                    spec.validate()?;
                    scenes.push(SuiteScene {
                        level_index: li,
                        phantom_index: p,
                        position_index: s,
                        frequency_index: fi,
                        spec,
                    });
                }
            }
        }
    }
    Ok(scenes)
}
