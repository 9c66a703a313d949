use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling grid of a spatio-temporal acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub width_px: usize,
    pub depth_px: usize,
    pub frames: usize,
    pub dx_m: f64,
    pub dz_m: f64,
    pub dt_s: f64,
}

impl Geometry {
    pub const ACQUISITION_WIDTH_PX: usize = 118;
    pub const ACQUISITION_DEPTH_PX: usize = 400;
    pub const ACQUISITION_FRAMES: usize = 208;
    pub const FRAME_RATE_HZ: f64 = 11_400.0;
    pub const LATERAL_FOV_M: f64 = 3.5e-3;
    pub const AXIAL_FOV_M: f64 = 2.0e-3;

    /// High-speed OCT acquisition grid: 118 x 400 px over 3.5 x 2 mm,
    /// 208 frames at 11.4 kHz.
    pub fn acquisition() -> Self {
        Self {
            width_px: Self::ACQUISITION_WIDTH_PX,
            depth_px: Self::ACQUISITION_DEPTH_PX,
            frames: Self::ACQUISITION_FRAMES,
            dx_m: Self::LATERAL_FOV_M / Self::ACQUISITION_WIDTH_PX as f64,
            dz_m: Self::AXIAL_FOV_M / Self::ACQUISITION_DEPTH_PX as f64,
            dt_s: 1.0 / Self::FRAME_RATE_HZ,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.frames * self.depth_px * self.width_px
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.depth_px == 0 || self.frames == 0 {
            return Err(Error::InvalidVolume(format!(
                "empty dimensions {}x{}x{}",
                self.frames, self.depth_px, self.width_px
            )));
        }
        for (name, value) in [
            ("dx_m", self.dx_m),
            ("dz_m", self.dz_m),
            ("dt_s", self.dt_s),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidVolume(format!(
                    "{name} must be > 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Self::acquisition()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionMeta {
    pub excitation_frequency_hz: Option<f64>,
    pub ground_truth_e_pa: Option<f64>,
    #[serde(default)]
    pub damped: bool,
    #[serde(default)]
    pub source_id: String,
    pub surface_index: Option<usize>,
}

impl AcquisitionMeta {
    pub fn validate(&self) -> Result<()> {
        if let Some(f) = self.excitation_frequency_hz {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::InvalidVolume(format!(
                    "excitation frequency must be > 0, got {f}"
                )));
            }
        }
        if let Some(e) = self.ground_truth_e_pa {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::InvalidVolume(format!(
                    "ground truth must be > 0, got {e}"
                )));
            }
        }
        Ok(())
    }
}

/// Spatio-temporal displacement field (optical phase, radians), stored
/// frame-major as `[time][depth][lateral]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFieldVolume {
    data: Vec<f32>,
    geometry: Geometry,
    pub meta: AcquisitionMeta,
}

impl WaveFieldVolume {
    pub fn new(data: Vec<f32>, geometry: Geometry, meta: AcquisitionMeta) -> Result<Self> {
        geometry.validate()?;
        meta.validate()?;
        if data.len() != geometry.voxel_count() {
            return Err(Error::InvalidVolume(format!(
                "data length {} != {} frames x {} depth x {} width",
                data.len(),
                geometry.frames,
                geometry.depth_px,
                geometry.width_px
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self {
            data,
            geometry,
            meta,
        })
    }

    pub fn zeros(geometry: Geometry, meta: AcquisitionMeta) -> Result<Self> {
        Self::new(vec![0.0; geometry.voxel_count()], geometry, meta)
    }

    /// Builds a volume by evaluating `f(t, z, x)` at every voxel.
    pub fn from_fn(
        geometry: Geometry,
        meta: AcquisitionMeta,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        geometry.validate()?;
        let mut data = Vec::with_capacity(geometry.voxel_count());
        for t in 0..geometry.frames {
            for z in 0..geometry.depth_px {
                for x in 0..geometry.width_px {
                    data.push(f(t, z, x));
                }
            }
        }
        Self::new(data, geometry, meta)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }
    pub fn width_px(&self) -> usize {
        self.geometry.width_px
    }
    pub fn depth_px(&self) -> usize {
        self.geometry.depth_px
    }
    pub fn frames(&self) -> usize {
        self.geometry.frames
    }
    pub fn dx_m(&self) -> f64 {
        self.geometry.dx_m
    }
    pub fn dz_m(&self) -> f64 {
        self.geometry.dz_m
    }
    pub fn dt_s(&self) -> f64 {
        self.geometry.dt_s
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, t: usize, z: usize, x: usize) -> usize {
        (t * self.geometry.depth_px + z) * self.geometry.width_px + x
    }

    #[inline]
    pub fn get(&self, t: usize, z: usize, x: usize) -> f32 {
        self.data[self.index(t, z, x)]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.geometry.depth_px * self.geometry.width_px;
        &self.data[t * n..(t + 1) * n]
    }

    /// Replaces the samples while keeping geometry and metadata.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(data, self.geometry, self.meta.clone())
    }

    /// Little-endian binary32 payload bytes.
    pub fn payload_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}
