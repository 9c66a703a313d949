//! Python bindings for the shear-wave elastography toolkit.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use shearwave::preprocess;
use shearwave::{
    AcquisitionMeta, ConventionalEstimator, DominantFrequencyOptions, Error, KspaceOptions,
    SuiteConfig,
};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn model(q: f64, rho: f64, nu: f64) -> PyResult<shearwave::MaterialModel> {
    shearwave::MaterialModel::new(q, rho, nu).map_err(err)
}

#[pyclass(
    name = "Geometry",
    module = "shearwave",
    get_all,
    set_all,
    from_py_object
)]
#[derive(Clone, Copy)]
struct Geometry {
    width_px: usize,
    depth_px: usize,
    frames: usize,
    dx_m: f64,
    dz_m: f64,
    dt_s: f64,
}

impl From<shearwave::Geometry> for Geometry {
    fn from(g: shearwave::Geometry) -> Self {
        Self {
            width_px: g.width_px,
            depth_px: g.depth_px,
            frames: g.frames,
            dx_m: g.dx_m,
            dz_m: g.dz_m,
            dt_s: g.dt_s,
        }
    }
}

impl From<Geometry> for shearwave::Geometry {
    fn from(g: Geometry) -> Self {
        Self {
            width_px: g.width_px,
            depth_px: g.depth_px,
            frames: g.frames,
            dx_m: g.dx_m,
            dz_m: g.dz_m,
            dt_s: g.dt_s,
        }
    }
}

#[pymethods]
impl Geometry {
    #[new]
    fn new(
        width_px: usize,
        depth_px: usize,
        frames: usize,
        dx_m: f64,
        dz_m: f64,
        dt_s: f64,
    ) -> PyResult<Self> {
        let g = Self {
            width_px,
            depth_px,
            frames,
            dx_m,
            dz_m,
            dt_s,
        };
        shearwave::Geometry::from(g).validate().map_err(err)?;
        Ok(g)
    }

    /// The 118 x 400 px, 208-frame OCT acquisition grid.
    #[staticmethod]
    fn acquisition() -> Self {
        shearwave::Geometry::acquisition().into()
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(width_px={}, depth_px={}, frames={}, dx_m={}, dz_m={}, dt_s={})",
            self.width_px, self.depth_px, self.frames, self.dx_m, self.dz_m, self.dt_s
        )
    }
}

/// Parameters of one synthetic scene. Fields not exposed as keywords are
/// reachable through `to_json` / `from_json`.
#[pyclass(name = "SceneSpec", module = "shearwave", from_py_object)]
#[derive(Clone)]
struct SceneSpec(shearwave::SceneSpec);

#[pymethods]
impl SceneSpec {
    #[new]
    #[pyo3(signature = (e_true_pa, excitation_frequency_hz, geometry=None, *, noise_sigma=0.0, seed=0, surface_index=0, phase0=0.0, amplitude_damping_factor=1.0, frequency_jitter_hz=0.0, source_id=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        e_true_pa: f64,
        excitation_frequency_hz: f64,
        geometry: Option<Geometry>,
        noise_sigma: f64,
        seed: u64,
        surface_index: usize,
        phase0: f64,
        amplitude_damping_factor: f64,
        frequency_jitter_hz: f64,
        source_id: Option<String>,
    ) -> PyResult<Self> {
        let g = geometry.map_or_else(shearwave::Geometry::acquisition, Into::into);
        let mut spec = shearwave::SceneSpec::plane_wave(e_true_pa, excitation_frequency_hz, g);
        spec.noise_sigma = noise_sigma;
        spec.seed = seed;
        spec.surface_index = surface_index;
        spec.phase0 = phase0;
        spec.amplitude_damping_factor = amplitude_damping_factor;
        spec.frequency_jitter_hz = frequency_jitter_hz;
        if let Some(id) = source_id {
            spec.source_id = id;
        }
        spec.validate().map_err(err)?;
        Ok(Self(spec))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: shearwave::SceneSpec = serde_json::from_str(text).map_err(json_err)?;
        spec.validate().map_err(err)?;
        Ok(Self(spec))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("scene serialises")
    }

    #[getter]
    fn source_id(&self) -> String {
        self.0.source_id.clone()
    }

    #[getter]
    fn e_true_pa(&self) -> f64 {
        self.0.e_true_pa
    }

    #[getter]
    fn excitation_frequency_hz(&self) -> f64 {
        self.0.excitation_frequency_hz
    }

    #[getter]
    fn geometry(&self) -> Geometry {
        self.0.geometry.into()
    }

    fn wave_speed(&self) -> PyResult<f64> {
        self.0.wave_speed().map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "SceneSpec(source_id={:?}, e_true_pa={}, excitation_frequency_hz={})",
            self.0.source_id, self.0.e_true_pa, self.0.excitation_frequency_hz
        )
    }
}

/// A wave-field volume stored as float32 in [time][depth][lateral] order.
#[pyclass(name = "Volume", module = "shearwave", frozen)]
struct Volume(shearwave::WaveFieldVolume);

#[pymethods]
impl Volume {
    /// Builds a volume from little-endian float32 bytes.
    #[staticmethod]
    #[pyo3(signature = (payload, geometry, meta_json=None))]
    fn from_bytes(payload: &[u8], geometry: Geometry, meta_json: Option<&str>) -> PyResult<Self> {
        if !payload.len().is_multiple_of(4) {
            return Err(PyValueError::new_err(
                "payload length is not a multiple of 4",
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let meta: AcquisitionMeta = match meta_json {
            Some(text) => serde_json::from_str(text).map_err(json_err)?,
            None => AcquisitionMeta::default(),
        };
        shearwave::WaveFieldVolume::new(data, geometry.into(), meta)
            .map(Self)
            .map_err(err)
    }

    /// Little-endian float32 payload, e.g. for `numpy.frombuffer(..., "<f4")`.
    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.payload_bytes())
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.frames(), self.0.depth_px(), self.0.width_px())
    }

    #[getter]
    fn geometry(&self) -> Geometry {
        (*self.0.geometry()).into()
    }

    #[getter]
    fn meta_json(&self) -> String {
        serde_json::to_string(&self.0.meta).expect("metadata serialises")
    }

    #[getter]
    fn source_id(&self) -> String {
        self.0.meta.source_id.clone()
    }

    #[getter]
    fn ground_truth_e_pa(&self) -> Option<f64> {
        self.0.meta.ground_truth_e_pa
    }

    #[getter]
    fn excitation_frequency_hz(&self) -> Option<f64> {
        self.0.meta.excitation_frequency_hz
    }

    fn get(&self, t: usize, z: usize, x: usize) -> PyResult<f32> {
        if t >= self.0.frames() || z >= self.0.depth_px() || x >= self.0.width_px() {
            return Err(PyValueError::new_err(format!(
                "index ({t}, {z}, {x}) out of range"
            )));
        }
        Ok(self.0.get(t, z, x))
    }

    fn __repr__(&self) -> String {
        let (t, z, x) = self.shape();
        format!(
            "Volume(source_id={:?}, shape=({t}, {z}, {x}))",
            self.0.meta.source_id
        )
    }
}

#[pyfunction]
#[pyo3(signature = (v_mps, q=0.84, rho=1000.0, nu=0.5))]
fn youngs_modulus_from_velocity(v_mps: f64, q: f64, rho: f64, nu: f64) -> PyResult<f64> {
    shearwave::youngs_modulus_from_velocity(v_mps, &model(q, rho, nu)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (e_pa, q=0.84, rho=1000.0, nu=0.5))]
fn velocity_from_youngs_modulus(e_pa: f64, q: f64, rho: f64, nu: f64) -> PyResult<f64> {
    shearwave::velocity_from_youngs_modulus(e_pa, &model(q, rho, nu)?).map_err(err)
}

/// Mean absolute error and the standard deviation of the absolute errors.
#[pyfunction]
fn mae(predictions: Vec<f64>, targets: Vec<f64>) -> PyResult<(f64, f64)> {
    let m = shearwave::mae(&predictions, &targets).map_err(err)?;
    Ok((m.mean, m.std))
}

#[pyfunction]
fn rmse(predictions: Vec<f64>, targets: Vec<f64>) -> PyResult<f64> {
    shearwave::rmse(&predictions, &targets).map_err(err)
}

#[pyfunction]
fn noise_sigma_for_snr(amplitude: f64, snr_db: f64) -> f64 {
    shearwave::synth::noise_sigma_for_snr(amplitude, snr_db)
}

#[pyfunction]
fn generate_wavefield(py: Python<'_>, spec: SceneSpec) -> PyResult<Volume> {
    py.detach(|| shearwave::generate_wavefield(&spec.0))
        .map(Volume)
        .map_err(err)
}

/// Undamped and damped acquisitions of the same scene.
#[pyfunction]
fn generate_damping_pair(py: Python<'_>, spec: SceneSpec) -> PyResult<(Volume, Volume)> {
    let (u, d) = py
        .detach(|| shearwave::generate_damping_pair(&spec.0))
        .map_err(err)?;
    Ok((Volume(u), Volume(d)))
}

fn suite_config(config_toml: Option<&str>) -> PyResult<SuiteConfig> {
    match config_toml {
        Some(text) => SuiteConfig::from_toml(text).map_err(err),
        None => Ok(SuiteConfig::default()),
    }
}

/// Scene list of a benchmark suite described by a TOML document (defaults
/// when omitted).
#[pyfunction]
#[pyo3(signature = (config_toml=None))]
fn generate_suite(config_toml: Option<&str>) -> PyResult<Vec<SceneSpec>> {
    let scenes = shearwave::generate_benchmark_suite(&suite_config(config_toml)?).map_err(err)?;
    Ok(scenes.into_iter().map(|s| SceneSpec(s.spec)).collect())
}

#[pyfunction]
#[pyo3(signature = (config_toml=None))]
fn suite_size(config_toml: Option<&str>) -> PyResult<usize> {
    let c = suite_config(config_toml)?;
    c.validate().map_err(err)?;
    Ok(c.levels_pa.len() * c.phantoms_per_level * c.positions_per_phantom * c.frequencies_hz.len())
}

#[pyfunction]
#[pyo3(signature = (volume, kappa=preprocess::DEFAULT_SURFACE_KAPPA))]
fn detect_surface(volume: &Volume, kappa: f64) -> PyResult<Vec<usize>> {
    preprocess::detect_surface(&volume.0, kappa).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (volume, depth=preprocess::DEFAULT_CROP_DEPTH))]
fn crop_below_surface(volume: &Volume, depth: usize) -> PyResult<Volume> {
    preprocess::crop_below_surface(&volume.0, depth)
        .map(Volume)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (volume, kernel=preprocess::DEFAULT_MEDIAN_KERNEL))]
fn median_filter_3d(py: Python<'_>, volume: &Volume, kernel: usize) -> PyResult<Volume> {
    py.detach(|| preprocess::median_filter_3d(&volume.0, kernel))
        .map(Volume)
        .map_err(err)
}

#[pyfunction]
fn resize_frames(volume: &Volume, width: usize, depth: usize) -> PyResult<Volume> {
    preprocess::resize_frames(&volume.0, width, depth)
        .map(Volume)
        .map_err(err)
}

/// Depth-averaged displacement as `[lateral][time]` nested lists.
#[pyfunction]
fn space_time_map(volume: &Volume) -> Vec<Vec<f64>> {
    let map = shearwave::space_time_map(&volume.0);
    (0..map.width()).map(|x| map.column(x).to_vec()).collect()
}

#[pyclass(name = "VelocityEstimate", module = "shearwave", get_all, frozen)]
struct VelocityEstimate {
    v_mps: f64,
    valid: bool,
    dominant_frequency_hz: f64,
    failure: Option<String>,
}

impl From<shearwave::VelocityEstimate> for VelocityEstimate {
    fn from(v: shearwave::VelocityEstimate) -> Self {
        Self {
            v_mps: v.v_mps,
            valid: v.valid,
            dominant_frequency_hz: v.dominant_frequency_hz,
            failure: v.failure.map(|f| f.to_string()),
        }
    }
}

#[pymethods]
impl VelocityEstimate {
    fn __repr__(&self) -> String {
        format!(
            "VelocityEstimate(v_mps={}, valid={}, dominant_frequency_hz={}, failure={:?})",
            self.v_mps, self.valid, self.dominant_frequency_hz, self.failure
        )
    }
}

fn kspace_options(
    padding: usize,
    threshold: f64,
    band: (f64, f64),
    window: &str,
    refine: bool,
) -> PyResult<KspaceOptions> {
    let options = KspaceOptions {
        padding,
        threshold,
        band,
        window: window.parse().map_err(err)?,
        refine_wavenumber: refine,
        ..Default::default()
    };
    options.validate().map_err(err)?;
    Ok(options)
}

/// Phase velocity of a volume that is already cropped and filtered.
#[pyfunction]
#[pyo3(signature = (volume, padding=4, threshold=0.1, band=(1.0, 10.0), window="hann", refine=true))]
fn kspace_velocity(
    py: Python<'_>,
    volume: &Volume,
    padding: usize,
    threshold: f64,
    band: (f64, f64),
    window: &str,
    refine: bool,
) -> PyResult<VelocityEstimate> {
    let options = kspace_options(padding, threshold, band, window, refine)?;
    py.detach(|| shearwave::kspace_velocity(&shearwave::space_time_map(&volume.0), &options))
        .map(Into::into)
        .map_err(err)
}

/// Full conventional pipeline (crop, median filter, k-space velocity,
/// material model). Returns `(e_pa or None, VelocityEstimate)`.
#[pyfunction]
#[pyo3(signature = (volume, q=0.84, padding=4, threshold=0.1, band=(1.0, 10.0), window="hann", refine=true, crop_depth=Some(preprocess::DEFAULT_CROP_DEPTH), kernel=preprocess::DEFAULT_MEDIAN_KERNEL))]
#[allow(clippy::too_many_arguments)]
fn estimate_elasticity(
    py: Python<'_>,
    volume: &Volume,
    q: f64,
    padding: usize,
    threshold: f64,
    band: (f64, f64),
    window: &str,
    refine: bool,
    crop_depth: Option<usize>,
    kernel: usize,
) -> PyResult<(Option<f64>, VelocityEstimate)> {
    let estimator = ConventionalEstimator {
        crop_depth,
        median_kernel: Some(kernel),
        kspace: kspace_options(padding, threshold, band, window, refine)?,
        model: model(q, 1000.0, 0.5)?,
    };
    let e = py.detach(|| estimator.estimate(&volume.0)).map_err(err)?;
    Ok((e.e_pa, e.velocity.into()))
}

#[pyfunction]
#[pyo3(signature = (volume, padding=4, refine=true))]
fn dominant_frequency(
    py: Python<'_>,
    volume: &Volume,
    padding: usize,
    refine: bool,
) -> PyResult<f64> {
    let options = DominantFrequencyOptions {
        padding,
        refine,
        ..Default::default()
    };
    py.detach(|| shearwave::dominant_frequency(&volume.0, &options))
        .map_err(err)
}

/// Mean of the valid per-frequency elasticities.
#[pyfunction]
fn ensemble_estimate(per_frequency: Vec<(f64, bool)>) -> PyResult<f64> {
    shearwave::ensemble_estimate(&per_frequency).map_err(err)
}

/// Least-squares q mapping velocities onto ground-truth elasticities.
#[pyfunction]
#[pyo3(signature = (velocities, ground_truths, rho=1000.0, nu=0.5))]
fn calibrate_q(velocities: Vec<f64>, ground_truths: Vec<f64>, rho: f64, nu: f64) -> PyResult<f64> {
    shearwave::eval::calibrate_q(&velocities, &ground_truths, &model(0.84, rho, nu)?).map_err(err)
}

#[pyfunction]
fn read_volume(path: PathBuf) -> PyResult<Volume> {
    shearwave::io::read_volume(&path).map(Volume).map_err(err)
}

#[pyfunction]
fn write_volume(volume: &Volume, path: PathBuf) -> PyResult<()> {
    shearwave::io::write_volume(&volume.0, &path).map_err(err)
}

#[pymodule]
#[pyo3(name = "shearwave")]
fn shearwave_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Geometry>()?;
    m.add_class::<SceneSpec>()?;
    m.add_class::<Volume>()?;
    m.add_class::<VelocityEstimate>()?;
    m.add_function(wrap_pyfunction!(youngs_modulus_from_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(velocity_from_youngs_modulus, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(noise_sigma_for_snr, m)?)?;
    m.add_function(wrap_pyfunction!(generate_wavefield, m)?)?;
    m.add_function(wrap_pyfunction!(generate_damping_pair, m)?)?;
    m.add_function(wrap_pyfunction!(generate_suite, m)?)?;
    m.add_function(wrap_pyfunction!(suite_size, m)?)?;
    m.add_function(wrap_pyfunction!(detect_surface, m)?)?;
    m.add_function(wrap_pyfunction!(crop_below_surface, m)?)?;
    m.add_function(wrap_pyfunction!(median_filter_3d, m)?)?;
    m.add_function(wrap_pyfunction!(resize_frames, m)?)?;
    m.add_function(wrap_pyfunction!(space_time_map, m)?)?;
    m.add_function(wrap_pyfunction!(kspace_velocity, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_elasticity, m)?)?;
    m.add_function(wrap_pyfunction!(dominant_frequency, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate_q, m)?)?;
    m.add_function(wrap_pyfunction!(read_volume, m)?)?;
    m.add_function(wrap_pyfunction!(write_volume, m)?)?;
    Ok(())
}
