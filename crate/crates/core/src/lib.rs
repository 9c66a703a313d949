//! Shear-wave elastography toolkit.
//!
//! Synthesises spatio-temporal wave fields with known elasticity, estimates
//! phase velocity in k-space, maps it to Young's modulus and evaluates
//! estimators against ground truth.

pub mod error;
pub mod eval;
pub mod io;
pub mod kspace;
pub mod material;
pub mod metrics;
pub mod preprocess;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use kspace::{
    dominant_frequency, ensemble_estimate, estimate_elasticity_conventional, kspace_velocity,
    space_time_map, ConventionalEstimate, ConventionalEstimator, DominantFrequencyOptions,
    EstimateFailure, KspaceOptions, SpaceTimeMap, VelocityEstimate, Window,
};
pub use material::{velocity_from_youngs_modulus, youngs_modulus_from_velocity, MaterialModel};
pub use metrics::{mae, rmse, Mae};
pub use synth::{
    generate_benchmark_suite, generate_damping_pair, generate_wavefield, SceneSpec, SuiteConfig,
    SuiteScene,
};
pub use volume::{AcquisitionMeta, Geometry, WaveFieldVolume};
