//! Linear-elastic material model mapping shear-wave phase velocity to
//! Young's modulus: `E = q * rho * 2 * (1 + nu) * v^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The `(q, rho, nu)` triple of the linear elasticity model.
///
/// `q` is an empirical scaling factor absorbing constant offsets between
/// k-space velocities and indentation-test ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub q: f64,
    pub rho_kg_m3: f64,
    pub nu: f64,
}

impl MaterialModel {
    /// Calibrated scaling factor for gelatin phantoms.
    pub const GELATIN_Q: f64 = 0.84;
    pub const SOFT_TISSUE_DENSITY: f64 = 1000.0;
    pub const INCOMPRESSIBLE_NU: f64 = 0.5;

    pub fn new(q: f64, rho_kg_m3: f64, nu: f64) -> Result<Self> {
        let model = Self { q, rho_kg_m3, nu };
        model.validate()?;
        Ok(model)
    }

    /// Same density and Poisson ratio, different scaling factor.
    pub fn with_q(self, q: f64) -> Result<Self> {
        Self::new(q, self.rho_kg_m3, self.nu)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q.is_finite() && self.q > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "q must be > 0, got {}",
                self.q
            )));
        }
        if !(self.rho_kg_m3.is_finite() && self.rho_kg_m3 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "density must be > 0, got {}",
                self.rho_kg_m3
            )));
        }
        if !(0.0..=0.5).contains(&self.nu) {
            return Err(Error::InvalidArgument(format!(
                "Poisson ratio must lie in [0, 0.5], got {}",
                self.nu
            )));
        }
        Ok(())
    }

    /// `rho * 2 * (1 + nu)`, the velocity-squared coefficient without `q`.
    pub fn unscaled_coefficient(&self) -> f64 {
        self.rho_kg_m3 * 2.0 * (1.0 + self.nu)
    }

    /// Full coefficient `q * rho * 2 * (1 + nu)`.
    pub fn coefficient(&self) -> f64 {
        self.q * self.unscaled_coefficient()
    }
}

impl Default for MaterialModel {
    fn default() -> Self {
        Self {
            q: Self::GELATIN_Q,
            rho_kg_m3: Self::SOFT_TISSUE_DENSITY,
            nu: Self::INCOMPRESSIBLE_NU,
        }
    }
}

/// Young's modulus in pascals for a phase velocity in m/s.
pub fn youngs_modulus_from_velocity(v_mps: f64, model: &MaterialModel) -> Result<f64> {
    model.validate()?;
    if !(v_mps.is_finite() && v_mps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "velocity must be finite and >= 0, got {v_mps}"
        )));
    }
    Ok(model.coefficient() * v_mps * v_mps)
}

/// Inverse of [`youngs_modulus_from_velocity`].
pub fn velocity_from_youngs_modulus(e_pa: f64, model: &MaterialModel) -> Result<f64> {
    model.validate()?;
    if !(e_pa.is_finite() && e_pa >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "modulus must be finite and >= 0, got {e_pa}"
        )));
    }
    Ok((e_pa / model.coefficient()).sqrt())
}
