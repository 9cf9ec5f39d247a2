//! Discrete Kahler geometry on the flat unit torus in complex dimension one.
//!
//! With `z = x + iy` and flat reference metric, a potential `phi` deforms
//! the metric through the density `w = 1 + phi_{zz}`, and every curvature
//! quantity reduces to pointwise algebra in `w`:
//!
//! * trace of the background: `1 / w`
//! * scalar curvature: `R = -(log w)_{zz} / w`
//! * Laplacian: `D_phi u = u_{zz} / w`
//!
//! All nonlinear products are dealiased with the 2/3 rule; `u_{zz}` itself
//! is a linear spectral operation and is exact per mode.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid};

pub const DEFAULT_W_FLOOR: f64 = 1e-6;

/// `u_{zz} = (u_xx + u_yy) / 4`, evaluated spectrally without dealiasing.
pub fn dz_dzbar(u: &ScalarField) -> Result<ScalarField> {
    let l = u.grid().side_length();
    let fac = std::f64::consts::PI / l;
    // symbol: -(2 pi k / L)^2 / 4 summed over axes = -pi^2 |k|^2 / L^2
    u.apply_symbol(|kx, ky| -fac * fac * ((kx * kx + ky * ky) as f64))
}

/// Kahler potential with the positivity invariant `min w >= w_floor`.
#[derive(Debug, Clone)]
pub struct KahlerPotential {
    field: ScalarField,
    w_floor: f64,
}

impl KahlerPotential {
    pub fn new(field: ScalarField) -> Result<Self> {
        Self::with_floor(field, DEFAULT_W_FLOOR)
    }

    pub fn with_floor(field: ScalarField, w_floor: f64) -> Result<Self> {
        field.check_finite()?;
        let pot = Self { field, w_floor };
        pot.density()?;
        Ok(pot)
    }

    pub fn zero(grid: Arc<TorusGrid>) -> Self {
        Self {
            field: ScalarField::zeros(grid),
            w_floor: DEFAULT_W_FLOOR,
        }
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.field.grid()
    }

    pub fn w_floor(&self) -> f64 {
        self.w_floor
    }

    /// Metric density `w = 1 + phi_{zz}` of `omega_phi` against the flat metric.
    pub fn density(&self) -> Result<ScalarField> {
        let w = dz_dzbar(&self.field)?.map(|v| 1.0 + v)?;
        let min = w.min_value();
        if min < self.w_floor {
            return Err(Error::PositivityLoss {
                min,
                floor: self.w_floor,
            });
        }
        Ok(w)
    }

    /// `tr_phi omega_g = 1 / w` in complex dimension one.
    pub fn trace_background(&self) -> Result<ScalarField> {
        let w = self.density()?;
        w.map(|v| 1.0 / v)?.dealias()
    }

    /// Scalar curvature `R = -(log w)_{zz} / w`.
    pub fn scalar_curvature(&self) -> Result<ScalarField> {
        let w = self.density()?;
        let r = self.ricci_density_from(&w)?;
        r.div_dealiased(&w)
    }

    /// Ricci density `r = -(log w)_{zz}` (the `zz` component of the Ricci form).
    pub fn ricci_density(&self) -> Result<ScalarField> {
        let w = self.density()?;
        self.ricci_density_from(&w)
    }

    fn ricci_density_from(&self, w: &ScalarField) -> Result<ScalarField> {
        let log_w = w.map(|v| v.ln())?.dealias()?;
        Ok(dz_dzbar(&log_w)?.scaled(-1.0))
    }

    /// `Delta_phi u = u_{zz} / w`.
    pub fn laplacian_of(&self, u: &ScalarField) -> Result<ScalarField> {
        let w = self.density()?;
        dz_dzbar(u)?.div_dealiased(&w)
    }

    /// `Delta_phi^2 u = ((u_{zz} / w)_{zz}) / w`.
    pub fn bilaplacian_of(&self, u: &ScalarField) -> Result<ScalarField> {
        let w = self.density()?;
        let inner = dz_dzbar(u)?.div_dealiased(&w)?;
        dz_dzbar(&inner)?.div_dealiased(&w)
    }

    /// Shift by a constant (does not change the metric).
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            field: self.field.map(|v| v + c).expect("finite shift"),
            w_floor: self.w_floor,
        }
    }
}

/// Rectangle-rule quadrature of `f` against the evolving measure,
/// `h^2 sum f w`; spectrally exact for band-limited integrands.
pub fn integrate_measure(f: &ScalarField, phi: &KahlerPotential) -> Result<f64> {
    if !f.same_grid(phi.field()) {
        return Err(Error::ShapeMismatch);
    }
    let w = phi.density()?;
    let mut acc = 0.0;
    for (a, b) in f.values().iter().zip(w.values().iter()) {
        acc += a * b;
    }
    Ok(acc * f.grid().cell_area())
}

/// Flat-measure quadrature `h^2 sum f`.
pub fn integrate_flat(f: &ScalarField) -> f64 {
    f.values().sum() * f.grid().cell_area()
}
