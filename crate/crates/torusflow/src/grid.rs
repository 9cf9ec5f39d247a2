//! Periodic grid on the flat unit torus with cached FFT plans.
//!
//! Fields are real point samples on an `n x n` grid (row index = y,
//! column index = x, x fastest). Spectral coefficients use the
//! standard FFT layout with integer wavenumbers `k in {-n/2, ..., n/2-1}`.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const DEFAULT_DEALIAS_FRACTION: f64 = 2.0 / 3.0;

/// Discretization of the flat torus `[0, L)^2`.
pub struct TorusGrid {
    n: usize,
    length: f64,
    dealias_fraction: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n", &self.n)
            .field("length", &self.length)
            .field("dealias_fraction", &self.dealias_fraction)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.length == other.length
    }
}

impl TorusGrid {
    pub fn new(n: usize, length: f64) -> Result<Arc<Self>> {
        Self::with_dealias(n, length, DEFAULT_DEALIAS_FRACTION)
    }

    pub fn with_dealias(n: usize, length: f64, dealias_fraction: f64) -> Result<Arc<Self>> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::Domain(format!(
                "grid resolution must be even and >= 8, got {n}"
            )));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::Domain(format!("side length must be positive, got {length}")));
        }
        if !(dealias_fraction > 0.0 && dealias_fraction <= 1.0) {
            return Err(Error::Domain(format!(
                "dealias fraction must lie in (0, 1], got {dealias_fraction}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Self {
            n,
            length,
            dealias_fraction,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }))
    }

    pub fn unit(n: usize) -> Result<Arc<Self>> {
        Self::new(n, 1.0)
    }

    pub fn resolution(&self) -> usize {
        self.n
    }

    pub fn side_length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Area element of the rectangle-rule quadrature.
    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    pub fn dealias_cutoff(&self) -> i64 {
        ((self.n / 2) as f64 * self.dealias_fraction).floor() as i64
    }

    /// Integer wavenumber of FFT bin `i`.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// In-place 2D FFT. Forward is unnormalized; inverse carries the 1/n^2.
    pub fn fft2(&self, a: &mut Array2<Complex64>, forward: bool) {
        let n = self.n;
        debug_assert_eq!(a.dim(), (n, n));
        let plan = if forward { &self.fwd } else { &self.inv };
        // Rows are contiguous in the default layout.
        for mut row in a.rows_mut() {
            let slice = row.as_slice_mut().expect("row-major field layout");
            plan.process(slice);
        }
        let mut col = vec![Complex64::default(); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = a[[i, j]];
            }
            plan.process(&mut col);
            for i in 0..n {
                a[[i, j]] = col[i];
            }
        }
        if !forward {
            let scale = 1.0 / (n * n) as f64;
            a.mapv_inplace(|c| c * scale);
        }
    }

    /// Zero all modes above the 2/3-rule cutoff (in either direction).
    pub fn dealias_spectrum(&self, spec: &mut Array2<Complex64>) {
        let kc = self.dealias_cutoff();
        for ((i, j), c) in spec.indexed_iter_mut() {
            let ky = self.wavenumber(i).abs();
            let kx = self.wavenumber(j).abs();
            if kx > kc || ky > kc {
                *c = Complex64::default();
            }
        }
    }
}

/// Real periodic grid function.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: Arc<TorusGrid>,
    values: Array2<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<TorusGrid>, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.resolution(), grid.resolution()) {
            return Err(Error::ShapeMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<TorusGrid>) -> Self {
        let n = grid.resolution();
        Self {
            grid,
            values: Array2::zeros((n, n)),
        }
    }

    pub fn constant(grid: Arc<TorusGrid>, c: f64) -> Result<Self> {
        let n = grid.resolution();
        Self::new(grid, Array2::from_elem((n, n), c))
    }

    /// Sample `f(x, y)` at grid points.
    pub fn from_fn(grid: Arc<TorusGrid>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let n = grid.resolution();
        let h = grid.spacing();
        let values = Array2::from_shape_fn((n, n), |(i, j)| f(j as f64 * h, i as f64 * h));
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array2<f64> {
        &mut self.values
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        self.grid == other.grid || *self.grid == *other.grid
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            Err(Error::NonFinite)
        } else {
            Ok(())
        }
    }

    pub fn spectrum(&self) -> Array2<Complex64> {
        let mut spec = self.values.mapv(|v| Complex64::new(v, 0.0));
        self.grid.fft2(&mut spec, true);
        spec
    }

    pub fn from_spectrum(grid: Arc<TorusGrid>, mut spec: Array2<Complex64>) -> Result<Self> {
        grid.fft2(&mut spec, false);
        Self::new(grid, spec.mapv(|c| c.re))
    }

    /// Apply a real Fourier multiplier `sym(kx, ky)` (integer wavenumbers).
    pub fn apply_symbol(&self, sym: impl Fn(i64, i64) -> f64) -> Result<Self> {
        let mut spec = self.spectrum();
        for ((i, j), c) in spec.indexed_iter_mut() {
            let ky = self.grid.wavenumber(i);
            let kx = self.grid.wavenumber(j);
            *c *= sym(kx, ky);
        }
        Self::from_spectrum(self.grid.clone(), spec)
    }

    /// Spectral partial derivative of order `(px, py)`. Odd-order
    /// derivatives zero the unmatched Nyquist mode.
    pub fn derivative(&self, px: u32, py: u32) -> Result<Self> {
        let n = self.grid.resolution() as i64;
        let two_pi_over_l = 2.0 * std::f64::consts::PI / self.grid.side_length();
        let mut spec = self.spectrum();
        for ((i, j), c) in spec.indexed_iter_mut() {
            let ky = self.grid.wavenumber(i);
            let kx = self.grid.wavenumber(j);
            if (px % 2 == 1 && kx == -n / 2) || (py % 2 == 1 && ky == -n / 2) {
                *c = Complex64::default();
                continue;
            }
            let mx = Complex64::new(0.0, two_pi_over_l * kx as f64).powu(px);
            let my = Complex64::new(0.0, two_pi_over_l * ky as f64).powu(py);
            *c *= mx * my;
        }
        Self::from_spectrum(self.grid.clone(), spec)
    }

    /// Remove modes above the grid's dealias cutoff.
    pub fn dealias(&self) -> Result<Self> {
        let mut spec = self.spectrum();
        self.grid.dealias_spectrum(&mut spec);
        Self::from_spectrum(self.grid.clone(), spec)
    }

    pub fn mean(&self) -> f64 {
        self.values.sum() / (self.values.len() as f64)
    }

    pub fn mean_free(&self) -> Self {
        let m = self.mean();
        Self {
            grid: self.grid.clone(),
            values: self.values.mapv(|v| v - m),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |acc, v| acc.min(*v))
    }

    /// Flat L2 norm, `sqrt(h^2 sum f^2)`.
    pub fn l2_flat(&self) -> f64 {
        (self.grid.cell_area() * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.mapv(|v| a * v),
        }
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// Pointwise product followed by 2/3-rule dealiasing.
    pub fn mul_dealiased(&self, other: &ScalarField) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)?.dealias()
    }

    /// Pointwise quotient followed by dealiasing. The caller guarantees
    /// the denominator is bounded away from zero.
    pub fn div_dealiased(&self, other: &ScalarField) -> Result<Self> {
        self.zip_with(other, |a, b| a / b)?.dealias()
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !self.same_grid(other) {
            return Err(Error::ShapeMismatch);
        }
        let values = ndarray::Zip::from(&self.values)
            .and(&other.values)
            .map_collect(|&a, &b| f(a, b));
        Self::new(self.grid.clone(), values)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.mapv(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn fft_round_trip_is_identity() {
        let grid = TorusGrid::unit(16).unwrap();
        let f = ScalarField::from_fn(grid.clone(), |x, y| {
            (2.0 * PI * x).cos() + 0.3 * (2.0 * PI * 2.0 * y).sin()
        })
        .unwrap();
        let back = ScalarField::from_spectrum(grid, f.spectrum()).unwrap();
        for (a, b) in f.values().iter().zip(back.values().iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn derivative_of_single_mode_matches_symbol() {
        let grid = TorusGrid::unit(32).unwrap();
        let f = ScalarField::from_fn(grid, |x, _| (2.0 * PI * 3.0 * x).cos()).unwrap();
        let dx = f.derivative(1, 0).unwrap();
        let expect =
            ScalarField::from_fn(dx.grid().clone(), |x, _| -6.0 * PI * (2.0 * PI * 3.0 * x).sin())
                .unwrap();
        let err = dx.sub(&expect).unwrap().sup_norm();
        assert!(err < 1e-10 * expect.sup_norm(), "err = {err}");
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::unit(7).is_err());
        assert!(TorusGrid::unit(4).is_err());
        assert!(TorusGrid::new(16, -1.0).is_err());
    }

    #[test]
    fn rejects_non_finite_values() {
        let grid = TorusGrid::unit(8).unwrap();
        let mut v = Array2::zeros((8, 8));
        v[[0, 0]] = f64::NAN;
        assert!(matches!(ScalarField::new(grid, v), Err(Error::NonFinite)));
    }

    #[test]
    fn dealias_kills_high_modes_only() {
        let grid = TorusGrid::unit(24).unwrap();
        // Mode 10 is above the 2/3 cutoff (floor(12 * 2/3) = 8), mode 3 below.
        let f = ScalarField::from_fn(grid, |x, _| {
            (2.0 * PI * 3.0 * x).cos() + (2.0 * PI * 10.0 * x).cos()
        })
        .unwrap();
        let d = f.dealias().unwrap();
        let expect =
            ScalarField::from_fn(d.grid().clone(), |x, _| (2.0 * PI * 3.0 * x).cos()).unwrap();
        assert!(d.sub(&expect).unwrap().sup_norm() < 1e-12);
    }
}
