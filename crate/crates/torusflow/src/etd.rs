//! Exponential time differencing support: the flat-background linear
//! symbol is integrated exactly per Fourier mode; only the nonlinear
//! remainder is treated explicitly.

use ndarray::Array2;

use crate::grid::TorusGrid;

/// `(e^z - 1) / z`, stable near zero.
pub fn phi1(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

/// `(e^z - 1 - z) / z^2`, stable near zero.
pub fn phi2(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        0.5 + z / 6.0 + z * z / 24.0 + z * z * z / 120.0
    } else {
        (z.exp() - 1.0 - z) / (z * z)
    }
}

/// Linear symbol of the twisted flow at the flat background:
/// `sigma(k) = s pi^4 |k|^4 / L^4 + (1 - s) pi^2 |k|^2 / L^2`.
pub fn twisted_symbol(grid: &TorusGrid, s: f64) -> Array2<f64> {
    let n = grid.resolution();
    let pi = std::f64::consts::PI;
    let l2 = grid.side_length() * grid.side_length();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let ky = grid.wavenumber(i) as f64;
        let kx = grid.wavenumber(j) as f64;
        let k2 = (kx * kx + ky * ky) / l2;
        s * pi.powi(4) * k2 * k2 + (1.0 - s) * pi * pi * k2
    })
}

/// Symbol of the flat biharmonic heat operator `Delta^2` (real Laplacian):
/// `16 pi^4 |k|^4 / L^4`.
pub fn biharmonic_symbol(grid: &TorusGrid) -> Array2<f64> {
    let n = grid.resolution();
    let pi = std::f64::consts::PI;
    let l2 = grid.side_length() * grid.side_length();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let ky = grid.wavenumber(i) as f64;
        let kx = grid.wavenumber(j) as f64;
        let k2 = (kx * kx + ky * ky) / l2;
        16.0 * pi.powi(4) * k2 * k2
    })
}

/// Second-order symbol `c pi^2 |k|^2 / L^2` (flat part of the J-flow
/// linearization with a constant coefficient `c`).
pub fn laplace_symbol(grid: &TorusGrid, c: f64) -> Array2<f64> {
    let n = grid.resolution();
    let pi = std::f64::consts::PI;
    let l2 = grid.side_length() * grid.side_length();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let ky = grid.wavenumber(i) as f64;
        let kx = grid.wavenumber(j) as f64;
        c * pi * pi * (kx * kx + ky * ky) / l2
    })
}

/// Per-mode coefficients for one ETD step of size `dt` against the
/// symbol `sigma`: `e = exp(-sigma dt)`, `p1 = dt phi1(-sigma dt)`,
/// `p2 = dt phi2(-sigma dt)`.
#[derive(Debug, Clone)]
pub struct EtdCoeffs {
    pub dt: f64,
    pub e: Array2<f64>,
    pub p1: Array2<f64>,
    pub p2: Array2<f64>,
}

impl EtdCoeffs {
    pub fn new(sigma: &Array2<f64>, dt: f64) -> Self {
        let e = sigma.mapv(|s| (-s * dt).exp());
        let p1 = sigma.mapv(|s| dt * phi1(-s * dt));
        let p2 = sigma.mapv(|s| dt * phi2(-s * dt));
        Self { dt, e, p1, p2 }
    }
}
