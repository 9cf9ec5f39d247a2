//! Biharmonic heat kernel on the flat torus, the Duhamel solution
//! operator, and decay-exponent diagnostics.
//!
//! The kernel of `d/dt + Delta^2` (real Laplacian) is the mode sum
//! `b(x,y;t) = L^-2 sum_k exp(-16 pi^4 |k|^4 t / L^4) e^{2 pi i k (x-y)/L}`.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::etd::{biharmonic_symbol, phi1, phi2};
use crate::grid::{ScalarField, TorusGrid};
use crate::slab::SpaceTimeField;

/// Pointwise kernel evaluation truncated at `mode_cutoff`.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    grid: Arc<TorusGrid>,
    mode_cutoff: usize,
}

impl KernelSpec {
    pub fn new(grid: Arc<TorusGrid>, mode_cutoff: usize) -> Result<Self> {
        if mode_cutoff == 0 || mode_cutoff > grid.resolution() / 2 {
            return Err(Error::Domain(format!(
                "mode cutoff must lie in [1, N/2], got {mode_cutoff}"
            )));
        }
        Ok(Self { grid, mode_cutoff })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    fn decay_rate(&self, t: f64) -> f64 {
        let l = self.grid.side_length();
        16.0 * std::f64::consts::PI.powi(4) * t / l.powi(4)
    }

    /// Upper bound on the discarded mode tail, by rings of Chebyshev
    /// radius `q > cutoff` (at most `8q` modes with `|k|^2 >= q^2`).
    fn tail_bound(&self, t: f64) -> f64 {
        let a = self.decay_rate(t);
        let mut tail = 0.0;
        for q in (self.mode_cutoff + 1)..(self.mode_cutoff + 200) {
            let qf = q as f64;
            let term = 8.0 * qf * (-a * qf.powi(4)).exp();
            tail += term;
            if term < 1e-30 {
                break;
            }
        }
        tail
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("kernel time must be positive, got {t}")));
        }
        let tail = self.tail_bound(t);
        if tail >= 1e-14 {
            return Err(Error::Domain(format!(
                "t = {t:.3e} unresolvable at cutoff {}: tail bound {tail:.3e}",
                self.mode_cutoff
            )));
        }
        Ok(())
    }

    /// `b(x, y; t)`; refuses times whose truncation tail exceeds 1e-14.
    pub fn eval(&self, x: [f64; 2], y: [f64; 2], t: f64) -> Result<f64> {
        self.check_time(t)?;
        let l = self.grid.side_length();
        let a = self.decay_rate(t);
        let (dx, dy) = ((x[0] - y[0]) / l, (x[1] - y[1]) / l);
        let c = self.mode_cutoff as i64;
        let mut sum = 0.0;
        for kx in -c..=c {
            for ky in -c..=c {
                let k2 = (kx * kx + ky * ky) as f64;
                let phase = 2.0 * std::f64::consts::PI * (kx as f64 * dx + ky as f64 * dy);
                sum += (-a * k2 * k2).exp() * phase.cos();
            }
        }
        Ok(sum / (l * l))
    }

    /// `db/dx1(x, y; t)`, for derivative-decay diagnostics.
    pub fn eval_dx(&self, x: [f64; 2], y: [f64; 2], t: f64) -> Result<f64> {
        self.check_time(t)?;
        let l = self.grid.side_length();
        let a = self.decay_rate(t);
        let (dx, dy) = ((x[0] - y[0]) / l, (x[1] - y[1]) / l);
        let c = self.mode_cutoff as i64;
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut sum = 0.0;
        for kx in -c..=c {
            for ky in -c..=c {
                let k2 = (kx * kx + ky * ky) as f64;
                let phase = two_pi * (kx as f64 * dx + ky as f64 * dy);
                sum -= (-a * k2 * k2).exp() * phase.sin() * two_pi * kx as f64 / l;
            }
        }
        Ok(sum / (l * l))
    }
}

/// Solution of `du/dt + Delta^2 u = 0` at time `t`: the spectral
/// multiplier `exp(-16 pi^4 |k|^4 t / L^4)`.
pub fn homogeneous_evolve(u0: &ScalarField, t: f64) -> Result<ScalarField> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("evolution time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(u0.clone());
    }
    let sigma = biharmonic_symbol(u0.grid());
    let mut spec = u0.spectrum();
    ndarray::Zip::from(&mut spec)
        .and(&sigma)
        .for_each(|c, &s| *c *= (-s * t).exp());
    ScalarField::from_spectrum(u0.grid().clone(), spec)
}

/// Duhamel operator: `u` with `u(0) = 0` solving `du/dt + Delta^2 u = f`,
/// by exact per-mode variation of constants with `f` piecewise linear in
/// time. Output is sampled on the input time grid, clipped to `[0, T]`.
pub fn duhamel_solve(f: &SpaceTimeField, t_final: f64) -> Result<SpaceTimeField> {
    let times = f.times();
    if times[0] != 0.0 {
        return Err(Error::Domain("forcing must start at t = 0".into()));
    }
    if t_final <= 0.0 || t_final > *times.last().unwrap() + 1e-12 {
        return Err(Error::Domain(format!(
            "final time {t_final} outside the forcing interval"
        )));
    }
    let grid = f.grid().clone();
    let sigma = biharmonic_symbol(&grid);

    let mut u_hat: Array2<Complex64> = Array2::zeros(sigma.dim());
    let mut out_times = vec![0.0];
    let mut out_fields = vec![ScalarField::zeros(grid.clone())];
    let mut f_prev = f.field(0).spectrum();

    for i in 1..times.len() {
        if times[i] > t_final + 1e-12 {
            break;
        }
        let h = times[i] - times[i - 1];
        let f_next = f.field(i).spectrum();
        ndarray::Zip::from(&mut u_hat)
            .and(&sigma)
            .and(&f_prev)
            .and(&f_next)
            .for_each(|u, &s, &fa, &fb| {
                let z = -s * h;
                let slope = (fb - fa) / h;
                *u = *u * z.exp() + fa * (h * phi1(z)) + slope * (h * h * phi2(z));
            });
        out_times.push(times[i]);
        out_fields.push(ScalarField::from_spectrum(grid.clone(), u_hat.clone())?);
        f_prev = f_next;
    }
    SpaceTimeField::new(out_times, out_fields)
}

/// ETD march for `du/dt + Delta^2 u = f`, `u(0) = 0`, substepping each
/// forcing interval with the forcing interpolated linearly. Output is
/// sampled on the input time grid, clipped to `[0, T]`. An independent
/// cross-check for `duhamel_solve`: both are exact for piecewise-linear
/// forcing, but this one composes short steps.
pub fn etd_solve(f: &SpaceTimeField, t_final: f64, substeps: usize) -> Result<SpaceTimeField> {
    let times = f.times();
    if times[0] != 0.0 {
        return Err(Error::Domain("forcing must start at t = 0".into()));
    }
    if t_final <= 0.0 || t_final > *times.last().unwrap() + 1e-12 {
        return Err(Error::Domain(format!(
            "final time {t_final} outside the forcing interval"
        )));
    }
    if substeps == 0 {
        return Err(Error::Domain("substeps must be >= 1".into()));
    }
    let grid = f.grid().clone();
    let sigma = biharmonic_symbol(&grid);

    let mut u_hat: Array2<Complex64> = Array2::zeros(sigma.dim());
    let mut out_times = vec![0.0];
    let mut out_fields = vec![ScalarField::zeros(grid.clone())];
    let mut f_prev = f.field(0).spectrum();

    for i in 1..times.len() {
        if times[i] > t_final + 1e-12 {
            break;
        }
        let big_h = times[i] - times[i - 1];
        let f_next = f.field(i).spectrum();
        let h = big_h / substeps as f64;
        for k in 0..substeps {
            let (a0, a1) = (k as f64 / substeps as f64, (k + 1) as f64 / substeps as f64);
            ndarray::Zip::from(&mut u_hat)
                .and(&sigma)
                .and(&f_prev)
                .and(&f_next)
                .for_each(|u, &s, &fa, &fb| {
                    let z = -s * h;
                    let ga = fa + (fb - fa) * a0;
                    let gb = fa + (fb - fa) * a1;
                    *u = *u * z.exp() + ga * (h * phi1(z)) + (gb - ga) * (h * phi2(z));
                });
        }
        out_times.push(times[i]);
        out_fields.push(ScalarField::from_spectrum(grid.clone(), u_hat.clone())?);
        f_prev = f_next;
    }
    SpaceTimeField::new(out_times, out_fields)
}
