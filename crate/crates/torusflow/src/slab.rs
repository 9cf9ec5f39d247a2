//! Fields sampled on a time slab, and time-indexed background paths.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::KahlerPotential;
use crate::grid::{ScalarField, TorusGrid};

/// Three-point Lagrange differentiation weights at `t_eval`.
fn lagrange3_weights(t: [f64; 3], t_eval: f64) -> [f64; 3] {
    let [t0, t1, t2] = t;
    [
        (2.0 * t_eval - t1 - t2) / ((t0 - t1) * (t0 - t2)),
        (2.0 * t_eval - t0 - t2) / ((t1 - t0) * (t1 - t2)),
        (2.0 * t_eval - t0 - t1) / ((t2 - t0) * (t2 - t1)),
    ]
}

/// A field sampled at strictly increasing times on one grid.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    grid: Arc<TorusGrid>,
    times: Vec<f64>,
    fields: Vec<ScalarField>,
}

impl SpaceTimeField {
    pub fn new(times: Vec<f64>, fields: Vec<ScalarField>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::ShapeMismatch);
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("slab times must be strictly increasing".into()));
        }
        let grid = fields[0].grid().clone();
        for f in &fields {
            if !f.same_grid(&fields[0]) {
                return Err(Error::ShapeMismatch);
            }
            f.check_finite()?;
        }
        Ok(Self { grid, times, fields })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn field(&self, i: usize) -> &ScalarField {
        &self.fields[i]
    }

    pub fn fields(&self) -> &[ScalarField] {
        &self.fields
    }

    pub fn first(&self) -> &ScalarField {
        &self.fields[0]
    }

    pub fn last(&self) -> &ScalarField {
        self.fields.last().expect("non-empty slab")
    }

    /// Linear interpolation in t, clamped to the covered interval.
    pub fn at(&self, t: f64) -> ScalarField {
        if t <= self.times[0] {
            return self.fields[0].clone();
        }
        if t >= *self.times.last().unwrap() {
            return self.last().clone();
        }
        let i = match self.times.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => return self.fields[i].clone(),
            Err(i) => i,
        };
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let a = (t - t0) / (t1 - t0);
        self.fields[i - 1]
            .zip_with(&self.fields[i], |u, v| (1.0 - a) * u + a * v)
            .expect("matching grids")
    }

    /// Second-order time derivative at sample `i`: centered three-point in
    /// the interior, one-sided three-point at the endpoints.
    pub fn time_derivative(&self, i: usize) -> Result<ScalarField> {
        let n = self.len();
        if n < 3 {
            return Err(Error::InsufficientData(
                "need at least 3 time samples for differentiation".into(),
            ));
        }
        let j = i.clamp(1, n - 2);
        let idx = [j - 1, j, j + 1];
        let w = lagrange3_weights(
            [self.times[idx[0]], self.times[idx[1]], self.times[idx[2]]],
            self.times[i],
        );
        let mut acc = self.fields[idx[0]].scaled(w[0]);
        acc = acc.add(&self.fields[idx[1]].scaled(w[1]))?;
        acc.add(&self.fields[idx[2]].scaled(w[2]))
    }

    pub fn sup_norm(&self) -> f64 {
        self.fields.iter().map(|f| f.sup_norm()).fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &SpaceTimeField) -> Result<SpaceTimeField> {
        if self.times.len() != other.times.len() {
            return Err(Error::ShapeMismatch);
        }
        let fields = self
            .fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<Vec<_>>>()?;
        SpaceTimeField::new(self.times.clone(), fields)
    }

    pub fn map_fields(&self, f: impl Fn(&ScalarField) -> Result<ScalarField>) -> Result<Self> {
        let fields = self.fields.iter().map(f).collect::<Result<Vec<_>>>()?;
        SpaceTimeField::new(self.times.clone(), fields)
    }

    /// Relabel the time axis `t -> s t` (forward) or `t -> t / s` (inverse);
    /// values are untouched.
    pub fn rescale_time(&self, s: f64, forward: bool) -> Result<Self> {
        if forward && s == 0.0 {
            return Err(Error::Domain("cannot rescale time with s = 0".into()));
        }
        let times = if forward {
            self.times.iter().map(|t| s * t).collect()
        } else {
            self.times.iter().map(|t| t / s).collect()
        };
        SpaceTimeField::new(times, self.fields.clone())
    }
}

/// A time-indexed family of valid Kahler potentials covering `[0, T]`,
/// interpolated piecewise-linearly in t.
#[derive(Debug, Clone)]
pub struct BackgroundPath {
    slab: SpaceTimeField,
    w_floor: f64,
}

impl BackgroundPath {
    pub fn new(times: Vec<f64>, potentials: Vec<KahlerPotential>) -> Result<Self> {
        let w_floor = potentials
            .first()
            .map(|p| p.w_floor())
            .unwrap_or(crate::geometry::DEFAULT_W_FLOOR);
        let fields = potentials.into_iter().map(|p| p.field().clone()).collect();
        Ok(Self {
            slab: SpaceTimeField::new(times, fields)?,
            w_floor,
        })
    }

    /// A static background.
    pub fn constant(phi: KahlerPotential, t_final: f64) -> Result<Self> {
        let f = phi.field().clone();
        Ok(Self {
            slab: SpaceTimeField::new(vec![0.0, t_final], vec![f.clone(), f])?,
            w_floor: phi.w_floor(),
        })
    }

    pub fn slab(&self) -> &SpaceTimeField {
        &self.slab
    }

    pub fn t_final(&self) -> f64 {
        *self.slab.times().last().unwrap()
    }

    pub fn potential_at(&self, t: f64) -> Result<KahlerPotential> {
        KahlerPotential::with_floor(self.slab.at(t), self.w_floor)
    }

    pub fn is_static(&self) -> bool {
        let first = self.slab.first();
        self.slab
            .fields()
            .iter()
            .all(|f| f.sub(first).map(|d| d.sup_norm() == 0.0).unwrap_or(false))
    }
}

/// Precomputed coefficient fields (density `w`, Ricci density `r`) at the
/// background sample times, interpolated pointwise between slices. The
/// interpolation error is folded into the linear-solver tolerance.
#[derive(Debug, Clone)]
pub struct CoefficientPath {
    times: Vec<f64>,
    density: Vec<ScalarField>,
    ricci: Vec<ScalarField>,
}

impl CoefficientPath {
    pub fn prepare(path: &BackgroundPath) -> Result<Self> {
        let mut density = Vec::with_capacity(path.slab.len());
        let mut ricci = Vec::with_capacity(path.slab.len());
        for i in 0..path.slab.len() {
            let phi = KahlerPotential::with_floor(path.slab.field(i).clone(), path.w_floor)?;
            let w = phi.density()?;
            let r = phi.ricci_density()?;
            density.push(w);
            ricci.push(r);
        }
        Ok(Self {
            times: path.slab.times().to_vec(),
            density,
            ricci,
        })
    }

    pub fn coefficients_at(&self, t: f64) -> (ScalarField, ScalarField) {
        let interp = |fields: &[ScalarField]| -> ScalarField {
            if t <= self.times[0] {
                return fields[0].clone();
            }
            if t >= *self.times.last().unwrap() {
                return fields.last().unwrap().clone();
            }
            let i = self.times.partition_point(|&x| x < t);
            if self.times[i] == t {
                return fields[i].clone();
            }
            let (t0, t1) = (self.times[i - 1], self.times[i]);
            let a = (t - t0) / (t1 - t0);
            fields[i - 1]
                .zip_with(&fields[i], |u, v| (1.0 - a) * u + a * v)
                .expect("matching grids")
        };
        (interp(&self.density), interp(&self.ricci))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use std::f64::consts::PI;

    fn make_slab(times: Vec<f64>, amp: impl Fn(f64) -> f64) -> SpaceTimeField {
        let grid = TorusGrid::unit(16).unwrap();
        let fields = times
            .iter()
            .map(|&t| {
                ScalarField::from_fn(grid.clone(), |x, _| amp(t) * (2.0 * PI * x).cos()).unwrap()
            })
            .collect();
        SpaceTimeField::new(times, fields).unwrap()
    }

    #[test]
    fn rescale_round_trip_is_bitwise() {
        let slab = make_slab(vec![0.0, 0.1, 0.2, 0.3], |t| t);
        let fwd = slab.rescale_time(0.5, true).unwrap();
        let back = fwd.rescale_time(0.5, false).unwrap();
        for (a, b) in slab.times().iter().zip(back.times().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(slab.sub(&back).unwrap().sup_norm() == 0.0);
    }

    #[test]
    fn rescale_identity_at_s_one() {
        let slab = make_slab(vec![0.0, 0.1, 0.2], |t| t);
        let fwd = slab.rescale_time(1.0, true).unwrap();
        assert_eq!(slab.times(), fwd.times());
    }

    #[test]
    fn rescale_forward_relabels_linear_profile() {
        // u(x, t) = t f(x); after tau = s t the sample at tau carries value
        // (tau / s) f(x) = 2 tau f(x) for s = 1/2.
        let slab = make_slab(vec![0.0, 0.5, 1.0], |t| t);
        let fwd = slab.rescale_time(0.5, true).unwrap();
        assert_eq!(fwd.times(), &[0.0, 0.25, 0.5]);
        let tau = 0.25;
        let grid = fwd.grid().clone();
        let expect =
            ScalarField::from_fn(grid, |x, _| 2.0 * tau * (2.0 * PI * x).cos()).unwrap();
        assert!(fwd.at(tau).sub(&expect).unwrap().sup_norm() < 1e-14);
    }

    #[test]
    fn rescale_rejects_zero_s() {
        let slab = make_slab(vec![0.0, 0.1], |t| t);
        assert!(slab.rescale_time(0.0, true).is_err());
    }

    #[test]
    fn time_derivative_is_second_order() {
        let amp = |t: f64| (t * t * t).exp() - 1.0 + t * t;
        let damp = |t: f64| 3.0 * t * t * (t * t * t).exp() + 2.0 * t;
        let err_at = |h: f64, i: usize| -> f64 {
            let m = (1.0 / h).round() as usize;
            let slab = make_slab((0..=m).map(|k| k as f64 * h).collect(), amp);
            let t = slab.times()[i];
            // x = 0 => cos factor is 1
            (slab.time_derivative(i).unwrap().values()[[0, 0]] - damp(t)).abs()
        };
        // same interior time t = 0.5 on both grids; error drops ~4x
        let coarse = err_at(0.05, 10);
        let fine = err_at(0.025, 20);
        assert!(coarse < 1e-2, "coarse err {coarse}");
        let ratio = coarse / fine;
        assert!((3.0..5.2).contains(&ratio), "ratio {ratio}");
        // endpoint one-sided stencil stays second order (larger constant)
        let end_coarse = err_at(0.05, 0);
        let end_fine = err_at(0.025, 0);
        assert!(end_coarse / end_fine > 3.0);
    }
}
