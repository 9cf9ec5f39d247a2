//! Truncated Taylor expansions in the interpolation parameter `s` with
//! field coefficients. Power-series arithmetic replaces symbolic
//! bookkeeping when expanding curvature quantities of `phi(s)` about
//! `s = 0`.

use crate::error::{Error, Result};
use crate::grid::ScalarField;

pub const MAX_DEGREE: usize = 4;
const MIN_LEADING: f64 = 1e-9;

/// Degree-N truncated power series in `s`: `c_0 + c_1 s + ... + c_N s^N`.
#[derive(Debug, Clone)]
pub struct SJet {
    coeffs: Vec<ScalarField>,
}

impl SJet {
    pub fn new(coeffs: Vec<ScalarField>) -> Result<Self> {
        if coeffs.is_empty() || coeffs.len() > MAX_DEGREE + 1 {
            return Err(Error::Domain(format!(
                "jet degree must lie in [0, {MAX_DEGREE}], got {} coefficients",
                coeffs.len()
            )));
        }
        for c in &coeffs {
            if !c.same_grid(&coeffs[0]) {
                return Err(Error::ShapeMismatch);
            }
            c.check_finite()?;
        }
        Ok(Self { coeffs })
    }

    /// `field + 0 s + ... + 0 s^degree`.
    pub fn constant(field: ScalarField, degree: usize) -> Result<Self> {
        let grid = field.grid().clone();
        let mut coeffs = vec![field];
        coeffs.resize_with(degree + 1, || ScalarField::zeros(grid.clone()));
        Self::new(coeffs)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, j: usize) -> &ScalarField {
        &self.coeffs[j]
    }

    pub fn coeffs(&self) -> &[ScalarField] {
        &self.coeffs
    }

    /// Evaluate the truncated series at a concrete `s`.
    pub fn eval(&self, s: f64) -> Result<ScalarField> {
        let mut acc = self.coeffs.last().unwrap().clone();
        for c in self.coeffs.iter().rev().skip(1) {
            acc = acc.scaled(s).add(c)?;
        }
        Ok(acc)
    }

    fn check_compatible(&self, other: &SJet) -> Result<()> {
        if self.degree() != other.degree() || !self.coeffs[0].same_grid(&other.coeffs[0]) {
            return Err(Error::ShapeMismatch);
        }
        Ok(())
    }

    pub fn add(&self, other: &SJet) -> Result<SJet> {
        self.check_compatible(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.add(b))
            .collect::<Result<Vec<_>>>()?;
        SJet::new(coeffs)
    }

    pub fn sub(&self, other: &SJet) -> Result<SJet> {
        self.check_compatible(other)?;
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<Vec<_>>>()?;
        SJet::new(coeffs)
    }

    pub fn scaled(&self, a: f64) -> SJet {
        SJet {
            coeffs: self.coeffs.iter().map(|c| c.scaled(a)).collect(),
        }
    }

    /// Apply a linear operator coefficient-wise.
    pub fn map_coeffs(&self, f: impl Fn(&ScalarField) -> Result<ScalarField>) -> Result<SJet> {
        SJet::new(self.coeffs.iter().map(f).collect::<Result<Vec<_>>>()?)
    }

    /// Multiply by `s`, truncating the top coefficient.
    pub fn shift_up(&self) -> SJet {
        let grid = self.coeffs[0].grid().clone();
        let mut coeffs = vec![ScalarField::zeros(grid)];
        coeffs.extend(self.coeffs[..self.degree()].iter().cloned());
        SJet { coeffs }
    }

    /// Truncated Cauchy product with dealiased coefficient products.
    pub fn mul(&self, other: &SJet) -> Result<SJet> {
        self.check_compatible(other)?;
        let n = self.degree();
        let mut coeffs = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let mut acc = ScalarField::zeros(self.coeffs[0].grid().clone());
            for i in 0..=j {
                acc = acc.add(&self.coeffs[i].mul_dealiased(&other.coeffs[j - i])?)?;
            }
            coeffs.push(acc);
        }
        SJet::new(coeffs)
    }

    fn check_leading(&self, positive: bool) -> Result<()> {
        let c0 = &self.coeffs[0];
        let bad = if positive {
            c0.min_value() < MIN_LEADING
        } else {
            c0.values().iter().any(|v| v.abs() < MIN_LEADING)
        };
        if bad {
            return Err(Error::DegenerateInput(
                "leading jet coefficient touches zero".into(),
            ));
        }
        Ok(())
    }

    /// `1 / self` by the reciprocal recurrence
    /// `v_j = -v_0 sum_{i=1..j} c_i v_{j-i}`.
    pub fn reciprocal(&self) -> Result<SJet> {
        self.check_leading(false)?;
        let v0 = self.coeffs[0].map(|v| 1.0 / v)?.dealias()?;
        let mut out = vec![v0.clone()];
        for j in 1..=self.degree() {
            let mut acc = ScalarField::zeros(v0.grid().clone());
            for i in 1..=j {
                acc = acc.add(&self.coeffs[i].mul_dealiased(&out[j - i])?)?;
            }
            out.push(acc.mul_dealiased(&v0)?.scaled(-1.0));
        }
        SJet::new(out)
    }

    /// `log(self)` via `(log c)' = c' / c` integrated term by term;
    /// requires a strictly positive leading coefficient.
    pub fn log(&self) -> Result<SJet> {
        self.check_leading(true)?;
        let l0 = self.coeffs[0].map(|v| v.ln())?.dealias()?;
        let recip = self.reciprocal()?;
        let mut out = vec![l0];
        for j in 1..=self.degree() {
            // j l_j = sum_{i=1..j} i c_i v_{j-i}
            let mut acc = ScalarField::zeros(self.coeffs[0].grid().clone());
            for i in 1..=j {
                acc = acc.add(
                    &self.coeffs[i]
                        .scaled(i as f64)
                        .mul_dealiased(&recip.coeffs[j - i])?,
                )?;
            }
            out.push(acc.scaled(1.0 / j as f64));
        }
        SJet::new(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid() -> Arc<TorusGrid> {
        // wide enough that the reciprocal's spectral tail sits below the
        // round-trip tolerance
        TorusGrid::unit(32).unwrap()
    }

    fn const_jet(values: &[f64]) -> SJet {
        let g = grid();
        SJet::new(
            values
                .iter()
                .map(|&v| ScalarField::constant(g.clone(), v).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn assert_jet_values(jet: &SJet, expect: &[f64], tol: f64) {
        for (j, &e) in expect.iter().enumerate() {
            let got = jet.coeff(j).values()[[3, 5]];
            assert!(
                (got - e).abs() <= tol,
                "coefficient {j}: got {got}, expect {e}"
            );
        }
    }

    #[test]
    fn reciprocal_is_the_geometric_series() {
        let a = 0.7;
        let jet = const_jet(&[1.0, a, 0.0, 0.0, 0.0]);
        let r = jet.reciprocal().unwrap();
        assert_jet_values(&r, &[1.0, -a, a * a, -a * a * a, a * a * a * a], 1e-12);
    }

    #[test]
    fn log_is_the_mercator_series() {
        let a = 0.3;
        let jet = const_jet(&[1.0, a, 0.0, 0.0]);
        let l = jet.log().unwrap();
        assert_jet_values(&l, &[0.0, a, -a * a / 2.0, a * a * a / 3.0], 1e-12);
    }

    #[test]
    fn mul_reciprocal_round_trip() {
        let g = grid();
        let mk = |f: &dyn Fn(f64, f64, usize) -> f64| {
            SJet::new(
                (0..4)
                    .map(|j| ScalarField::from_fn(g.clone(), |x, y| f(x, y, j)).unwrap())
                    .collect(),
            )
            .unwrap()
        };
        let x = mk(&|x, y, j| 0.1 * (j as f64 + 1.0) * ((2.0 * PI * x).cos() + (2.0 * PI * y).sin()));
        let y = mk(&|x, _, j| {
            if j == 0 {
                2.0 + 0.3 * (2.0 * PI * x).cos()
            } else {
                0.05 * (2.0 * PI * x).sin() / (j as f64)
            }
        });
        let round = x.mul(&y).unwrap().mul(&y.reciprocal().unwrap()).unwrap();
        for j in 0..=3 {
            let err = round.coeff(j).sub(x.coeff(j)).unwrap().sup_norm();
            // dealiasing clips the band edge of the cubic products
            assert!(err < 1e-10, "coefficient {j}: err {err}");
        }
    }

    #[test]
    fn degenerate_leading_coefficient_is_rejected() {
        let g = grid();
        let touching =
            SJet::constant(ScalarField::from_fn(g.clone(), |x, _| (2.0 * PI * x).cos()).unwrap(), 2)
                .unwrap();
        assert!(matches!(
            touching.reciprocal(),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(touching.log(), Err(Error::DegenerateInput(_))));
        let negative = SJet::constant(ScalarField::constant(g, -2.0).unwrap(), 1).unwrap();
        assert!(negative.reciprocal().is_ok());
        assert!(matches!(negative.log(), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn eval_matches_horner_sum() {
        let jet = const_jet(&[2.0, -1.0, 0.5, 0.25]);
        let s = 0.3;
        let expect = 2.0 - s + 0.5 * s * s + 0.25 * s * s * s;
        let got = jet.eval(s).unwrap().values()[[0, 0]];
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn shift_up_multiplies_by_s() {
        let jet = const_jet(&[1.0, 2.0, 3.0]);
        let shifted = jet.shift_up();
        assert_jet_values(&shifted, &[0.0, 1.0, 2.0], 1e-15);
    }
}
