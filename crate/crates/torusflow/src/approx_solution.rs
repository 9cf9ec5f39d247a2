//! Order-N approximate solutions `phi0 + sum_j (s^j / j!) u_j`: the flow
//! operator expanded as a jet in `s`, the triangular construction of the
//! corrector fields `u_j`, and the residual-order fit in `s`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::etd::{laplace_symbol, twisted_symbol, EtdCoeffs};
use crate::flow::rhs_twisted;
use crate::geometry::{dz_dzbar, KahlerPotential, DEFAULT_W_FLOOR};
use crate::grid::ScalarField;
use crate::jets::{SJet, MAX_DEGREE};
use crate::slab::{BackgroundPath, SpaceTimeField};

fn factorial(j: usize) -> f64 {
    (1..=j).product::<usize>() as f64
}

/// The flow operator `L_s(phi) = phi_t - s R - (1 - s)(1 - tr)` as a jet
/// in `s`, for `phi` and `phi_t` given as jets. Coefficient `j` of the
/// output is `(1/j!) d^j/ds^j L_s |_{s=0}`.
pub fn residual_jet(phi_jet: &SJet, phi_t_jet: &SJet, w_floor: f64) -> Result<SJet> {
    let deg = phi_jet.degree();
    // density jet: w = 1 + phi_{zz}
    let mut w_coeffs = Vec::with_capacity(deg + 1);
    for j in 0..=deg {
        let zz = dz_dzbar(phi_jet.coeff(j))?;
        w_coeffs.push(if j == 0 { zz.map(|v| 1.0 + v)? } else { zz });
    }
    let w = SJet::new(w_coeffs)?;
    let min = w.coeff(0).min_value();
    if min < w_floor {
        return Err(Error::PositivityLoss { min, floor: w_floor });
    }

    let trace = w.reciprocal()?;
    let ricci = w.log()?.map_coeffs(|c| Ok(dz_dzbar(c)?.scaled(-1.0)))?;
    let curv = ricci.mul(&trace)?;

    let one = SJet::constant(
        ScalarField::constant(phi_jet.coeff(0).grid().clone(), 1.0)?,
        deg,
    )?;
    let one_minus_tr = one.sub(&trace)?;
    // L = phi_t - s R - (1 - s)(1 - tr)
    phi_t_jet
        .sub(&curv.shift_up())?
        .sub(&one_minus_tr.sub(&one_minus_tr.shift_up())?)
}

/// The J-flow background together with the corrector fields `u_1..u_N`,
/// each vanishing at `t = 0`.
#[derive(Debug, Clone)]
pub struct ApproxSolution {
    phi0: BackgroundPath,
    phi0_t: SpaceTimeField,
    uj: Vec<SpaceTimeField>,
    uj_t: Vec<SpaceTimeField>,
}

impl ApproxSolution {
    pub fn order(&self) -> usize {
        self.uj.len()
    }

    pub fn phi0(&self) -> &BackgroundPath {
        &self.phi0
    }

    /// `u_j` for `j` in `1..=order`.
    pub fn u(&self, j: usize) -> &SpaceTimeField {
        &self.uj[j - 1]
    }

    /// Exact `du_j/dt` for `j` in `1..=order`, evaluated from the
    /// corrector equations at the stored states.
    pub fn u_t(&self, j: usize) -> &SpaceTimeField {
        &self.uj_t[j - 1]
    }

    /// Exact `d phi0/dt`, the J-flow right-hand side at the stored states.
    pub fn phi0_t(&self) -> &SpaceTimeField {
        &self.phi0_t
    }

    pub fn times(&self) -> &[f64] {
        self.phi0.slab().times()
    }

    /// `phi0 + sum_j (s^j / j!) u_j` at time index `i`.
    pub fn compose_at(&self, s: f64, i: usize) -> Result<ScalarField> {
        let mut acc = self.phi0.slab().field(i).clone();
        for (jm1, u) in self.uj.iter().enumerate() {
            let j = jm1 + 1;
            acc = acc.add(&u.field(i).scaled(s.powi(j as i32) / factorial(j)))?;
        }
        Ok(acc)
    }

    pub fn compose(&self, s: f64) -> Result<SpaceTimeField> {
        let fields = (0..self.times().len())
            .map(|i| self.compose_at(s, i))
            .collect::<Result<Vec<_>>>()?;
        SpaceTimeField::new(self.times().to_vec(), fields)
    }

    /// Exact time derivative of the composition at time index `i`.
    pub fn compose_derivative_at(&self, s: f64, i: usize) -> Result<ScalarField> {
        let mut acc = self.phi0_t.field(i).clone();
        for (jm1, ut) in self.uj_t.iter().enumerate() {
            let j = jm1 + 1;
            acc = acc.add(&ut.field(i).scaled(s.powi(j as i32) / factorial(j)))?;
        }
        Ok(acc)
    }

    pub fn compose_derivative(&self, s: f64) -> Result<SpaceTimeField> {
        let fields = (0..self.times().len())
            .map(|i| self.compose_derivative_at(s, i))
            .collect::<Result<Vec<_>>>()?;
        SpaceTimeField::new(self.times().to_vec(), fields)
    }

    /// Forget correctors above `order` (the construction is triangular,
    /// so this equals a fresh lower-order build).
    pub fn truncated(&self, order: usize) -> ApproxSolution {
        let keep = order.min(self.uj.len());
        ApproxSolution {
            phi0: self.phi0.clone(),
            phi0_t: self.phi0_t.clone(),
            uj: self.uj[..keep].to_vec(),
            uj_t: self.uj_t[..keep].to_vec(),
        }
    }
}

/// Exact time derivatives of the lockstep system: the J-flow for `phi0`
/// and, for each `j`, `du_j/dt = b u_{j,zz} - F_j` with `b = 1/w0^2` and
/// `F_j = j!` times coefficient `j` of the residual jet with `u_j`
/// frozen at zero.
fn derivatives(phi0: &ScalarField, u: &[ScalarField], w_floor: f64) -> Result<Vec<ScalarField>> {
    let pot = KahlerPotential::with_floor(phi0.clone(), w_floor)?;
    let b = pot.density()?.map(|v| 1.0 / (v * v))?.dealias()?;
    let mut dus = vec![rhs_twisted(&pot, 0.0)?];
    let grid = phi0.grid().clone();
    for j in 1..=u.len() {
        let mut c = vec![phi0.clone()];
        let mut ct = vec![dus[0].clone()];
        for i in 1..j {
            c.push(u[i - 1].scaled(1.0 / factorial(i)));
            ct.push(dus[i].scaled(1.0 / factorial(i)));
        }
        c.push(ScalarField::zeros(grid.clone()));
        ct.push(ScalarField::zeros(grid.clone()));
        let lj = residual_jet(&SJet::new(c)?, &SJet::new(ct)?, w_floor)?;
        let f_j = lj.coeff(j).scaled(factorial(j));
        dus.push(b.mul_dealiased(&dz_dzbar(&u[j - 1])?)?.sub(&f_j)?);
    }
    Ok(dus)
}

/// Build the order-N approximation over `[0, T]`: run the J-flow for
/// `phi0` and integrate the corrector equations in lockstep with ETD2.
/// Each corrector's stiff part uses the flat symbol with the diffusion
/// coefficient frozen at its initial spatial mean.
pub fn build_approximate(
    psi0: &KahlerPotential,
    order: usize,
    t_final: f64,
) -> Result<ApproxSolution> {
    if order > MAX_DEGREE {
        return Err(Error::Config(format!(
            "approximation order must be <= {MAX_DEGREE}, got {order}"
        )));
    }
    if !(t_final > 0.0 && t_final.is_finite()) {
        return Err(Error::Config(format!("final time must be positive, got {t_final}")));
    }
    let grid = psi0.grid().clone();
    let w_floor = psi0.w_floor();
    let steps = (t_final / (1e-4f64)).ceil() as usize;
    let steps = steps.max(50);
    let dt = t_final / steps as f64;
    let stride = (steps / 2000).max(1);

    let b_mean = psi0
        .density()?
        .map(|v| 1.0 / (v * v))?
        .mean();
    let sigma0 = twisted_symbol(&grid, 0.0);
    let sigma_u = laplace_symbol(&grid, b_mean);
    let coeffs0 = EtdCoeffs::new(&sigma0, dt);
    let coeffs_u = EtdCoeffs::new(&sigma_u, dt);

    let mut fields: Vec<ScalarField> = vec![psi0.field().clone()];
    fields.extend((0..order).map(|_| ScalarField::zeros(grid.clone())));

    let mut times = vec![0.0];
    let mut stored: Vec<Vec<ScalarField>> = vec![fields.clone()];

    let step_one = |fields: &[ScalarField]| -> Result<Vec<ScalarField>> {
        let dus = derivatives(&fields[0], &fields[1..], w_floor)?;
        let spectra: Vec<_> = fields.iter().map(|f| f.spectrum()).collect();
        let n_hats: Vec<_> = dus
            .iter()
            .zip(&spectra)
            .enumerate()
            .map(|(m, (du, fh))| {
                let sigma = if m == 0 { &sigma0 } else { &sigma_u };
                let mut n = du.spectrum();
                ndarray::Zip::from(&mut n)
                    .and(sigma)
                    .and(fh)
                    .for_each(|nn, &sg, &f| *nn += f * sg);
                n
            })
            .collect();
        // predictor
        let mut pred_hats = Vec::with_capacity(fields.len());
        for m in 0..fields.len() {
            let c = if m == 0 { &coeffs0 } else { &coeffs_u };
            let mut a = spectra[m].clone();
            ndarray::Zip::from(&mut a)
                .and(&c.e)
                .and(&c.p1)
                .and(&n_hats[m])
                .for_each(|aa, &e, &p, &n| *aa = *aa * e + n * p);
            pred_hats.push(a);
        }
        let pred_fields = pred_hats
            .iter()
            .map(|h| ScalarField::from_spectrum(grid.clone(), h.clone()))
            .collect::<Result<Vec<_>>>()?;
        // corrector
        let dus_p = derivatives(&pred_fields[0], &pred_fields[1..], w_floor)?;
        let mut out = Vec::with_capacity(fields.len());
        for m in 0..fields.len() {
            let c = if m == 0 { &coeffs0 } else { &coeffs_u };
            let mut np = dus_p[m].spectrum();
            ndarray::Zip::from(&mut np)
                .and(if m == 0 { &sigma0 } else { &sigma_u })
                .and(&pred_hats[m])
                .for_each(|nn, &sg, &f| *nn += f * sg);
            let mut a = pred_hats[m].clone();
            ndarray::Zip::from(&mut a)
                .and(&c.p2)
                .and(&np)
                .and(&n_hats[m])
                .for_each(|aa, &p, &nb, &na| *aa += (nb - na) * p);
            out.push(ScalarField::from_spectrum(grid.clone(), a)?);
        }
        Ok(out)
    };

    for k in 1..=steps {
        fields = step_one(&fields)?;
        if k % stride == 0 || k == steps {
            times.push(k as f64 * dt);
            stored.push(fields.clone());
        }
    }

    let stored_dus: Vec<Vec<ScalarField>> = stored
        .par_iter()
        .map(|row| derivatives(&row[0], &row[1..], w_floor))
        .collect::<Result<Vec<_>>>()?;

    let phi0_pots = stored
        .iter()
        .map(|row| KahlerPotential::with_floor(row[0].clone(), w_floor))
        .collect::<Result<Vec<_>>>()?;
    let phi0 = BackgroundPath::new(times.clone(), phi0_pots)?;
    let phi0_t = SpaceTimeField::new(
        times.clone(),
        stored_dus.iter().map(|row| row[0].clone()).collect(),
    )?;
    let mut uj = Vec::with_capacity(order);
    let mut uj_t = Vec::with_capacity(order);
    for j in 1..=order {
        let fields: Vec<_> = stored.iter().map(|row| row[j].clone()).collect();
        uj.push(SpaceTimeField::new(times.clone(), fields)?);
        let dfields: Vec<_> = stored_dus.iter().map(|row| row[j].clone()).collect();
        uj_t.push(SpaceTimeField::new(times.clone(), dfields)?);
    }
    Ok(ApproxSolution {
        phi0,
        phi0_t,
        uj,
        uj_t,
    })
}

/// Residual decay fit: `||L_s(phi_tilde)||_sup` over the slab at each
/// `s`, with the time derivative from centered differences on the stored
/// grid, and the least-squares slope of log-residual versus log-s.
#[derive(Debug, Clone)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    /// `(s, residual)`; `None` marks positivity loss at that `s`.
    pub residuals: Vec<(f64, Option<f64>)>,
}

pub fn residual_order_fit(approx: &ApproxSolution, s_values: &[f64]) -> Result<OrderFit> {
    if s_values.len() < 2 {
        return Err(Error::InsufficientData("need at least two s values".into()));
    }
    let residuals: Vec<(f64, Option<f64>)> = s_values
        .par_iter()
        .map(|&s| {
            let res = (|| -> Result<f64> {
                let slab = approx.compose(s)?;
                let mut sup = 0.0f64;
                for i in 0..slab.len() {
                    let pot = KahlerPotential::with_floor(slab.field(i).clone(), DEFAULT_W_FLOOR)?;
                    let l = slab
                        .time_derivative(i)?
                        .sub(&rhs_twisted(&pot, s)?)?
                        .sup_norm();
                    sup = sup.max(l);
                }
                Ok(sup)
            })();
            match res {
                Ok(v) => Ok((s, Some(v))),
                Err(Error::PositivityLoss { .. }) => Ok((s, None)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let pts: Vec<(f64, f64)> = residuals
        .iter()
        .filter_map(|&(s, r)| r.filter(|v| *v > 0.0).map(|v| (s.ln(), v.ln())))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InsufficientData(
            "fewer than two usable residuals for the fit".into(),
        ));
    }
    let n = pts.len() as f64;
    let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (sxx, sxy): (f64, f64) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    Ok(OrderFit {
        slope,
        intercept,
        residuals,
    })
}
