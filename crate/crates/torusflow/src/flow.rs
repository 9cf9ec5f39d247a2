//! Time integration of the twisted flow family
//! `d phi / dt = s R(phi) + (1 - s)(1 - tr_phi)`, with normalization and
//! energy/dissipation accounting.
//!
//! The flat-background linear symbol is integrated exactly (ETD); only
//! the nonlinear remainder is explicit, which keeps the fourth-order
//! end of the family (`s` near 1) stable at practical step sizes.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::etd::{twisted_symbol, EtdCoeffs};
use crate::geometry::{dz_dzbar, integrate_flat, integrate_measure, KahlerPotential};
use crate::grid::{ScalarField, TorusGrid};
use crate::slab::SpaceTimeField;

pub const DEFAULT_STOP_TOL: f64 = 1e-9;
pub const DEFAULT_RTOL: f64 = 1e-6;
const STOP_CONSECUTIVE: usize = 10;
const ENERGY_QUAD_STEPS: usize = 32;
const MAX_STEPS: usize = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtPolicy {
    Fixed { dt: f64 },
    Adaptive { rtol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Etd1,
    Etd2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowParams {
    pub s: f64,
    pub t_final: f64,
    pub dt_policy: DtPolicy,
    pub scheme: Scheme,
    pub normalize: bool,
    pub record_every: usize,
    pub stop_tol: f64,
}

impl FlowParams {
    pub fn new(s: f64, t_final: f64) -> Self {
        Self {
            s,
            t_final,
            dt_policy: DtPolicy::Adaptive { rtol: DEFAULT_RTOL },
            scheme: Scheme::Etd2,
            normalize: false,
            record_every: 10,
            stop_tol: DEFAULT_STOP_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.s) {
            return Err(Error::Config(format!("s must lie in [0,1], got {}", self.s)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Config(format!(
                "final time must be positive, got {}",
                self.t_final
            )));
        }
        match self.dt_policy {
            DtPolicy::Fixed { dt } if !(dt > 0.0 && dt.is_finite()) => {
                return Err(Error::Config(format!("fixed dt must be positive, got {dt}")));
            }
            DtPolicy::Adaptive { rtol } if !(rtol > 0.0 && rtol.is_finite()) => {
                return Err(Error::Config(format!("rtol must be positive, got {rtol}")));
            }
            _ => {}
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub phi: KahlerPotential,
    pub t: f64,
    pub s: f64,
    pub step_count: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub l2: f64,
    pub sup: f64,
    pub min_w: f64,
    pub residual: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub i_value: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FlowTrace {
    pub samples: Vec<TraceSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    ReachedT,
    Converged { t: f64 },
    PositivityLoss { t: f64 },
    Blowup { t: f64 },
}

#[derive(Debug)]
pub struct RunOutcome {
    pub state: FlowState,
    pub trace: FlowTrace,
    pub verdict: Verdict,
    /// Recorded potentials, one per trace sample.
    pub snapshots: SpaceTimeField,
}

/// Right-hand side of the flow: `s R + (1 - s)(1 - tr_phi)`. The trace
/// term is formed from the deviation `1/w - 1` so the flat metric maps
/// to the exact zero field.
pub fn rhs_twisted(phi: &KahlerPotential, s: f64) -> Result<ScalarField> {
    let w = phi.density()?;
    let grid = phi.grid().clone();
    let mut rhs = ScalarField::zeros(grid);
    if s != 0.0 {
        let log_w = w.map(|v| v.ln())?.dealias()?;
        let r = dz_dzbar(&log_w)?.scaled(-1.0);
        let curv = r.div_dealiased(&w)?;
        rhs = rhs.add(&curv.scaled(s))?;
    }
    if s != 1.0 {
        let trace_dev = w.map(|v| 1.0 / v - 1.0)?.dealias()?;
        rhs = rhs.sub(&trace_dev.scaled(1.0 - s))?;
    }
    Ok(rhs)
}

/// `I(phi) = int phi (1 + phi_{zz}/2) dA`, the flat-path antiderivative of
/// the evolving volume form; constant shifts change it by `-c L^2`.
pub fn functional_i(phi: &KahlerPotential) -> Result<f64> {
    let f = phi.field();
    let half_lap = dz_dzbar(f)?.scaled(0.5);
    let integrand = f.zip_with(&half_lap, |a, b| a * (1.0 + b))?;
    Ok(integrate_flat(&integrand))
}

/// Shift by the constant that makes `I` vanish exactly.
pub fn normalize_i(phi: &KahlerPotential) -> Result<KahlerPotential> {
    let l = phi.grid().side_length();
    let c = functional_i(phi)? / (l * l);
    Ok(phi.shifted(-c))
}

/// Energy whose first variation is minus the flow right-hand side,
/// computed by Simpson quadrature of `-int phi rhs(tau phi) w_tau dA`
/// along the linear path `tau phi`.
pub fn twisted_energy(phi: &KahlerPotential, s: f64, quad_steps: usize) -> Result<f64> {
    if quad_steps < 2 || quad_steps % 2 != 0 {
        return Err(Error::Config(format!(
            "quadrature steps must be even and >= 2, got {quad_steps}"
        )));
    }
    let one_form = |tau: f64| -> Result<f64> {
        let pot = KahlerPotential::with_floor(phi.field().scaled(tau), phi.w_floor())?;
        let g = rhs_twisted(&pot, s)?;
        let integrand = phi.field().zip_with(&g, |a, b| a * b)?;
        integrate_measure(&integrand, &pot)
    };
    let h = 1.0 / quad_steps as f64;
    let mut acc = one_form(0.0)? + one_form(1.0)?;
    for i in 1..quad_steps {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * one_form(i as f64 * h)?;
    }
    Ok(-acc * h / 3.0)
}

/// ETD stepper for one `(grid, s)` pair, caching per-dt mode coefficients.
///
/// The integrating factor uses the flat symbol scaled by a running
/// stiffness bound `c = max(1, 1 / min(w)^2)`: the explicitly treated
/// varying part of the operator reaches `sigma / w^2`, and the scheme is
/// stable only while that stays within about twice the factored-out
/// symbol. For small data `c = 1` and the scheme is the plain flat-symbol
/// ETD; strained metrics (min density well below 1) raise the factor with
/// hysteresis so coefficients are not rebuilt every step.
pub struct FlowStepper {
    grid: Arc<TorusGrid>,
    s: f64,
    w_floor: f64,
    sigma_base: Array2<f64>,
    stiffness: f64,
    sigma: Array2<f64>,
    coeffs: Option<EtdCoeffs>,
}

struct Eval {
    pot: KahlerPotential,
    rhs: ScalarField,
    nhat: Array2<Complex64>,
    phi_hat: Array2<Complex64>,
}

impl FlowStepper {
    pub fn new(grid: Arc<TorusGrid>, s: f64, w_floor: f64) -> Self {
        let sigma_base = twisted_symbol(&grid, s);
        let sigma = sigma_base.clone();
        Self {
            grid,
            s,
            w_floor,
            sigma_base,
            stiffness: 1.0,
            sigma,
            coeffs: None,
        }
    }

    fn coeffs_for(&mut self, dt: f64) -> &EtdCoeffs {
        let stale = self.coeffs.as_ref().map(|c| c.dt != dt).unwrap_or(true);
        if stale {
            self.coeffs = Some(EtdCoeffs::new(&self.sigma, dt));
        }
        self.coeffs.as_ref().unwrap()
    }

    /// Adjust the stiffness factor toward `1 / min(w)^2`, quantized to
    /// powers of 1.25 and clamped below by 1, with enough hysteresis that
    /// slowly drifting densities do not thrash the coefficient cache. The
    /// explicit part stays a stable perturbation as long as the current
    /// factor is within 2x of the needed one. The factor is capped: below
    /// min(w) ~ 1/16 the dealiased reciprocal density is not resolved at
    /// the resolutions this lab runs, so such states are left to fail
    /// rather than silently integrated.
    fn retune(&mut self, pot: &KahlerPotential) -> Result<()> {
        const MAX_STIFFNESS: f64 = 256.0;
        let w_min = pot.density()?.min_value();
        let needed = (1.0 / (w_min * w_min)).clamp(1.0, MAX_STIFFNESS);
        if needed <= 1.6 * self.stiffness && !(self.stiffness > 1.0 && needed < 0.5 * self.stiffness)
        {
            return Ok(());
        }
        let step = 1.25f64;
        let target = if needed <= 1.0 {
            1.0
        } else {
            step.powi((needed.ln() / step.ln()).ceil() as i32)
        };
        if target != self.stiffness {
            self.stiffness = target;
            self.sigma = self.sigma_base.map(|&v| v * target);
            self.coeffs = None;
        }
        Ok(())
    }

    /// Evaluation for the outer step loop; updates the stiffness factor
    /// from the current state before forming the remainder.
    fn eval(&mut self, phi: &ScalarField) -> Result<Eval> {
        let pot = KahlerPotential::with_floor(phi.clone(), self.w_floor)?;
        self.retune(&pot)?;
        self.eval_at(pot)
    }

    /// Evaluation at a fixed stiffness factor; the predictor inside a step
    /// must use the same factor as the step coefficients.
    fn eval_frozen(&self, phi: &ScalarField) -> Result<Eval> {
        let pot = KahlerPotential::with_floor(phi.clone(), self.w_floor)?;
        self.eval_at(pot)
    }

    /// Nonlinear remainder spectrum `N = rhs + sigma phi` at `phi`.
    fn eval_at(&self, pot: KahlerPotential) -> Result<Eval> {
        let phi = pot.field();
        let rhs = rhs_twisted(&pot, self.s)?;
        let phi_hat = phi.spectrum();
        let mut nhat = rhs.spectrum();
        ndarray::Zip::from(&mut nhat)
            .and(&phi_hat)
            .and(&self.sigma)
            .for_each(|n, &p, &sg| *n += p * sg);
        Ok(Eval {
            pot,
            rhs,
            nhat,
            phi_hat,
        })
    }

    /// One step from a prepared evaluation. Returns the new field and, for
    /// etd2, the sup-norm of the corrector (an error estimate for etd1).
    fn step_from(&mut self, ev: &Eval, dt: f64, scheme: Scheme) -> Result<(ScalarField, f64)> {
        let (e, p1, p2) = {
            let c = self.coeffs_for(dt);
            (c.e.clone(), c.p1.clone(), c.p2.clone())
        };
        let mut a_hat = ev.phi_hat.clone();
        ndarray::Zip::from(&mut a_hat)
            .and(&e)
            .and(&p1)
            .and(&ev.nhat)
            .for_each(|a, &e, &p, &n| *a = *a * e + n * p);
        let predictor = ScalarField::from_spectrum(self.grid.clone(), a_hat.clone())?;
        let pred_ev = self.eval_frozen(&predictor)?;
        let mut corr_hat = Array2::<Complex64>::zeros(a_hat.dim());
        ndarray::Zip::from(&mut corr_hat)
            .and(&p2)
            .and(&pred_ev.nhat)
            .and(&ev.nhat)
            .for_each(|c, &p, &na, &n| *c = (na - n) * p);
        let corrector = ScalarField::from_spectrum(self.grid.clone(), corr_hat)?;
        let err = corrector.sup_norm();
        match scheme {
            Scheme::Etd1 => Ok((predictor, err)),
            Scheme::Etd2 => Ok((predictor.add(&corrector)?, err)),
        }
    }
}

fn is_fatal(e: &Error) -> Option<bool> {
    match e {
        Error::PositivityLoss { .. } => Some(true),
        Error::NonFinite => Some(false),
        _ => None,
    }
}

struct Recorder {
    trace: FlowTrace,
    snap_times: Vec<f64>,
    snap_fields: Vec<ScalarField>,
    calm: usize,
    s: f64,
    stop_tol: f64,
}

impl Recorder {
    /// Append a sample; returns true once the mean-free sup-norm has
    /// stayed below `stop_tol` for ten consecutive records.
    fn push(&mut self, t: f64, phi: &ScalarField, ev: &Eval, dissipation: f64) -> Result<bool> {
        let mf = phi.mean_free();
        self.trace.samples.push(TraceSample {
            t,
            l2: mf.l2_flat(),
            sup: mf.sup_norm(),
            min_w: ev.pot.density()?.min_value(),
            residual: ev.rhs.sup_norm(),
            energy: twisted_energy(&ev.pot, self.s, ENERGY_QUAD_STEPS)?,
            dissipation,
            i_value: functional_i(&ev.pot)?,
        });
        self.snap_times.push(t);
        self.snap_fields.push(phi.clone());
        if mf.sup_norm() < self.stop_tol {
            self.calm += 1;
        } else {
            self.calm = 0;
        }
        Ok(self.calm >= STOP_CONSECUTIVE)
    }
}

/// Integrate the flow from `psi0` to time `params.t_final`, or until the
/// mean-free sup-norm stays below `stop_tol` for ten consecutive records.
/// Positivity loss and blowup are reported in the verdict, not as errors,
/// so parameter sweeps can record failures.
pub fn run(psi0: &KahlerPotential, params: &FlowParams) -> Result<RunOutcome> {
    params.validate()?;
    let grid = psi0.grid().clone();
    let mut stepper = FlowStepper::new(grid.clone(), params.s, psi0.w_floor());

    let mut phi = psi0.field().clone();
    if params.normalize {
        phi = normalize_i(psi0)?.field().clone();
    }
    let mut t = 0.0;
    let mut step_count = 0usize;
    let mut dissipation = 0.0;
    let mut verdict = None;
    let mut rec = Recorder {
        trace: FlowTrace::default(),
        snap_times: Vec::new(),
        snap_fields: Vec::new(),
        calm: 0,
        s: params.s,
        stop_tol: params.stop_tol,
    };

    let t_final = params.t_final;
    let dt_max = (t_final / 8.0).min(0.1);
    let mut dt = match params.dt_policy {
        DtPolicy::Fixed { dt } => dt,
        DtPolicy::Adaptive { .. } => (t_final / 100.0).min(1e-3),
    };

    let mut ev = stepper.eval(&phi)?;
    let mut d_now = dissipation_density(&ev)?;
    // last state that passed validation, reported on failure verdicts
    let mut good = (ev.pot.clone(), t, step_count);

    if rec.push(t, &phi, &ev, dissipation)? {
        verdict = Some(Verdict::Converged { t });
    }

    while verdict.is_none() {
        if t >= t_final * (1.0 - 1e-12) {
            verdict = Some(Verdict::ReachedT);
            break;
        }
        if step_count >= MAX_STEPS {
            return Err(Error::Domain(format!("step limit {MAX_STEPS} exceeded")));
        }

        // attempt a step, shrinking dt under the adaptive policy
        let attempt: Result<(ScalarField, f64)> = match params.dt_policy {
            DtPolicy::Fixed { .. } => {
                let dt_try = dt.min(t_final - t);
                stepper
                    .step_from(&ev, dt_try, params.scheme)
                    .map(|(next, _)| (next, dt_try))
            }
            DtPolicy::Adaptive { rtol } => {
                let mut dt_cur = dt.min(t_final - t);
                loop {
                    match stepper.step_from(&ev, dt_cur, params.scheme) {
                        Ok((next, err)) => {
                            let tol = rtol * phi.sup_norm().max(1e-12);
                            if err <= tol || dt_cur <= 1e-13 {
                                let grow = if err > 0.0 {
                                    (0.9 * (tol / err).sqrt()).clamp(0.2, 5.0)
                                } else {
                                    5.0
                                };
                                dt = (dt_cur * grow).min(dt_max);
                                break Ok((next, dt_cur));
                            }
                            dt_cur *= (0.9 * (tol / err).sqrt()).clamp(0.1, 0.9);
                        }
                        // transient positivity loss or overflow inside a
                        // trial step: shrink and retry
                        Err(e) if is_fatal(&e).is_some() && dt_cur > 1e-13 => dt_cur *= 0.25,
                        Err(e) => break Err(e),
                    }
                }
            }
        };

        let (next, dt_used) = match attempt {
            Ok(pair) => pair,
            Err(e) => {
                match is_fatal(&e) {
                    Some(true) => verdict = Some(Verdict::PositivityLoss { t }),
                    Some(false) => verdict = Some(Verdict::Blowup { t }),
                    None => return Err(e),
                }
                break;
            }
        };

        phi = next;
        t += dt_used;
        step_count += 1;

        if params.normalize {
            match KahlerPotential::with_floor(phi.clone(), psi0.w_floor()) {
                Ok(pot) => phi = normalize_i(&pot)?.field().clone(),
                Err(e) => {
                    match is_fatal(&e) {
                        Some(true) => verdict = Some(Verdict::PositivityLoss { t }),
                        Some(false) => verdict = Some(Verdict::Blowup { t }),
                        None => return Err(e),
                    }
                    break;
                }
            }
        }

        ev = match stepper.eval(&phi) {
            Ok(ev) => ev,
            Err(e) => {
                match is_fatal(&e) {
                    Some(true) => verdict = Some(Verdict::PositivityLoss { t }),
                    Some(false) => verdict = Some(Verdict::Blowup { t }),
                    None => return Err(e),
                }
                break;
            }
        };
        good = (ev.pot.clone(), t, step_count);
        let d_next = dissipation_density(&ev)?;
        dissipation += 0.5 * dt_used * (d_now + d_next);
        d_now = d_next;

        if step_count % params.record_every == 0 && rec.push(t, &phi, &ev, dissipation)? {
            verdict = Some(Verdict::Converged { t });
        }
    }

    let (pot_good, t_good, steps_good) = good;
    // final sample if the loop ended between records
    if rec.snap_times.last().map(|&lt| lt < t_good).unwrap_or(true) {
        let ev_good = stepper.eval(pot_good.field())?;
        rec.push(t_good, pot_good.field(), &ev_good, dissipation)?;
    }

    let verdict = verdict.unwrap_or(Verdict::ReachedT);
    let state = FlowState {
        phi: pot_good,
        t: t_good,
        s: params.s,
        step_count: steps_good,
    };
    let snapshots = SpaceTimeField::new(rec.snap_times, rec.snap_fields)?;
    Ok(RunOutcome {
        state,
        trace: rec.trace,
        verdict,
        snapshots,
    })
}

fn dissipation_density(ev: &Eval) -> Result<f64> {
    let sq = ev.rhs.zip_with(&ev.rhs, |a, b| a * b)?;
    integrate_measure(&sq, &ev.pot)
}

/// One ETD step of size `dt` from a valid state; used by tests and the
/// jet-based approximation builder.
pub fn step(state: &FlowState, dt: f64, params: &FlowParams) -> Result<FlowState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let mut stepper = FlowStepper::new(state.phi.grid().clone(), params.s, state.phi.w_floor());
    let ev = stepper.eval(state.phi.field())?;
    let (next, _) = stepper.step_from(&ev, dt, params.scheme)?;
    Ok(FlowState {
        phi: KahlerPotential::with_floor(next, state.phi.w_floor())?,
        t: state.t + dt,
        s: state.s,
        step_count: state.step_count + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn cos_pot(grid: &Arc<TorusGrid>, eps: f64) -> KahlerPotential {
        KahlerPotential::new(
            ScalarField::from_fn(grid.clone(), |x, _| eps * (2.0 * PI * x).cos()).unwrap(),
        )
        .unwrap()
    }

    fn mode_amplitude(f: &ScalarField, kx: usize, ky: usize) -> f64 {
        let n = f.grid().resolution();
        let spec = f.spectrum();
        2.0 * spec[[ky, kx]].re / (n * n) as f64
    }

    fn fitted_decay_rate(trace: &FlowTrace, floor: f64) -> f64 {
        let pts: Vec<(f64, f64)> = trace
            .samples
            .iter()
            .filter(|s| s.sup > floor)
            .map(|s| (s.t, s.sup.ln()))
            .collect();
        assert!(pts.len() >= 5, "too few usable samples: {}", pts.len());
        let n = pts.len() as f64;
        let (sx, sy): (f64, f64) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (sxx, sxy): (f64, f64) = pts
            .iter()
            .fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
        -(n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn flat_metric_is_exact_fixed_point() {
        let grid = TorusGrid::unit(32).unwrap();
        let zero = KahlerPotential::zero(grid.clone());
        for s in [0.0, 0.5, 1.0] {
            let rhs = rhs_twisted(&zero, s).unwrap();
            assert!(rhs.values().iter().all(|&v| v == 0.0));
            let state = FlowState {
                phi: zero.clone(),
                t: 0.0,
                s,
                step_count: 0,
            };
            let next = step(&state, 1e-2, &FlowParams::new(s, 1.0)).unwrap();
            assert!(next.phi.field().values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rhs_linearizes_to_flow_symbol() {
        let grid = TorusGrid::unit(64).unwrap();
        // the deviation from the linearization is O(eps^2): the
        // eps-relative error must drop by ~2x when eps halves
        for (s, rate) in [(0.0, PI * PI), (1.0, PI.powi(4))] {
            let mut rels = Vec::new();
            for eps in [1e-4, 5e-5] {
                let phi = cos_pot(&grid, eps);
                let rhs = rhs_twisted(&phi, s).unwrap();
                let lin = phi.field().scaled(-rate);
                rels.push(rhs.sub(&lin).unwrap().sup_norm() / (eps * rate));
            }
            assert!(rels[0] < 1e-2, "s = {s}: rel err {rels:?}");
            assert!(rels[1] < 0.6 * rels[0], "s = {s}: not second order: {rels:?}");
        }
    }

    #[test]
    fn single_step_matches_linear_symbol() {
        let grid = TorusGrid::unit(32).unwrap();
        let eps = 1e-6;
        for (s, dt, factor) in [
            (1.0, 1e-4, (-PI.powi(4) * 1e-4_f64).exp()),
            (0.0, 1e-3, (-PI * PI * 1e-3_f64).exp()),
        ] {
            let state = FlowState {
                phi: cos_pot(&grid, eps),
                t: 0.0,
                s,
                step_count: 0,
            };
            let mut params = FlowParams::new(s, 1.0);
            params.scheme = Scheme::Etd1;
            let next = step(&state, dt, &params).unwrap();
            let amp = mode_amplitude(next.phi.field(), 1, 0);
            assert_relative_eq!(amp, eps * factor, max_relative = 1e-6);
            assert_relative_eq!(factor, if s == 1.0 { 0.990306 } else { 0.990179 }, epsilon = 1e-6);
        }
    }

    #[test]
    fn decay_rate_interpolates_the_symbol() {
        let eps = 1e-3;
        for (s, t_final, expected) in [
            (0.5, 0.15, 0.5 * PI.powi(4) + 0.5 * PI * PI),
            (0.0, 0.7, PI * PI),
        ] {
            let grid = TorusGrid::unit(32).unwrap();
            let mut params = FlowParams::new(s, t_final);
            params.dt_policy = DtPolicy::Fixed { dt: 1e-3 };
            params.record_every = 5;
            let out = run(&cos_pot(&grid, eps), &params).unwrap();
            assert_eq!(out.verdict, Verdict::ReachedT);
            let rate = fitted_decay_rate(&out.trace, eps * 1e-2);
            assert_relative_eq!(rate, expected, max_relative = 0.05);
        }
    }

    #[test]
    fn functional_i_values() {
        let grid = TorusGrid::unit(64).unwrap();
        let c = KahlerPotential::new(ScalarField::constant(grid.clone(), 0.37).unwrap()).unwrap();
        assert_relative_eq!(functional_i(&c).unwrap(), 0.37, epsilon = 1e-12);

        let eps = 1e-3;
        let phi = cos_pot(&grid, eps);
        assert_relative_eq!(
            functional_i(&phi).unwrap(),
            -eps * eps * PI * PI / 4.0,
            max_relative = 1e-10
        );
        assert_relative_eq!(functional_i(&phi).unwrap(), -2.4674e-6, max_relative = 1e-3);

        let norm = normalize_i(&phi).unwrap();
        assert!(functional_i(&norm).unwrap().abs() < 1e-14);
    }

    #[test]
    fn i_is_conserved_along_the_j_flow() {
        let grid = TorusGrid::unit(32).unwrap();
        let phi = KahlerPotential::new(
            ScalarField::from_fn(grid, |x, y| {
                4e-3 * (2.0 * PI * x).cos() + 2e-3 * (2.0 * PI * (x + y)).sin()
            })
            .unwrap(),
        )
        .unwrap();
        let mut params = FlowParams::new(0.0, 0.3);
        params.dt_policy = DtPolicy::Fixed { dt: 5e-4 };
        params.record_every = 20;
        let out = run(&phi, &params).unwrap();
        let i0 = out.trace.samples[0].i_value;
        let sup0 = out.trace.samples[0].sup;
        for s in &out.trace.samples {
            assert!(
                (s.i_value - i0).abs() <= 1e-8 * (1.0 + sup0),
                "I drifted: {} vs {}",
                s.i_value,
                i0
            );
        }
    }

    #[test]
    fn energy_is_zero_at_flat_and_monotone_along_flow() {
        let grid = TorusGrid::unit(32).unwrap();
        let zero = KahlerPotential::zero(grid.clone());
        assert!(twisted_energy(&zero, 0.5, 8).unwrap().abs() < 1e-14);

        let mut params = FlowParams::new(0.5, 0.02);
        params.dt_policy = DtPolicy::Fixed { dt: 2e-4 };
        params.record_every = 10;
        let out = run(&cos_pot(&grid, 0.02), &params).unwrap();
        for w in out.trace.samples.windows(2) {
            assert!(
                w[1].energy <= w[0].energy + 1e-10,
                "energy rose: {} -> {}",
                w[0].energy,
                w[1].energy
            );
            assert!(w[1].dissipation >= w[0].dissipation);
        }
    }

    #[test]
    fn dissipation_identity_holds() {
        let grid = TorusGrid::unit(32).unwrap();
        let mut params = FlowParams::new(0.5, 0.05);
        params.dt_policy = DtPolicy::Fixed { dt: 1e-4 };
        params.record_every = 50;
        let out = run(&cos_pot(&grid, 5e-3), &params).unwrap();
        let first = out.trace.samples.first().unwrap();
        let last = out.trace.samples.last().unwrap();
        let drop = first.energy - last.energy;
        assert!(drop > 0.0);
        assert_relative_eq!(drop, last.dissipation, max_relative = 1e-4);
    }

    #[test]
    fn refinement_orders_of_the_two_schemes() {
        let grid = TorusGrid::unit(32).unwrap();
        let psi0 = cos_pot(&grid, 0.01);
        let t_final = 8e-3;
        let final_sup = |scheme: Scheme, dt: f64| -> ScalarField {
            let mut params = FlowParams::new(0.5, t_final);
            params.scheme = scheme;
            params.dt_policy = DtPolicy::Fixed { dt };
            params.record_every = usize::MAX;
            run(&psi0, &params).unwrap().state.phi.field().clone()
        };
        for (scheme, lo, hi) in [(Scheme::Etd1, 1.6, 2.6), (Scheme::Etd2, 2.8, 5.5)] {
            let f1 = final_sup(scheme, 8e-4);
            let f2 = final_sup(scheme, 4e-4);
            let f3 = final_sup(scheme, 2e-4);
            let d12 = f1.sub(&f2).unwrap().sup_norm();
            let d23 = f2.sub(&f3).unwrap().sup_norm();
            assert!(d23 > 1e-14, "refinement differences at roundoff");
            let ratio = d12 / d23;
            assert!(
                ratio > lo && ratio < hi,
                "{scheme:?}: refinement ratio {ratio} outside [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn zero_data_converges_with_constant_trace() {
        let grid = TorusGrid::unit(16).unwrap();
        let mut params = FlowParams::new(0.7, 1.0);
        params.dt_policy = DtPolicy::Fixed { dt: 1e-2 };
        params.record_every = 1;
        let out = run(&KahlerPotential::zero(grid), &params).unwrap();
        assert!(matches!(out.verdict, Verdict::Converged { .. }));
        for s in &out.trace.samples {
            assert_eq!(s.sup, 0.0);
            assert_eq!(s.residual, 0.0);
        }
    }

    #[test]
    fn strained_metric_converges_with_rescaled_factor() {
        // min density ~0.5: unstable for the plain flat-symbol factor,
        // handled by the stiffness-scaled one
        let grid = TorusGrid::unit(32).unwrap();
        let psi0 = cos_pot(&grid, 5e-2);
        assert!(psi0.density().unwrap().min_value() < 0.52);
        let mut params = FlowParams::new(0.1, 3.0);
        params.record_every = 1;
        let out = run(&psi0, &params).unwrap();
        assert!(
            matches!(out.verdict, Verdict::Converged { .. }),
            "verdict = {:?}",
            out.verdict
        );
        let rate = fitted_decay_rate(&out.trace, 1e-8);
        assert!(rate > 0.0, "no decay: rate = {rate}");
    }

    #[test]
    fn failure_is_a_verdict_not_an_error() {
        // near-degenerate data (min density ~3e-4): the first step pushes
        // the density below the positivity floor, and the failure must be
        // reported as a verdict with the last valid state, not as an Err
        let grid = TorusGrid::unit(32).unwrap();
        let psi0 = cos_pot(&grid, 0.1012);
        let mut params = FlowParams::new(0.5, 1e-3);
        params.dt_policy = DtPolicy::Fixed { dt: 1e-4 };
        params.record_every = 10;
        let out = run(&psi0, &params).unwrap();
        assert!(
            matches!(
                out.verdict,
                Verdict::PositivityLoss { .. } | Verdict::Blowup { .. }
            ),
            "verdict = {:?}",
            out.verdict
        );
        assert!(out.state.t < 1e-3);
        assert!(out.state.phi.density().is_ok());
    }
}
