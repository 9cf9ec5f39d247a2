//! Fixed-point solver for the flow equation viewed as a space-time
//! contraction, with per-iterate diagnostics. Each sweep corrects the
//! iterate by the linearized solve of its own residual; the
//! linearization stays frozen at the approximate background (chord
//! method) unless full Newton is requested.
//!
//! Iterates carry their exact time derivative alongside the sampled
//! values. Corrections update the derivative through the linearized
//! equation itself (`u_t = f - spatial(u)`), so the linear part of the
//! residual cancels exactly at the nodes and convergence is governed by
//! the quadratic remainder, not by finite-difference noise.

use serde::{Deserialize, Serialize};

use crate::approx_solution::build_approximate;
use crate::error::{Error, Result};
use crate::flow::rhs_twisted;
use crate::geometry::KahlerPotential;
use crate::linearize::{dls_spatial, invert_dls, DEFAULT_LIN_RTOL};
use crate::norms::c4_discrete;
use crate::slab::{BackgroundPath, SpaceTimeField};

pub const DEFAULT_FP_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 25;

/// Per-iterate diagnostics of the fixed-point solve.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IterationReport {
    pub norms: Vec<f64>,
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub k_final: usize,
    pub fp_tol: f64,
}

#[derive(Debug, Clone)]
pub struct ContractionOptions {
    pub fp_tol: f64,
    pub max_iters: usize,
    pub lin_rtol: f64,
    /// Re-linearize at the current iterate instead of the frozen
    /// background. Experimental; no convergence guarantee is claimed.
    pub full_newton: bool,
}

impl Default for ContractionOptions {
    fn default() -> Self {
        Self {
            fp_tol: DEFAULT_FP_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            lin_rtol: DEFAULT_LIN_RTOL,
            full_newton: false,
        }
    }
}

/// A candidate solution path: sampled values together with the exact
/// time derivative at each sample.
#[derive(Debug, Clone)]
pub struct FlowIterate {
    pub phi: SpaceTimeField,
    pub phi_t: SpaceTimeField,
}

impl FlowIterate {
    pub fn new(phi: SpaceTimeField, phi_t: SpaceTimeField) -> Result<Self> {
        if phi.times() != phi_t.times() {
            return Err(Error::ShapeMismatch);
        }
        Ok(Self { phi, phi_t })
    }

    pub fn times(&self) -> &[f64] {
        self.phi.times()
    }
}

/// `v - L_s(phi)` slice by slice, using the iterate's own derivative.
pub fn operator_residual(
    iterate: &FlowIterate,
    s: f64,
    v: Option<&SpaceTimeField>,
) -> Result<SpaceTimeField> {
    let phi = &iterate.phi;
    let mut fields = Vec::with_capacity(phi.len());
    for i in 0..phi.len() {
        let pot = KahlerPotential::new(phi.field(i).clone())?;
        let mut r = rhs_twisted(&pot, s)?.sub(iterate.phi_t.field(i))?;
        if let Some(v) = v {
            r = r.add(&v.at(phi.times()[i]))?;
        }
        fields.push(r);
    }
    SpaceTimeField::new(phi.times().to_vec(), fields)
}

/// Discrete surrogate for the parabolic C^4 norm of a path: the largest
/// spatial C^4 norm of any slice plus the largest sup of the time
/// derivative.
pub fn slab_c41_norm(u: &SpaceTimeField, u_t: &SpaceTimeField) -> Result<f64> {
    let mut space = 0.0f64;
    for i in 0..u.len() {
        space = space.max(c4_discrete(u.field(i))?);
    }
    Ok(space + u_t.sup_norm())
}

/// Subsample a finely stored pair down to roughly the target spacing,
/// always keeping both endpoints.
fn thin_pair(
    phi: &SpaceTimeField,
    phi_t: &SpaceTimeField,
    target_dt: f64,
) -> Result<FlowIterate> {
    let spacing = phi
        .times()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let stride = (target_dt / spacing).round().max(1.0) as usize;
    if stride <= 1 {
        return FlowIterate::new(phi.clone(), phi_t.clone());
    }
    let last = phi.len() - 1;
    let mut keep: Vec<usize> = (0..phi.len()).step_by(stride).collect();
    if *keep.last().unwrap() != last {
        keep.push(last);
    }
    let times: Vec<f64> = keep.iter().map(|&i| phi.times()[i]).collect();
    let fields: Vec<_> = keep.iter().map(|&i| phi.field(i).clone()).collect();
    let dfields: Vec<_> = keep.iter().map(|&i| phi_t.field(i).clone()).collect();
    FlowIterate::new(
        SpaceTimeField::new(times.clone(), fields)?,
        SpaceTimeField::new(times, dfields)?,
    )
}

fn background_of(phi: &SpaceTimeField) -> Result<BackgroundPath> {
    let pots = phi
        .fields()
        .iter()
        .map(|f| KahlerPotential::new(f.clone()))
        .collect::<Result<Vec<_>>>()?;
    BackgroundPath::new(phi.times().to_vec(), pots)
}

/// One sweep of the fixed-point map: `phi + (DL_s at background)^{-1}
/// (v - L_s(phi))`. The correction vanishes at `t = 0`, so the initial
/// slice passes through unchanged; the derivative of the correction is
/// read off from the linearized equation.
pub fn psi_apply(
    iterate: &FlowIterate,
    background: &BackgroundPath,
    v: Option<&SpaceTimeField>,
    s: f64,
    lin_rtol: f64,
) -> Result<FlowIterate> {
    let residual = operator_residual(iterate, s, v)?;
    let correction = invert_dls(background, &residual, s, lin_rtol)?;
    let times = iterate.times().to_vec();
    let mut fields = Vec::with_capacity(times.len());
    let mut dfields = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let u = correction.at(t);
        let u_t = residual
            .field(i)
            .sub(&dls_spatial(&background.potential_at(t)?, &u, s)?)?;
        fields.push(iterate.phi.field(i).add(&u)?);
        dfields.push(iterate.phi_t.field(i).add(&u_t)?);
    }
    FlowIterate::new(
        SpaceTimeField::new(times.clone(), fields)?,
        SpaceTimeField::new(times, dfields)?,
    )
}

/// Solve `L_s(phi) = 0` with initial data `psi0` by iterating
/// `psi_apply` from the order-N approximate solution.
pub fn solve_by_contraction(
    psi0: &KahlerPotential,
    s: f64,
    t_final: f64,
    order: usize,
) -> Result<(FlowIterate, IterationReport)> {
    solve_with_options(psi0, s, t_final, order, &ContractionOptions::default())
}

pub fn solve_with_options(
    psi0: &KahlerPotential,
    s: f64,
    t_final: f64,
    order: usize,
    opts: &ContractionOptions,
) -> Result<(FlowIterate, IterationReport)> {
    if s <= 0.0 {
        return Err(Error::Domain(format!(
            "contraction solve requires s > 0, got {s}"
        )));
    }
    let approx = build_approximate(psi0, order, t_final)?;
    let phi_tilde = thin_pair(
        &approx.compose(s)?,
        &approx.compose_derivative(s)?,
        5e-4,
    )?;
    let frozen = background_of(&phi_tilde.phi)?;

    let mut phi = phi_tilde;
    let mut report = IterationReport {
        fp_tol: opts.fp_tol,
        ..Default::default()
    };
    let mut was_contracting = false;

    for k in 1..=opts.max_iters {
        let fresh;
        let background = if opts.full_newton {
            fresh = background_of(&phi.phi)?;
            &fresh
        } else {
            &frozen
        };
        // corrections cancel exactly in the node residual, so the inner
        // solve only needs accuracy relative to the outer target: an
        // inversion error e leaves roughly e (16/s) in the spatial C^4
        // norm of the correction
        let res_sup = operator_residual(&phi, s, None)?.sup_norm();
        let rtol = if res_sup > 0.0 {
            opts.lin_rtol.max(opts.fp_tol * (s / 40.0) / res_sup)
        } else {
            opts.lin_rtol
        };
        let next = psi_apply(&phi, background, None, s, rtol)?;
        let diff = next.phi.sub(&phi.phi)?;
        let diff_t = next.phi_t.sub(&phi.phi_t)?;
        let norm = slab_c41_norm(&diff, &diff_t)?;
        if let Some(&prev) = report.norms.last() {
            let ratio = norm / prev;
            report.ratios.push(ratio);
            if ratio < 1.0 {
                was_contracting = true;
            } else if was_contracting && norm > opts.fp_tol {
                report.norms.push(norm);
                report.k_final = k;
                return Err(Error::NonContractive {
                    iter: k,
                    ratio,
                    report: Box::new(report),
                });
            }
        }
        report.norms.push(norm);
        report.k_final = k;
        phi = next;
        if norm <= opts.fp_tol {
            report.converged = true;
            return Ok((phi, report));
        }
    }
    Err(Error::MaxItersExceeded {
        iters: opts.max_iters,
        report: Box::new(report),
    })
}
