//! Discrete spatial and parabolic Hoelder norms, weighted-in-time norms,
//! scaling checks, and decay-rate fitting.
//!
//! The Hoelder seminorms are lower bounds of the true suprema: they
//! maximize difference quotients over all nearest-neighbor pairs plus a
//! seeded budget of random pairs. Every inequality asserted through them
//! keeps a lower-bound estimator on its left-hand side, or uses the same
//! pair set on both sides.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{integrate_measure, KahlerPotential};
use crate::grid::ScalarField;
use crate::slab::SpaceTimeField;

pub const DEFAULT_PAIR_BUDGET: usize = 4096;

/// Discrete `C^4` norm: sum over all spectral derivatives of total order
/// at most 4 of the sup norm.
pub fn c4_discrete(f: &ScalarField) -> Result<f64> {
    let mut total = 0.0;
    for px in 0..=4u32 {
        for py in 0..=(4 - px) {
            total += f.derivative(px, py)?.sup_norm();
        }
    }
    Ok(total)
}

/// Decomposed parabolic Hoelder norm of a space-time field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HolderReport {
    /// Sup norms of the derivatives entering the norm, in a fixed order:
    /// spatial derivatives of total order <= k first, then (for k = 4)
    /// the time derivative.
    pub sup_terms: Vec<f64>,
    pub space_seminorm: f64,
    pub time_seminorm: f64,
    pub total: f64,
    pub gamma: f64,
    pub pair_budget: usize,
}

fn time_derivative_slab(u: &SpaceTimeField) -> Result<SpaceTimeField> {
    let fields = (0..u.len())
        .map(|i| u.time_derivative(i))
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::new(u.times().to_vec(), fields)
}

/// Largest space difference quotient `|g(x,t) - g(y,t)| / |x - y|^gamma`
/// over all nearest-neighbor pairs plus the seeded random pairs, and the
/// matching time quotient `|g(x,t) - g(x,t')| / |t - t'|^(gamma/4)` over
/// all adjacent time pairs plus the same random draw sequence.
fn seminorms(
    comps: &[&SpaceTimeField],
    gamma: f64,
    pair_budget: usize,
    seed: u64,
) -> (f64, f64) {
    let grid = comps[0].grid();
    let n = grid.resolution();
    let h = grid.spacing();
    let l = grid.side_length();
    let m = comps[0].len();
    let mut space = 0.0f64;
    let mut time = 0.0f64;

    for g in comps {
        // nearest neighbors in space, every slice
        let hp = h.powf(gamma);
        for i in 0..m {
            let v = g.field(i).values();
            for r in 0..n {
                for c in 0..n {
                    let a = v[[r, c]];
                    space = space.max((a - v[[(r + 1) % n, c]]).abs() / hp);
                    space = space.max((a - v[[r, (c + 1) % n]]).abs() / hp);
                }
            }
        }
        // adjacent time pairs, every grid point
        for i in 0..m.saturating_sub(1) {
            let dt = g.times()[i + 1] - g.times()[i];
            let dq = dt.powf(gamma / 4.0);
            let a = g.field(i).values();
            let b = g.field(i + 1).values();
            for (x, y) in a.iter().zip(b.iter()) {
                time = time.max((x - y).abs() / dq);
            }
        }
    }

    // seeded random pairs: each draw adds one space pair (same slice)
    // and one time pair (same point), so a larger budget extends the
    // same sequence and the maxima are monotone in the budget
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wrap = |d: i64| -> f64 {
        let d = d.rem_euclid(n as i64) as f64 * h;
        d.min(l - d)
    };
    for _ in 0..pair_budget {
        let i = rng.gen_range(0..m);
        let (r1, c1) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (r2, c2) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let (j1, j2) = (rng.gen_range(0..m), rng.gen_range(0..m));
        for g in comps {
            if (r1, c1) != (r2, c2) {
                let dx = wrap(r1 as i64 - r2 as i64);
                let dy = wrap(c1 as i64 - c2 as i64);
                let dist = (dx * dx + dy * dy).sqrt();
                let v = g.field(i).values();
                space = space.max((v[[r1, c1]] - v[[r2, c2]]).abs() / dist.powf(gamma));
            }
            if j1 != j2 {
                let dt = (g.times()[j1] - g.times()[j2]).abs();
                let a = g.field(j1).values()[[r1, c1]];
                let b = g.field(j2).values()[[r1, c1]];
                time = time.max((a - b).abs() / dt.powf(gamma / 4.0));
            }
        }
    }
    (space, time)
}

/// Parabolic Hoelder norm of order `k` (0 or 4) with exponent `gamma`:
/// sup norms of all derivatives entering the class, plus the space and
/// time Hoelder seminorms of its top-order members. Deterministic given
/// the seed; monotone in `pair_budget`.
pub fn parabolic_holder_norm(
    u: &SpaceTimeField,
    k: usize,
    gamma: f64,
    pair_budget: usize,
    seed: u64,
) -> Result<HolderReport> {
    if k != 0 && k != 4 {
        return Err(Error::Domain(format!(
            "parabolic Hoelder norm supports k in {{0, 4}}, got {k}"
        )));
    }
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::Domain(format!(
            "Hoelder exponent must lie in (0, 1), got {gamma}"
        )));
    }

    let mut sup_terms = Vec::new();
    let (space, time);
    if k == 0 {
        sup_terms.push(u.sup_norm());
        let comps = [u];
        (space, time) = seminorms(&comps, gamma, pair_budget, seed);
    } else {
        let mut top: Vec<SpaceTimeField> = Vec::new();
        for px in 0..=4u32 {
            for py in 0..=(4 - px) {
                let d = u.map_fields(|f| f.derivative(px, py))?;
                sup_terms.push(d.sup_norm());
                if px + py == 4 {
                    top.push(d);
                }
            }
        }
        let ut = time_derivative_slab(u)?;
        sup_terms.push(ut.sup_norm());
        top.push(ut);
        let refs: Vec<&SpaceTimeField> = top.iter().collect();
        (space, time) = seminorms(&refs, gamma, pair_budget, seed);
    }

    let total = sup_terms.iter().sum::<f64>() + space + time;
    Ok(HolderReport {
        sup_terms,
        space_seminorm: space,
        time_seminorm: time,
        total,
        gamma,
        pair_budget,
    })
}

/// Norm of `e^(eta t) u`: finiteness over growing windows encodes decay
/// at rate `eta`. At `eta = 0` this reduces to the unweighted norm
/// bitwise.
pub fn weighted_norm(
    u: &SpaceTimeField,
    eta: f64,
    k: usize,
    gamma: f64,
    pair_budget: usize,
    seed: u64,
) -> Result<HolderReport> {
    if eta < 0.0 {
        return Err(Error::Domain(format!("weight rate must be >= 0, got {eta}")));
    }
    let t_final = *u.times().last().unwrap_or(&0.0);
    if eta * t_final > 700.0 {
        return Err(Error::Domain(format!(
            "weight e^(eta T) overflows: eta T = {:.3e}",
            eta * t_final
        )));
    }
    let fields = (0..u.len())
        .map(|i| Ok(u.field(i).scaled((eta * u.times()[i]).exp())))
        .collect::<Result<Vec<_>>>()?;
    let weighted = SpaceTimeField::new(u.times().to_vec(), fields)?;
    parabolic_holder_norm(&weighted, k, gamma, pair_budget, seed)
}

/// Both sides of the time-relabeling sandwich: the norm of `u`, the norm
/// of the same samples relabeled to `tau = s t`, and the upper bound
/// `s^(-1-gamma/4)` (k = 4) or `s^(-gamma/4)` (k = 0) times the first.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub lhs: f64,
    pub mid: f64,
    pub rhs: f64,
    pub pass: bool,
}

pub fn scaling_check(u: &SpaceTimeField, s: f64, gamma: f64, k: usize) -> Result<ScalingCheck> {
    if !(0.0 < s && s <= 1.0) {
        return Err(Error::Domain(format!("scaling requires s in (0, 1], got {s}")));
    }
    let seed = 0;
    let lhs = parabolic_holder_norm(u, k, gamma, DEFAULT_PAIR_BUDGET, seed)?.total;
    let relabeled = u.rescale_time(s, true)?;
    let mid = parabolic_holder_norm(&relabeled, k, gamma, DEFAULT_PAIR_BUDGET, seed)?.total;
    let exponent = if k == 4 { -1.0 - gamma / 4.0 } else { -gamma / 4.0 };
    let rhs = s.powf(exponent) * lhs;
    let slack = 1.0 + 1e-9;
    let pass = lhs <= mid * slack && mid <= rhs * slack;
    Ok(ScalingCheck { lhs, mid, rhs, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    Sup,
    L2,
}

/// Exponential decay rate fitted to a norm time series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    pub eta: f64,
    pub window: (f64, f64),
    pub r_squared: f64,
    pub norm_kind: NormKind,
}

/// Least squares on log-norm versus t after discarding the initial
/// transient: the first 20% of samples, or everything until the norm
/// first halves, whichever is later (if it never halves, only the 20%
/// rule applies). A fitted `eta <= 0` is reported, not an error.
pub fn fit_decay_rate(samples: &[(f64, f64)], norm_kind: NormKind) -> Result<RateFit> {
    let drop_frac = (samples.len() as f64 * 0.2).ceil() as usize;
    let half = samples.first().map(|&(_, v)| v / 2.0).unwrap_or(0.0);
    let drop_half = samples
        .iter()
        .position(|&(_, v)| v <= half)
        .unwrap_or(drop_frac);
    let start = drop_frac.max(drop_half);
    let window: Vec<(f64, f64)> = samples[start.min(samples.len())..]
        .iter()
        .filter(|&&(_, v)| v > 0.0)
        .copied()
        .collect();
    if window.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "decay fit needs >= 10 positive samples after the transient, got {}",
            window.len()
        )));
    }
    let pts: Vec<(f64, f64)> = window.iter().map(|&(t, v)| (t, v.ln())).collect();
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (sxx, sxy) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let mean_y = sy / n;
    let intercept = mean_y - slope * sx / n;
    let (ss_res, ss_tot) = pts.iter().fold((0.0, 0.0), |a, &(x, y)| {
        let e = y - (slope * x + intercept);
        (a.0 + e * e, a.1 + (y - mean_y) * (y - mean_y))
    });
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        eta: -slope,
        window: (window[0].0, window.last().unwrap().0),
        r_squared,
        norm_kind,
    })
}

/// `L^2` norm of `u` against the evolving measure `omega_phi`.
pub fn l2_norm_measure(u: &ScalarField, phi: &KahlerPotential) -> Result<f64> {
    let sq = u.zip_with(u, |a, _| a * a)?;
    Ok(integrate_measure(&sq, phi)?.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn grid() -> Arc<TorusGrid> {
        TorusGrid::unit(16).unwrap()
    }

    fn slab_of(g: &Arc<TorusGrid>, times: &[f64], f: impl Fn(f64, f64, f64) -> f64) -> SpaceTimeField {
        let fields = times
            .iter()
            .map(|&t| ScalarField::from_fn(g.clone(), |x, y| f(x, y, t)).unwrap())
            .collect();
        SpaceTimeField::new(times.to_vec(), fields).unwrap()
    }

    fn uniform_times(m: usize, t_final: f64) -> Vec<f64> {
        (0..m).map(|i| t_final * i as f64 / (m - 1) as f64).collect()
    }

    #[test]
    fn constant_has_sup_only() {
        let g = grid();
        let u = slab_of(&g, &uniform_times(5, 1.0), |_, _, _| 3.5);
        let rep = parabolic_holder_norm(&u, 0, 0.5, 256, 7).unwrap();
        assert_eq!(rep.sup_terms, vec![3.5]);
        assert_eq!(rep.space_seminorm, 0.0);
        assert_eq!(rep.time_seminorm, 0.0);
        assert_eq!(rep.total, 3.5);
    }

    #[test]
    fn static_profile_has_zero_time_seminorm() {
        let g = grid();
        let u = slab_of(&g, &uniform_times(5, 1.0), |x, _, _| (2.0 * PI * x).cos());
        let rep = parabolic_holder_norm(&u, 0, 0.5, 512, 1).unwrap();
        assert_eq!(rep.time_seminorm, 0.0);
        assert!(rep.space_seminorm > 0.0);
    }

    #[test]
    fn seminorms_monotone_in_pair_budget() {
        let g = grid();
        let u = slab_of(&g, &uniform_times(6, 0.5), |x, y, t| {
            (2.0 * PI * x).cos() * (1.0 + t) + (2.0 * PI * (x + 2.0 * y)).sin() * t * t
        });
        for k in [0usize, 4] {
            let small = parabolic_holder_norm(&u, k, 0.4, 128, 42).unwrap();
            let big = parabolic_holder_norm(&u, k, 0.4, 256, 42).unwrap();
            assert!(big.space_seminorm >= small.space_seminorm);
            assert!(big.time_seminorm >= small.time_seminorm);
            assert_eq!(big.sup_terms, small.sup_terms);
        }
    }

    #[test]
    fn rejects_unsupported_order_and_exponent() {
        let g = grid();
        let u = slab_of(&g, &uniform_times(3, 1.0), |_, _, _| 0.0);
        assert!(parabolic_holder_norm(&u, 2, 0.5, 8, 0).is_err());
        assert!(parabolic_holder_norm(&u, 0, 1.5, 8, 0).is_err());
    }

    #[test]
    fn weighted_norm_matches_unweighted_at_zero_rate() {
        let g = grid();
        let u = slab_of(&g, &uniform_times(5, 1.0), |x, _, t| {
            (2.0 * PI * x).cos() * (1.0 + t)
        });
        let a = parabolic_holder_norm(&u, 4, 0.5, 128, 3).unwrap();
        let b = weighted_norm(&u, 0.0, 4, 0.5, 128, 3).unwrap();
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }

    #[test]
    fn weighted_norm_cancels_matching_decay() {
        let g = grid();
        let eta = 2.0;
        let u = slab_of(&g, &uniform_times(9, 1.0), |x, _, t| {
            (-eta * t).exp() * (2.0 * PI * x).cos()
        });
        let rep = weighted_norm(&u, eta, 0, 0.5, 64, 0).unwrap();
        assert!((rep.sup_terms[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_norm_refuses_overflowing_weight() {
        let g = grid();
        let u = slab_of(&g, &uniform_times(3, 10.0), |_, _, _| 1.0);
        assert!(weighted_norm(&u, 100.0, 0, 0.5, 8, 0).is_err());
    }

    #[test]
    fn scaling_sandwich_at_s_one_is_tight() {
        let g = grid();
        let u = slab_of(&g, &uniform_times(5, 1.0), |x, _, t| {
            t * (2.0 * PI * x).cos()
        });
        let chk = scaling_check(&u, 1.0, 0.5, 4).unwrap();
        assert!(chk.pass);
        assert!((chk.lhs - chk.mid).abs() < 1e-12 * chk.lhs);
        assert!((chk.lhs - chk.rhs).abs() < 1e-12 * chk.lhs);
    }

    #[test]
    fn scaling_sandwich_half_s_linear_profile() {
        let g = grid();
        let gamma = 0.5;
        let u = slab_of(&g, &uniform_times(5, 1.0), |x, _, t| {
            t * (2.0 * PI * x).cos()
        });
        let chk = scaling_check(&u, 0.5, gamma, 0).unwrap();
        assert!(chk.pass, "{chk:?}");
        assert!(chk.mid / chk.lhs <= 2.0f64.powf(gamma / 4.0) + 1e-12);
    }

    #[test]
    fn scaling_sandwich_random_slabs() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut coeffs = Vec::new();
        for _ in 0..6 {
            coeffs.push((
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-2i64..=2) as f64,
                rng.gen_range(-2i64..=2) as f64,
                rng.gen_range(0.0..3.0),
            ));
        }
        let u = slab_of(&g, &uniform_times(7, 0.8), |x, y, t| {
            coeffs
                .iter()
                .map(|&(a, kx, ky, w)| a * (2.0 * PI * (kx * x + ky * y)).cos() * (1.0 + w * t))
                .sum()
        });
        for s in [0.1, 0.5] {
            for k in [0usize, 4] {
                let chk = scaling_check(&u, s, 0.3, k).unwrap();
                assert!(chk.pass, "s = {s}, k = {k}: {chk:?}");
            }
        }
    }

    #[test]
    fn rate_fit_recovers_exact_exponential() {
        let samples: Vec<(f64, f64)> = (0..100)
            .map(|i| {
                let t = i as f64 * 0.02;
                (t, 0.7 * (-3.0 * t).exp())
            })
            .collect();
        let fit = fit_decay_rate(&samples, NormKind::Sup).unwrap();
        assert!((fit.eta - 3.0).abs() < 1e-6, "eta {}", fit.eta);
        assert!(fit.r_squared > 0.999999);
    }

    #[test]
    fn rate_fit_tolerates_small_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.01;
                let noise = 1.0 + 0.01 * rng.gen_range(-1.0..1.0);
                (t, (-4.0 * t).exp() * noise)
            })
            .collect();
        let fit = fit_decay_rate(&samples, NormKind::L2).unwrap();
        assert!((fit.eta - 4.0).abs() < 0.04, "eta {}", fit.eta);
    }

    #[test]
    fn rate_fit_needs_enough_samples() {
        let samples: Vec<(f64, f64)> = (0..8).map(|i| (i as f64, 1.0)).collect();
        assert!(matches!(
            fit_decay_rate(&samples, NormKind::Sup),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn l2_measure_matches_flat_case() {
        let g = grid();
        let u = ScalarField::from_fn(g.clone(), |x, _| (2.0 * PI * x).cos()).unwrap();
        let flat = KahlerPotential::zero(g.clone());
        let v = l2_norm_measure(&u, &flat).unwrap();
        assert!((v - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
        let z = l2_norm_measure(&ScalarField::zeros(g), &flat).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn l2_measure_bounded_below_by_density_floor() {
        let g = grid();
        // density 1 - eps pi^2 cos(2 pi x) >= 1/2 for this amplitude
        let eps = 0.04;
        let phi = KahlerPotential::new(
            ScalarField::from_fn(g.clone(), |x, _| eps * (2.0 * PI * x).cos()).unwrap(),
        )
        .unwrap();
        assert!(phi.density().unwrap().min_value() >= 0.5);
        let u = ScalarField::from_fn(g, |x, y| (2.0 * PI * (x + y)).sin()).unwrap();
        let weighted = l2_norm_measure(&u, &phi).unwrap();
        assert!(weighted >= u.l2_flat() / 2.0f64.sqrt() - 1e-12);
    }

    #[test]
    fn norm_axioms_on_seeded_pairs() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let times = uniform_times(4, 0.3);
        let random_slab = |rng: &mut ChaCha8Rng| {
            let coeffs: Vec<(f64, f64, f64, f64)> = (0..4)
                .map(|_| {
                    (
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-2i64..=2) as f64,
                        rng.gen_range(-2i64..=2) as f64,
                        rng.gen_range(-2.0..2.0),
                    )
                })
                .collect();
            slab_of(&g, &times, move |x, y, t| {
                coeffs
                    .iter()
                    .map(|&(a, kx, ky, w)| a * (2.0 * PI * (kx * x + ky * y)).cos() * (1.0 + w * t))
                    .sum()
            })
        };
        for trial in 0..25 {
            let u = random_slab(&mut rng);
            let v = random_slab(&mut rng);
            let lambda: f64 = rng.gen_range(-3.0..3.0);
            for k in [0usize, 4] {
                let nu = parabolic_holder_norm(&u, k, 0.5, 64, 1).unwrap().total;
                let nv = parabolic_holder_norm(&v, k, 0.5, 64, 1).unwrap().total;
                let scaled = u.map_fields(|f| Ok(f.scaled(lambda))).unwrap();
                let ns = parabolic_holder_norm(&scaled, k, 0.5, 64, 1).unwrap().total;
                assert!(
                    (ns - lambda.abs() * nu).abs() <= 1e-10 * (1.0 + ns),
                    "homogeneity, trial {trial}, k {k}"
                );
                let sum_fields = (0..u.len())
                    .map(|i| u.field(i).add(v.field(i)).unwrap())
                    .collect::<Vec<_>>();
                let w = SpaceTimeField::new(times.clone(), sum_fields).unwrap();
                let nw = parabolic_holder_norm(&w, k, 0.5, 64, 1).unwrap().total;
                assert!(
                    nw <= nu + nv + 1e-10 * (1.0 + nw),
                    "triangle, trial {trial}, k {k}"
                );
            }
        }
    }
}
