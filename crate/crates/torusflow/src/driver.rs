//! Run orchestration: single flow runs with artifacts, the resumable
//! s-sweep, the continuity protocol, the nearby-s comparison, and the
//! command-line interface.
//!
//! Every run inside a sweep is single-threaded and fully determined by
//! the config and seed, and report assembly sorts by the requested
//! order, so sweep outputs are bit-identical for any worker count.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx_solution::{build_approximate, residual_order_fit};
use crate::config::RunConfig;
use crate::contraction::solve_by_contraction;
use crate::error::{Error, Result};
use crate::flow::{normalize_i, run, FlowParams, RunOutcome, Verdict};
use crate::geometry::KahlerPotential;
use crate::heat::{duhamel_solve, etd_solve, KernelSpec};
use crate::io;
use crate::linearize::evolve_linearized;
use crate::norms::{
    fit_decay_rate, parabolic_holder_norm, scaling_check, NormKind, RateFit, DEFAULT_PAIR_BUDGET,
};
use crate::slab::{BackgroundPath, SpaceTimeField};

/// Number of uniform samples used when comparing two runs over their
/// shared time interval.
const CLOSENESS_SAMPLES: usize = 17;

/// Distances below this are treated as exactly zero in ratio checks.
const NEGLIGIBLE_DISTANCE: f64 = 1e-13;

// ---------------------------------------------------------------------
// single runs

/// Everything a downstream consumer needs to know about one flow run,
/// reproducible from the dumped trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub s: f64,
    pub verdict: Verdict,
    pub t_final: f64,
    pub eta_fit: Option<RateFit>,
    pub t_converged: Option<f64>,
    pub max_sup: f64,
    pub max_l2: f64,
}

pub fn summarize(out: &RunOutcome, s: f64) -> RunSummary {
    let samples: Vec<(f64, f64)> = out.trace.samples.iter().map(|r| (r.t, r.sup)).collect();
    let eta_fit = fit_decay_rate(&samples, NormKind::Sup).ok();
    let t_converged = match out.verdict {
        Verdict::Converged { t } => Some(t),
        _ => None,
    };
    let (max_sup, max_l2) = out
        .trace
        .samples
        .iter()
        .fold((0.0f64, 0.0f64), |a, r| (a.0.max(r.sup), a.1.max(r.l2)));
    RunSummary {
        s,
        verdict: out.verdict.clone(),
        t_final: out.state.t,
        eta_fit,
        t_converged,
        max_sup,
        max_l2,
    }
}

fn write_run_artifacts(
    dir: &Path,
    stem: &str,
    out: &RunOutcome,
    summary: &RunSummary,
    dump_fields: bool,
) -> Result<()> {
    io::write_trace(&dir.join(format!("{stem}_trace.csv")), &out.trace)?;
    io::write_json(&dir.join(format!("{stem}_summary.json")), summary)?;
    let sup: Vec<(f64, f64)> = out.trace.samples.iter().map(|r| (r.t, r.sup)).collect();
    io::write_svg_plot(
        &dir.join(format!("{stem}_sup.svg")),
        &sup,
        &format!("sup norm, s = {}", summary.s),
    )?;
    if dump_fields {
        io::write_slab(dir, &format!("{stem}_phi"), &out.snapshots)?;
    }
    Ok(())
}

/// Sup distance between two runs over uniform samples of their shared
/// time interval, each slab interpolated linearly in time.
pub fn slab_distance(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<f64> {
    let ta = *a.times().last().ok_or(Error::ShapeMismatch)?;
    let tb = *b.times().last().ok_or(Error::ShapeMismatch)?;
    let t_shared = ta.min(tb);
    let mut worst = 0.0f64;
    for j in 0..CLOSENESS_SAMPLES {
        let t = t_shared * j as f64 / (CLOSENESS_SAMPLES - 1) as f64;
        worst = worst.max(a.at(t).sub(&b.at(t))?.sup_norm());
    }
    Ok(worst)
}

// ---------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosenessEntry {
    pub s_a: f64,
    pub s_b: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub records: Vec<RunSummary>,
    pub closeness: Vec<ClosenessEntry>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepManifest {
    pub s_values: Vec<f64>,
    pub completed: Vec<usize>,
}

fn sweep_stem(i: usize) -> String {
    format!("run_{i:03}")
}

fn run_at(cfg: &RunConfig, s: f64) -> Result<RunOutcome> {
    let psi0 = cfg.initial_data()?;
    let mut params: FlowParams = cfg.flow_params();
    params.s = s;
    run(&psi0, &params)
}

/// Run the configured flow once per `sweep.s_values` entry, in a worker
/// pool of the given size (0 = one worker per core), writing per-run
/// artifacts, a pairwise closeness table, and a manifest under
/// `output.dir`. Runs whose artifacts already exist are skipped, so an
/// interrupted sweep resumes where it stopped.
pub fn sweep(cfg: &RunConfig, workers: usize) -> Result<SweepReport> {
    cfg.validate()?;
    let dir = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&dir)?;
    let s_values = cfg.sweep.s_values.clone();

    let mut jobs: Vec<(usize, f64)> = Vec::new();
    let mut loaded: Vec<Option<(RunSummary, SpaceTimeField)>> = vec![None; s_values.len()];
    for (i, &s) in s_values.iter().enumerate() {
        let stem = sweep_stem(i);
        let summary_path = dir.join(format!("{stem}_summary.json"));
        let slab_index = dir.join(format!("{stem}_phi.csv"));
        if summary_path.exists() && slab_index.exists() {
            let text = fs::read_to_string(&summary_path)?;
            let summary: RunSummary = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("corrupt {}: {e}", summary_path.display())))?;
            if (summary.s - s).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "{} holds a run at s = {}, expected s = {s}; refusing to mix sweeps",
                    summary_path.display(),
                    summary.s
                )));
            }
            loaded[i] = Some((summary, io::read_slab(&dir, &format!("{stem}_phi"))?));
        } else {
            jobs.push((i, s));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let fresh: Vec<(usize, RunSummary, SpaceTimeField)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, s)| {
                let out = run_at(cfg, s)?;
                let summary = summarize(&out, s);
                write_run_artifacts(&dir, &sweep_stem(i), &out, &summary, true)?;
                Ok((i, summary, out.snapshots))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    for (i, summary, snapshots) in fresh {
        loaded[i] = Some((summary, snapshots));
    }

    let runs: Vec<(RunSummary, SpaceTimeField)> =
        loaded.into_iter().map(|o| o.expect("all runs present")).collect();
    let mut closeness = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            closeness.push(ClosenessEntry {
                s_a: s_values[i],
                s_b: s_values[j],
                distance: slab_distance(&runs[i].1, &runs[j].1)?,
            });
        }
    }
    let report = SweepReport {
        records: runs.into_iter().map(|(r, _)| r).collect(),
        closeness,
    };
    io::write_json(&dir.join("sweep_report.json"), &report)?;
    io::write_json(
        &dir.join("manifest.json"),
        &SweepManifest {
            s_values,
            completed: (0..report.records.len()).collect(),
        },
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------
// continuity protocol

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioCheck {
    pub s: f64,
    pub s_half: f64,
    pub ratio: f64,
    pub pass: bool,
}

/// Three-phase report: a trace-flow (s = 0) run down to the smallness
/// threshold, twisted runs compared against it over the shared horizon,
/// and continuation runs with fitted decay rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub delta0: f64,
    pub t_horizon: f64,
    pub base: RunSummary,
    pub phase1_pass: bool,
    pub records: Vec<RunSummary>,
    pub closeness: Vec<ClosenessEntry>,
    pub ratio_checks: Vec<RatioCheck>,
    pub continuation: Vec<RunSummary>,
    pub passed: bool,
}

fn verdict_ok(v: &Verdict) -> bool {
    matches!(v, Verdict::ReachedT | Verdict::Converged { .. })
}

/// Phase one: run the s = 0 flow from the normalized data until its
/// sup-norm is below `delta0 / 2` (or the configured horizon runs out).
/// Phase two: run the twisted flow at each `sweep.s_values` entry over
/// the phase-one horizon and compare against the base path; the distance
/// must halve when s halves (ratio in [1.6, 2.4] for each (s, s/2) pair
/// present). Phase three: continue each twisted run and fit exponential
/// decay. The initial constant is fixed once before phase one; the
/// evolving state is never re-normalized.
pub fn protocol_continuity(psi0: &KahlerPotential, cfg: &RunConfig) -> Result<ContinuityReport> {
    cfg.validate()?;
    let delta0 = cfg.sweep.delta0;
    let psi0 = normalize_i(psi0)?;

    let mut base_params = cfg.flow_params();
    base_params.s = 0.0;
    base_params.stop_tol = base_params.stop_tol.max(delta0 / 2.0);
    let base_out = run(&psi0, &base_params)?;
    let base = summarize(&base_out, 0.0);
    let hit = base_out
        .trace
        .samples
        .iter()
        .find(|r| r.sup <= delta0 / 2.0)
        .map(|r| r.t);
    let phase1_pass = hit.is_some() && verdict_ok(&base.verdict);
    // the later phases need a positive horizon even when the data is
    // already below threshold at t = 0
    let t_horizon = hit
        .unwrap_or(cfg.flow.t_final)
        .max(cfg.flow.t_final * 1e-2);

    let mut records = Vec::new();
    let mut closeness = Vec::new();
    let mut continuation = Vec::new();
    let mut snapshots_by_s: Vec<(f64, SpaceTimeField)> = Vec::new();
    for &s in &cfg.sweep.s_values {
        let mut params = cfg.flow_params();
        params.s = s;
        params.t_final = t_horizon;
        // keep comparison runs going over the whole horizon
        params.stop_tol = 0.0;
        let out = run(&psi0, &params)?;
        let summary = summarize(&out, s);
        closeness.push(ClosenessEntry {
            s_a: s,
            s_b: 0.0,
            distance: slab_distance(&out.snapshots, &base_out.snapshots)?,
        });
        if verdict_ok(&summary.verdict) {
            let mut cont_params = cfg.flow_params();
            cont_params.s = s;
            cont_params.record_every = cont_params.record_every.min(5);
            let cont_out = run(&out.state.phi, &cont_params)?;
            continuation.push(summarize(&cont_out, s));
        }
        snapshots_by_s.push((s, out.snapshots));
        records.push(summary);
    }

    let mut ratio_checks = Vec::new();
    for entry in &closeness {
        let s = entry.s_a;
        if let Some(half) = closeness
            .iter()
            .find(|e| (e.s_a - s / 2.0).abs() <= 1e-12 * (1.0 + s))
        {
            let trivially_zero =
                entry.distance < NEGLIGIBLE_DISTANCE && half.distance < NEGLIGIBLE_DISTANCE;
            let ratio = if half.distance > 0.0 {
                entry.distance / half.distance
            } else {
                f64::INFINITY
            };
            let pass = trivially_zero || (1.6..=2.4).contains(&ratio);
            ratio_checks.push(RatioCheck {
                s,
                s_half: half.s_a,
                ratio,
                pass,
            });
        }
    }

    let phase2_pass = records.iter().all(|r| verdict_ok(&r.verdict))
        && ratio_checks.iter().all(|c| c.pass);
    let phase3_pass = continuation_ok(&records, &continuation);
    let passed = phase1_pass && phase2_pass && phase3_pass;
    Ok(ContinuityReport {
        delta0,
        t_horizon,
        base,
        phase1_pass,
        records,
        closeness,
        ratio_checks,
        continuation,
        passed,
    })
}

/// Every phase-two run must have a continuation that either decays
/// (fitted rate positive) or has already converged below tolerance.
fn continuation_ok(records: &[RunSummary], continuation: &[RunSummary]) -> bool {
    records.len() == continuation.len()
        && continuation.iter().all(|c| {
            matches!(c.verdict, Verdict::Converged { .. })
                || c.max_sup <= NEGLIGIBLE_DISTANCE
                || c.eta_fit.as_ref().map(|f| f.eta > 0.0).unwrap_or(false)
        })
}

// ---------------------------------------------------------------------
// nearby-s comparison

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NearbyRow {
    pub delta: f64,
    pub verdict_plus: Verdict,
    pub verdict_minus: Verdict,
    /// Sup distance to the base run; absent when that run failed.
    pub dist_plus: Option<f64>,
    pub dist_minus: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NearbyReport {
    pub s0: f64,
    pub rows: Vec<NearbyRow>,
    /// Fitted exponent of distance versus delta; absent when fewer than
    /// two deltas produced a usable distance.
    pub alpha: Option<f64>,
    pub alpha_min: f64,
    pub pass: bool,
}

/// Run the flow at `s0` and at `s0 +- delta` from the same data and fit
/// the exponent of the slab distance against delta. Failed runs are
/// recorded in their row and excluded from the fit.
pub fn protocol_nearby_s(
    psi0: &KahlerPotential,
    s0: f64,
    deltas: &[f64],
    params_template: &FlowParams,
    alpha_min: f64,
) -> Result<NearbyReport> {
    if !(0.0 < s0 && s0 < 1.0) {
        return Err(Error::Config(format!("s0 must lie in (0,1), got {s0}")));
    }
    for &d in deltas {
        if !(d > 0.0) || s0 + d >= 1.0 || s0 - d <= 0.0 {
            return Err(Error::Config(format!(
                "delta {d} puts s0 +- delta outside (0,1)"
            )));
        }
    }
    let run_s = |s: f64| -> Result<RunOutcome> {
        let mut params = params_template.clone();
        params.s = s;
        params.stop_tol = 0.0;
        run(psi0, &params)
    };
    let base = run_s(s0)?;
    if !verdict_ok(&base.verdict) {
        return Err(Error::Domain(format!(
            "base run at s0 = {s0} failed: {:?}",
            base.verdict
        )));
    }
    let mut rows = Vec::new();
    let mut fit_pts = Vec::new();
    for &d in deltas {
        let plus = run_s(s0 + d)?;
        let minus = run_s(s0 - d)?;
        let dist = |o: &RunOutcome| -> Result<Option<f64>> {
            if verdict_ok(&o.verdict) {
                Ok(Some(slab_distance(&o.snapshots, &base.snapshots)?))
            } else {
                Ok(None)
            }
        };
        let dist_plus = dist(&plus)?;
        let dist_minus = dist(&minus)?;
        let usable: Vec<f64> = [dist_plus, dist_minus].into_iter().flatten().collect();
        if !usable.is_empty() {
            let mean = usable.iter().sum::<f64>() / usable.len() as f64;
            if mean > 0.0 {
                fit_pts.push((d.ln(), mean.ln()));
            }
        }
        rows.push(NearbyRow {
            delta: d,
            verdict_plus: plus.verdict,
            verdict_minus: minus.verdict,
            dist_plus,
            dist_minus,
        });
    }
    let alpha = if fit_pts.len() >= 2 {
        let n = fit_pts.len() as f64;
        let (sx, sy) = fit_pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (sxx, sxy) = fit_pts
            .iter()
            .fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
        Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
    } else {
        None
    };
    let pass = alpha.map(|a| a >= alpha_min).unwrap_or(false);
    Ok(NearbyReport {
        s0,
        rows,
        alpha,
        alpha_min,
        pass,
    })
}

// ---------------------------------------------------------------------
// CLI

#[derive(Parser)]
#[command(
    name = "torusflow",
    about = "numerical laboratory for the twisted Calabi flow family on the flat torus",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonArgs {
    /// Config file (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set flow.s=0.3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the s = 0 trace flow.
    Jflow(CommonArgs),
    /// Run the twisted flow at the configured s.
    Flow(CommonArgs),
    /// Build the order-N approximate solution and fit its residual order.
    Approx(CommonArgs),
    /// Solve the flow by contraction iteration and report convergence.
    Newton(CommonArgs),
    /// Evolve the linearized operator and fit the decay rate.
    Linearize(CommonArgs),
    /// Biharmonic heat kernel checks: mass, on-diagonal decay, Duhamel.
    Kernel(CommonArgs),
    /// Parabolic Hoelder norms and the scaling sandwich on a run's slab.
    Norms(CommonArgs),
    /// Run the flow for every sweep.s_values entry in a worker pool.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Compare flows at s and s +- delta and fit the distance exponent.
    Nearby {
        #[command(flatten)]
        common: CommonArgs,
        /// Offsets from the configured flow.s (repeatable).
        #[arg(long = "delta", value_name = "DELTA", default_values_t = [0.05, 0.025])]
        deltas: Vec<f64>,
    },
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => RunConfig::from_file(path, &common.set)?,
        None => RunConfig::from_toml_str("", &common.set)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) => 2,
        _ => 3,
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.output.dir);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn cmd_flow(cfg: &RunConfig, force_jflow: bool) -> Result<i32> {
    let stem = if force_jflow { "jflow" } else { "flow" };
    let s = if force_jflow { 0.0 } else { cfg.flow.s };
    let psi0 = cfg.initial_data()?;
    let mut params = cfg.flow_params();
    params.s = s;
    let out = run(&psi0, &params)?;
    let summary = summarize(&out, s);
    let dir = out_dir(cfg)?;
    write_run_artifacts(&dir, stem, &out, &summary, cfg.output.dump_fields)?;
    Ok(if verdict_ok(&summary.verdict) { 0 } else { 3 })
}

#[derive(Serialize)]
struct ApproxSummary {
    order: usize,
    slope: f64,
    intercept: f64,
    residuals: Vec<(f64, Option<f64>)>,
}

fn cmd_approx(cfg: &RunConfig) -> Result<i32> {
    let psi0 = cfg.initial_data()?;
    let approx = build_approximate(&psi0, cfg.approx.order, cfg.flow.t_final)?;
    let fit = residual_order_fit(&approx, &cfg.sweep.s_values)?;
    let dir = out_dir(cfg)?;
    io::write_json(
        &dir.join("approx_summary.json"),
        &ApproxSummary {
            order: cfg.approx.order,
            slope: fit.slope,
            intercept: fit.intercept,
            residuals: fit.residuals.clone(),
        },
    )?;
    if cfg.output.dump_fields {
        io::write_slab(&dir, "approx_phi", &approx.compose(cfg.flow.s)?)?;
    }
    Ok(0)
}

fn cmd_newton(cfg: &RunConfig) -> Result<i32> {
    let psi0 = cfg.initial_data()?;
    let (iterate, report) =
        solve_by_contraction(&psi0, cfg.flow.s, cfg.flow.t_final, cfg.approx.order)?;
    let dir = out_dir(cfg)?;
    io::write_json(&dir.join("newton_summary.json"), &report)?;
    if cfg.output.dump_fields {
        io::write_slab(&dir, "newton_phi", &iterate.phi)?;
    }
    Ok(if report.converged { 0 } else { 3 })
}

#[derive(Serialize)]
struct LinearizeSummary {
    s: f64,
    eta_fit: Option<RateFit>,
    samples: Vec<(f64, f64)>,
}

fn cmd_linearize(cfg: &RunConfig) -> Result<i32> {
    let psi0 = cfg.initial_data()?;
    let background = BackgroundPath::constant(psi0.clone(), cfg.flow.t_final)?;
    let u0 = psi0.field().mean_free();
    let times: Vec<f64> = (0..=100)
        .map(|i| cfg.flow.t_final * i as f64 / 100.0)
        .collect();
    let u = evolve_linearized(&background, &u0, cfg.flow.s, &times)?;
    let samples: Vec<(f64, f64)> = (0..u.len())
        .map(|i| (u.times()[i], u.field(i).sup_norm()))
        .collect();
    let eta_fit = fit_decay_rate(&samples, NormKind::Sup).ok();
    let dir = out_dir(cfg)?;
    io::write_json(
        &dir.join("linearize_summary.json"),
        &LinearizeSummary {
            s: cfg.flow.s,
            eta_fit,
            samples: samples.clone(),
        },
    )?;
    io::write_svg_plot(&dir.join("linearize_sup.svg"), &samples, "linearized sup norm")?;
    Ok(0)
}

#[derive(Serialize)]
struct KernelSummary {
    mass_error: f64,
    diagonal_slope: f64,
    duhamel_vs_etd_sup: f64,
    pass: bool,
}

fn cmd_kernel(cfg: &RunConfig) -> Result<i32> {
    let grid = cfg.build_grid()?;
    let cutoff = (cfg.grid.n / 2 - 2).min(14);
    let spec = KernelSpec::new(grid.clone(), cutoff)?;

    let n = grid.resolution();
    let h = grid.spacing();
    let t_mass = 1e-3;
    let x = [0.3, 0.7];
    let mut mass = 0.0;
    for i in 0..n {
        for j in 0..n {
            mass += spec.eval(x, [j as f64 * h, i as f64 * h], t_mass)?;
        }
    }
    let mass_error = (mass * h * h - 1.0).abs();

    let mut pts = Vec::new();
    let mut t = 1e-5f64;
    while t <= 1e-3 * 1.0001 {
        pts.push((t.ln(), spec.eval([0.0, 0.0], [0.0, 0.0], t)?.ln()));
        t *= 10f64.powf(0.25);
    }
    let np = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (sxx, sxy) = pts
        .iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
    let diagonal_slope = (np * sxy - sx * sy) / (np * sxx - sx * sx);

    let times: Vec<f64> = (0..=20).map(|i| i as f64 * 5e-5).collect();
    let f0 = cfg.initial_data()?.field().clone();
    let forcing = SpaceTimeField::new(
        times.clone(),
        times.iter().map(|_| f0.clone()).collect(),
    )?;
    let a = duhamel_solve(&forcing, 1e-3)?;
    let b = etd_solve(&forcing, 1e-3, 4)?;
    let mut duhamel_vs_etd_sup = 0.0f64;
    for i in 0..a.len() {
        duhamel_vs_etd_sup = duhamel_vs_etd_sup.max(a.field(i).sub(b.field(i))?.sup_norm());
    }

    let pass =
        mass_error <= 1e-12 && (diagonal_slope + 0.5).abs() <= 0.05 && duhamel_vs_etd_sup <= 1e-8;
    let dir = out_dir(cfg)?;
    io::write_json(
        &dir.join("kernel_summary.json"),
        &KernelSummary {
            mass_error,
            diagonal_slope,
            duhamel_vs_etd_sup,
            pass,
        },
    )?;
    Ok(if pass { 0 } else { 4 })
}

#[derive(Serialize)]
struct NormsSummary {
    gamma: f64,
    holder_k0: crate::norms::HolderReport,
    holder_k4: crate::norms::HolderReport,
    scaling: crate::norms::ScalingCheck,
}

fn cmd_norms(cfg: &RunConfig) -> Result<i32> {
    let psi0 = cfg.initial_data()?;
    let out = run(&psi0, &cfg.flow_params())?;
    if !verdict_ok(&out.verdict) {
        return Err(Error::Domain(format!("flow run failed: {:?}", out.verdict)));
    }
    let gamma = 0.5;
    let holder_k0 =
        parabolic_holder_norm(&out.snapshots, 0, gamma, DEFAULT_PAIR_BUDGET, cfg.init.seed)?;
    let holder_k4 =
        parabolic_holder_norm(&out.snapshots, 4, gamma, DEFAULT_PAIR_BUDGET, cfg.init.seed)?;
    let scaling = scaling_check(&out.snapshots, cfg.flow.s.max(1e-3), gamma, 4)?;
    let dir = out_dir(cfg)?;
    io::write_json(
        &dir.join("norms_summary.json"),
        &NormsSummary {
            gamma,
            holder_k0,
            holder_k4,
            scaling,
        },
    )?;
    Ok(0)
}

fn cmd_sweep(cfg: &RunConfig, workers: usize) -> Result<i32> {
    let report = sweep(cfg, workers)?;
    Ok(if report.records.iter().all(|r| verdict_ok(&r.verdict)) {
        0
    } else {
        3
    })
}

fn cmd_nearby(cfg: &RunConfig, deltas: &[f64]) -> Result<i32> {
    let psi0 = cfg.initial_data()?;
    let report = protocol_nearby_s(
        &psi0,
        cfg.flow.s,
        deltas,
        &cfg.flow_params(),
        cfg.sweep.compare_alpha,
    )?;
    let dir = out_dir(cfg)?;
    io::write_json(&dir.join("nearby_report.json"), &report)?;
    Ok(if report.pass { 0 } else { 4 })
}

/// Entry point shared by the binary and tests. Exit codes: 0 success,
/// 2 configuration or usage error, 3 numerical failure, 4 failed
/// quantitative check.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version as "errors" with exit 0
            let code = if e.exit_code() == 0 { 0 } else { 2 };
            let _ = e.print();
            return code;
        }
    };
    let common = match &cli.cmd {
        Cmd::Jflow(c)
        | Cmd::Flow(c)
        | Cmd::Approx(c)
        | Cmd::Newton(c)
        | Cmd::Linearize(c)
        | Cmd::Kernel(c)
        | Cmd::Norms(c) => c,
        Cmd::Sweep { common, .. } | Cmd::Nearby { common, .. } => common,
    };
    let cfg = match load_config(common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("config error: {e}");
            return 2;
        }
    };
    let result = match &cli.cmd {
        Cmd::Jflow(_) => cmd_flow(&cfg, true),
        Cmd::Flow(_) => cmd_flow(&cfg, false),
        Cmd::Approx(_) => cmd_approx(&cfg),
        Cmd::Newton(_) => cmd_newton(&cfg),
        Cmd::Linearize(_) => cmd_linearize(&cfg),
        Cmd::Kernel(_) => cmd_kernel(&cfg),
        Cmd::Norms(_) => cmd_norms(&cfg),
        Cmd::Sweep { workers, .. } => cmd_sweep(&cfg, *workers),
        Cmd::Nearby { deltas, .. } => cmd_nearby(&cfg, deltas),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}
