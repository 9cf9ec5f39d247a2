//! Run configuration: TOML files with dotted-key command-line overrides,
//! validation, and construction of initial data.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{DtPolicy, FlowParams, Scheme};
use crate::geometry::KahlerPotential;
use crate::grid::{ScalarField, TorusGrid};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub length: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n: 64, length: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Fourier,
    Random,
    File,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub kind: InitKind,
    pub amplitude: f64,
    /// Cosine modes `(k_x, k_y)` for `kind = "fourier"`, all at the
    /// configured amplitude.
    pub modes: Vec<[i64; 2]>,
    pub seed: u64,
    /// Field dump to load for `kind = "file"`.
    pub path: String,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            kind: InitKind::Fourier,
            amplitude: 1e-3,
            modes: vec![[1, 0]],
            seed: 0,
            path: String::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub s: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    /// "fixed" (uses `dt`) or "adaptive" (uses `rtol`).
    pub dt_policy: String,
    pub dt: f64,
    pub rtol: f64,
    pub scheme: Scheme,
    pub normalize: bool,
    pub stop_tol: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            s: 0.5,
            t_final: 1.0,
            dt_policy: "adaptive".into(),
            dt: 1e-4,
            rtol: 1e-6,
            scheme: Scheme::Etd2,
            normalize: false,
            stop_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxConfig {
    #[serde(rename = "N")]
    pub order: usize,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self { order: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub s_values: Vec<f64>,
    /// Minimum fitted exponent for the nearby-s comparison to pass.
    pub compare_alpha: f64,
    /// Smallness threshold for the continuity protocol: phase one runs
    /// the trace flow until the sup-norm stays below `delta0 / 2`.
    pub delta0: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            s_values: vec![0.02, 0.04],
            compare_alpha: 0.9,
            delta0: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub record_every: usize,
    pub dump_fields: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            record_every: 10,
            dump_fields: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub init: InitConfig,
    pub flow: FlowConfig,
    pub approx: ApproxConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = text
            .parse()
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("config field error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.n < 8 || self.grid.n % 2 != 0 {
            return Err(Error::Config(format!(
                "grid.n must be even and >= 8, got {}",
                self.grid.n
            )));
        }
        if !(self.grid.length > 0.0) {
            return Err(Error::Config("grid.length must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flow.s) {
            return Err(Error::Config(format!("flow.s must lie in [0,1], got {}", self.flow.s)));
        }
        if !(self.flow.t_final > 0.0) {
            return Err(Error::Config("flow.T must be positive".into()));
        }
        match self.flow.dt_policy.as_str() {
            "fixed" => {
                if !(self.flow.dt > 0.0) {
                    return Err(Error::Config("flow.dt must be positive".into()));
                }
            }
            "adaptive" => {
                if !(self.flow.rtol > 0.0) {
                    return Err(Error::Config("flow.rtol must be positive".into()));
                }
            }
            other => {
                return Err(Error::Config(format!(
                    "flow.dt_policy must be \"fixed\" or \"adaptive\", got \"{other}\""
                )))
            }
        }
        if self.sweep.s_values.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Config("sweep.s_values must lie in [0,1]".into()));
        }
        if !(self.sweep.delta0 > 0.0) {
            return Err(Error::Config("sweep.delta0 must be positive".into()));
        }
        if self.output.record_every == 0 {
            return Err(Error::Config("output.record_every must be >= 1".into()));
        }
        if self.init.kind == InitKind::File && !Path::new(&self.init.path).exists() {
            return Err(Error::Config(format!(
                "init.path does not exist: {}",
                self.init.path
            )));
        }
        if self.init.kind == InitKind::Random
            && self.init.modes.iter().any(|m| m[0].abs() > 4 || m[1].abs() > 4)
        {
            return Err(Error::Config("random init is band-limited to modes <= 4".into()));
        }
        Ok(())
    }

    pub fn flow_params(&self) -> FlowParams {
        FlowParams {
            s: self.flow.s,
            t_final: self.flow.t_final,
            dt_policy: if self.flow.dt_policy == "fixed" {
                DtPolicy::Fixed { dt: self.flow.dt }
            } else {
                DtPolicy::Adaptive { rtol: self.flow.rtol }
            },
            scheme: self.flow.scheme,
            normalize: self.flow.normalize,
            record_every: self.output.record_every,
            stop_tol: self.flow.stop_tol,
        }
    }

    pub fn build_grid(&self) -> Result<std::sync::Arc<TorusGrid>> {
        TorusGrid::new(self.grid.n, self.grid.length)
    }

    /// Construct the configured initial potential. Random data is
    /// band-limited (modes up to 4) with seeded Gaussian coefficients,
    /// scaled to the requested sup amplitude and rejection-resampled up
    /// to 10 times if positivity fails.
    pub fn initial_data(&self) -> Result<KahlerPotential> {
        let grid = self.build_grid()?;
        match self.init.kind {
            InitKind::Fourier => {
                let amp = self.init.amplitude;
                let modes = self.init.modes.clone();
                let l = self.grid.length;
                let field = ScalarField::from_fn(grid, |x, y| {
                    modes
                        .iter()
                        .map(|m| {
                            let phase = 2.0 * std::f64::consts::PI
                                * (m[0] as f64 * x + m[1] as f64 * y)
                                / l;
                            amp * phase.cos()
                        })
                        .sum()
                })?;
                KahlerPotential::new(field)
            }
            InitKind::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.init.seed);
                for _attempt in 0..10 {
                    let field = random_band_limited(&grid, self.init.amplitude, &mut rng)?;
                    match KahlerPotential::new(field) {
                        Ok(pot) => return Ok(pot),
                        Err(Error::PositivityLoss { .. }) => continue,
                        Err(e) => return Err(e),
                    }
                }
                Err(Error::Config(
                    "random initial data failed positivity in 10 attempts; lower init.amplitude"
                        .into(),
                ))
            }
            InitKind::File => {
                let field = crate::io::read_field(Path::new(&self.init.path))?;
                if field.grid().resolution() != self.grid.n {
                    return Err(Error::Config(format!(
                        "field file resolution {} does not match grid.n {}",
                        field.grid().resolution(),
                        self.grid.n
                    )));
                }
                KahlerPotential::new(field)
            }
        }
    }
}

fn random_band_limited(
    grid: &std::sync::Arc<TorusGrid>,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ScalarField> {
    // Gaussian coefficients on cosine/sine modes with |k_x|, |k_y| <= 4
    let mut terms: Vec<(f64, f64, f64, f64)> = Vec::new();
    for kx in 0..=4i64 {
        for ky in -4..=4i64 {
            if kx == 0 && ky <= 0 {
                continue;
            }
            let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen_range(0.0..1.0));
            let r = (-2.0 * u1.ln()).sqrt();
            let a = r * (2.0 * std::f64::consts::PI * u2).cos();
            let b = r * (2.0 * std::f64::consts::PI * u2).sin();
            terms.push((a, b, kx as f64, ky as f64));
        }
    }
    let l = grid.side_length();
    let raw = ScalarField::from_fn(grid.clone(), |x, y| {
        terms
            .iter()
            .map(|&(a, b, kx, ky)| {
                let phase = 2.0 * std::f64::consts::PI * (kx * x + ky * y) / l;
                a * phase.cos() + b * phase.sin()
            })
            .sum()
    })?;
    let sup = raw.sup_norm();
    if sup == 0.0 {
        return Err(Error::DegenerateInput("random field identically zero".into()));
    }
    Ok(raw.scaled(amplitude / sup))
}

/// Apply one `key=value` override with a dotted key into a parsed TOML
/// tree; the value is parsed with TOML syntax (bare words as strings).
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override must be key=value, got \"{spec}\"")))?;
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Value>() {
        Ok(toml::Value::Table(t)) => t["v"].clone(),
        _ => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key \"{key}\" crosses a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override key \"{key}\" crosses a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
