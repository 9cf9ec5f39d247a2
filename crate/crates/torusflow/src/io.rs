//! Artifact I/O: binary field dumps, trace CSV, slab dumps with a time
//! index sidecar, JSON summaries, and simple SVG line plots. All writes
//! go through a temp-file-then-rename so readers never observe partial
//! files.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowTrace;
use crate::grid::{ScalarField, TorusGrid};
use crate::slab::SpaceTimeField;

const MAGIC: &[u8; 4] = b"CFL1";

/// Write bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Field dump: "CFL1", u32 N, u32 N, f64 L, then N*N little-endian f64
/// values row-major.
pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    let n = field.grid().resolution() as u32;
    let mut bytes = Vec::with_capacity(16 + field.values().len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&n.to_le_bytes());
    bytes.extend_from_slice(&n.to_le_bytes());
    bytes.extend_from_slice(&field.grid().side_length().to_le_bytes());
    for v in field.values().iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(Error::Config(format!(
            "{} is not a field dump (bad header)",
            path.display()
        )));
    }
    let n1 = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n2 = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let l = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    if n1 != n2 {
        return Err(Error::Config("field dump must be square".into()));
    }
    let expect = 20 + n1 * n2 * 8;
    if bytes.len() != expect {
        return Err(Error::Config(format!(
            "field dump truncated: {} bytes, expected {expect}",
            bytes.len()
        )));
    }
    let mut values = Array2::<f64>::zeros((n1, n2));
    for (i, v) in values.iter_mut().enumerate() {
        let off = 20 + i * 8;
        *v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    }
    let grid = TorusGrid::new(n1, l)?;
    ScalarField::new(grid, values)
}

/// Field as CSV rows `x, y, value`.
pub fn field_csv(field: &ScalarField) -> String {
    let g = field.grid();
    let h = g.spacing();
    let mut out = String::from("x, y, value\n");
    for ((r, c), v) in field.values().indexed_iter() {
        out.push_str(&format!("{}, {}, {v:.17e}\n", r as f64 * h, c as f64 * h));
    }
    out
}

/// Trace CSV with the fixed column set.
pub fn trace_csv(trace: &FlowTrace) -> String {
    let mut out = String::from("t, l2, sup, min_w, residual, E_s, dissipation, I\n");
    for s in &trace.samples {
        out.push_str(&format!(
            "{:.17e}, {:.17e}, {:.17e}, {:.17e}, {:.17e}, {:.17e}, {:.17e}, {:.17e}\n",
            s.t, s.l2, s.sup, s.min_w, s.residual, s.energy, s.dissipation, s.i_value
        ));
    }
    out
}

pub fn write_trace(path: &Path, trace: &FlowTrace) -> Result<()> {
    write_atomic(path, trace_csv(trace).as_bytes())
}

/// Slab dump: one field file per slice plus a sidecar CSV mapping index
/// to time. `stem` names the series: `stem_0000.cfl`, ..., `stem.csv`.
pub fn write_slab(dir: &Path, stem: &str, slab: &SpaceTimeField) -> Result<()> {
    let mut index = String::from("index, t, file\n");
    for i in 0..slab.len() {
        let name = format!("{stem}_{i:04}.cfl");
        write_field(&dir.join(&name), slab.field(i))?;
        index.push_str(&format!("{i}, {:.17e}, {name}\n", slab.times()[i]));
    }
    write_atomic(&dir.join(format!("{stem}.csv")), index.as_bytes())
}

/// Read back a slab dump written by `write_slab`.
pub fn read_slab(dir: &Path, stem: &str) -> Result<SpaceTimeField> {
    let index = fs::read_to_string(dir.join(format!("{stem}.csv")))?;
    let mut times = Vec::new();
    let mut fields = Vec::new();
    for line in index.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(Error::Config(format!("malformed slab index row: {line}")));
        }
        let t: f64 = cols[1]
            .parse()
            .map_err(|e| Error::Config(format!("bad time in slab index: {e}")))?;
        times.push(t);
        fields.push(read_field(&dir.join(cols[2]))?);
    }
    SpaceTimeField::new(times, fields)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    write_atomic(path, text.as_bytes())
}

/// Minimal SVG polyline plot of (t, value) pairs, log-scale in value.
/// Non-positive values are skipped.
pub fn svg_log_plot(samples: &[(f64, f64)], title: &str) -> String {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|&&(_, v)| v > 0.0)
        .map(|&(t, v)| (t, v.log10()))
        .collect();
    let (w, h) = (640.0, 400.0);
    let margin = 40.0;
    let mut body = String::new();
    if pts.len() >= 2 {
        let (tmin, tmax) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.0), a.1.max(p.0)));
        let (vmin, vmax) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |a, p| (a.0.min(p.1), a.1.max(p.1)));
        let tspan = (tmax - tmin).max(1e-300);
        let vspan = (vmax - vmin).max(1e-300);
        let coords: Vec<String> = pts
            .iter()
            .map(|&(t, v)| {
                let x = margin + (t - tmin) / tspan * (w - 2.0 * margin);
                let y = h - margin - (v - vmin) / vspan * (h - 2.0 * margin);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        body = format!(
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>",
            coords.join(" ")
        );
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\
<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\
<text x=\"{margin}\" y=\"20\" font-family=\"monospace\" font-size=\"13\">{title}</text>\
{body}</svg>"
    )
}

pub fn write_svg_plot(path: &Path, samples: &[(f64, f64)], title: &str) -> Result<()> {
    write_atomic(path, svg_log_plot(samples, title).as_bytes())
}

/// Grid helper used by readers that only know the resolution.
pub fn grid_of(field: &ScalarField) -> Arc<TorusGrid> {
    field.grid().clone()
}
