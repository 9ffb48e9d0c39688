//! Run configuration files and CSV export of traces.
//!
//! The configuration is a UTF-8 file of `key = value` lines. `#` starts a
//! comment, blank lines are ignored and unknown keys are rejected. Keys that
//! are absent keep the reference-channel defaults.
//!
//! Floating-point values are written with Rust's shortest round-trip
//! scientific formatting, so every exported number parses back to the same
//! bits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::control::CanonicalState;
use crate::error::{Error, Result};
use crate::kernels::lattice::{TriField, TriangularGrid};
use crate::kernels::{KernelOptions, MarchRule};
use crate::linearize::{EigenMode, GateModel, SourceModel};
use crate::metrics::{
    erosion_deposition_fields, flushing_effectiveness, l2_norms, FlushingReport, NormSeries,
};
use crate::physics::{ChannelParameters, FieldState};
use crate::sim::{BedOffset, LoopMode, PlantModel, SimConfig, Trace};
use crate::synthesis::{ConcentrationMode, Setpoint, Synthesis, SynthesisOptions};

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ChannelParameters,
    pub setpoint: Setpoint,
    pub concentration: ConcentrationMode,
    pub eigen_mode: EigenMode,
    pub source_model: SourceModel,
    pub gate_model: GateModel,
    /// Kernel lattice size; 0 uses one lattice node per grid node.
    pub kernel_m: usize,
    pub kernel_tol: f64,
    pub kernel_max_iter: usize,
    pub kernel_rule: MarchRule,
    pub sim: SimConfig,
    /// Window of the flushing-effectiveness integral, in seconds.
    pub fe_window: f64,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let k = KernelOptions::default();
        Self {
            params: ChannelParameters::default(),
            setpoint: Setpoint::default(),
            concentration: ConcentrationMode::Given,
            eigen_mode: EigenMode::default(),
            source_model: SourceModel::default(),
            gate_model: GateModel::default(),
            kernel_m: 0,
            kernel_tol: k.tol,
            kernel_max_iter: k.max_iter,
            kernel_rule: k.rule,
            sim: SimConfig::default(),
            fe_window: 0.1,
            output_dir: None,
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got '{value}'")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| {
        Error::Config(format!(
            "{key}: expected a non-negative integer, got '{value}'"
        ))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got '{value}'"
        ))),
    }
}

fn parse_choice<T: Copy>(key: &str, value: &str, choices: &[(&str, T)]) -> Result<T> {
    choices
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = choices.iter().map(|(n, _)| *n).collect();
            Error::Config(format!(
                "{key}: expected one of {}, got '{value}'",
                names.join("|")
            ))
        })
}

fn choice_name<T: PartialEq>(value: T, choices: &[(&'static str, T)]) -> &'static str {
    choices
        .iter()
        .find(|(_, v)| *v == value)
        .map(|(n, _)| *n)
        .unwrap_or("?")
}

const CONC: &[(&str, ConcentrationMode)] = &[
    ("given", ConcentrationMode::Given),
    ("balance", ConcentrationMode::Balance),
];
const EIGEN: &[(&str, EigenMode)] = &[
    ("approximate", EigenMode::Approximate),
    ("exact", EigenMode::Exact),
];
const SOURCE: &[(&str, SourceModel)] = &[
    ("reference", SourceModel::Reference),
    ("jacobian", SourceModel::Jacobian),
];
const GATE: &[(&str, GateModel)] = &[
    ("reference", GateModel::Reference),
    ("jacobian", GateModel::Jacobian),
];
const RULE: &[(&str, MarchRule)] = &[
    ("euler", MarchRule::Euler),
    ("trapezoid", MarchRule::Trapezoid),
];
const MODE: &[(&str, LoopMode)] = &[
    ("closed_loop", LoopMode::ClosedLoop),
    ("open_loop", LoopMode::OpenLoop),
];
const PLANT: &[(&str, PlantModel)] = &[
    ("linear_canonical", PlantModel::LinearCanonical),
    ("nonlinear", PlantModel::Nonlinear),
];
const OFFSET: &[(&str, BedOffset)] = &[
    ("endpoint", BedOffset::Endpoint),
    ("printed", BedOffset::Printed),
];

impl RunConfig {
    /// Sets one key. Unknown keys and malformed values are configuration
    /// errors naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = |v: &str| parse_f64(key, v);
        let p = &mut self.params;
        let s = &mut self.sim;
        match key {
            "g" => p.g = f(value)?,
            "C_f" => p.c_f = f(value)?,
            "k_G" => p.k_g = f(value)?,
            "A" => p.a_emp = f(value)?,
            "c1" => p.c1 = f(value)?,
            "c2" => p.c2 = f(value)?,
            "c3" => p.c3 = f(value)?,
            "r1" => p.r1 = f(value)?,
            "r2" => p.r2 = f(value)?,
            "r3" => p.r3 = f(value)?,
            "nu" => p.nu = f(value)?,
            "p_prime" => p.p_prime = f(value)?,
            "D_s" => p.d_s = f(value)?,
            "R" => p.r_sub = f(value)?,
            "H_L" => p.h_l = f(value)?,
            "L" => p.length = f(value)?,
            "Q0" => p.q0 = f(value)?,
            "H_eq" => self.setpoint.h = f(value)?,
            "V_eq" => self.setpoint.v = f(value)?,
            "Z_eq" => self.setpoint.z = f(value)?,
            "C_eq" => self.setpoint.c = f(value)?,
            "C_eq_mode" => self.concentration = parse_choice(key, value, CONC)?,
            "eigen_mode" => self.eigen_mode = parse_choice(key, value, EIGEN)?,
            "source_model" => self.source_model = parse_choice(key, value, SOURCE)?,
            "gate_model" => self.gate_model = parse_choice(key, value, GATE)?,
            "kernel_M" => self.kernel_m = parse_usize(key, value)?,
            "kernel_tol" => self.kernel_tol = f(value)?,
            "kernel_max_iter" => self.kernel_max_iter = parse_usize(key, value)?,
            "kernel_rule" => self.kernel_rule = parse_choice(key, value, RULE)?,
            "N" => s.cells = parse_usize(key, value)?,
            "cfl" => s.cfl = f(value)?,
            "t_final" => s.t_final = f(value)?,
            "mode" => s.mode = parse_choice(key, value, MODE)?,
            "plant" => s.plant = parse_choice(key, value, PLANT)?,
            "record_every" => s.record_every = parse_usize(key, value)?,
            "observer_enabled" => s.observer_enabled = parse_bool(key, value)?,
            "bed_offset" => s.bed_offset = parse_choice(key, value, OFFSET)?,
            "ic_amplitude" => s.ic_amplitude = f(value)?,
            "gate_max" => s.gate_max = f(value)?,
            "sensor_noise" => s.sensor_noise = f(value)?,
            "noise_seed" => {
                s.noise_seed = value.parse().map_err(|_| {
                    Error::Config(format!("{key}: expected an integer, got '{value}'"))
                })?
            }
            "fe_window" => self.fe_window = f(value)?,
            "output_dir" => {
                self.output_dir = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{pair}' is not of the form key=value"))
        })?;
        self.set(k.trim(), v.trim())
    }

    /// Parses configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected key = value, got '{line}'",
                    n + 1
                ))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Configuration text that parses back to `self`.
    pub fn to_config_string(&self) -> String {
        let p = &self.params;
        let s = &self.sim;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        for (k, v) in [
            ("g", p.g),
            ("C_f", p.c_f),
            ("k_G", p.k_g),
            ("A", p.a_emp),
            ("c1", p.c1),
            ("c2", p.c2),
            ("c3", p.c3),
            ("r1", p.r1),
            ("r2", p.r2),
            ("r3", p.r3),
            ("nu", p.nu),
            ("p_prime", p.p_prime),
            ("D_s", p.d_s),
            ("R", p.r_sub),
            ("H_L", p.h_l),
            ("L", p.length),
            ("Q0", p.q0),
            ("H_eq", self.setpoint.h),
            ("V_eq", self.setpoint.v),
            ("Z_eq", self.setpoint.z),
            ("C_eq", self.setpoint.c),
        ] {
            put(k, format!("{v:e}"));
        }
        put("C_eq_mode", choice_name(self.concentration, CONC).into());
        put("eigen_mode", choice_name(self.eigen_mode, EIGEN).into());
        put(
            "source_model",
            choice_name(self.source_model, SOURCE).into(),
        );
        put("gate_model", choice_name(self.gate_model, GATE).into());
        put("kernel_M", self.kernel_m.to_string());
        put("kernel_tol", format!("{:e}", self.kernel_tol));
        put("kernel_max_iter", self.kernel_max_iter.to_string());
        put("kernel_rule", choice_name(self.kernel_rule, RULE).into());
        put("N", s.cells.to_string());
        put("cfl", format!("{:e}", s.cfl));
        put("t_final", format!("{:e}", s.t_final));
        put("mode", choice_name(s.mode, MODE).into());
        put("plant", choice_name(s.plant, PLANT).into());
        put("record_every", s.record_every.to_string());
        put("observer_enabled", s.observer_enabled.to_string());
        put("bed_offset", choice_name(s.bed_offset, OFFSET).into());
        put("ic_amplitude", format!("{:e}", s.ic_amplitude));
        put("gate_max", format!("{:e}", s.gate_max));
        put("sensor_noise", format!("{:e}", s.sensor_noise));
        put("noise_seed", s.noise_seed.to_string());
        put("fe_window", format!("{:e}", self.fe_window));
        if let Some(dir) = &self.output_dir {
            put("output_dir", dir.display().to_string());
        }
        out
    }

    /// Kernel settings with the lattice size resolved.
    pub fn kernel_options(&self) -> KernelOptions {
        KernelOptions {
            m: if self.kernel_m == 0 {
                self.sim.cells + 1
            } else {
                self.kernel_m
            },
            tol: self.kernel_tol,
            max_iter: self.kernel_max_iter,
            rule: self.kernel_rule,
        }
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            eigen_mode: self.eigen_mode,
            source_model: self.source_model,
            gate_model: self.gate_model,
            concentration: self.concentration,
            kernels: self.kernel_options(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: malformed CSV: {other:?}", path.display())),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.into_iter().map(num))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const TRACE_HEADER: [&str; 12] = [
    "t", "x", "H", "V", "Z", "C", "u1", "u2", "u3", "w", "E", "D",
];
pub const SERIES_HEADER: [&str; 9] = [
    "t", "U", "U_L", "y", "norm_u1", "norm_u2", "norm_u3", "norm_w", "Fe",
];

/// Paths written by [`export_trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExportedFiles {
    pub trace: PathBuf,
    pub series: PathBuf,
}

/// Writes `trace.csv` (one row per snapshot and node) and `series.csv` (one
/// row per snapshot) into `dir`.
pub fn export_trace(
    dir: &Path,
    trace: &Trace,
    syn: &Synthesis,
    fe_window: f64,
) -> Result<ExportedFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ed =
        erosion_deposition_fields(&trace.physical, trace_dx(trace), &syn.params, &syn.derived)?;
    let files = ExportedFiles {
        trace: dir.join("trace.csv"),
        series: dir.join("series.csv"),
    };
    let rows = trace.times.iter().enumerate().flat_map(|(k, &t)| {
        let fs = &trace.physical[k];
        let s = &trace.canonical[k];
        let (e, d) = (&ed.entrainment[k], &ed.deposition[k]);
        trace.x.iter().enumerate().map(move |(j, &x)| {
            vec![
                t, x, fs.h[j], fs.v[j], fs.z[j], fs.c[j], s.u[0][j], s.u[1][j], s.u[2][j], s.w[j],
                e[j], d[j],
            ]
        })
    });
    write_rows(&files.trace, &TRACE_HEADER, rows)?;

    let norms = l2_norms(trace);
    let fe = if trace.len() >= 2 {
        flushing_effectiveness(trace, fe_window)?.fe
    } else {
        vec![f64::NAN; trace.len()]
    };
    let rows = (0..trace.len()).map(|k| {
        let n = norms.fields[k];
        vec![
            trace.times[k],
            trace.input[k],
            trace.aperture[k],
            trace.measurement[k],
            n[0],
            n[1],
            n[2],
            n[3],
            fe[k],
        ]
    });
    write_rows(&files.series, &SERIES_HEADER, rows)?;
    Ok(files)
}

fn trace_dx(trace: &Trace) -> f64 {
    if trace.x.len() >= 2 {
        trace.dx()
    } else {
        0.0
    }
}

/// Writes `t,norm_closed,norm_open` for two runs on the same time grid.
pub fn write_comparison(path: &Path, closed: &NormSeries, open: &NormSeries) -> Result<()> {
    let n = closed.times.len().min(open.times.len());
    let rows = (0..n).map(|k| vec![closed.times[k], closed.total[k], open.total[k]]);
    write_rows(path, &["t", "norm_closed", "norm_open"], rows)
}

/// Writes `t,flux_in,flux_out,Fe`.
pub fn write_flushing(path: &Path, report: &FlushingReport) -> Result<()> {
    let rows = (0..report.times.len()).map(|k| {
        vec![
            report.times[k],
            report.flux_in[k],
            report.flux_out[k],
            report.fe[k],
        ]
    });
    write_rows(path, &["t", "flux_in", "flux_out", "Fe"], rows)
}

/// Writes four kernels as `x,xi,<n1>..<n4>` over the triangular lattice,
/// row by row.
pub fn write_kernels(
    path: &Path,
    grid: &TriangularGrid,
    names: [&str; 4],
    k: &[TriField; 4],
) -> Result<()> {
    let mut header = vec!["x", "xi"];
    header.extend(names);
    let rows = (0..grid.m).flat_map(|a| {
        (0..=a).map(move |b| {
            vec![
                grid.x(a),
                grid.x(b),
                k[0].get(a, b),
                k[1].get(a, b),
                k[2].get(a, b),
                k[3].get(a, b),
            ]
        })
    });
    write_rows(path, &header, rows)
}

/// Writes a text file in one go.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

/// Numeric CSV with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    /// Index of a named column.
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("missing column '{name}'")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Reads a numeric CSV file.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .map(|v| parse_f64(&path.display().to_string(), v))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Snapshots recovered from a `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub x: Vec<f64>,
    pub times: Vec<f64>,
    pub physical: Vec<FieldState>,
    pub canonical: Vec<CanonicalState>,
}

impl TraceTable {
    pub fn dx(&self) -> f64 {
        self.x[1] - self.x[0]
    }
}

/// Reads a `trace.csv`, grouping rows by snapshot time.
pub fn read_trace(path: &Path) -> Result<TraceTable> {
    let table = read_table(path)?;
    if table.header != TRACE_HEADER {
        return Err(Error::Config(format!(
            "{}: header is not {}",
            path.display(),
            TRACE_HEADER.join(",")
        )));
    }
    let mut out = TraceTable {
        x: Vec::new(),
        times: Vec::new(),
        physical: Vec::new(),
        canonical: Vec::new(),
    };
    let mut k = 0;
    while k < table.rows.len() {
        let t = table.rows[k][0];
        let end = k + table.rows[k..].iter().take_while(|r| r[0] == t).count();
        let rows = &table.rows[k..end];
        if out.x.is_empty() {
            out.x = rows.iter().map(|r| r[1]).collect();
        } else if rows.len() != out.x.len() {
            return Err(Error::Config(format!(
                "{}: snapshot t = {t} has {} nodes, expected {}",
                path.display(),
                rows.len(),
                out.x.len()
            )));
        }
        let col = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
        out.times.push(t);
        out.physical.push(FieldState {
            h: col(2),
            v: col(3),
            z: col(4),
            c: col(5),
        });
        out.canonical.push(CanonicalState {
            u: [col(6), col(7), col(8)],
            w: col(9),
        });
        k = end;
    }
    if !out.times.is_empty() && out.x.len() < 2 {
        return Err(Error::Config(format!(
            "{}: fewer than two nodes",
            path.display()
        )));
    }
    Ok(out)
}
