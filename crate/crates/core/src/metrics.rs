//! Norms, sediment fluxes and flushing effectiveness of a trace.

use crate::control::{estimation_error, l2_norm};
use crate::error::{Error, Result};
use crate::physics::{
    deposition_rate, entrainment_rate, ChannelParameters, DerivedConstants, FieldState,
};
use crate::sim::Trace;

/// `L2` norms of the canonical fields per snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct NormSeries {
    pub times: Vec<f64>,
    /// `||u_1||, ||u_2||, ||u_3||, ||w||`.
    pub fields: Vec<[f64; 4]>,
    /// Combined norm `sqrt(sum ||.||^2)`.
    pub total: Vec<f64>,
}

impl NormSeries {
    /// Linear interpolation of the combined norm at time `t`.
    pub fn total_at(&self, t: f64) -> f64 {
        interpolate(&self.times, &self.total, t)
    }
}

fn interpolate(ts: &[f64], vs: &[f64], t: f64) -> f64 {
    let k = ts.partition_point(|s| *s < t);
    if k == 0 {
        return vs[0];
    }
    if k >= ts.len() {
        return vs[ts.len() - 1];
    }
    let (t0, t1) = (ts[k - 1], ts[k]);
    let s = (t - t0) / (t1 - t0);
    (1.0 - s) * vs[k - 1] + s * vs[k]
}

/// Norms of the plant's canonical state.
pub fn l2_norms(trace: &Trace) -> NormSeries {
    let dx = trace.dx();
    let fields: Vec<[f64; 4]> = trace.canonical.iter().map(|s| s.l2_norms(dx)).collect();
    let total = fields
        .iter()
        .map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    NormSeries {
        times: trace.times.clone(),
        fields,
        total,
    }
}

/// Combined norm of the observer error per snapshot, if an observer ran.
pub fn observer_error_norms(trace: &Trace) -> Option<Vec<f64>> {
    if trace.observer.len() != trace.canonical.len() {
        return None;
    }
    let dx = trace.dx();
    Some(
        trace
            .observer
            .iter()
            .zip(&trace.canonical)
            .map(|(o, s)| estimation_error(o, s).norm(dx))
            .collect(),
    )
}

/// Suspended-sediment flux `H V C` at the inlet and the outlet, and the
/// outlet water discharge `H V`, per snapshot.
pub fn sediment_flux(fields: &[FieldState]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut inlet = Vec::with_capacity(fields.len());
    let mut outlet = Vec::with_capacity(fields.len());
    let mut water = Vec::with_capacity(fields.len());
    for fs in fields {
        let n = fs.len() - 1;
        inlet.push(fs.h[0] * fs.v[0] * fs.c[0]);
        outlet.push(fs.h[n] * fs.v[n] * fs.c[n]);
        water.push(fs.h[n] * fs.v[n]);
    }
    (inlet, outlet, water)
}

/// Windowed flushing effectiveness.
#[derive(Debug, Clone, PartialEq)]
pub struct FlushingReport {
    pub window: f64,
    pub times: Vec<f64>,
    pub flux_in: Vec<f64>,
    pub flux_out: Vec<f64>,
    /// `F_e` over `[t - window, t]`; `NaN` before the first full window.
    pub fe: Vec<f64>,
    /// Largest defined `F_e`.
    pub fe_max: f64,
}

impl FlushingReport {
    /// Defined `F_e` values with `t >= t0`.
    pub fn fe_after(&self, t0: f64) -> impl Iterator<Item = f64> + '_ {
        self.times
            .iter()
            .zip(&self.fe)
            .filter(move |(t, f)| **t >= t0 && f.is_finite())
            .map(|(_, f)| *f)
    }
}

fn cumulative(ts: &[f64], vs: &[f64]) -> Vec<f64> {
    let mut acc = vec![0.0; ts.len()];
    for k in 1..ts.len() {
        acc[k] = acc[k - 1] + 0.5 * (ts[k] - ts[k - 1]) * (vs[k] + vs[k - 1]);
    }
    acc
}

/// `F_e = int (flux_out - flux_in) dt / int Q_out dt` over trailing windows.
pub fn flushing_from_series(
    times: &[f64],
    flux_in: &[f64],
    flux_out: &[f64],
    q_out: &[f64],
    window: f64,
) -> Result<FlushingReport> {
    if times.len() < 2 {
        return Err(Error::Config(
            "flushing effectiveness needs at least two snapshots".into(),
        ));
    }
    let max_gap = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if !(window >= max_gap * (1.0 - 1e-9)) {
        return Err(Error::Config(format!(
            "flushing window {window} is shorter than the snapshot interval {max_gap}"
        )));
    }
    let net: Vec<f64> = flux_out.iter().zip(flux_in).map(|(o, i)| o - i).collect();
    let sed = cumulative(times, &net);
    let water = cumulative(times, q_out);
    let t0 = times[0];
    let mut fe = Vec::with_capacity(times.len());
    let mut fe_max = f64::NAN;
    for (k, &t) in times.iter().enumerate() {
        let start = t - window;
        if start < t0 - 1e-9 * window {
            fe.push(f64::NAN);
            continue;
        }
        let ds = sed[k] - interpolate(times, &sed, start);
        let dw = water[k] - interpolate(times, &water, start);
        let v = if dw > 0.0 { ds / dw } else { f64::NAN };
        if v.is_finite() && !(v <= fe_max) {
            fe_max = v;
        }
        fe.push(v);
    }
    Ok(FlushingReport {
        window,
        times: times.to_vec(),
        flux_in: flux_in.to_vec(),
        flux_out: flux_out.to_vec(),
        fe,
        fe_max,
    })
}

/// Flushing effectiveness of a simulated trace.
pub fn flushing_effectiveness(trace: &Trace, window: f64) -> Result<FlushingReport> {
    let (fin, fout, q) = sediment_flux(&trace.physical);
    flushing_from_series(&trace.times, &fin, &fout, &q, window)
}

/// Entrainment and deposition rates over a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ErosionDeposition {
    /// `E(t_k, x_j)` indexed `[k][j]`.
    pub entrainment: Vec<Vec<f64>>,
    /// `D(t_k, x_j)` indexed `[k][j]`.
    pub deposition: Vec<Vec<f64>>,
    pub entrainment_norm: Vec<f64>,
    pub deposition_norm: Vec<f64>,
}

/// Pointwise `E` and `D` of every snapshot with their `L2` norms in `x`.
pub fn erosion_deposition_fields(
    fields: &[FieldState],
    dx: f64,
    p: &ChannelParameters,
    d: &DerivedConstants,
) -> Result<ErosionDeposition> {
    let mut out = ErosionDeposition {
        entrainment: Vec::with_capacity(fields.len()),
        deposition: Vec::with_capacity(fields.len()),
        entrainment_norm: Vec::with_capacity(fields.len()),
        deposition_norm: Vec::with_capacity(fields.len()),
    };
    for fs in fields {
        let mut e = Vec::with_capacity(fs.len());
        let mut dep = Vec::with_capacity(fs.len());
        for j in 0..fs.len() {
            e.push(entrainment_rate(fs.v[j], d)?);
            dep.push(deposition_rate(fs.v[j], fs.c[j], p, d)?);
        }
        out.entrainment_norm.push(l2_norm(&e, dx));
        out.deposition_norm.push(l2_norm(&dep, dx));
        out.entrainment.push(e);
        out.deposition.push(dep);
    }
    Ok(out)
}
