//! Time integration of the closed and open loop.
//!
//! The default plant is the linear canonical system advanced by first-order
//! upwinding with explicit sources. The nonlinear plant integrates the
//! quasilinear channel equations with local Lax-Friedrichs dissipation and is
//! used to validate the linear design. In both cases the controller and the
//! observer run on the canonical grid.

use nalgebra::Vector4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::control::{
    gate_aperture, CanonicalState, ControlLaw, Observer, ObserverState, Transport,
};
use crate::error::{Error, Result};
use crate::linearize::CanonicalSystem;
use crate::physics::{
    deposition_rate, entrainment_rate, gate_discharge, ChannelParameters, DerivedConstants,
    Equilibrium, FieldState,
};
use crate::synthesis::Synthesis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoopMode {
    #[default]
    ClosedLoop,
    OpenLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlantModel {
    #[default]
    LinearCanonical,
    Nonlinear,
}

/// Vertical offset of the initial bed bump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BedOffset {
    /// Bump minus its value at the channel ends, so `Z(0, 0) = Z(0, L) = Z_eq`.
    #[default]
    Endpoint,
    /// Offset `exp(L^2 / 0.4)`, which lowers the whole bed by several metres.
    Printed,
}

/// Run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of grid cells `N`; the grid has `N + 1` nodes.
    pub cells: usize,
    pub cfl: f64,
    pub t_final: f64,
    pub mode: LoopMode,
    pub plant: PlantModel,
    /// Steps between snapshots; 0 picks about 1000 snapshots.
    pub record_every: usize,
    /// Closed loop uses the observer estimate; otherwise the plant state.
    pub observer_enabled: bool,
    pub bed_offset: BedOffset,
    /// Scale factor of the initial perturbation.
    pub ic_amplitude: f64,
    /// Upper limit of the gate opening.
    pub gate_max: f64,
    /// Standard deviation of additive measurement noise.
    pub sensor_noise: f64,
    pub noise_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cells: 256,
            cfl: 0.9,
            t_final: 12.0,
            mode: LoopMode::ClosedLoop,
            plant: PlantModel::LinearCanonical,
            record_every: 0,
            observer_enabled: true,
            bed_offset: BedOffset::Endpoint,
            ic_amplitude: 1.0,
            gate_max: f64::INFINITY,
            sensor_noise: 0.0,
            noise_seed: 0,
        }
    }
}

/// Per-step checks accumulated over a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    /// `max |chi(L)| / ||state||` of the state fed to the control law.
    pub max_outlet_chi_ratio: f64,
    /// `max_i |u^_i(0) - u_i(0)|` over all steps.
    pub max_inflow_error: f64,
    pub saturated_steps: usize,
}

/// Snapshots of a run.
#[derive(Debug, Clone)]
pub struct Trace {
    pub x: Vec<f64>,
    pub times: Vec<f64>,
    /// Absolute physical fields.
    pub physical: Vec<FieldState>,
    pub canonical: Vec<CanonicalState>,
    /// Observer estimates; empty if no observer ran.
    pub observer: Vec<ObserverState>,
    /// Canonical input `U`.
    pub input: Vec<f64>,
    /// Gate opening `U_L`.
    pub aperture: Vec<f64>,
    /// Measured `w(t, 0)`.
    pub measurement: Vec<f64>,
    pub saturated: Vec<bool>,
    pub steps: usize,
    pub diagnostics: StepDiagnostics,
}

impl Trace {
    pub fn dx(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Initial physical fields: a Gaussian bed bump at mid-channel, a sine
/// perturbation of the free surface and a quarter-sine of concentration,
/// all multiplied by `amplitude`.
pub fn initial_conditions(
    eq: &Equilibrium,
    length: f64,
    cells: usize,
    offset: BedOffset,
    amplitude: f64,
) -> Result<FieldState> {
    let pi = std::f64::consts::PI;
    let shift = match offset {
        BedOffset::Endpoint => (-length * length / 0.4).exp(),
        BedOffset::Printed => (length * length / 0.4).exp(),
    };
    let mut fs = FieldState::uniform(eq, cells + 1);
    for j in 0..=cells {
        let x = length * j as f64 / cells as f64;
        let bump = (-(x - length / 2.0).powi(2) / 0.1).exp();
        let z = eq.z + amplitude * 0.2 * (bump - shift);
        let h = amplitude * 0.1 * (pi * x / length).sin() + eq.h + eq.z - z;
        if !(h > 0.0) {
            return Err(Error::Model(format!(
                "initial depth {h} at x = {x} is not positive"
            )));
        }
        let c = amplitude * 0.003 * (pi * x / (2.0 * length)).sin() + eq.c;
        fs.set(j, [h, eq.q0 / h, z, c]);
    }
    Ok(fs)
}

/// Canonical state of an absolute physical field.
pub fn from_physical(cs: &CanonicalSystem, eq: &Equilibrium, fs: &FieldState) -> CanonicalState {
    let n = fs.len();
    let mut s = CanonicalState::zeros(n);
    let dx = cs.length / (n - 1) as f64;
    for j in 0..n {
        let y = fs.at(j);
        let dev = Vector4::new(y[0] - eq.h, y[1] - eq.v, y[2] - eq.z, y[3] - eq.c);
        let u0 = cs.modal_from_physical * dev;
        for i in 0..3 {
            s.u[i][j] = u0[i];
        }
        s.w[j] = u0[3] * cs.scaling(j as f64 * dx);
    }
    s
}

/// Physical deviation vector at node `j` of a canonical state.
fn deviation_at(cs: &CanonicalSystem, s: &CanonicalState, j: usize, x: f64) -> Vector4<f64> {
    let u0 = Vector4::new(s.u[0][j], s.u[1][j], s.u[2][j], s.w[j] / cs.scaling(x));
    cs.physical_from_modal * u0
}

/// Absolute physical field of a canonical state.
pub fn to_physical(cs: &CanonicalSystem, eq: &Equilibrium, s: &CanonicalState) -> FieldState {
    let n = s.nodes();
    let dx = cs.length / (n - 1) as f64;
    let mut fs = FieldState::uniform(eq, n);
    for j in 0..n {
        let y = deviation_at(cs, s, j, j as f64 * dx);
        fs.set(j, [eq.h + y[0], eq.v + y[1], eq.z + y[2], eq.c + y[3]]);
    }
    fs
}

/// `w(t, 0)` of a physical state, via the left-eigenvector row.
fn measure_physical(cs: &CanonicalSystem, eq: &Equilibrium, fs: &FieldState) -> f64 {
    let y = fs.at(0);
    let dev = Vector4::new(y[0] - eq.h, y[1] - eq.v, y[2] - eq.z, y[3] - eq.c);
    (cs.modal_from_physical * dev)[3]
}

/// Runs a simulation with the offline stages in `syn`.
pub fn run(cfg: &SimConfig, syn: &Synthesis) -> Result<Trace> {
    if !(cfg.cfl > 0.0 && cfg.cfl <= 1.0) {
        return Err(Error::Runtime(format!(
            "Courant number {} outside (0, 1]",
            cfg.cfl
        )));
    }
    if !(cfg.t_final > 0.0) {
        return Err(Error::Config(format!(
            "t_final must be positive, got {}",
            cfg.t_final
        )));
    }
    match cfg.plant {
        PlantModel::LinearCanonical => run_linear(cfg, syn),
        PlantModel::Nonlinear => run_nonlinear(cfg, syn),
    }
}

/// Runs several configurations concurrently.
pub fn run_many(cfgs: &[SimConfig], syn: &Synthesis) -> Vec<Result<Trace>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = cfgs
            .iter()
            .map(|c| scope.spawn(move || run(c, syn)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Runtime("simulation thread panicked".into())))
            })
            .collect()
    })
}

/// Shared control and recording logic for both plants.
struct Loop<'a> {
    cfg: &'a SimConfig,
    syn: &'a Synthesis,
    tr: Transport,
    law: ControlLaw,
    obs: Option<Observer>,
    noise: Option<(ChaCha8Rng, Normal<f64>)>,
    trace: Trace,
    warned: bool,
}

impl<'a> Loop<'a> {
    fn new(cfg: &'a SimConfig, syn: &'a Synthesis) -> Result<Self> {
        let cs = &syn.canonical;
        let nodes = cfg.cells + 1;
        let tr = Transport::new(cs, cfg.cells)?;
        let law = ControlLaw::new(cs, &syn.controller, nodes)?;
        let obs = if cfg.observer_enabled {
            Some(Observer::new(cs, &syn.observer, nodes)?)
        } else {
            None
        };
        let noise = if cfg.sensor_noise > 0.0 {
            let normal = Normal::new(0.0, cfg.sensor_noise)
                .map_err(|e| Error::Config(format!("sensor_noise: {e}")))?;
            Some((ChaCha8Rng::seed_from_u64(cfg.noise_seed), normal))
        } else {
            None
        };
        let x = (0..nodes).map(|j| j as f64 * tr.dx).collect();
        Ok(Self {
            cfg,
            syn,
            tr,
            law,
            obs,
            noise,
            trace: Trace {
                x,
                times: Vec::new(),
                physical: Vec::new(),
                canonical: Vec::new(),
                observer: Vec::new(),
                input: Vec::new(),
                aperture: Vec::new(),
                measurement: Vec::new(),
                saturated: Vec::new(),
                steps: 0,
                diagnostics: StepDiagnostics::default(),
            },
            warned: false,
        })
    }

    fn measure(&mut self, exact: f64) -> f64 {
        match &mut self.noise {
            Some((rng, normal)) => exact + normal.sample(rng),
            None => exact,
        }
    }

    /// Feedback from the observer or the plant state; records the outlet
    /// check of the discrete target transform.
    fn feedback(&mut self, plant: &CanonicalState, estimate: Option<&ObserverState>) -> f64 {
        if self.cfg.mode == LoopMode::OpenLoop {
            return 0.0;
        }
        let s = estimate.unwrap_or(plant);
        self.law.consistent_feedback(s)
    }

    /// Gate command for input `u` given the bed height at the gate.
    fn command(&mut self, u: f64, z_gate: f64) -> (f64, f64, bool) {
        let cmd = gate_aperture(
            &self.syn.canonical,
            &self.syn.eq,
            u,
            z_gate,
            self.cfg.gate_max,
        );
        if cmd.saturated {
            self.trace.diagnostics.saturated_steps += 1;
            if !self.warned {
                log::warn!(
                    "gate command {} clamped to {}",
                    self.syn.eq.u_eq + u / self.syn.canonical.pi_u,
                    cmd.u_l
                );
                self.warned = true;
            }
        }
        (cmd.u, cmd.u_l, cmd.saturated)
    }

    /// Checks `chi(L) = 0` on the state whose `w(L)` was just set.
    fn check_outlet(&mut self, s: &CanonicalState, saturated: bool) {
        if self.cfg.mode == LoopMode::OpenLoop || saturated {
            return;
        }
        // state_feedback = int(k u + k4 w) - reflection.
        let chi_l = s.w[s.nodes() - 1] - self.law.state_feedback(s) - self.law.reflection(s);
        let norm = s.norm(self.tr.dx).max(f64::MIN_POSITIVE);
        let d = &mut self.trace.diagnostics;
        d.max_outlet_chi_ratio = d.max_outlet_chi_ratio.max(chi_l.abs() / norm);
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        t: f64,
        physical: FieldState,
        plant: &CanonicalState,
        estimate: Option<&ObserverState>,
        u: f64,
        u_l: f64,
        y: f64,
        saturated: bool,
    ) {
        let tr = &mut self.trace;
        tr.times.push(t);
        tr.physical.push(physical);
        tr.canonical.push(plant.clone());
        if let Some(o) = estimate {
            tr.observer.push(o.clone());
        }
        tr.input.push(u);
        tr.aperture.push(u_l);
        tr.measurement.push(y);
        tr.saturated.push(saturated);
    }

    fn record_every(&self, steps: usize) -> usize {
        if self.cfg.record_every > 0 {
            self.cfg.record_every
        } else {
            steps.div_ceil(1000).max(1)
        }
    }
}

fn gate_bed(cs: &CanonicalSystem, eq: &Equilibrium, s: &CanonicalState) -> f64 {
    let n = s.nodes() - 1;
    eq.z + deviation_at(cs, s, n, cs.length)[2]
}

fn run_linear(cfg: &SimConfig, syn: &Synthesis) -> Result<Trace> {
    let cs = &syn.canonical;
    let eq = &syn.eq;
    let mut lp = Loop::new(cfg, syn)?;
    let fs0 = initial_conditions(eq, cs.length, cfg.cells, cfg.bed_offset, cfg.ic_amplitude)?;
    let mut s = from_physical(cs, eq, &fs0);
    let mut est = lp.obs.as_ref().map(|_| CanonicalState::zeros(s.nodes()));

    let dt_max = lp.tr.stable_dt(cfg.cfl);
    let steps = (cfg.t_final / dt_max).ceil() as usize;
    let dt = cfg.t_final / steps as f64;
    let every = lp.record_every(steps);

    let mut y = lp.measure(s.w[0]);
    let u0 = lp.feedback(&s, est.as_ref());
    let (u0, ul0, sat0) = lp.command(u0, gate_bed(cs, eq, &s));
    lp.record(0.0, fs0, &s, est.as_ref(), u0, ul0, y, sat0);

    for step in 1..=steps {
        let mut next = lp.tr.advance(&s, dt, None);
        let w0 = next.w[0];
        lp.tr.apply_inflow(&mut next, w0);
        let y_next = lp.measure(next.w[0]);
        let next_est = match (&est, &lp.obs) {
            (Some(o), Some(obs)) => {
                let mut e = lp.tr.advance(o, dt, Some((&obs.gains, y - o.w[0])));
                lp.tr.apply_inflow(&mut e, y_next);
                Some(e)
            }
            _ => None,
        };
        let u = lp.feedback(&next, next_est.as_ref());
        let (u, u_l, sat) = lp.command(u, gate_bed(cs, eq, &next));
        lp.tr.apply_outflow(&mut next, u);
        let next_est = next_est.map(|mut e| {
            lp.tr.apply_outflow(&mut e, u);
            e
        });
        if cfg.mode == LoopMode::ClosedLoop {
            let fed = next_est.as_ref().unwrap_or(&next).clone();
            lp.check_outlet(&fed, sat);
        }
        if let Some(e) = &next_est {
            let d = &mut lp.trace.diagnostics;
            for i in 0..3 {
                d.max_inflow_error = d.max_inflow_error.max((e.u[i][0] - next.u[i][0]).abs());
            }
        }
        if !next.is_finite() || next_est.as_ref().is_some_and(|e| !e.is_finite()) {
            return Err(Error::Runtime(format!("non-finite state at step {step}")));
        }
        s = next;
        est = next_est;
        y = y_next;
        if step % every == 0 || step == steps {
            let t = step as f64 * dt;
            let fs = to_physical(cs, eq, &s);
            lp.record(t, fs, &s, est.as_ref(), u, u_l, y, sat);
        }
    }
    lp.trace.steps = steps;
    Ok(lp.trace)
}

/// Quasilinear channel operator: `A(Y) Y_x` row by row and the sources.
fn local_speed(p: &ChannelParameters, y: [f64; 4]) -> f64 {
    y[1].abs() + (p.g * y[0]).sqrt()
}

fn sources(
    p: &ChannelParameters,
    d: &DerivedConstants,
    eq: &Equilibrium,
    y: [f64; 4],
) -> Result<[f64; 4]> {
    let e = entrainment_rate(y[1], d)?;
    let dep = deposition_rate(y[1], y[3], p, d)?;
    Ok([
        0.0,
        p.g * eq.s_b - p.c_f * y[1] * y[1] / y[0],
        d.nu_s / (1.0 - p.p_prime) * (dep - e),
        d.nu_s / y[0] * (e - dep),
    ])
}

/// One explicit step of the nonlinear plant with gate opening `u_l`.
fn nonlinear_step(
    p: &ChannelParameters,
    d: &DerivedConstants,
    eq: &Equilibrium,
    a_coef: f64,
    fs: &FieldState,
    dt: f64,
    dx: f64,
) -> Result<FieldState> {
    let n = fs.len();
    let mut out = fs.clone();
    let speeds: Vec<f64> = (0..n).map(|j| local_speed(p, fs.at(j))).collect();
    let r = dt / dx;
    for j in 1..n - 1 {
        let (ym, y, yp) = (fs.at(j - 1), fs.at(j), fs.at(j + 1));
        let dy: [f64; 4] = std::array::from_fn(|k| 0.5 * (yp[k] - ym[k]));
        let adv = [
            y[1] * dy[0] + y[0] * dy[1],
            p.g * dy[0] + y[1] * dy[1] + p.g * dy[2],
            a_coef * y[1] * y[1] * dy[1],
            y[1] * dy[3],
        ];
        let ar = speeds[j].max(speeds[j + 1]);
        let al = speeds[j].max(speeds[j - 1]);
        let src = sources(p, d, eq, y)?;
        let next: [f64; 4] = std::array::from_fn(|k| {
            let diss = 0.5 * (ar * (yp[k] - y[k]) - al * (y[k] - ym[k]));
            y[k] - r * adv[k] + r * diss + dt * src[k]
        });
        if !(next[0] > 0.0) || next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Runtime(format!(
                "channel dried or blew up at node {j}"
            )));
        }
        out.set(j, next);
    }
    // Inlet: discharge, bed and concentration prescribed, depth extrapolated.
    let h0 = out.h[1];
    out.set(0, [h0, eq.q0 / h0, eq.z, eq.c]);
    Ok(out)
}

/// Applies the gate relation at the outlet for opening `u_l`.
fn apply_gate(p: &ChannelParameters, fs: &mut FieldState, u_l: f64) -> Result<()> {
    let n = fs.len() - 1;
    let (h, z, c) = (fs.h[n - 1], fs.z[n - 1], fs.c[n - 1]);
    let q = gate_discharge(p, h, z, u_l).map_err(|e| Error::Runtime(e.to_string()))?;
    fs.set(n, [h, q / h, z, c]);
    Ok(())
}

fn run_nonlinear(cfg: &SimConfig, syn: &Synthesis) -> Result<Trace> {
    let cs = &syn.canonical;
    let eq = &syn.eq;
    let p = &syn.params;
    let a_coef = syn.derived.a;
    let mut lp = Loop::new(cfg, syn)?;
    let dx = lp.tr.dx;
    let mut fs = initial_conditions(eq, cs.length, cfg.cells, cfg.bed_offset, cfg.ic_amplitude)?;
    let mut est = lp.obs.as_ref().map(|_| CanonicalState::zeros(fs.len()));

    let dt_lin = lp.tr.stable_dt(cfg.cfl);
    let every_guess = lp.record_every((cfg.t_final / dt_lin).ceil() as usize);

    let mut s = from_physical(cs, eq, &fs);
    let mut y = lp.measure(measure_physical(cs, eq, &fs));
    let u0 = lp.feedback(&s, est.as_ref());
    let (u0, ul0, sat0) = lp.command(u0, fs.z[fs.len() - 1]);
    lp.record(0.0, fs.clone(), &s, est.as_ref(), u0, ul0, y, sat0);

    let mut t = 0.0;
    let mut step = 0usize;
    while t < cfg.t_final - 1e-12 {
        let speed = (0..fs.len())
            .map(|j| local_speed(p, fs.at(j)))
            .fold(0.0, f64::max);
        let dt = (cfg.cfl * dx / speed).min(dt_lin).min(cfg.t_final - t);
        let mut next = nonlinear_step(p, &syn.derived, eq, a_coef, &fs, dt, dx)?;
        let y_next = lp.measure(measure_physical(cs, eq, &next));
        let next_est = match (&est, &lp.obs) {
            (Some(o), Some(obs)) => {
                let mut e = lp.tr.advance(o, dt, Some((&obs.gains, y - o.w[0])));
                lp.tr.apply_inflow(&mut e, y_next);
                Some(e)
            }
            _ => None,
        };
        // The gate row does not involve w(L), so the state map is valid
        // before the outlet node is updated.
        let provisional = from_physical(cs, eq, &next);
        let u = lp.feedback(&provisional, next_est.as_ref());
        let (u, u_l, sat) = lp.command(u, next.z[next.len() - 2]);
        apply_gate(p, &mut next, u_l)?;
        let next_est = next_est.map(|mut e| {
            lp.tr.apply_outflow(&mut e, u);
            e
        });
        step += 1;
        t += dt;
        fs = next;
        est = next_est;
        y = y_next;
        if step.is_multiple_of(every_guess) || t >= cfg.t_final - 1e-12 {
            s = from_physical(cs, eq, &fs);
            lp.record(t, fs.clone(), &s, est.as_ref(), u, u_l, y, sat);
        }
    }
    lp.trace.steps = step;
    Ok(lp.trace)
}
