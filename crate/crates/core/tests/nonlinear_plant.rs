//! The nonlinear channel plant against the linear design model.

use sedctl::kernels::KernelOptions;
use sedctl::linearize::{GateModel, SourceModel};
use sedctl::physics::ChannelParameters;
use sedctl::sim::{run, LoopMode, PlantModel, SimConfig};
use sedctl::synthesis::{ConcentrationMode, Setpoint, Synthesis, SynthesisOptions};

/// Linearization consistent with the nonlinear plant: exact Jacobians and a
/// setpoint in sediment balance.
fn consistent_synthesis() -> Synthesis {
    let opts = SynthesisOptions {
        source_model: SourceModel::Jacobian,
        gate_model: GateModel::Jacobian,
        concentration: ConcentrationMode::Balance,
        kernels: KernelOptions {
            m: 65,
            ..Default::default()
        },
        ..Default::default()
    };
    Synthesis::build(&ChannelParameters::default(), &Setpoint::default(), &opts).unwrap()
}

fn nonlinear(cells: usize, amplitude: f64, t_final: f64) -> SimConfig {
    SimConfig {
        cells,
        t_final,
        mode: LoopMode::OpenLoop,
        plant: PlantModel::Nonlinear,
        ic_amplitude: amplitude,
        observer_enabled: false,
        ..Default::default()
    }
}

#[test]
fn balanced_equilibrium_is_steady() {
    let syn = consistent_synthesis();
    let trace = run(&nonlinear(64, 0.0, 2.0), &syn).unwrap();
    let eq = &syn.eq;
    let last = trace.physical.last().unwrap();
    for j in 0..last.len() {
        let y = last.at(j);
        assert!((y[0] - eq.h).abs() < 1e-12, "H at {j}: {}", y[0]);
        assert!((y[1] - eq.v).abs() < 1e-12, "V at {j}: {}", y[1]);
        assert!((y[2] - eq.z).abs() < 1e-12, "Z at {j}: {}", y[2]);
        assert!((y[3] - eq.c).abs() < 1e-14, "C at {j}: {}", y[3]);
    }
}

#[test]
fn small_perturbations_scale_linearly() {
    // Y(eps) / eps converges to the linear response as eps -> 0, so the
    // normalized responses at eps and eps/2 differ by O(eps).
    let syn = consistent_synthesis();
    let response = |eps: f64| {
        let tr = run(&nonlinear(128, eps, 0.5), &syn).unwrap();
        let s = tr.canonical.last().unwrap().clone();
        (s, tr.dx())
    };
    let (a, dx) = response(0.2);
    let (b, _) = response(0.1);
    let (c, _) = response(0.05);
    let scaled_diff = |x: &sedctl::control::CanonicalState,
                       ex: f64,
                       y: &sedctl::control::CanonicalState,
                       ey: f64| {
        let mut d = x.clone();
        for i in 0..3 {
            for j in 0..d.nodes() {
                d.u[i][j] = x.u[i][j] / ex - y.u[i][j] / ey;
            }
        }
        for j in 0..d.nodes() {
            d.w[j] = x.w[j] / ex - y.w[j] / ey;
        }
        d.norm(dx)
    };
    let scale = c.norm(dx) / 0.05;
    let d1 = scaled_diff(&a, 0.2, &b, 0.1) / scale;
    let d2 = scaled_diff(&b, 0.1, &c, 0.05) / scale;
    assert!(d1 < 0.05, "nonlinear share {d1}");
    assert!(d2 < 0.6 * d1, "no O(eps) decay: {d1} -> {d2}");
}

#[test]
fn linear_model_mismatch_shrinks_with_resolution() {
    // Both schemes are first order but dissipate differently; the gap between
    // the linear model and the normalized nonlinear response is a
    // discretization error that falls under grid refinement.
    let syn = consistent_synthesis();
    let eps = 0.05;
    let mismatch = |cells: usize| {
        let lin_cfg = SimConfig {
            plant: PlantModel::LinearCanonical,
            ic_amplitude: 1.0,
            ..nonlinear(cells, eps, 0.5)
        };
        let lin = run(&lin_cfg, &syn).unwrap();
        let nl = run(&nonlinear(cells, eps, 0.5), &syn).unwrap();
        let (l, n) = (lin.canonical.last().unwrap(), nl.canonical.last().unwrap());
        let mut d = l.clone();
        for i in 0..3 {
            for j in 0..d.nodes() {
                d.u[i][j] = n.u[i][j] / eps - l.u[i][j];
            }
        }
        for j in 0..d.nodes() {
            d.w[j] = n.w[j] / eps - l.w[j];
        }
        d.norm(lin.dx()) / l.norm(lin.dx())
    };
    let coarse = mismatch(128);
    let fine = mismatch(256);
    assert!(fine < 0.75 * coarse, "{coarse} -> {fine}");
    assert!(fine < 0.5, "{fine}");
}

#[test]
fn nonlinear_closed_loop_keeps_gate_physical() {
    let syn = consistent_synthesis();
    let cfg = SimConfig {
        cells: 64,
        t_final: 2.0,
        plant: PlantModel::Nonlinear,
        ..Default::default()
    };
    let trace = run(&cfg, &syn).unwrap();
    for (k, fs) in trace.physical.iter().enumerate() {
        let n = fs.len() - 1;
        assert!(trace.aperture[k] >= fs.z[n] - 1e-12);
        assert!(fs.h.iter().all(|h| *h > 0.0));
    }
}
