//! Offline stages bundled: equilibrium, linearization, canonical form and
//! both kernel families.

use crate::error::{Error, Result};
use crate::kernels::{
    solve_controller_kernels, solve_observer_kernels, KernelOptions, KernelSet, ObserverKernelSet,
};
use crate::linearize::{
    build_canonical, classify_regime, eigen_structure, linearize, CanonicalSystem, EigenMode,
    EigenStructure, FlowRegime, GateModel, LinearSystem, SourceModel,
};
use crate::physics::{
    balance_concentration, compute_equilibrium, derive_constants, ChannelParameters,
    DerivedConstants, Equilibrium,
};

/// Target operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setpoint {
    pub h: f64,
    pub v: f64,
    pub z: f64,
    pub c: f64,
}

impl Default for Setpoint {
    fn default() -> Self {
        Self {
            h: 2.0,
            v: 3.0,
            z: 0.4,
            c: 0.005,
        }
    }
}

/// How the equilibrium concentration is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConcentrationMode {
    /// Use the configured value; any exchange imbalance is only reported.
    #[default]
    Given,
    /// Solve `E(V_eq) = D(V_eq, C_eq)` for `C_eq`.
    Balance,
}

/// Modelling choices for the offline synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SynthesisOptions {
    pub eigen_mode: EigenMode,
    pub source_model: SourceModel,
    pub gate_model: GateModel,
    pub concentration: ConcentrationMode,
    pub kernels: KernelOptions,
}

/// Everything the simulator needs that does not depend on time.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub params: ChannelParameters,
    pub derived: DerivedConstants,
    pub eq: Equilibrium,
    pub linear: LinearSystem,
    pub eigen: EigenStructure,
    pub regime: FlowRegime,
    pub canonical: CanonicalSystem,
    pub controller: KernelSet,
    pub observer: ObserverKernelSet,
}

/// Equilibrium with `q0` propagated back into the parameters.
pub fn resolve_equilibrium(
    params: &ChannelParameters,
    setpoint: &Setpoint,
    mode: ConcentrationMode,
) -> Result<(ChannelParameters, DerivedConstants, Equilibrium)> {
    let derived = derive_constants(params)?;
    let c = match mode {
        ConcentrationMode::Given => setpoint.c,
        ConcentrationMode::Balance => balance_concentration(setpoint.v, params, &derived)?,
    };
    let eq = compute_equilibrium(params, &derived, setpoint.h, setpoint.v, setpoint.z, c)?;
    if (params.q0 - eq.q0).abs() > 1e-12 * eq.q0 {
        log::warn!(
            "configured Q0 = {} replaced by H_eq V_eq = {}",
            params.q0,
            eq.q0
        );
    }
    Ok((params.with_discharge(eq.q0), derived, eq))
}

/// Linear model and canonical form, without kernels.
pub fn canonical_stage(
    params: &ChannelParameters,
    derived: &DerivedConstants,
    eq: &Equilibrium,
    opts: &SynthesisOptions,
) -> Result<(LinearSystem, EigenStructure, FlowRegime, CanonicalSystem)> {
    let ls = linearize(params, derived, eq, opts.source_model, opts.gate_model)?;
    let es = eigen_structure(params, derived, eq, opts.eigen_mode)?;
    let regime = classify_regime(eq, &es)?;
    let cs = build_canonical(&ls, &es, regime, params.length)?;
    Ok((ls, es, regime, cs))
}

impl Synthesis {
    /// Runs every offline stage. The two kernel families are independent and
    /// are solved on separate threads.
    pub fn build(
        params: &ChannelParameters,
        setpoint: &Setpoint,
        opts: &SynthesisOptions,
    ) -> Result<Self> {
        let (params, derived, eq) = resolve_equilibrium(params, setpoint, opts.concentration)?;
        let (linear, eigen, regime, canonical) = canonical_stage(&params, &derived, &eq, opts)?;
        let (controller, observer) = std::thread::scope(|scope| {
            let ctrl = scope.spawn(|| solve_controller_kernels(&canonical, &opts.kernels));
            let obs = solve_observer_kernels(&canonical, &opts.kernels);
            let ctrl = ctrl
                .join()
                .map_err(|_| Error::Runtime("controller kernel thread panicked".into()));
            (ctrl, obs)
        });
        Ok(Self {
            params,
            derived,
            eq,
            linear,
            eigen,
            regime,
            canonical,
            controller: controller??,
            observer: observer?,
        })
    }
}

/// Canonical system of the reference channel with default modelling choices.
pub fn reference_canonical() -> CanonicalSystem {
    let params = ChannelParameters::default();
    let (params, derived, eq) =
        resolve_equilibrium(&params, &Setpoint::default(), ConcentrationMode::Given)
            .expect("reference equilibrium");
    canonical_stage(&params, &derived, &eq, &SynthesisOptions::default())
        .expect("reference canonical form")
        .3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_build_succeeds() {
        let opts = SynthesisOptions {
            kernels: KernelOptions {
                m: 33,
                ..Default::default()
            },
            ..Default::default()
        };
        let syn =
            Synthesis::build(&ChannelParameters::default(), &Setpoint::default(), &opts).unwrap();
        assert_eq!(syn.params.q0, 6.0);
        assert_eq!(syn.regime, FlowRegime::Subcritical);
        assert!(syn.controller.boundary_error < 1e-10);
        assert!(syn.observer.boundary_error < 1e-10);
    }

    #[test]
    fn balance_mode_zeroes_exchange() {
        let (_, _, eq) = resolve_equilibrium(
            &ChannelParameters::default(),
            &Setpoint::default(),
            ConcentrationMode::Balance,
        )
        .unwrap();
        assert!(eq.ed_residual.abs() < 1e-15);
        assert!(eq.c < 0.005);
    }

    #[test]
    fn discharge_is_overwritten() {
        let p = ChannelParameters {
            q0: 123.0,
            ..Default::default()
        };
        let (p, _, eq) =
            resolve_equilibrium(&p, &Setpoint::default(), ConcentrationMode::Given).unwrap();
        assert_eq!(p.q0, eq.q0);
        assert_eq!(p.q0, 6.0);
    }
}
