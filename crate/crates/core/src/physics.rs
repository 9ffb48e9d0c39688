//! Channel parameters, sediment exchange closures and the equilibrium state.
//!
//! The plant is a one-dimensional channel of length `L` in `(H, V, Z, C)`:
//! water depth, velocity, bed-layer height and depth-averaged suspended
//! concentration. Entrainment `E(V)` and deposition `D(V, C)` couple the bed
//! to the suspension; an underflow gate closes the reach at `x = L`.

use crate::error::{Error, Result};

/// Physical and empirical constants of the channel (SI units).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParameters {
    /// Gravitational acceleration.
    pub g: f64,
    /// Friction coefficient.
    pub c_f: f64,
    /// Gate discharge coefficient.
    pub k_g: f64,
    /// Empirical entrainment scale.
    pub a_emp: f64,
    /// Rating-curve constants `C0 = c1 + c2 Q0^c3`.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Deposition-ratio constants `r1 + r2 (sqrt(C_f) V / nu_s)^r3`.
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    /// Kinematic viscosity of water.
    pub nu: f64,
    /// Bed porosity.
    pub p_prime: f64,
    /// Sediment grain diameter.
    pub d_s: f64,
    /// Submerged specific gravity.
    pub r_sub: f64,
    /// Downstream water level behind the gate.
    pub h_l: f64,
    /// Channel length.
    pub length: f64,
    /// Upstream discharge per unit width. Always reset to `H_eq V_eq`.
    pub q0: f64,
}

impl Default for ChannelParameters {
    fn default() -> Self {
        Self {
            g: 9.81,
            c_f: 0.002,
            k_g: 0.6,
            a_emp: 1.3e-7,
            c1: 0.005,
            c2: 1.3e-11,
            c3: 2.75,
            r1: 1.0,
            r2: 31.5,
            r3: -1.46,
            nu: 1e-6,
            p_prime: 0.3,
            d_s: 2.5e-4,
            r_sub: 1.65,
            h_l: 1.0,
            length: 1.0,
            q0: 6.0,
        }
    }
}

impl ChannelParameters {
    /// Rejects parameters outside their physical range.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("g", self.g),
            ("C_f", self.c_f),
            ("k_G", self.k_g),
            ("A", self.a_emp),
            ("nu", self.nu),
            ("D_s", self.d_s),
            ("R", self.r_sub),
            ("L", self.length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Model(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.p_prime) {
            return Err(Error::Model(format!(
                "porosity p_prime must lie in [0, 1), got {}",
                self.p_prime
            )));
        }
        for (name, v) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("r1", self.r1),
            ("r2", self.r2),
            ("r3", self.r3),
            ("H_L", self.h_l),
            ("Q0", self.q0),
        ] {
            if !v.is_finite() {
                return Err(Error::Model(format!("{name} is not finite")));
            }
        }
        Ok(())
    }

    /// Copy with the inflow discharge replaced.
    pub fn with_discharge(&self, q0: f64) -> Self {
        Self { q0, ..self.clone() }
    }

    /// Inflow concentration from the rating curve.
    pub fn inflow_concentration(&self) -> f64 {
        self.c1 + self.c2 * self.q0.powf(self.c3)
    }
}

/// Constants derived once from [`ChannelParameters`].
///
/// Fields are public so studies can override `a` with synthetic values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    /// Bed-load coupling coefficient of the Exner equation.
    pub a: f64,
    /// Particle Reynolds number.
    pub r_ep: f64,
    /// Stokes settling velocity.
    pub nu_s: f64,
    /// Entrainment constants `E = A1 V^5 / (1 + A2 V^5)`.
    pub a1: f64,
    pub a2: f64,
}

/// Evaluates the derived constants.
pub fn derive_constants(p: &ChannelParameters) -> Result<DerivedConstants> {
    p.validate()?;
    let a = 39.0 * p.c_f.powf(1.5) / ((1.0 - p.p_prime) * p.g * p.r_sub);
    let r_ep = p.d_s * (p.r_sub * p.g * p.d_s).sqrt() / p.nu;
    let nu_s = p.g * p.r_sub * p.d_s * p.d_s / (18.0 * p.nu);
    let a1 = p.a_emp * (p.c_f.sqrt() / nu_s * r_ep.powf(0.6)).powi(5);
    let a2 = a1 / 0.3;
    let d = DerivedConstants {
        a,
        r_ep,
        nu_s,
        a1,
        a2,
    };
    if [a, r_ep, nu_s, a1, a2]
        .iter()
        .any(|v| !(v.is_finite() && *v > 0.0))
    {
        return Err(Error::Model(format!("degenerate derived constants {d:?}")));
    }
    Ok(d)
}

/// Entrainment rate `E(V) = A1 V^5 / (1 + A2 V^5)` for `V >= 0`.
pub fn entrainment_rate(v: f64, d: &DerivedConstants) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(Error::Model(format!("entrainment undefined for V = {v}")));
    }
    let v5 = v.powi(5);
    Ok(d.a1 * v5 / (1.0 + d.a2 * v5))
}

/// Deposition ratio `r1 + r2 (sqrt(C_f) V / nu_s)^r3`, so that `D = ratio * C`.
pub fn deposition_ratio(v: f64, p: &ChannelParameters, d: &DerivedConstants) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::Model(format!("deposition undefined for V = {v}")));
    }
    Ok(p.r1 + p.r2 * (p.c_f.sqrt() * v / d.nu_s).powf(p.r3))
}

/// Deposition rate `D(V, C)`; defined for `V > 0`.
pub fn deposition_rate(v: f64, c: f64, p: &ChannelParameters, d: &DerivedConstants) -> Result<f64> {
    Ok(deposition_ratio(v, p, d)? * c)
}

/// Concentration at which entrainment balances deposition for velocity `v`.
pub fn balance_concentration(v: f64, p: &ChannelParameters, d: &DerivedConstants) -> Result<f64> {
    Ok(entrainment_rate(v, d)? / deposition_ratio(v, p, d)?)
}

/// Gate discharge `k_G sqrt(2g) (U_L - Z) sqrt(H + Z - H_L)` at the gate.
pub fn gate_discharge(p: &ChannelParameters, h: f64, z: f64, u_l: f64) -> Result<f64> {
    let head = h + z - p.h_l;
    if !(head > 0.0) {
        return Err(Error::Model(format!(
            "water level {} does not exceed the downstream level {}",
            h + z,
            p.h_l
        )));
    }
    if !(u_l >= z) {
        return Err(Error::Model(format!(
            "gate aperture {u_l} below the bed {z}"
        )));
    }
    Ok(p.k_g * (2.0 * p.g).sqrt() * (u_l - z) * head.sqrt())
}

/// Uniform operating point of the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub h: f64,
    pub v: f64,
    pub z: f64,
    pub c: f64,
    /// Discharge `H V` imposed at the inlet.
    pub q0: f64,
    /// Gate aperture holding the equilibrium.
    pub u_eq: f64,
    /// Bed slope balancing friction, `C_f V^2 / (g H)`.
    pub s_b: f64,
    pub froude: f64,
    /// `E(V) - D(V, C)`; zero only if the setpoint is in sediment balance.
    pub ed_residual: f64,
}

/// Builds the equilibrium from the setpoint `(H, V, Z, C)`.
///
/// The returned `q0` is authoritative; callers replace the configured value
/// with it.
pub fn compute_equilibrium(
    p: &ChannelParameters,
    d: &DerivedConstants,
    h: f64,
    v: f64,
    z: f64,
    c: f64,
) -> Result<Equilibrium> {
    if !(h > 0.0 && v > 0.0 && z.is_finite() && c >= 0.0) {
        return Err(Error::Model(format!(
            "invalid setpoint H={h}, V={v}, Z={z}, C={c}"
        )));
    }
    let head = h + z - p.h_l;
    if !(head > 0.0) {
        return Err(Error::Model(format!(
            "setpoint water level {} must exceed H_L = {}",
            h + z,
            p.h_l
        )));
    }
    let q0 = h * v;
    let u_eq = q0 / (p.k_g * (2.0 * p.g * head).sqrt()) + z;
    let s_b = p.c_f * v * v / (p.g * h);
    let froude = v / (p.g * h).sqrt();
    let ed_residual = entrainment_rate(v, d)? - deposition_rate(v, c, p, d)?;
    Ok(Equilibrium {
        h,
        v,
        z,
        c,
        q0,
        u_eq,
        s_b,
        froude,
        ed_residual,
    })
}

/// Physical fields sampled on the uniform grid `x_j = j L / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub h: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    pub c: Vec<f64>,
}

impl FieldState {
    /// Uniform state equal to the equilibrium on `n + 1` nodes.
    pub fn uniform(eq: &Equilibrium, nodes: usize) -> Self {
        Self {
            h: vec![eq.h; nodes],
            v: vec![eq.v; nodes],
            z: vec![eq.z; nodes],
            c: vec![eq.c; nodes],
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Physical vector `(H, V, Z, C)` at node `j`.
    pub fn at(&self, j: usize) -> [f64; 4] {
        [self.h[j], self.v[j], self.z[j], self.c[j]]
    }

    pub fn set(&mut self, j: usize, y: [f64; 4]) {
        self.h[j] = y[0];
        self.v[j] = y[1];
        self.z[j] = y[2];
        self.c[j] = y[3];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> (ChannelParameters, DerivedConstants) {
        let p = ChannelParameters::default();
        let d = derive_constants(&p).unwrap();
        (p, d)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn derived_constants_match_reference() {
        let (_, d) = reference();
        // Frozen from an independent double-precision evaluation.
        assert!(rel(d.a, 3.0786378815676844e-4) < 1e-12);
        assert!(rel(d.r_ep, 15.90327206898002) < 1e-12);
        assert!(rel(d.nu_s, 0.05620312499999999) < 1e-12);
        assert!(rel(d.a1, 1.667921046075511e-4) < 1e-10);
        assert!(rel(d.a2, 5.559736820251704e-4) < 1e-10);
    }

    #[test]
    fn settling_velocity_is_stokes_law() {
        let (p, d) = reference();
        // 9.81 * 1.65 * (2.5e-4)^2 / 18e-6, written out.
        let stokes = 9.81 * 1.65 * 6.25e-8 / 1.8e-5;
        assert!(rel(d.nu_s, stokes) < 1e-14);
        assert!(p.d_s > 0.0);
    }

    #[test]
    fn exchange_rates_at_setpoint() {
        let (p, d) = reference();
        let e = entrainment_rate(3.0, &d).unwrap();
        let dep = deposition_rate(3.0, 0.005, &p, &d).unwrap();
        assert!(rel(e, 0.035706478830324705) < 1e-10);
        assert!(rel(dep, 0.04921624994951218) < 1e-10);
        assert!(entrainment_rate(0.0, &d).unwrap() == 0.0);
        assert!(entrainment_rate(-1.0, &d).is_err());
        assert!(deposition_rate(0.0, 0.005, &p, &d).is_err());
    }

    #[test]
    fn equilibrium_of_reference_setpoint() {
        let (p, d) = reference();
        let eq = compute_equilibrium(&p, &d, 2.0, 3.0, 0.4, 0.005).unwrap();
        assert_eq!(eq.q0, 6.0);
        assert!((eq.u_eq - 2.3080356314480084).abs() < 1e-12);
        assert!((eq.u_eq - 2.308).abs() < 1e-3);
        assert!(rel(eq.froude, 0.6772854614785964) < 1e-12);
        assert!((eq.ed_residual - (0.035706478830324705 - 0.04921624994951218)).abs() < 1e-12);
        assert!(eq.s_b > 0.0);
    }

    #[test]
    fn setpoint_below_tailwater_is_rejected() {
        let (p, d) = reference();
        assert!(compute_equilibrium(&p, &d, 0.5, 3.0, 0.4, 0.005).is_err());
        assert!(compute_equilibrium(&p, &d, 2.0, 0.0, 0.4, 0.005).is_err());
    }

    #[test]
    fn gate_discharge_reproduces_inflow_at_equilibrium() {
        let (p, d) = reference();
        let eq = compute_equilibrium(&p, &d, 2.0, 3.0, 0.4, 0.005).unwrap();
        let q = gate_discharge(&p, eq.h, eq.z, eq.u_eq).unwrap();
        assert!((q - eq.q0).abs() < 1e-12);
        assert!(gate_discharge(&p, 0.5, 0.2, 1.0).is_err());
    }

    #[test]
    fn negative_viscosity_is_rejected() {
        let p = ChannelParameters {
            nu: -1.0,
            ..Default::default()
        };
        assert!(derive_constants(&p).is_err());
    }

    proptest! {
        #[test]
        fn entrainment_is_bounded_and_monotone(v in 0.0f64..50.0, dv in 1e-6f64..1.0) {
            let (_, d) = reference();
            let e0 = entrainment_rate(v, &d).unwrap();
            let e1 = entrainment_rate(v + dv, &d).unwrap();
            prop_assert!(e0 >= 0.0);
            prop_assert!(e0 < 0.3);
            prop_assert!(e1 >= e0);
        }

        #[test]
        fn deposition_is_linear_in_concentration(v in 0.1f64..20.0, c in 0.0f64..0.1, s in 0.0f64..10.0) {
            let (p, d) = reference();
            let base = deposition_rate(v, c, &p, &d).unwrap();
            let scaled = deposition_rate(v, s * c, &p, &d).unwrap();
            prop_assert!((scaled - s * base).abs() <= 1e-12 * (1.0 + scaled.abs()));
            prop_assert!(base >= 0.0);
        }

        #[test]
        fn balance_concentration_zeroes_exchange(v in 0.1f64..10.0) {
            let (p, d) = reference();
            let c = balance_concentration(v, &p, &d).unwrap();
            let r = entrainment_rate(v, &d).unwrap() - deposition_rate(v, c, &p, &d).unwrap();
            prop_assert!(r.abs() < 1e-15);
        }

        #[test]
        fn discharge_is_always_depth_times_velocity(h in 1.2f64..5.0, v in 0.1f64..6.0, z in 0.0f64..1.0) {
            let (p, d) = reference();
            let eq = compute_equilibrium(&p, &d, h, v, z, 0.005).unwrap();
            prop_assert_eq!(eq.q0, h * v);
            let q = gate_discharge(&p, h, z, eq.u_eq).unwrap();
            prop_assert!((q - eq.q0).abs() < 1e-10 * eq.q0);
        }
    }
}
