//! Linearization about the equilibrium, characteristic decomposition and the
//! canonical transport form used by the controller.
//!
//! The deviation `Y = (H, V, Z, C) - eq` obeys `Y_t + A Y_x = B Y` with
//! boundary rows `Pi Y(0) = 0` and `Pi_L Y(L) + pi_L dU_L = 0`. Diagonalizing
//! `A` and rescaling the single leftward mode gives
//!
//! ```text
//! u_i,t + gamma_i u_i,x = sum_j sigma_ij u_j + alpha_i(x) w      (i = 1..3)
//! w_t   - mu w_x        = sum_j theta_j(x) u_j
//! u_i(t, 0) = delta_i w(t, 0),   w(t, L) = rho_1 u_1 + rho_2 u_2 + U
//! ```

use nalgebra::{Matrix3, Matrix3x4, Matrix4, RowVector4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::physics::{
    deposition_ratio, entrainment_rate, ChannelParameters, DerivedConstants, Equilibrium,
};

/// Which closed form to use for the linearized sediment and friction sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceModel {
    /// Closed-form source coefficients of the reference design.
    #[default]
    Reference,
    /// Exact Jacobian of the nonlinear source terms.
    Jacobian,
}

/// Which closed form to use for the gate row `Pi_L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateModel {
    /// Closed-form gate coefficients of the reference design.
    #[default]
    Reference,
    Jacobian,
}

/// Linearized plant matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: Matrix4<f64>,
    pub b: Matrix4<f64>,
    /// Upstream boundary rows: discharge, bed height and rating curve.
    pub pi: Matrix3x4<f64>,
    /// Downstream gate row acting on the state.
    pub pi_l: RowVector4<f64>,
    /// Gate row coefficient of the aperture deviation.
    pub pi_l_input: f64,
}

/// Linearizes the channel about `eq`.
pub fn linearize(
    p: &ChannelParameters,
    d: &DerivedConstants,
    eq: &Equilibrium,
    source: SourceModel,
    gate: GateModel,
) -> Result<LinearSystem> {
    let (h, v, z, c) = (eq.h, eq.v, eq.z, eq.c);
    let g = p.g;
    let head = h + z - p.h_l;
    if !(head > 0.0) {
        return Err(Error::Model("non-positive head over the gate".into()));
    }

    #[rustfmt::skip]
    let a = Matrix4::new(
        v,   h,              0.0, 0.0,
        g,   v,              g,   0.0,
        0.0, d.a * v * v,    0.0, 0.0,
        0.0, 0.0,            0.0, v,
    );

    let porous = 1.0 - p.p_prime;
    let sq = p.c_f.sqrt();
    let denom = (1.0 + d.a2 * v.powi(5)).powi(2);
    let de_dv = 5.0 * d.a1 * v.powi(4) / denom;
    let ratio = deposition_ratio(v, p, d)?;
    // d/dV of the deposition ratio per unit concentration.
    let dratio = p.r2 * p.r3 * p.c_f.powf(p.r3 / 2.0) * (v / d.nu_s).powf(p.r3 - 1.0) / d.nu_s;
    let (f_vh, f_vv, f_zv, f_zc, f_ch, f_cv, f_cc) = match source {
        SourceModel::Reference => {
            let k_r = p.r2 * p.r3 * p.c_f.powf(p.r3 / 2.0) * (v / d.nu_s).powf(p.r3 - 1.0);
            (
                p.c_f * v * v / h,
                -2.0 * p.c_f * v / h,
                k_r / porous - 5.0 * d.nu_s * d.a1 * v.powi(4) / (porous * denom),
                d.nu_s / porous * (p.r1 + p.r2 * (sq / d.nu_s).powf(p.r3)),
                d.nu_s / (h * h) * (c * ratio - de_dv),
                de_dv / h - k_r / h,
                -d.nu_s / h * ratio,
            )
        }
        SourceModel::Jacobian => {
            let e = entrainment_rate(v, d)?;
            (
                p.c_f * v * v / (h * h),
                -2.0 * p.c_f * v / h,
                d.nu_s / porous * (dratio * c - de_dv),
                d.nu_s / porous * ratio,
                -d.nu_s / (h * h) * (e - ratio * c),
                d.nu_s / h * (de_dv - dratio * c),
                -d.nu_s / h * ratio,
            )
        }
    };
    let mut b = Matrix4::zeros();
    b[(1, 0)] = f_vh;
    b[(1, 1)] = f_vv;
    b[(2, 1)] = f_zv;
    b[(2, 3)] = f_zc;
    b[(3, 0)] = f_ch;
    b[(3, 1)] = f_cv;
    b[(3, 3)] = f_cc;

    let rating = p.c2 * p.c3 * eq.q0.powf(p.c3);
    #[rustfmt::skip]
    let pi = Matrix3x4::new(
        v,             h,             0.0, 0.0,
        0.0,           0.0,           1.0, 0.0,
        -rating / h,   -rating / v,   0.0, 1.0,
    );

    let pi_l_input = p.k_g * (2.0 * g * head).sqrt();
    let pi_lh = match gate {
        GateModel::Reference => -v * (h + 2.0 * z - p.h_l) / (2.0 * head),
        GateModel::Jacobian => -v * (h + 2.0 * z - 2.0 * p.h_l) / (2.0 * head),
    };
    let pi_l = RowVector4::new(pi_lh, -h, -pi_l_input + eq.q0 / (2.0 * head), 0.0);

    let ls = LinearSystem {
        a,
        b,
        pi,
        pi_l,
        pi_l_input,
    };
    if ls.b.iter().chain(ls.pi.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Model("non-finite linearization".into()));
    }
    Ok(ls)
}

/// How the characteristic speeds are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EigenMode {
    /// Closed-form speeds to first order in the bed coupling `a`.
    Approximate,
    /// Roots of the characteristic cubic of the hydro-morphodynamic block.
    #[default]
    Exact,
}

/// Eigenvalues and eigenvector matrices of `A`.
///
/// Columns of `r` are right eigenvectors, rows of `l` left eigenvectors; the
/// last pair is the decoupled concentration mode.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenStructure {
    pub lambda: [f64; 4],
    pub r: Matrix4<f64>,
    pub l: Matrix4<f64>,
    pub mode: EigenMode,
}

/// Coefficients of `lambda^3 + c2 lambda^2 + c1 lambda + c0`, the
/// characteristic polynomial of the upper-left block of `A`.
pub fn characteristic_cubic(g: f64, h: f64, v: f64, a: f64) -> [f64; 3] {
    [g * a * v.powi(3), v * v - g * h - g * a * v * v, -2.0 * v]
}

/// Three real roots of `x^3 + c2 x^2 + c1 x + c0`, ascending.
pub fn real_cubic_roots(coef: [f64; 3]) -> Result<[f64; 3]> {
    let [c0, c1, c2] = coef;
    let shift = c2 / 3.0;
    let p = c1 - c2 * c2 / 3.0;
    let q = 2.0 * c2.powi(3) / 27.0 - c2 * c1 / 3.0 + c0;
    if !(p < 0.0) {
        return Err(Error::Model(
            "characteristic cubic lacks three real roots".into(),
        ));
    }
    let m = 2.0 * (-p / 3.0).sqrt();
    let arg = 3.0 * q / (p * m);
    if arg.abs() > 1.0 + 1e-12 {
        return Err(Error::Model(
            "characteristic cubic lacks three real roots".into(),
        ));
    }
    let phi = arg.clamp(-1.0, 1.0).acos() / 3.0;
    let mut roots = [0.0; 3];
    for (k, r) in roots.iter_mut().enumerate() {
        let mut x = m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift;
        // Polish: the trigonometric form loses digits on the small root.
        for _ in 0..3 {
            let f = ((x + c2) * x + c1) * x + c0;
            let df = (3.0 * x + 2.0 * c2) * x + c1;
            if df != 0.0 {
                x -= f / df;
            }
        }
        *r = x;
    }
    roots.sort_by(|a, b| a.total_cmp(b));
    Ok(roots)
}

/// First-order closed-form speeds `(V - c, a g V^3 / (gH - V^2), V + c, V)`.
pub fn approximate_speeds(g: f64, h: f64, v: f64, a: f64) -> [f64; 4] {
    let c = (g * h).sqrt();
    [v - c, a * g * v.powi(3) / (g * h - v * v), v + c, v]
}

/// Computes speeds and eigenvectors of `A` at the equilibrium.
pub fn eigen_structure(
    p: &ChannelParameters,
    d: &DerivedConstants,
    eq: &Equilibrium,
    mode: EigenMode,
) -> Result<EigenStructure> {
    let (g, h, v) = (p.g, eq.h, eq.v);
    if ((eq.froude) - 1.0).abs() < 1e-9 {
        return Err(Error::Model("critical flow: Froude number is 1".into()));
    }
    let approx = approximate_speeds(g, h, v, d.a);
    let lambda = match mode {
        EigenMode::Approximate => approx,
        EigenMode::Exact => {
            let roots = real_cubic_roots(characteristic_cubic(g, h, v, d.a))?;
            // Label each root by the closed-form speed it perturbs.
            let mut lam = [0.0, 0.0, 0.0, v];
            let mut used = [false; 3];
            for k in 0..3 {
                let best = (0..3)
                    .filter(|&r| !used[r])
                    .min_by(|&x, &y| {
                        (roots[x] - approx[k])
                            .abs()
                            .total_cmp(&(roots[y] - approx[k]).abs())
                    })
                    .expect("three roots");
                used[best] = true;
                lam[k] = roots[best];
            }
            lam
        }
    };
    let scale = lambda.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for i in 0..3 {
        for j in (i + 1)..3 {
            if (lambda[i] - lambda[j]).abs() <= 1e-12 * scale {
                return Err(Error::Model(format!(
                    "repeated eigenvalues {} and {}",
                    lambda[i], lambda[j]
                )));
            }
        }
    }

    let mut r = Matrix4::zeros();
    let mut l = Matrix4::zeros();
    for k in 0..3 {
        let lk = lambda[k];
        let (i, j) = match k {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let (li, lj) = (lambda[i], lambda[j]);
        r[(0, k)] = 1.0;
        r[(1, k)] = (lk - v) / h;
        r[(2, k)] = ((v - lk).powi(2) - g * h) / (g * h);
        let den = (lk - li) * (lk - lj);
        l[(k, 0)] = ((v - li) * (v - lj) + g * h) / den;
        l[(k, 1)] = h * lk / den;
        l[(k, 2)] = g * h / den;
    }
    r[(3, 3)] = 1.0;
    l[(3, 3)] = 1.0;
    Ok(EigenStructure { lambda, r, l, mode })
}

/// Residual `max |L A R - diag(lambda)|`.
pub fn diagonalization_residual(ls: &LinearSystem, es: &EigenStructure) -> f64 {
    let d = es.l * ls.a * es.r - Matrix4::from_diagonal(&Vector4::from(es.lambda));
    d.amax()
}

/// Sub- or supercritical flow; fixes the ordering of the characteristics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowRegime {
    Subcritical,
    Supercritical,
}

impl FlowRegime {
    /// Permutation `T` with `u = T phi`, placing the rightward modes first and
    /// the leftward mode last.
    pub fn permutation(self) -> Matrix4<f64> {
        // Row i selects the characteristic that becomes u_{i+1}.
        let order: [usize; 4] = match self {
            FlowRegime::Subcritical => [1, 2, 3, 0],
            FlowRegime::Supercritical => [0, 2, 3, 1],
        };
        let mut t = Matrix4::zeros();
        for (row, col) in order.into_iter().enumerate() {
            t[(row, col)] = 1.0;
        }
        t
    }
}

/// Classifies the flow from the Froude number and the computed speeds.
pub fn classify_regime(eq: &Equilibrium, es: &EigenStructure) -> Result<FlowRegime> {
    if (eq.froude - 1.0).abs() < 1e-9 {
        return Err(Error::Model("critical flow: Froude number is 1".into()));
    }
    let regime = if eq.froude < 1.0 {
        FlowRegime::Subcritical
    } else {
        FlowRegime::Supercritical
    };
    let speeds = regime.permutation() * Vector4::from(es.lambda);
    if !(speeds[0] > 0.0 && speeds[1] > 0.0 && speeds[2] > 0.0 && speeds[3] < 0.0) {
        return Err(Error::Model(format!(
            "characteristic speeds {:?} do not give three rightward and one leftward mode",
            es.lambda
        )));
    }
    Ok(regime)
}

/// Canonical transport system seen by the controller.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalSystem {
    /// Rightward speeds.
    pub gamma: [f64; 3],
    /// Leftward speed (positive).
    pub mu: f64,
    /// Coupling matrix in the unscaled modal variables `u0 = T L Y`.
    pub sigma: Matrix4<f64>,
    /// Upstream reflection `u_i(0) = delta_i w(0)`.
    pub delta: [f64; 3],
    /// Downstream reflection `w(L) = rho_1 u_1 + rho_2 u_2 + U`.
    pub rho: [f64; 2],
    /// Gate gain: `U = pi_u (U_L - U_eq)`.
    pub pi_u: f64,
    pub length: f64,
    /// `T L`, physical deviation to unscaled modal variables.
    pub modal_from_physical: Matrix4<f64>,
    /// `R T^T`, unscaled modal variables to physical deviation.
    pub physical_from_modal: Matrix4<f64>,
}

impl CanonicalSystem {
    pub fn sigma44(&self) -> f64 {
        self.sigma[(3, 3)]
    }

    /// Scaling `w = u4 exp(sigma44 x / mu)`.
    pub fn scaling(&self, x: f64) -> f64 {
        (self.sigma44() * x / self.mu).exp()
    }

    /// `alpha_i(x) = sigma_i4 exp(-sigma44 x / mu)`, `i` zero-based.
    pub fn alpha(&self, i: usize, x: f64) -> f64 {
        self.sigma[(i, 3)] / self.scaling(x)
    }

    /// `theta_i(x) = sigma_4i exp(sigma44 x / mu)`, `i` zero-based.
    pub fn theta(&self, i: usize, x: f64) -> f64 {
        self.sigma[(3, i)] * self.scaling(x)
    }

    /// Largest characteristic speed.
    pub fn max_speed(&self) -> f64 {
        self.gamma.iter().fold(self.mu, |m, g| m.max(*g))
    }
}

/// Builds the canonical system from the linearization.
pub fn build_canonical(
    ls: &LinearSystem,
    es: &EigenStructure,
    regime: FlowRegime,
    length: f64,
) -> Result<CanonicalSystem> {
    let t = regime.permutation();
    let sigma = t * (es.l * ls.b * es.r) * t.transpose();
    let speeds = t * Vector4::from(es.lambda);
    let gamma = [speeds[0], speeds[1], speeds[2]];
    let mu = -speeds[3];
    if gamma.iter().any(|g| !(*g > 0.0)) || !(mu > 0.0) {
        return Err(Error::Model(format!(
            "invalid transport speeds gamma = {gamma:?}, mu = {mu}"
        )));
    }

    let rt = es.r * t.transpose();
    let pm = ls.pi * rt;
    let p3: Matrix3<f64> = pm.fixed_view::<3, 3>(0, 0).into();
    let p4: Vector3<f64> = pm.column(3).into();
    let delta = p3
        .lu()
        .solve(&(-p4))
        .ok_or_else(|| Error::Model("singular upstream boundary matrix".into()))?;

    let bl = ls.pi_l * rt;
    let b4 = bl[3];
    if b4.abs() < 1e-12 * bl.amax().max(1.0) {
        return Err(Error::Model(
            "gate row does not act on the leftward characteristic".into(),
        ));
    }
    let e = (sigma[(3, 3)] * length / mu).exp();
    let rho = [-bl[0] * e / b4, -bl[1] * e / b4];
    let pi_u = -ls.pi_l_input * e / b4;
    if bl[2].abs() > 1e-12 * bl.amax() {
        return Err(Error::Model(
            "gate row couples to the concentration characteristic".into(),
        ));
    }
    let cs = CanonicalSystem {
        gamma,
        mu,
        sigma,
        delta: [delta[0], delta[1], delta[2]],
        rho,
        pi_u,
        length,
        modal_from_physical: t * es.l,
        physical_from_modal: rt,
    };
    if cs.sigma.iter().any(|x| !x.is_finite()) || !pi_u.is_finite() {
        return Err(Error::Model("non-finite canonical coefficients".into()));
    }
    Ok(cs)
}
