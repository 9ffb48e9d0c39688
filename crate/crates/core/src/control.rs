//! Canonical states, backstepping transforms, feedback law and observer.
//!
//! The controller transform maps the plant to the target system with
//!
//! ```text
//! chi(x) = w(x) - int_0^x ( sum_i k_i(x, xi) u_i(xi) + k_4(x, xi) w(xi) ) dxi,
//! ```
//!
//! and the feedback `U` enforces `chi(t, L) = 0`. The observer error
//! `(u~, w~)` is obtained from its target `(psi~, chi~)` by
//! `u~_i = psi~_i + int m_i chi~`, `w~ = chi~ + int m_4 chi~`.
//!
//! All integrals use the trapezoid rule on the simulation grid.

use crate::error::{Error, Result};
use crate::kernels::volterra::{apply, trapezoid_weight};
use crate::kernels::{KernelSet, ObserverKernelSet, TriField, TriangularGrid};
use crate::linearize::CanonicalSystem;
use crate::physics::Equilibrium;

/// Canonical fields on the grid: three rightward `u_i` and the scaled
/// leftward `w`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalState {
    pub u: [Vec<f64>; 3],
    pub w: Vec<f64>,
}

/// Observer estimate; same layout as the plant state.
pub type ObserverState = CanonicalState;

impl CanonicalState {
    pub fn zeros(nodes: usize) -> Self {
        Self {
            u: std::array::from_fn(|_| vec![0.0; nodes]),
            w: vec![0.0; nodes],
        }
    }

    pub fn nodes(&self) -> usize {
        self.w.len()
    }

    /// Field `j` with `w` at index 3.
    pub fn field(&self, j: usize) -> &[f64] {
        if j < 3 {
            &self.u[j]
        } else {
            &self.w
        }
    }

    /// Trapezoid `L2(0, L)` norms of `u_1, u_2, u_3, w`.
    pub fn l2_norms(&self, dx: f64) -> [f64; 4] {
        std::array::from_fn(|j| l2_norm(self.field(j), dx))
    }

    /// `sqrt(sum_j ||field_j||^2)`.
    pub fn norm(&self, dx: f64) -> f64 {
        self.l2_norms(dx).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self - other`, field by field.
    pub fn minus(&self, other: &CanonicalState) -> CanonicalState {
        let sub = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        CanonicalState {
            u: std::array::from_fn(|i| sub(&self.u[i], &other.u[i])),
            w: sub(&self.w, &other.w),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u
            .iter()
            .flatten()
            .chain(&self.w)
            .all(|v| v.is_finite())
    }
}

/// Observer error `observer - plant`.
pub fn estimation_error(observer: &ObserverState, plant: &CanonicalState) -> CanonicalState {
    observer.minus(plant)
}

/// Trapezoid `L2` norm of nodal samples with spacing `dx`.
pub fn l2_norm(f: &[f64], dx: f64) -> f64 {
    let n = f.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = f[1..n - 1].iter().map(|v| v * v).sum();
    (dx * (inner + 0.5 * (f[0] * f[0] + f[n - 1] * f[n - 1]))).sqrt()
}

/// Fields of a backstepping target system.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedState {
    pub psi: [Vec<f64>; 3],
    pub chi: Vec<f64>,
}

/// Resamples lattice kernels onto `nodes` grid points if the lattice differs.
pub fn resample(k: &TriField, from: &TriangularGrid, to: &TriangularGrid) -> TriField {
    if from.m == to.m {
        return k.clone();
    }
    TriField::from_fn(to.m, |a, b| k.interpolate(from, to.x(a), to.x(b)))
}

/// `(psi, chi)` from the plant state.
pub fn controller_transform(
    grid: &TriangularGrid,
    k: &[TriField; 4],
    s: &CanonicalState,
) -> TransformedState {
    let mut chi = s.w.clone();
    for (j, kj) in k.iter().enumerate() {
        let int = apply(grid, kj, s.field(j));
        chi.iter_mut().zip(&int).for_each(|(c, v)| *c -= v);
    }
    TransformedState {
        psi: s.u.clone(),
        chi,
    }
}

/// Plant state from `(psi, chi)` using the inverse kernels `l`.
pub fn inverse_controller_transform(
    grid: &TriangularGrid,
    l: &[TriField; 4],
    t: &TransformedState,
) -> CanonicalState {
    let mut w = t.chi.clone();
    for j in 0..4 {
        let src = if j < 3 { &t.psi[j] } else { &t.chi };
        let int = apply(grid, &l[j], src);
        w.iter_mut().zip(&int).for_each(|(c, v)| *c += v);
    }
    CanonicalState {
        u: t.psi.clone(),
        w,
    }
}

/// Observer error from its target state: `u~ = psi~ + int m chi~`.
pub fn observer_error_from_target(
    grid: &TriangularGrid,
    m: &[TriField; 4],
    t: &TransformedState,
) -> CanonicalState {
    let add = |base: &[f64], k: &TriField| {
        let int = apply(grid, k, &t.chi);
        base.iter()
            .zip(&int)
            .map(|(b, v)| b + v)
            .collect::<Vec<_>>()
    };
    CanonicalState {
        u: std::array::from_fn(|i| add(&t.psi[i], &m[i])),
        w: add(&t.chi, &m[3]),
    }
}

/// Observer target state from the error, using the inverse kernels `n`.
pub fn observer_target_from_error(
    grid: &TriangularGrid,
    n: &[TriField; 4],
    e: &CanonicalState,
) -> TransformedState {
    let add = |base: &[f64], k: &TriField| {
        let int = apply(grid, k, &e.w);
        base.iter()
            .zip(&int)
            .map(|(b, v)| b + v)
            .collect::<Vec<_>>()
    };
    TransformedState {
        psi: std::array::from_fn(|i| add(&e.u[i], &n[i])),
        chi: add(&e.w, &n[3]),
    }
}

/// Boundary feedback built from the controller kernels at `x = L`.
#[derive(Debug, Clone)]
pub struct ControlLaw {
    dx: f64,
    /// `k_j(L, x_c)` on the simulation grid; index 3 is `k_4`.
    row: [Vec<f64>; 4],
    rho: [f64; 2],
}

impl ControlLaw {
    /// Samples the last kernel row onto a grid with `nodes` points.
    pub fn new(cs: &CanonicalSystem, ks: &KernelSet, nodes: usize) -> Result<Self> {
        let grid = TriangularGrid::new(nodes, cs.length)?;
        let last = ks.grid.m - 1;
        let row = std::array::from_fn(|j| {
            if ks.grid.m == nodes {
                ks.k[j].row(last).to_vec()
            } else {
                (0..nodes)
                    .map(|c| ks.k[j].interpolate(&ks.grid, cs.length, grid.x(c)))
                    .collect()
            }
        });
        Ok(Self {
            dx: grid.h(),
            row,
            rho: cs.rho,
        })
    }

    fn weight(&self, c: usize) -> f64 {
        self.dx * trapezoid_weight(self.row[3].len() - 1, c)
    }

    /// `rho_1 u_1(L) + rho_2 u_2(L)`.
    pub fn reflection(&self, s: &CanonicalState) -> f64 {
        let n = s.nodes() - 1;
        self.rho[0] * s.u[0][n] + self.rho[1] * s.u[1][n]
    }

    /// `int (sum k_i(L, .) u_i + k_4(L, .) w) - rho_1 u_1(L) - rho_2 u_2(L)`
    /// evaluated on the given state, including its current `w(L)`.
    pub fn state_feedback(&self, s: &CanonicalState) -> f64 {
        let n = s.nodes();
        let mut int = 0.0;
        for c in 0..n {
            let mut v = self.row[3][c] * s.w[c];
            for i in 0..3 {
                v += self.row[i][c] * s.u[i][c];
            }
            int += self.weight(c) * v;
        }
        int - self.reflection(s)
    }

    /// Feedback consistent with the boundary relation it drives: returns `U`
    /// such that `w(L) = rho_1 u_1(L) + rho_2 u_2(L) + U` makes the
    /// discrete transform vanish at `x = L`. `s.w[N]` is ignored.
    pub fn consistent_feedback(&self, s: &CanonicalState) -> f64 {
        let n = s.nodes();
        let last = n - 1;
        let mut rest = 0.0;
        for c in 0..n {
            let mut v = 0.0;
            for i in 0..3 {
                v += self.row[i][c] * s.u[i][c];
            }
            if c < last {
                v += self.row[3][c] * s.w[c];
            }
            rest += self.weight(c) * v;
        }
        let w_l = rest / (1.0 - self.weight(last) * self.row[3][last]);
        w_l - self.reflection(s)
    }
}

/// Physical gate command derived from the canonical input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateCommand {
    pub u_l: f64,
    /// Canonical input actually realized after clamping.
    pub u: f64,
    pub saturated: bool,
}

/// `U_L = U_eq + U / pi_u`, clamped to `[z_gate, u_max]`.
pub fn gate_aperture(
    cs: &CanonicalSystem,
    eq: &Equilibrium,
    u: f64,
    z_gate: f64,
    u_max: f64,
) -> GateCommand {
    let raw = eq.u_eq + u / cs.pi_u;
    let u_l = raw.clamp(z_gate, u_max.max(z_gate));
    let saturated = u_l != raw;
    GateCommand {
        u_l,
        u: if saturated {
            cs.pi_u * (u_l - eq.u_eq)
        } else {
            u
        },
        saturated,
    }
}

/// Transport coefficients sampled on the simulation grid.
#[derive(Debug, Clone)]
pub struct Transport {
    pub nodes: usize,
    pub dx: f64,
    pub gamma: [f64; 3],
    pub mu: f64,
    pub sigma: [[f64; 3]; 3],
    pub alpha: [Vec<f64>; 3],
    pub theta: [Vec<f64>; 3],
    pub delta: [f64; 3],
    pub rho: [f64; 2],
}

impl Transport {
    pub fn new(cs: &CanonicalSystem, cells: usize) -> Result<Self> {
        if cells < 2 {
            return Err(Error::Config(format!("need at least 2 cells, got {cells}")));
        }
        let nodes = cells + 1;
        let dx = cs.length / cells as f64;
        let xs: Vec<f64> = (0..nodes).map(|j| j as f64 * dx).collect();
        Ok(Self {
            nodes,
            dx,
            gamma: cs.gamma,
            mu: cs.mu,
            sigma: std::array::from_fn(|i| std::array::from_fn(|j| cs.sigma[(i, j)])),
            alpha: std::array::from_fn(|i| xs.iter().map(|x| cs.alpha(i, *x)).collect()),
            theta: std::array::from_fn(|i| xs.iter().map(|x| cs.theta(i, *x)).collect()),
            delta: cs.delta,
            rho: cs.rho,
        })
    }

    /// Largest stable step for Courant number `cfl`.
    pub fn stable_dt(&self, cfl: f64) -> f64 {
        let speed = self.gamma.iter().fold(self.mu, |m, g| m.max(*g));
        cfl * self.dx / speed
    }

    /// First-order upwind update of the interior nodes with explicit sources.
    ///
    /// `injection` adds `-p_j(x) * innovation` to field `j`. Boundary nodes
    /// `u_i(0)` and `w(L)` are copied and must be set by the caller.
    pub fn advance(
        &self,
        s: &CanonicalState,
        dt: f64,
        injection: Option<(&[Vec<f64>; 4], f64)>,
    ) -> CanonicalState {
        let n = self.nodes;
        let mut out = s.clone();
        let inj = |f: usize, j: usize| match injection {
            Some((p, innov)) => -p[f][j] * innov,
            None => 0.0,
        };
        for i in 0..3 {
            let c = self.gamma[i] * dt / self.dx;
            let row = self.sigma[i];
            for j in 1..n {
                let src = row[0] * s.u[0][j]
                    + row[1] * s.u[1][j]
                    + row[2] * s.u[2][j]
                    + self.alpha[i][j] * s.w[j]
                    + inj(i, j);
                out.u[i][j] = s.u[i][j] - c * (s.u[i][j] - s.u[i][j - 1]) + dt * src;
            }
        }
        let c = self.mu * dt / self.dx;
        for j in 0..n - 1 {
            let src = self.theta[0][j] * s.u[0][j]
                + self.theta[1][j] * s.u[1][j]
                + self.theta[2][j] * s.u[2][j]
                + inj(3, j);
            out.w[j] = s.w[j] + c * (s.w[j + 1] - s.w[j]) + dt * src;
        }
        out
    }

    /// Sets `u_i(0) = delta_i w0`.
    pub fn apply_inflow(&self, s: &mut CanonicalState, w0: f64) {
        for i in 0..3 {
            s.u[i][0] = self.delta[i] * w0;
        }
    }

    /// Sets `w(L) = rho_1 u_1(L) + rho_2 u_2(L) + u`.
    pub fn apply_outflow(&self, s: &mut CanonicalState, u: f64) {
        let n = self.nodes - 1;
        s.w[n] = self.rho[0] * s.u[0][n] + self.rho[1] * s.u[1][n] + u;
    }
}

/// Output-injection gains resampled to the simulation grid.
#[derive(Debug, Clone)]
pub struct Observer {
    pub gains: [Vec<f64>; 4],
}

impl Observer {
    pub fn new(cs: &CanonicalSystem, os: &ObserverKernelSet, nodes: usize) -> Result<Self> {
        let grid = TriangularGrid::new(nodes, cs.length)?;
        let gains = std::array::from_fn(|j| {
            if os.grid.m == nodes {
                os.gains[j].clone()
            } else {
                (0..nodes)
                    .map(|a| -cs.mu * os.m[j].interpolate(&os.grid, grid.x(a), 0.0))
                    .collect()
            }
        });
        Ok(Self { gains })
    }
}

/// One observer step: interior transport with injection of `y - w^(0)`,
/// then `u^_i(0) = delta_i y_next` and `w^(L) = reflection + u`.
pub fn observer_step(
    o: &ObserverState,
    y: f64,
    y_next: f64,
    u: f64,
    tr: &Transport,
    obs: &Observer,
    dt: f64,
) -> ObserverState {
    let innovation = y - o.w[0];
    let mut next = tr.advance(o, dt, Some((&obs.gains, innovation)));
    tr.apply_inflow(&mut next, y_next);
    tr.apply_outflow(&mut next, u);
    next
}
