//! Backstepping kernels of the controller and observer transforms.
//!
//! The controller kernels `k_1..k_4` live on `0 <= xi <= x <= L` and solve
//!
//! ```text
//! mu k_i,x - gamma_i k_i,xi = sum_j sigma_ji k_j + theta_i(xi) k_4
//! mu (k_4,x + k_4,xi)       = sum_j alpha_j(xi) k_j
//! k_i(x, x) = -theta_i(x) / (gamma_i + mu),   mu k_4(x, 0) = sum_j gamma_j delta_j k_j(x, 0)
//! ```
//!
//! The observer kernels `m_1..m_4` solve
//!
//! ```text
//! gamma_i m_i,x - mu m_i,xi = sum_j sigma_ij m_j + alpha_i(x) m_4
//! mu (m_4,x + m_4,xi)       = -sum_j theta_j(x) m_j
//! m_i(x, x) = alpha_i(x) / (gamma_i + mu),   m_4(L, xi) = rho_1 m_1(L, xi) + rho_2 m_2(L, xi)
//! ```
//!
//! and are computed as a controller-type problem after reflecting the
//! triangle through `(x, xi) -> (L - xi, L - x)`.

pub mod goursat;
pub mod lattice;
pub mod volterra;

pub use goursat::{solve_goursat, GoursatProblem, GoursatSolution, MarchRule, ResidualReport};
pub use lattice::{TriField, TriangularGrid};

use crate::error::Result;
use crate::linearize::CanonicalSystem;

/// Discretization and iteration settings shared by both kernel families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelOptions {
    /// Lattice nodes per side.
    pub m: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub rule: MarchRule,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            m: 257,
            tol: 1e-10,
            max_iter: 200,
            rule: MarchRule::Euler,
        }
    }
}

/// Controller kernels `k_1..k_4` (index 3 is `k_4`).
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub grid: TriangularGrid,
    pub k: [TriField; 4],
    pub iterations: usize,
    pub updates: Vec<f64>,
    pub residual: ResidualReport,
    /// Largest violation of the diagonal and `xi = 0` conditions.
    pub boundary_error: f64,
}

impl KernelSet {
    /// Largest centered-difference residual over the four kernel PDEs.
    pub fn residual_norm(&self) -> f64 {
        self.residual.max_norm()
    }
}

/// Observer kernels `m_1..m_4` and the output-injection gains.
#[derive(Debug, Clone)]
pub struct ObserverKernelSet {
    pub grid: TriangularGrid,
    pub m: [TriField; 4],
    /// `p_i(x_a) = -mu m_i(x_a, 0)`, `i = 1..4`.
    pub gains: [Vec<f64>; 4],
    pub iterations: usize,
    pub updates: Vec<f64>,
    /// Residual of the observer PDEs in the original coordinates.
    pub residual: ResidualReport,
    pub boundary_error: f64,
}

impl ObserverKernelSet {
    pub fn residual_norm(&self) -> f64 {
        self.residual.max_norm()
    }
}

fn sample(grid: &TriangularGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    grid.nodes().into_iter().map(f).collect()
}

/// Controller Goursat problem for `cs` on `grid`.
pub fn controller_problem(cs: &CanonicalSystem, grid: TriangularGrid) -> GoursatProblem {
    let mu = cs.mu;
    let mut coupling = [[0.0; 3]; 3];
    for (i, row) in coupling.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = cs.sigma[(j, i)];
        }
    }
    GoursatProblem {
        grid,
        mu,
        gamma: cs.gamma,
        coupling,
        a_coef: std::array::from_fn(|i| sample(&grid, |x| cs.theta(i, x))),
        b_coef: std::array::from_fn(|i| sample(&grid, |x| cs.alpha(i, x))),
        diag: std::array::from_fn(|i| sample(&grid, |x| -cs.theta(i, x) / (cs.gamma[i] + mu))),
        q: std::array::from_fn(|j| cs.gamma[j] * cs.delta[j] / mu),
    }
}

/// Reflected observer problem: `K(a, b) = m(M-1-b, M-1-a)`.
pub fn observer_problem(cs: &CanonicalSystem, grid: TriangularGrid) -> GoursatProblem {
    let len = grid.length;
    let mut coupling = [[0.0; 3]; 3];
    for (i, row) in coupling.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = cs.sigma[(i, j)];
        }
    }
    GoursatProblem {
        grid,
        mu: cs.mu,
        gamma: cs.gamma,
        coupling,
        a_coef: std::array::from_fn(|i| sample(&grid, |xb| cs.alpha(i, len - xb))),
        b_coef: std::array::from_fn(|i| sample(&grid, |xb| cs.theta(i, len - xb))),
        diag: std::array::from_fn(|i| {
            sample(&grid, |xb| cs.alpha(i, len - xb) / (cs.gamma[i] + cs.mu))
        }),
        q: [cs.rho[0], cs.rho[1], 0.0],
    }
}

fn lattice(cs: &CanonicalSystem, opts: &KernelOptions) -> Result<TriangularGrid> {
    TriangularGrid::new(opts.m, cs.length)
}

/// Solves the controller kernels.
pub fn solve_controller_kernels(cs: &CanonicalSystem, opts: &KernelOptions) -> Result<KernelSet> {
    let grid = lattice(cs, opts)?;
    let pb = controller_problem(cs, grid);
    let sol = solve_goursat(
        &pb,
        opts.rule,
        opts.tol,
        opts.max_iter,
        "controller kernels",
    )?;
    let residual = pb.residual(&sol.k);
    let boundary_error = pb.boundary_error(&sol.k);
    Ok(KernelSet {
        grid,
        k: sol.k,
        iterations: sol.iterations,
        updates: sol.updates,
        residual,
        boundary_error,
    })
}

/// Solves the observer kernels and derives the injection gains.
pub fn solve_observer_kernels(
    cs: &CanonicalSystem,
    opts: &KernelOptions,
) -> Result<ObserverKernelSet> {
    let grid = lattice(cs, opts)?;
    let pb = observer_problem(cs, grid);
    let sol = solve_goursat(&pb, opts.rule, opts.tol, opts.max_iter, "observer kernels")?;
    let m: [TriField; 4] = std::array::from_fn(|j| sol.k[j].flipped());
    let gains = std::array::from_fn(|j| (0..grid.m).map(|a| -cs.mu * m[j].get(a, 0)).collect());
    let residual = observer_residual(cs, &grid, &m);
    let boundary_error = observer_boundary_error(cs, &grid, &m);
    Ok(ObserverKernelSet {
        grid,
        m,
        gains,
        iterations: sol.iterations,
        updates: sol.updates,
        residual,
        boundary_error,
    })
}

/// Centered-difference residuals of the observer PDEs, evaluated directly
/// on `m` (no reflection), at interior lattice nodes.
pub fn observer_residual(
    cs: &CanonicalSystem,
    grid: &TriangularGrid,
    m: &[TriField; 4],
) -> ResidualReport {
    let h = grid.h();
    let n = grid.m;
    let mut max = [0.0f64; 4];
    let mut sq = [0.0f64; 4];
    for a in 1..n - 1 {
        let x = grid.x(a);
        for b in 1..a.saturating_sub(1) {
            let mv = |j: usize| m[j].get(a, b);
            let dx = |j: usize| (m[j].get(a + 1, b) - m[j].get(a - 1, b)) / (2.0 * h);
            let dxi = |j: usize| (m[j].get(a, b + 1) - m[j].get(a, b - 1)) / (2.0 * h);
            for i in 0..3 {
                let mut rhs = cs.alpha(i, x) * mv(3);
                for j in 0..3 {
                    rhs += cs.sigma[(i, j)] * mv(j);
                }
                let r = cs.gamma[i] * dx(i) - cs.mu * dxi(i) - rhs;
                max[i] = max[i].max(r.abs());
                sq[i] += r * r * h * h;
            }
            let rhs: f64 = (0..3).map(|j| -cs.theta(j, x) * mv(j)).sum();
            let r = cs.mu * (dx(3) + dxi(3)) - rhs;
            max[3] = max[3].max(r.abs());
            sq[3] += r * r * h * h;
        }
    }
    ResidualReport {
        max,
        l2: sq.map(f64::sqrt),
    }
}

/// Largest violation of `m_i(x, x) = alpha_i / (gamma_i + mu)` and of the
/// `x = L` reflection condition for `m_4`.
pub fn observer_boundary_error(
    cs: &CanonicalSystem,
    grid: &TriangularGrid,
    m: &[TriField; 4],
) -> f64 {
    let last = grid.m - 1;
    let mut err = 0.0f64;
    for a in 0..grid.m {
        let x = grid.x(a);
        for i in 0..3 {
            let want = cs.alpha(i, x) / (cs.gamma[i] + cs.mu);
            err = err.max((m[i].get(a, a) - want).abs());
        }
        let edge = cs.rho[0] * m[0].get(last, a) + cs.rho[1] * m[1].get(last, a);
        err = err.max((m[3].get(last, a) - edge).abs());
    }
    err
}

/// Inverse-transform and target-system kernels.
///
/// `l` and `n` invert the controller and observer transforms; `kappa`, `c`,
/// `h`, `g` are the integral couplings of the target systems.
#[derive(Debug, Clone)]
pub struct AuxKernels {
    pub l: [TriField; 4],
    pub n: [TriField; 4],
    pub kappa: [TriField; 3],
    pub c: [[TriField; 3]; 3],
    pub h: [TriField; 3],
    pub g: [[TriField; 3]; 3],
}

/// Solves the Volterra equations for the auxiliary kernels.
pub fn solve_aux_kernels(
    cs: &CanonicalSystem,
    ks: &KernelSet,
    os: &ObserverKernelSet,
) -> AuxKernels {
    use volterra::{compose, resolve_left, resolve_right};
    let grid = ks.grid;
    let x = grid.nodes();
    let k4 = &ks.k[3];
    let l4 = resolve_left(&grid, k4, k4, 1.0);
    let mut l: [TriField; 4] = std::array::from_fn(|i| {
        if i < 3 {
            let lk = compose(&grid, &l4, &ks.k[i]);
            TriField::from_fn(grid.m, |a, b| ks.k[i].get(a, b) + lk.get(a, b))
        } else {
            TriField::zeros(grid.m)
        }
    });
    l[3] = l4;

    let m4 = &os.m[3];
    let neg_m4 = TriField::from_fn(grid.m, |a, b| -m4.get(a, b));
    let n4 = resolve_left(&grid, &neg_m4, m4, -1.0);
    let mut n: [TriField; 4] = std::array::from_fn(|i| {
        if i < 3 {
            let mn = compose(&grid, &os.m[i], &n4);
            TriField::from_fn(grid.m, |a, b| -os.m[i].get(a, b) - mn.get(a, b))
        } else {
            TriField::zeros(grid.m)
        }
    });
    n[3] = n4;

    let kappa: [TriField; 3] = std::array::from_fn(|i| {
        let f = TriField::from_fn(grid.m, |a, b| cs.alpha(i, x[a]) * k4.get(a, b));
        resolve_left(&grid, &f, k4, 1.0)
    });
    let c = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let kk = compose(&grid, &kappa[i], &ks.k[j]);
            TriField::from_fn(grid.m, |a, b| {
                cs.alpha(i, x[a]) * ks.k[j].get(a, b) + kk.get(a, b)
            })
        })
    });
    let h: [TriField; 3] = std::array::from_fn(|i| {
        let f = TriField::from_fn(grid.m, |a, b| -cs.theta(i, x[b]) * m4.get(a, b));
        resolve_right(&grid, &f, m4, -1.0)
    });
    let g = std::array::from_fn(|i| {
        std::array::from_fn(|j| {
            let mh = compose(&grid, &os.m[i], &h[j]);
            TriField::from_fn(grid.m, |a, b| {
                -cs.theta(j, x[b]) * os.m[i].get(a, b) - mh.get(a, b)
            })
        })
    });
    AuxKernels {
        l,
        n,
        kappa,
        c,
        h,
        g,
    }
}
