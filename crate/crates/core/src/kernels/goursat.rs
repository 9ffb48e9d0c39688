//! Successive approximations for the 3+1 Goursat kernel system
//!
//! ```text
//! mu K_i,x - gamma_i K_i,xi = sum_j C_ij K_j + a_i(xi) K_4     (i = 1..3)
//! mu (K_4,x + K_4,xi)       = sum_j b_j(xi) K_j
//! K_i(x, x) = d_i(x),   K_4(x, 0) = sum_j q_j K_j(x, 0)
//! ```
//!
//! Each sweep freezes the right-hand sides at the previous iterate and
//! integrates every kernel exactly along its own characteristic, back to the
//! previous lattice line or to the diagonal, using linear interpolation at
//! the foot. Both the controller and the (reflected) observer kernels have
//! this form.

use super::lattice::{TriField, TriangularGrid};
use crate::error::{Error, Result};

/// Quadrature of the frozen right-hand side along one characteristic step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarchRule {
    /// Right-hand side evaluated at the foot of the step.
    #[default]
    Euler,
    /// Mean of foot and head values.
    Trapezoid,
}

/// Coefficients of one Goursat problem, sampled on the lattice.
#[derive(Debug, Clone)]
pub struct GoursatProblem {
    pub grid: TriangularGrid,
    pub mu: f64,
    pub gamma: [f64; 3],
    pub coupling: [[f64; 3]; 3],
    /// `a_i(xi_b)`.
    pub a_coef: [Vec<f64>; 3],
    /// `b_i(xi_b)`.
    pub b_coef: [Vec<f64>; 3],
    /// Diagonal data `d_i(x_a)`.
    pub diag: [Vec<f64>; 3],
    pub q: [f64; 3],
}

/// Converged kernels and iteration diagnostics.
#[derive(Debug, Clone)]
pub struct GoursatSolution {
    pub k: [TriField; 4],
    pub iterations: usize,
    /// Sup-norm change per sweep.
    pub updates: Vec<f64>,
}

/// Per-kernel centered-difference residuals of the PDEs at interior nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub max: [f64; 4],
    /// Discrete `L2(T)` norm, `sqrt(sum r^2 h^2)`.
    pub l2: [f64; 4],
}

impl ResidualReport {
    pub fn max_norm(&self) -> f64 {
        self.max.iter().fold(0.0, |m, v| m.max(*v))
    }

    /// Combined `L2` norm over the four kernels.
    pub fn l2_norm(&self) -> f64 {
        self.l2.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl GoursatProblem {
    fn check(&self) -> Result<()> {
        let m = self.grid.m;
        let ok = self
            .a_coef
            .iter()
            .chain(&self.b_coef)
            .chain(&self.diag)
            .all(|v| v.len() == m);
        if !ok {
            return Err(Error::Config(
                "kernel coefficient samples do not match the lattice".into(),
            ));
        }
        if !(self.mu > 0.0) || self.gamma.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::Model("kernel speeds must be positive".into()));
        }
        Ok(())
    }

    /// Frozen right-hand sides at every lattice node.
    fn rhs(&self, k: &[TriField; 4]) -> [TriField; 4] {
        let m = self.grid.m;
        let mut r = [
            TriField::zeros(m),
            TriField::zeros(m),
            TriField::zeros(m),
            TriField::zeros(m),
        ];
        for a in 0..m {
            for b in 0..=a {
                let kv = [
                    k[0].get(a, b),
                    k[1].get(a, b),
                    k[2].get(a, b),
                    k[3].get(a, b),
                ];
                for i in 0..3 {
                    let mut s = self.a_coef[i][b] * kv[3];
                    for j in 0..3 {
                        s += self.coupling[i][j] * kv[j];
                    }
                    r[i].set(a, b, s);
                }
                let s4 = (0..3).map(|j| self.b_coef[j][b] * kv[j]).sum();
                r[3].set(a, b, s4);
            }
        }
        r
    }

    /// Linear interpolation of diagonal data and diagonal right-hand side
    /// at fractional index `s` (`0 <= s < a`).
    fn diagonal_foot(&self, i: usize, r: &TriField, s: f64) -> (f64, f64) {
        let a0 = (s.floor() as usize).min(self.grid.m - 2);
        let t = s - a0 as f64;
        let d = (1.0 - t) * self.diag[i][a0] + t * self.diag[i][a0 + 1];
        let rf = (1.0 - t) * r.get(a0, a0) + t * r.get(a0 + 1, a0 + 1);
        (d, rf)
    }

    /// One sweep: integrates every kernel along its characteristic with the
    /// right-hand side `r` frozen.
    fn sweep(&self, r: &[TriField; 4], rule: MarchRule) -> [TriField; 4] {
        let m = self.grid.m;
        let h = self.grid.h();
        let mu = self.mu;
        let weight_head = match rule {
            MarchRule::Euler => 0.0,
            MarchRule::Trapezoid => 0.5,
        };
        let mut out = [
            TriField::zeros(m),
            TriField::zeros(m),
            TriField::zeros(m),
            TriField::zeros(m),
        ];
        for i in 0..3 {
            let ki = &mut out[i];
            let ri = &r[i];
            let gam = self.gamma[i];
            for a in 0..m {
                ki.set(a, a, self.diag[i][a]);
            }
            // Characteristic direction (dx, dxi) = (-mu, gamma) per unit s.
            // Foot on the diagonal when the step would cross it.
            let diag_step = |a: usize, b: usize| {
                let s = (a - b) as f64 * h / (gam + mu);
                (s, a as f64 - mu * s / h)
            };
            let ratio = gam / mu;
            if ratio <= 1.0 {
                // March in x: foot on line a-1 at xi index b + ratio.
                for a in 1..m {
                    for b in (0..a).rev() {
                        let head_r = ri.get(a, b);
                        let f = b as f64 + ratio;
                        let (kf, rf, ds) = if f <= (a - 1) as f64 + 1e-14 {
                            let b0 = (f.floor() as usize).min(a - 1);
                            let t = f - b0 as f64;
                            let b1 = (b0 + 1).min(a - 1);
                            let kf = (1.0 - t) * ki.get(a - 1, b0) + t * ki.get(a - 1, b1);
                            let rf = (1.0 - t) * ri.get(a - 1, b0) + t * ri.get(a - 1, b1);
                            (kf, rf, h / mu)
                        } else {
                            let (s, xs) = diag_step(a, b);
                            let (d, rf) = self.diagonal_foot(i, ri, xs);
                            (d, rf, s)
                        };
                        let v = kf + ds * ((1.0 - weight_head) * rf + weight_head * head_r);
                        ki.set(a, b, v);
                    }
                }
            } else {
                // March in xi (descending): foot on line b+1 at x index a - 1/ratio.
                let inv = 1.0 / ratio;
                for b in (0..m - 1).rev() {
                    for a in (b + 1)..m {
                        let head_r = ri.get(a, b);
                        let f = a as f64 - inv;
                        let (kf, rf, ds) = if f >= (b + 1) as f64 - 1e-14 {
                            let a0 = (f.floor() as usize).max(b + 1);
                            let t = (f - a0 as f64).max(0.0);
                            let a1 = (a0 + 1).min(a);
                            let kf = (1.0 - t) * ki.get(a0, b + 1) + t * ki.get(a1, b + 1);
                            let rf = (1.0 - t) * ri.get(a0, b + 1) + t * ri.get(a1, b + 1);
                            (kf, rf, h / gam)
                        } else {
                            let (s, xs) = diag_step(a, b);
                            let (d, rf) = self.diagonal_foot(i, ri, xs);
                            (d, rf, s)
                        };
                        let v = kf + ds * ((1.0 - weight_head) * rf + weight_head * head_r);
                        ki.set(a, b, v);
                    }
                }
            }
        }
        // K_4 along the (1, 1) lattice diagonals from the xi = 0 edge.
        let (first, last) = out.split_at_mut(3);
        let k4 = &mut last[0];
        for a in 0..m {
            let edge = (0..3).map(|j| self.q[j] * first[j].get(a, 0)).sum();
            k4.set(a, 0, edge);
            for b in 1..=a {
                let rf = r[3].get(a - 1, b - 1);
                let rh = r[3].get(a, b);
                let v =
                    k4.get(a - 1, b - 1) + h / mu * ((1.0 - weight_head) * rf + weight_head * rh);
                k4.set(a, b, v);
            }
        }
        out
    }

    /// Centered-difference residuals of the four PDEs.
    pub fn residual(&self, k: &[TriField; 4]) -> ResidualReport {
        let m = self.grid.m;
        let h = self.grid.h();
        let mut max = [0.0f64; 4];
        let mut sq = [0.0f64; 4];
        for a in 1..m - 1 {
            for b in 1..a.saturating_sub(1) {
                let kv = |j: usize| k[j].get(a, b);
                for i in 0..3 {
                    let dx = (k[i].get(a + 1, b) - k[i].get(a - 1, b)) / (2.0 * h);
                    let dxi = (k[i].get(a, b + 1) - k[i].get(a, b - 1)) / (2.0 * h);
                    let mut rhs = self.a_coef[i][b] * kv(3);
                    for j in 0..3 {
                        rhs += self.coupling[i][j] * kv(j);
                    }
                    let res = self.mu * dx - self.gamma[i] * dxi - rhs;
                    max[i] = max[i].max(res.abs());
                    sq[i] += res * res * h * h;
                }
                let dx = (k[3].get(a + 1, b) - k[3].get(a - 1, b)) / (2.0 * h);
                let dxi = (k[3].get(a, b + 1) - k[3].get(a, b - 1)) / (2.0 * h);
                let rhs: f64 = (0..3).map(|j| self.b_coef[j][b] * kv(j)).sum();
                let res = self.mu * (dx + dxi) - rhs;
                max[3] = max[3].max(res.abs());
                sq[3] += res * res * h * h;
            }
        }
        ResidualReport {
            max,
            l2: sq.map(f64::sqrt),
        }
    }

    /// Largest violation of the diagonal and `xi = 0` boundary conditions.
    pub fn boundary_error(&self, k: &[TriField; 4]) -> f64 {
        let mut err = 0.0f64;
        for a in 0..self.grid.m {
            for i in 0..3 {
                err = err.max((k[i].get(a, a) - self.diag[i][a]).abs());
            }
            let edge: f64 = (0..3).map(|j| self.q[j] * k[j].get(a, 0)).sum();
            err = err.max((k[3].get(a, 0) - edge).abs());
        }
        err
    }
}

/// Solves the Goursat problem by successive approximations.
///
/// Fails with [`Error::Solver`] if the sup-norm update does not fall below
/// `tol` within `max_iter` sweeps or the iteration diverges.
pub fn solve_goursat(
    problem: &GoursatProblem,
    rule: MarchRule,
    tol: f64,
    max_iter: usize,
    what: &str,
) -> Result<GoursatSolution> {
    problem.check()?;
    let m = problem.grid.m;
    let mut k = [
        TriField::zeros(m),
        TriField::zeros(m),
        TriField::zeros(m),
        TriField::zeros(m),
    ];
    let mut updates = Vec::new();
    for it in 1..=max_iter {
        let r = problem.rhs(&k);
        let next = problem.sweep(&r, rule);
        let upd = (0..4).fold(0.0f64, |u, j| u.max(next[j].max_diff(&k[j])));
        k = next;
        updates.push(upd);
        if !upd.is_finite() || upd > 1e12 {
            return Err(Error::Solver {
                what: what.into(),
                iterations: it,
                last_update: upd,
            });
        }
        if upd < tol {
            return Ok(GoursatSolution {
                k,
                iterations: it,
                updates,
            });
        }
    }
    Err(Error::Solver {
        what: what.into(),
        iterations: max_iter,
        last_update: *updates.last().unwrap_or(&f64::NAN),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar manufactured problem: constant coefficients, one coupling, so
    /// `K_1 = exp(c (x - xi))`-type solutions are smooth.
    fn manufactured(m: usize, gamma: f64) -> GoursatProblem {
        let grid = TriangularGrid::new(m, 1.0).unwrap();
        let zeros = vec![0.0; m];
        GoursatProblem {
            grid,
            mu: 1.3,
            gamma: [gamma, 2.0, 0.5],
            coupling: [[0.4, 0.0, 0.0], [0.0, -0.3, 0.0], [0.0, 0.0, 0.2]],
            a_coef: [zeros.clone(), zeros.clone(), zeros.clone()],
            b_coef: [zeros.clone(), zeros.clone(), zeros.clone()],
            diag: [
                grid.nodes().iter().map(|x| 1.0 + x).collect(),
                vec![1.0; m],
                zeros.clone(),
            ],
            q: [0.5, 0.0, 0.0],
        }
    }

    /// Closed form of kernel 1 for [`manufactured`]: along a characteristic
    /// `K' = c K / ...`, from the diagonal foot `x* = (gamma x + mu xi)/(gamma + mu)`.
    fn exact_k1(x: f64, xi: f64, mu: f64, gamma: f64, c: f64) -> f64 {
        let s = (x - xi) / (gamma + mu);
        let xs = x - mu * s;
        (1.0 + xs) * (c * s).exp()
    }

    #[test]
    fn decoupled_kernel_matches_characteristics() {
        for gamma in [0.4, 3.0] {
            let pb = manufactured(41, gamma);
            let sol = solve_goursat(&pb, MarchRule::Trapezoid, 1e-13, 50, "test").unwrap();
            let g = pb.grid;
            let mut err = 0.0f64;
            for a in 0..g.m {
                for b in 0..=a {
                    let e = exact_k1(g.x(a), g.x(b), pb.mu, gamma, 0.4);
                    err = err.max((sol.k[0].get(a, b) - e).abs());
                }
            }
            assert!(err < 1e-3, "gamma {gamma}: {err}");
            assert!(pb.boundary_error(&sol.k) < 1e-14);
        }
    }

    #[test]
    fn euler_rule_is_first_order() {
        let mut errs = Vec::new();
        for m in [21, 41, 81] {
            let pb = manufactured(m, 0.4);
            let sol = solve_goursat(&pb, MarchRule::Euler, 1e-13, 50, "test").unwrap();
            let g = pb.grid;
            let e = (0..g.m)
                .flat_map(|a| (0..=a).map(move |b| (a, b)))
                .map(|(a, b)| {
                    (sol.k[0].get(a, b) - exact_k1(g.x(a), g.x(b), pb.mu, 0.4, 0.4)).abs()
                })
                .fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.6..2.4).contains(&ratio), "ratio {ratio} from {errs:?}");
        }
    }

    #[test]
    fn zero_data_gives_zero_kernels() {
        let mut pb = manufactured(21, 0.4);
        for d in pb.diag.iter_mut() {
            d.iter_mut().for_each(|v| *v = 0.0);
        }
        let sol = solve_goursat(&pb, MarchRule::Euler, 1e-12, 10, "test").unwrap();
        assert!(sol.k.iter().all(|k| k.max_abs() == 0.0));
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn iteration_cap_reports_solver_error() {
        let mut pb = manufactured(21, 0.4);
        pb.b_coef[0] = vec![1.0; 21];
        pb.a_coef[0] = vec![1.0; 21];
        let err = solve_goursat(&pb, MarchRule::Euler, 1e-30, 2, "probe").unwrap_err();
        assert!(matches!(err, Error::Solver { iterations: 2, .. }));
        assert_eq!(err.exit_code(), 3);
    }
}
