//! Volterra operators on the triangle and their discrete resolvents.
//!
//! An integral operator `(K f)(x) = int_0^x k(x, xi) f(xi) dxi` is
//! discretized by the composite trapezoid rule on `[0, x_a]`, i.e. by the
//! lower-triangular matrix `K_ac = h w(a, c) k(a, c)`. Products and inverses
//! of such matrices are again of this form once the kernel at `(a, c)` is
//! read with the product weight `w(a, d) w(d, c) / w(a, c)`. Solving the
//! resolvent equations with these weights makes forward and inverse
//! transforms exact inverses of each other at the discrete level.

use super::lattice::{TriField, TriangularGrid};

/// Trapezoid weight of node `c` in the rule on `[0, x_a]`.
#[inline]
pub fn trapezoid_weight(a: usize, c: usize) -> f64 {
    if a == 0 {
        0.0
    } else if c == 0 || c == a {
        0.5
    } else {
        1.0
    }
}

/// Weight of the intermediate node `d` when composing on `[xi_c, x_a]`.
#[inline]
fn product_weight(a: usize, d: usize, c: usize) -> f64 {
    let wac = trapezoid_weight(a, c);
    if wac == 0.0 {
        0.0
    } else {
        trapezoid_weight(a, d) * trapezoid_weight(d, c) / wac
    }
}

/// Applies the operator to a nodal function: `int_0^{x_a} k(x_a, xi) f(xi)`.
pub fn apply(grid: &TriangularGrid, k: &TriField, f: &[f64]) -> Vec<f64> {
    let h = grid.h();
    (0..grid.m)
        .map(|a| {
            let row = k.row(a);
            (0..=a)
                .map(|c| trapezoid_weight(a, c) * row[c] * f[c])
                .sum::<f64>()
                * h
        })
        .collect()
}

/// `(f o g)(x, xi) = int_xi^x f(x, s) g(s, xi) ds`.
pub fn compose(grid: &TriangularGrid, f: &TriField, g: &TriField) -> TriField {
    let h = grid.h();
    TriField::from_fn(grid.m, |a, c| {
        (c..=a)
            .map(|d| product_weight(a, d, c) * f.get(a, d) * g.get(d, c))
            .sum::<f64>()
            * h
    })
}

/// Solves `l = f + beta int_xi^x l(x, s) k(s, xi) ds`.
pub fn resolve_left(grid: &TriangularGrid, f: &TriField, k: &TriField, beta: f64) -> TriField {
    let h = grid.h();
    let mut l = TriField::zeros(grid.m);
    for a in 0..grid.m {
        for c in (0..=a).rev() {
            let mut s = f.get(a, c);
            for d in (c + 1)..=a {
                s += beta * h * product_weight(a, d, c) * l.get(a, d) * k.get(d, c);
            }
            let own = 1.0 - beta * h * product_weight(a, c, c) * k.get(c, c);
            l.set(a, c, s / own);
        }
    }
    l
}

/// Solves `l = f + beta int_xi^x k(x, s) l(s, xi) ds`.
pub fn resolve_right(grid: &TriangularGrid, f: &TriField, k: &TriField, beta: f64) -> TriField {
    let h = grid.h();
    let mut l = TriField::zeros(grid.m);
    for c in 0..grid.m {
        for a in c..grid.m {
            let mut s = f.get(a, c);
            for d in c..a {
                s += beta * h * product_weight(a, d, c) * k.get(a, d) * l.get(d, c);
            }
            let own = 1.0 - beta * h * product_weight(a, a, c) * k.get(a, a);
            l.set(a, c, s / own);
        }
    }
    l
}

/// Plain composite-trapezoid residual of `l = f + beta int l(x,s) k(s,xi) ds`
/// at every node, independent of the product-weight discretization.
pub fn left_identity_residual(
    grid: &TriangularGrid,
    l: &TriField,
    f: &TriField,
    k: &TriField,
    beta: f64,
) -> TriField {
    let h = grid.h();
    TriField::from_fn(grid.m, |a, c| {
        let n = a - c;
        let integral = if n == 0 {
            0.0
        } else {
            (c..=a)
                .map(|d| {
                    let w = if d == c || d == a { 0.5 } else { 1.0 };
                    w * l.get(a, d) * k.get(d, c)
                })
                .sum::<f64>()
                * h
        };
        l.get(a, c) - f.get(a, c) - beta * integral
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: usize) -> TriangularGrid {
        TriangularGrid::new(m, 1.0).unwrap()
    }

    fn sample(g: &TriangularGrid, f: impl Fn(f64, f64) -> f64) -> TriField {
        TriField::from_fn(g.m, |a, b| f(g.x(a), g.x(b)))
    }

    #[test]
    fn constant_kernel_resolvent_is_exponential() {
        // l = 1 + int_xi^x l ds  =>  l = exp(x - xi).
        let g = grid(201);
        let one = sample(&g, |_, _| 1.0);
        let l = resolve_left(&g, &one, &one, 1.0);
        let mut err = 0.0f64;
        for a in 1..g.m {
            for c in 1..a {
                err = err.max((l.get(a, c) - (g.x(a) - g.x(c)).exp()).abs());
            }
        }
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn resolvent_inverts_the_discrete_operator() {
        let g = grid(33);
        let k = sample(&g, |x, xi| 0.7 * (x - 2.0 * xi).sin() + 0.3);
        let l = resolve_left(&g, &k, &k, 1.0);
        let f: Vec<f64> = g.nodes().iter().map(|x| (3.0 * x).cos()).collect();
        // v = (I - K) f, then f = (I + L) v.
        let kf = apply(&g, &k, &f);
        let v: Vec<f64> = f.iter().zip(&kf).map(|(a, b)| a - b).collect();
        let lv = apply(&g, &l, &v);
        for ((fi, vi), li) in f.iter().zip(&v).zip(&lv) {
            assert!((vi + li - fi).abs() < 1e-13);
        }
    }

    #[test]
    fn left_and_right_resolvents_coincide() {
        // Both forms describe the same inverse (I - K)^{-1} - I.
        let g = grid(25);
        let k = sample(&g, |x, xi| (x + xi).cos() - 0.2);
        let left = resolve_left(&g, &k, &k, 1.0);
        let right = resolve_right(&g, &k, &k, 1.0);
        assert!(left.max_diff(&right) < 1e-12);
    }

    #[test]
    fn trapezoid_identity_defect_is_confined_to_edges() {
        // Off the diagonal and the xi = 0 column the product weights equal
        // the plain trapezoid weights; on those two edges the defect is O(h).
        let mut edge_defects = Vec::new();
        for m in [33, 65] {
            let g = grid(m);
            let k = sample(&g, |x, xi| 1.0 + x * xi);
            let l = resolve_left(&g, &k, &k, 1.0);
            let r = left_identity_residual(&g, &l, &k, &k, 1.0);
            let mut interior = 0.0f64;
            let mut edges = 0.0f64;
            for a in 1..m {
                for c in 0..=a {
                    if c == 0 || c == a {
                        edges = edges.max(r.get(a, c).abs());
                    } else {
                        interior = interior.max(r.get(a, c).abs());
                    }
                }
            }
            let coupling = k.max_abs() * l.max_abs();
            assert!(interior <= 1e-12 * coupling, "{interior}");
            assert!(edges <= g.h() * coupling, "{edges}");
            edge_defects.push(edges);
        }
        let ratio = edge_defects[0] / edge_defects[1];
        assert!((1.6..2.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn composition_with_zero_vanishes() {
        let g = grid(9);
        let k = sample(&g, |x, xi| x - xi + 1.0);
        let z = TriField::zeros(9);
        assert_eq!(compose(&g, &k, &z).max_abs(), 0.0);
        assert_eq!(resolve_left(&g, &z, &k, 1.0).max_abs(), 0.0);
    }
}
