//! Storage for functions on the triangle `0 <= xi <= x <= L`.

use crate::error::{Error, Result};

/// Uniform lattice `x_a = a h`, `xi_b = b h`, `0 <= b <= a < m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularGrid {
    pub m: usize,
    pub length: f64,
}

impl TriangularGrid {
    pub fn new(m: usize, length: f64) -> Result<Self> {
        if m < 3 {
            return Err(Error::Config(format!(
                "kernel lattice needs at least 3 nodes, got {m}"
            )));
        }
        if !(length > 0.0) {
            return Err(Error::Config(format!(
                "lattice length must be positive, got {length}"
            )));
        }
        Ok(Self { m, length })
    }

    pub fn h(&self) -> f64 {
        self.length / (self.m - 1) as f64
    }

    pub fn x(&self, a: usize) -> f64 {
        a as f64 * self.h()
    }

    /// Node coordinates `x_0 .. x_{m-1}`.
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m).map(|a| self.x(a)).collect()
    }

    /// Number of lattice points in the triangle.
    pub fn len(&self) -> usize {
        self.m * (self.m + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }
}

/// Lower-triangular field with packed row storage.
#[derive(Debug, Clone, PartialEq)]
pub struct TriField {
    m: usize,
    data: Vec<f64>,
}

impl TriField {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            data: vec![0.0; m * (m + 1) / 2],
        }
    }

    /// Samples `f(a, b)` at every lattice point.
    pub fn from_fn(m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(m);
        for a in 0..m {
            for b in 0..=a {
                t.set(a, b, f(a, b));
            }
        }
        t
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    fn index(a: usize, b: usize) -> usize {
        debug_assert!(b <= a);
        a * (a + 1) / 2 + b
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.data[Self::index(a, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        self.data[Self::index(a, b)] = v;
    }

    /// Row `x_a` as a slice over `xi_0 ..= xi_a`.
    pub fn row(&self, a: usize) -> &[f64] {
        let s = Self::index(a, 0);
        &self.data[s..=s + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |self - other|`.
    pub fn max_diff(&self, other: &TriField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Reflects across the anti-diagonal: `out(a, b) = self(m-1-b, m-1-a)`.
    pub fn flipped(&self) -> TriField {
        let m = self.m;
        TriField::from_fn(m, |a, b| self.get(m - 1 - b, m - 1 - a))
    }

    /// Bilinear interpolation at `(x, xi)` with `0 <= xi <= x <= length`.
    pub fn interpolate(&self, grid: &TriangularGrid, x: f64, xi: f64) -> f64 {
        let h = grid.h();
        let last = (self.m - 1) as f64;
        let fx = (x / h).clamp(0.0, last);
        let fxi = (xi / h).clamp(0.0, fx);
        let a0 = (fx.floor() as usize).min(self.m - 2);
        let tx = fx - a0 as f64;
        let b0 = (fxi.floor() as usize).min(self.m - 2);
        let ty = fxi - b0 as f64;
        if b0 >= a0 {
            // Diagonal cell: linear interpolation on its lower triangle.
            let ty = ty.min(tx);
            let f00 = self.get(a0, a0);
            let f10 = self.get(a0 + 1, a0);
            let f11 = self.get(a0 + 1, a0 + 1);
            return f00 + tx * (f10 - f00) + ty * (f11 - f10);
        }
        let lo = (1.0 - ty) * self.get(a0, b0) + ty * self.get(a0, b0 + 1);
        let hi = (1.0 - ty) * self.get(a0 + 1, b0) + ty * self.get(a0 + 1, b0 + 1);
        (1.0 - tx) * lo + tx * hi
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_indexing_round_trips() {
        let t = TriField::from_fn(5, |a, b| (10 * a + b) as f64);
        assert_eq!(t.get(4, 2), 42.0);
        assert_eq!(t.row(3), &[30.0, 31.0, 32.0, 33.0]);
        assert_eq!(t.values().len(), 15);
    }

    #[test]
    fn flip_is_an_involution() {
        let t = TriField::from_fn(6, |a, b| (a * a + 3 * b) as f64);
        assert_eq!(t.flipped().flipped(), t);
        assert_eq!(t.flipped().get(5, 0), t.get(5, 0));
        assert_eq!(t.flipped().get(3, 1), t.get(4, 2));
    }

    #[test]
    fn interpolation_is_exact_for_bilinear_data() {
        let g = TriangularGrid::new(11, 2.0).unwrap();
        let t = TriField::from_fn(11, |a, b| 1.0 + 2.0 * g.x(a) - 0.5 * g.x(b));
        for (x, xi) in [(0.33, 0.1), (1.7, 1.69), (2.0, 0.0), (1.0, 1.0)] {
            let v = t.interpolate(&g, x, xi);
            assert!((v - (1.0 + 2.0 * x - 0.5 * xi)).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_lattice_is_rejected() {
        assert!(TriangularGrid::new(2, 1.0).is_err());
        assert!(TriangularGrid::new(5, 0.0).is_err());
    }
}
