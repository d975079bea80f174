//! Regular lattice on `[-1, 1]^4` with ball-aware node classification and
//! quadrature over the open unit ball.
//!
//! Node classes partition the lattice by distance from the unit sphere:
//! interior (`|x| <= 1 - 2h`), band (`1 - 2h < |x| <= 1 + 2h`), exterior
//! (beyond). The band is wide enough that every interior node has a full
//! central 9-point stencil reading only interior or band values.

use crate::error::{Error, Result};
use crate::par;

// ---------------------------------------------------------------------------
// node classes and quadrature rules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum NodeClass {
    Interior,
    Band,
    Exterior,
}

/// Quadrature rule for integrals over the unit ball.
///
/// `Indicator` gives every node with `|x| < 1` the full cell volume `h^4`.
/// `PartialCell` (the default everywhere) scales the cell volume by the
/// fraction of 2^4 cell subsamples falling inside the ball, which smooths the
/// staircase error of the indicator rule near the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadRule {
    Indicator,
    #[default]
    PartialCell,
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct Grid4 {
    n: usize,
    h: f64,
    len: usize,
    stride: [usize; 4],
    class: Vec<NodeClass>,
    r2: Vec<f64>,
    w_partial: Vec<f64>,
    w_indicator: Vec<f64>,
    interior: Vec<u32>,
    weighted: Vec<u32>,
    /// `(1 - 4h)^2`; deep interior is `r2 <= deep_r2`. Negative when N < 9,
    /// in which case the deep interior is empty.
    deep_r2: f64,
    /// Lazily built discrete Laplacian and its transpose (see `ops`). Stored
    /// here so every consumer of the same grid shares one assembly.
    pub(crate) lap_cell: std::sync::OnceLock<std::result::Result<crate::ops::LapOp, String>>,
    pub(crate) lap_t_cell: std::sync::OnceLock<crate::ops::LapOpT>,
}

impl Grid4 {
    pub fn build(n: usize) -> Result<Grid4> {
        if n < 5 || n % 2 == 0 {
            return Err(Error::Grid(format!("N must be odd >= 5, got {n}")));
        }
        let h = 2.0 / (n as f64 - 1.0);
        let len = n * n * n * n;
        let stride = [n * n * n, n * n, n, 1];

        let inner2 = (1.0 - 2.0 * h) * (1.0 - 2.0 * h);
        let outer2 = (1.0 + 2.0 * h) * (1.0 + 2.0 * h);
        let deep = 1.0 - 4.0 * h;
        let deep_r2 = if deep >= 0.0 { deep * deep } else { -1.0 };

        let mut class = vec![NodeClass::Exterior; len];
        let mut r2 = vec![0.0; len];
        let mut w_partial = vec![0.0; len];
        let mut w_indicator = vec![0.0; len];
        let mut interior = Vec::new();
        let mut weighted = Vec::new();

        let cell = h * h * h * h;
        // 2^4 subsample offsets at the cell quarter-points.
        let q = h / 4.0;
        let mut offs = [[0.0f64; 4]; 16];
        for (s, off) in offs.iter_mut().enumerate() {
            for d in 0..4 {
                off[d] = if (s >> d) & 1 == 0 { -q } else { q };
            }
        }

        for idx in 0..len {
            let x = coord_of(idx, n, h, &stride);
            let rr = x.iter().map(|c| c * c).sum::<f64>();
            r2[idx] = rr;
            class[idx] = if rr <= inner2 {
                NodeClass::Interior
            } else if rr <= outer2 {
                NodeClass::Band
            } else {
                NodeClass::Exterior
            };
            if class[idx] == NodeClass::Interior {
                interior.push(idx as u32);
            }
            if rr < 1.0 {
                w_indicator[idx] = cell;
            }
            let mut inside = 0usize;
            for off in &offs {
                let mut s2 = 0.0;
                for d in 0..4 {
                    let c = x[d] + off[d];
                    s2 += c * c;
                }
                if s2 < 1.0 {
                    inside += 1;
                }
            }
            if inside > 0 {
                w_partial[idx] = cell * inside as f64 / 16.0;
                weighted.push(idx as u32);
            }
        }

        Ok(Grid4 {
            n,
            h,
            len,
            stride,
            class,
            r2,
            w_partial,
            w_indicator,
            interior,
            weighted,
            deep_r2,
            lap_cell: std::sync::OnceLock::new(),
            lap_t_cell: std::sync::OnceLock::new(),
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, m: [usize; 4]) -> usize {
        m[0] * self.stride[0] + m[1] * self.stride[1] + m[2] * self.stride[2] + m[3]
    }

    #[inline]
    pub fn multi(&self, idx: usize) -> [usize; 4] {
        [
            idx / self.stride[0],
            (idx / self.stride[1]) % self.n,
            (idx / self.stride[2]) % self.n,
            idx % self.n,
        ]
    }

    #[inline]
    pub fn coord(&self, idx: usize) -> [f64; 4] {
        coord_of(idx, self.n, self.h, &self.stride)
    }

    #[inline]
    pub fn r2(&self, idx: usize) -> f64 {
        self.r2[idx]
    }

    #[inline]
    pub fn class(&self, idx: usize) -> NodeClass {
        self.class[idx]
    }

    /// Lattice neighbor `idx +/- step` along `axis`, or `None` off-lattice.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let i = (idx / self.stride[axis]) % self.n;
        let j = i as isize + step;
        if j < 0 || j >= self.n as isize {
            return None;
        }
        Some((idx as isize + step * self.stride[axis] as isize) as usize)
    }

    /// Deep interior: `|x| <= 1 - 4h`, where the composed bilaplacian stencil
    /// stays strictly inside interior + band. Empty for N < 9.
    #[inline]
    pub fn is_deep(&self, idx: usize) -> bool {
        self.r2[idx] <= self.deep_r2
    }

    pub fn require_deep_interior(&self) -> Result<()> {
        if self.deep_r2 < 0.0 {
            return Err(Error::Grid(format!(
                "deep interior is empty at N = {} (need N >= 9)",
                self.n
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, rule: QuadRule, idx: usize) -> f64 {
        match rule {
            QuadRule::Indicator => self.w_indicator[idx],
            QuadRule::PartialCell => self.w_partial[idx],
        }
    }

    pub fn weights(&self, rule: QuadRule) -> &[f64] {
        match rule {
            QuadRule::Indicator => &self.w_indicator,
            QuadRule::PartialCell => &self.w_partial,
        }
    }

    /// Indices of interior nodes, ascending.
    pub fn interior_nodes(&self) -> &[u32] {
        &self.interior
    }

    /// Indices of nodes carrying positive partial-cell weight, ascending.
    pub fn weighted_nodes(&self) -> &[u32] {
        &self.weighted
    }

    /// `sum_i w_i f(i)` over the whole lattice in fixed pairwise-tree order.
    pub fn integrate_with<F>(&self, rule: QuadRule, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync,
    {
        let w = self.weights(rule);
        par::tree_sum_by(0, self.len, &|i| {
            let wi = w[i];
            if wi == 0.0 {
                0.0
            } else {
                wi * f(i)
            }
        })
    }

    /// Integral with weights zeroed outside the deep interior, for
    /// quantities that are only defined where the bilaplacian is.
    pub fn integrate_deep_with<F>(&self, rule: QuadRule, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync,
    {
        let w = self.weights(rule);
        par::tree_sum_by(0, self.len, &|i| {
            let wi = w[i];
            if wi == 0.0 || !self.is_deep(i) {
                0.0
            } else {
                wi * f(i)
            }
        })
    }
}

#[inline]
fn coord_of(idx: usize, n: usize, h: f64, stride: &[usize; 4]) -> [f64; 4] {
    let m = [
        idx / stride[0],
        (idx / stride[1]) % n,
        (idx / stride[2]) % n,
        idx % n,
    ];
    [
        m[0] as f64 * h - 1.0,
        m[1] as f64 * h - 1.0,
        m[2] as f64 * h - 1.0,
        m[3] as f64 * h - 1.0,
    ]
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ball_volume() -> f64 {
        PI * PI / 2.0
    }

    #[test]
    fn rejects_bad_n() {
        assert!(Grid4::build(3).is_err());
        assert!(Grid4::build(4).is_err());
        assert!(Grid4::build(16).is_err());
        assert!(Grid4::build(5).is_ok());
    }

    #[test]
    fn coarsest_lattice_enumeration() {
        // {-1, 0, 1}^4 by brute force: only the origin lies strictly inside
        // the ball. Grid4 itself requires N >= 5, so enumerate directly.
        let vals = [-1.0f64, 0.0, 1.0];
        let mut count = 0;
        for a in vals {
            for b in vals {
                for c in vals {
                    for d in vals {
                        if a * a + b * b + c * c + d * d < 1.0 {
                            count += 1;
                        }
                    }
                }
            }
        }
        assert_eq!(count, 1);
    }

    #[test]
    fn n5_ball_node_count() {
        // h = 1/2: the 3^4 nodes with coordinates in {0, +-1/2} minus the 16
        // corners (+-1/2, ..., +-1/2) that sit exactly on the sphere.
        let g = Grid4::build(5).unwrap();
        let count = (0..g.len()).filter(|&i| g.r2(i) < 1.0).count();
        assert_eq!(count, 65);
    }

    #[test]
    fn classes_partition_and_weights_supported_inside() {
        for n in [5, 7, 9, 11] {
            let g = Grid4::build(n).unwrap();
            let mut per_class = [0usize; 3];
            for i in 0..g.len() {
                per_class[g.class(i) as usize] += 1;
                assert!(g.weight(QuadRule::PartialCell, i) >= 0.0);
                assert!(g.weight(QuadRule::Indicator, i) >= 0.0);
                if g.class(i) == NodeClass::Exterior {
                    assert_eq!(g.weight(QuadRule::PartialCell, i), 0.0);
                    assert_eq!(g.weight(QuadRule::Indicator, i), 0.0);
                }
            }
            assert_eq!(per_class.iter().sum::<usize>(), g.len());
            if n == 5 {
                // 1 - 2h = 0: only the origin clears the interior margin,
                // and 1 + 2h = 2 reaches the lattice corners, so nothing is
                // exterior yet.
                assert_eq!(per_class[0], 1);
                assert_eq!(per_class[2], 0);
            } else {
                assert!(per_class[0] > 1);
                assert!(per_class[2] > 0);
            }
            assert!(per_class[1] > 0);
        }
    }

    #[test]
    fn deep_interior_empty_below_n9() {
        let g = Grid4::build(7).unwrap();
        assert!(g.require_deep_interior().is_err());
        assert_eq!((0..g.len()).filter(|&i| g.is_deep(i)).count(), 0);

        let g = Grid4::build(9).unwrap();
        g.require_deep_interior().unwrap();
        // 1 - 4h = 0: exactly the origin.
        assert_eq!((0..g.len()).filter(|&i| g.is_deep(i)).count(), 1);
    }

    #[test]
    fn sphere_node_is_band_with_half_cell() {
        // N = 17 has nodes exactly on the sphere, e.g. (1, 0, 0, 0). The
        // indicator rule drops them; the partial-cell rule keeps the inward
        // half of the subsamples.
        let g = Grid4::build(17).unwrap();
        let i = g.idx([16, 8, 8, 8]);
        assert_eq!(g.coord(i), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.r2(i), 1.0);
        assert_eq!(g.class(i), NodeClass::Band);
        assert_eq!(g.weight(QuadRule::Indicator, i), 0.0);
        let h = g.h();
        assert_eq!(g.weight(QuadRule::PartialCell, i), h * h * h * h * 0.5);
    }

    #[test]
    fn total_weight_approximates_ball_volume() {
        let vol = ball_volume();
        let g17 = Grid4::build(17).unwrap();
        let ind: f64 = g17.weights(QuadRule::Indicator).iter().sum();
        let par: f64 = g17.weights(QuadRule::PartialCell).iter().sum();
        assert!(
            (ind - vol).abs() <= 0.05 * vol,
            "indicator N=17: {ind} vs {vol}"
        );
        assert!(
            (par - vol).abs() <= 0.05 * vol,
            "partial N=17: {par} vs {vol}"
        );

        let g33 = Grid4::build(33).unwrap();
        let par33: f64 = g33.weights(QuadRule::PartialCell).iter().sum();
        assert!(
            (par33 - vol).abs() <= 0.02 * vol,
            "partial N=33: {par33} vs {vol}"
        );
    }

    #[test]
    fn quadratic_moment_converges() {
        // integral of |x|^2 over the ball = 2 pi^2 / 6 = pi^2 / 3.
        let exact = PI * PI / 3.0;
        let mut prev_err = f64::INFINITY;
        for n in [9, 17, 33] {
            let g = Grid4::build(n).unwrap();
            let val = g.integrate_with(QuadRule::PartialCell, |i| g.r2(i));
            let err = (val - exact).abs();
            assert!(err < prev_err, "error not decreasing at N={n}: {err}");
            prev_err = err;
        }
        assert!(prev_err <= 0.02 * exact);
    }

    #[test]
    fn neighbor_arithmetic() {
        let g = Grid4::build(5).unwrap();
        let c = g.idx([2, 2, 2, 2]);
        for axis in 0..4 {
            let p = g.neighbor(c, axis, 1).unwrap();
            let m = g.neighbor(c, axis, -1).unwrap();
            assert_eq!(g.multi(p)[axis], 3);
            assert_eq!(g.multi(m)[axis], 1);
        }
        let corner = g.idx([0, 0, 0, 0]);
        assert!(g.neighbor(corner, 0, -1).is_none());
        assert!(g.neighbor(corner, 0, 1).is_some());
    }

    #[test]
    fn integrate_matches_plain_sum() {
        let g = Grid4::build(9).unwrap();
        let tree = g.integrate_with(QuadRule::PartialCell, |i| g.r2(i) + 1.0);
        let plain: f64 = (0..g.len())
            .map(|i| g.weight(QuadRule::PartialCell, i) * (g.r2(i) + 1.0))
            .sum();
        assert!((tree - plain).abs() <= 1e-12 * plain.abs());
    }
}
