//! Hardy quotients, harmonic polynomial bases, and the pointwise scaling
//! profiles behind the regularity checks.

use std::sync::Arc;

use num_integer::{gcd, lcm};
use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{Grid4, QuadRule};
use crate::{maps, ops, par, sphere};

// ---------------------------------------------------------------------------
// hardy quotient
// ---------------------------------------------------------------------------

/// Mollifier for the singular Hardy weight: the quotient integrates
/// `|w|^2 (1 - |x| + MOLL * h^2)^-4`. Nodes can sit arbitrarily close to the
/// sphere, where the raw weight overflows; an O(h) offset would instead bias
/// the quotient visibly, because the weight concentrates half its mass within
/// 0.2 of the sphere. The O(h^2) offset keeps the bias below the quadrature
/// error of the denominator while still bounding the weight pointwise.
pub const HARDY_WEIGHT_MOLLIFIER: f64 = 0.5;

/// A clamped field may not exceed this at any node with `|x| >= 1`: the
/// quotient is only meaningful for the zero extension beyond the sphere.
pub const HARDY_CLAMPED_TOL: f64 = 1e-10;

/// `[int |w|^2 (1-|x|+h^2/2)^-4] / [int |Delta_h w|^2]` over the unit ball.
///
/// `w` is a scalar (or vector, via the pointwise norm) field vanishing beyond
/// the sphere; the quotient is the quantity the second-order Hardy inequality
/// bounds by a constant independent of `w`.
pub fn hardy_ratio(w: &Field) -> Result<f64> {
    let g = w.grid().clone();
    let mut worst = 0.0f64;
    for i in 0..g.len() {
        if g.r2(i) >= 1.0 {
            worst = worst.max(w.node_norm(i));
        }
    }
    if worst > HARDY_CLAMPED_TOL {
        return Err(Error::Precondition(format!(
            "hardy quotient needs the zero extension: |w| reaches {worst:.3e} beyond the sphere"
        )));
    }

    let lw = ops::laplacian(w)?;
    let den = lw.l2_sq(QuadRule::PartialCell);
    if den <= f64::MIN_POSITIVE {
        return Err(Error::Degenerate(
            "hardy quotient of the zero field is undefined".into(),
        ));
    }

    let h = g.h();
    let delta = HARDY_WEIGHT_MOLLIFIER * h * h;
    let num = g.integrate_with(QuadRule::PartialCell, |i| {
        let r2 = g.r2(i);
        if r2 >= 1.0 {
            return 0.0;
        }
        let v = w.node_norm(i);
        if v == 0.0 {
            return 0.0;
        }
        let s = 1.0 - r2.sqrt() + delta;
        let s2 = s * s;
        v * v / (s2 * s2)
    });
    Ok(num / den)
}

/// The canonical clamped test field `(1 - |x|^2)^2`, zero beyond the sphere.
pub fn clamped_bump_field(grid: Arc<Grid4>) -> Field {
    Field::from_fn(grid, 1, |x, out| {
        let r2: f64 = x.iter().map(|c| c * c).sum();
        out[0] = if r2 < 1.0 { maps::clamped_bump(x) } else { 0.0 };
    })
}

/// Hardy quotients of a family of clamped test fields.
#[derive(Debug, Clone)]
pub struct HardyEstimate {
    /// Largest quotient seen: an empirical lower bound for the best constant.
    pub max_ratio: f64,
    /// Quotient of every field, in family order.
    pub ratios: Vec<f64>,
}

/// Max of [`hardy_ratio`] over a family of `k` clamped fields: the plain bump
/// `(1-|x|^2)^2` first, then seeded smooth bumps times the same profile.
///
/// Families with the same seed are nested in `k`, so the estimate is monotone
/// non-decreasing in the family size. `k >= 10` is the intended regime; any
/// positive `k` is accepted.
pub fn hardy_constant_estimate(grid: Arc<Grid4>, k: usize, seed: u64) -> Result<HardyEstimate> {
    if k == 0 {
        return Err(Error::Range(
            "hardy estimate needs at least one test field".into(),
        ));
    }
    let mut ratios = Vec::with_capacity(k);
    for i in 0..k {
        let field = if i == 0 {
            clamped_bump_field(grid.clone())
        } else {
            maps::seeded_clamped_scalar(grid.clone(), seed.wrapping_add(i as u64))
        };
        ratios.push(hardy_ratio(&field)?);
    }
    let max_ratio = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(HardyEstimate { max_ratio, ratios })
}

// ---------------------------------------------------------------------------
// pointwise scaling profile
// ---------------------------------------------------------------------------

/// Smallness gate for the scaling profile: `|Lap u|_2^2` may not exceed the
/// canonical energy threshold the regularity statement assumes.
pub const PROFILE_SMALLNESS: f64 = 0.05;

/// Criticality gate: the intrinsic residual may not exceed this fraction of
/// `|Lap u|_2`. Sampled near-critical maps sit orders of magnitude below.
pub const PROFILE_RESIDUAL_FRAC: f64 = 0.05;

/// `sup over interior nodes of (1 - |x|)^l |D^(l) u| / |Lap u|_2` for
/// `l = 1` (gradient magnitude) or `l = 2` (laplacian magnitude, the
/// surrogate for the full second derivative).
///
/// The supremum is the scale-invariant constant of the interior pointwise
/// regularity estimate; it should stay O(1) under grid refinement and under
/// boundary-data amplitude changes.
pub fn epsilon_regularity_profile(u: &Field, l: usize) -> Result<f64> {
    if l != 1 && l != 2 {
        return Err(Error::Range(format!(
            "profile order must be 1 or 2, got {l}"
        )));
    }
    let e = sphere::energies(u)?;
    let lap_sq = 4.0 * e.extrinsic;
    if lap_sq <= 1e-24 {
        return Err(Error::Degenerate(
            "scaling profile of a trivial map is undefined".into(),
        ));
    }
    if lap_sq > PROFILE_SMALLNESS {
        return Err(Error::Precondition(format!(
            "profile needs |Lap u|_2^2 <= {PROFILE_SMALLNESS}, got {lap_sq:.3e}"
        )));
    }
    let denom = lap_sq.sqrt();
    let (_, res) = sphere::residual_intrinsic(u)?;
    if res > PROFILE_RESIDUAL_FRAC * denom {
        return Err(Error::Precondition(format!(
            "map is not critical enough for the profile: residual {res:.3e} \
             exceeds {PROFILE_RESIDUAL_FRAC} * |Lap u|_2 = {:.3e}",
            PROFILE_RESIDUAL_FRAC * denom
        )));
    }

    let g = u.grid();
    let deriv = if l == 1 {
        ops::gradient(u)?
    } else {
        ops::laplacian(u)?
    };
    let mut sup = 0.0f64;
    for &i in g.interior_nodes() {
        let i = i as usize;
        let mag = if l == 1 {
            ops::grad_norm_sq(&deriv, i).sqrt()
        } else {
            deriv.node_norm(i)
        };
        let dist = 1.0 - g.r2(i).sqrt();
        sup = sup.max(dist.powi(l as i32) * mag);
    }
    Ok(sup / denom)
}

// ---------------------------------------------------------------------------
// harmonic polynomials
// ---------------------------------------------------------------------------

type Q = Ratio<i64>;

/// A harmonic homogeneous polynomial on R^4 with integer coefficients.
///
/// Built as an exact rational nullspace vector of the symbolic Laplacian on
/// the degree-`l` monomial basis, so harmonicity holds by construction, not
/// numerically.
#[derive(Debug, Clone)]
pub struct HarmonicPoly {
    degree: usize,
    index: usize,
    /// `(coefficient, exponents)`, coefficients coprime.
    terms: Vec<(i64, [u8; 4])>,
}

impl HarmonicPoly {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn terms(&self) -> &[(i64, [u8; 4])] {
        &self.terms
    }

    pub fn eval(&self, x: [f64; 4]) -> f64 {
        let mut sum = 0.0;
        for &(c, a) in &self.terms {
            let mut t = c as f64;
            for d in 0..4 {
                t *= x[d].powi(a[d] as i32);
            }
            sum += t;
        }
        sum
    }

    /// `sum_d d^4/dx_d^4` of the polynomial, a constant for degree <= 4.
    /// The degree-4 central-difference defect is exactly `h^2/12` times this.
    pub fn fourth_derivative_sum(&self) -> f64 {
        let mut sum = 0i64;
        for &(c, a) in &self.terms {
            for d in 0..4 {
                if a[d] == 4 {
                    sum += 24 * c;
                }
            }
        }
        sum as f64
    }

    pub fn sample(&self, grid: Arc<Grid4>) -> Field {
        let terms = self.terms.clone();
        Field::from_fn(grid, 1, move |x, out| {
            let mut sum = 0.0;
            for &(c, a) in &terms {
                let mut t = c as f64;
                for d in 0..4 {
                    t *= x[d].powi(a[d] as i32);
                }
                sum += t;
            }
            out[0] = sum;
        })
    }
}

/// Dimension of the space of harmonic homogeneous polynomials of degree `l`
/// on R^4.
pub fn harmonic_basis_dim(l: usize) -> usize {
    (l + 1) * (l + 1)
}

/// Exponent tuples of total degree `l` in a fixed lexicographic order.
fn monomials(l: usize) -> Vec<[u8; 4]> {
    let mut out = Vec::new();
    for a in (0..=l).rev() {
        for b in (0..=l - a).rev() {
            for c in (0..=l - a - b).rev() {
                let d = l - a - b - c;
                out.push([a as u8, b as u8, c as u8, d as u8]);
            }
        }
    }
    out
}

/// Reduced row echelon form over the rationals; returns the pivot columns.
fn rref(mat: &mut [Vec<Q>]) -> Vec<usize> {
    let rows = mat.len();
    let cols = if rows == 0 { 0 } else { mat[0].len() };
    let zero = Q::new(0, 1);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(pr) = (r..rows).find(|&i| mat[i][c] != zero) else {
            continue;
        };
        mat.swap(r, pr);
        let inv = mat[r][c];
        for v in &mut mat[r] {
            *v = *v / inv;
        }
        for i in 0..rows {
            if i != r && mat[i][c] != zero {
                let f = mat[i][c];
                for j in 0..cols {
                    let s = mat[r][j];
                    mat[i][j] = mat[i][j] - f * s;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

/// The fixed basis of harmonic homogeneous polynomials of degree `l`, as
/// coprime-integer coefficient vectors over [`monomials`]`(l)`.
fn harmonic_basis(l: usize) -> Vec<Vec<(i64, [u8; 4])>> {
    let cols = monomials(l);
    let zero = Q::new(0, 1);
    let mut mat: Vec<Vec<Q>> = Vec::new();
    if l >= 2 {
        let rows = monomials(l - 2);
        let row_index = |a: [u8; 4]| rows.iter().position(|&r| r == a).unwrap();
        mat = vec![vec![zero; cols.len()]; rows.len()];
        for (j, &a) in cols.iter().enumerate() {
            for d in 0..4 {
                if a[d] >= 2 {
                    let mut b = a;
                    b[d] -= 2;
                    let coef = (a[d] as i64) * (a[d] as i64 - 1);
                    mat[row_index(b)][j] = mat[row_index(b)][j] + Q::new(coef, 1);
                }
            }
        }
    }
    let pivots = rref(&mut mat);

    let mut basis = Vec::new();
    for f in 0..cols.len() {
        if pivots.contains(&f) {
            continue;
        }
        let mut v = vec![zero; cols.len()];
        v[f] = Q::new(1, 1);
        for (pr, &pc) in pivots.iter().enumerate() {
            v[pc] = -mat[pr][f];
        }
        // clear denominators, divide by the common factor, lead positive
        let mut denom = 1i64;
        for q in &v {
            denom = lcm(denom, *q.denom());
        }
        let mut ints: Vec<i64> = v.iter().map(|q| q.numer() * (denom / q.denom())).collect();
        let mut common = 0i64;
        for &n in &ints {
            common = gcd(common, n);
        }
        if common > 1 {
            for n in &mut ints {
                *n /= common;
            }
        }
        if let Some(first) = ints.iter().find(|&&n| n != 0) {
            if *first < 0 {
                for n in &mut ints {
                    *n = -*n;
                }
            }
        }
        basis.push(
            ints.iter()
                .zip(&cols)
                .filter(|(&n, _)| n != 0)
                .map(|(&n, &a)| (n, a))
                .collect(),
        );
    }
    basis
}

/// The `k`-th element of the fixed degree-`l` harmonic basis, `l <= 4`,
/// `k < (l+1)^2`.
pub fn harmonic_poly(l: usize, k: usize) -> Result<HarmonicPoly> {
    if l > 4 {
        return Err(Error::Range(format!(
            "harmonic basis is built for degree <= 4, got {l}"
        )));
    }
    let dim = harmonic_basis_dim(l);
    if k >= dim {
        return Err(Error::Range(format!(
            "harmonic basis of degree {l} has {dim} elements, index {k} is out of range"
        )));
    }
    let basis = harmonic_basis(l);
    if basis.len() != dim {
        return Err(Error::Numerical(format!(
            "harmonic basis of degree {l} came out with {} elements, expected {dim}",
            basis.len()
        )));
    }
    Ok(HarmonicPoly {
        degree: l,
        index: k,
        terms: basis.into_iter().nth(k).unwrap(),
    })
}

/// `sup over deep nodes of |Delta_h v|`: how far `v` is from the discrete
/// kernel where the stencil is pristine. Callers gate on this with a
/// degree-aware tolerance: exact (1e-8) for polynomials of degree <= 3, and
/// `h^2/12` times the fourth-derivative sum for degree 4.
pub fn harmonic_defect(v: &Field) -> Result<f64> {
    let g = v.grid().clone();
    g.require_deep_interior()?;
    let lap = ops::laplacian(v)?;
    let mut sup = 0.0f64;
    for i in 0..g.len() {
        if g.is_deep(i) {
            sup = sup.max(lap.node_norm(i));
        }
    }
    Ok(sup)
}

// ---------------------------------------------------------------------------
// mean-value monotonicity
// ---------------------------------------------------------------------------

/// Subsamples per axis for cutting cells against `B(p, rho)`. Finer than the
/// grid's sphere rule because the monotonicity tolerance is 1e-3 while plain
/// integrals face percent-level tolerances; 2^4 sampling leaves volume
/// jitter above 1e-3 at N = 33.
const BALL_SUBSAMPLES: usize = 4;

/// Fraction of the cell at `x` inside `B(p, rho)` intersected with the unit
/// ball, by midpoint subsampling. Non-decreasing in `rho` per node, so the
/// sums built from it are monotone by construction.
fn joint_fraction(x: [f64; 4], p: [f64; 4], rho: f64, h: f64) -> f64 {
    let mut d2 = 0.0;
    let mut r2 = 0.0;
    for d in 0..4 {
        let c = x[d] - p[d];
        d2 += c * c;
        r2 += x[d] * x[d];
    }
    // the cell half-diagonal is h
    let hi = rho + h;
    if d2 >= hi * hi {
        return 0.0;
    }
    let lo = rho - h;
    let rin = 1.0 - h;
    if lo > 0.0 && d2 <= lo * lo && r2 <= rin * rin {
        return 1.0;
    }
    let n = BALL_SUBSAMPLES;
    let total = n * n * n * n;
    let mut inside = 0usize;
    for s in 0..total {
        let mut t = s;
        let mut dd = 0.0;
        let mut rr = 0.0;
        for d in 0..4 {
            let j = t % n;
            t /= n;
            let c = x[d] + ((2 * j + 1) as f64 / (2 * n) as f64 - 0.5) * h;
            let cp = c - p[d];
            dd += cp * cp;
            rr += c * c;
        }
        if dd < rho * rho && rr < 1.0 {
            inside += 1;
        }
    }
    inside as f64 / total as f64
}

fn check_ball(p: [f64; 4], rho: f64) -> Result<()> {
    let pn = p.iter().map(|c| c * c).sum::<f64>().sqrt();
    if rho <= 0.0 {
        return Err(Error::Range(format!(
            "ball radius must be positive, got {rho}"
        )));
    }
    if pn + rho > 1.0 + 1e-12 {
        return Err(Error::Range(format!(
            "ball with |p| = {pn:.4} and rho = {rho:.4} exits the unit ball"
        )));
    }
    Ok(())
}

/// Quadrature volume of `B(p, rho)` under the same cell cutting the
/// monotonicity profile uses.
pub fn ball_quadrature_volume(grid: &Grid4, p: [f64; 4], rho: f64) -> Result<f64> {
    check_ball(p, rho)?;
    let h = grid.h();
    let cell = h * h * h * h;
    Ok(par::tree_sum_by(0, grid.len(), &|i| {
        let f = joint_fraction(grid.coord(i), p, rho, h);
        if f == 0.0 {
            0.0
        } else {
            cell * f
        }
    }))
}

/// `m(rho) = rho^-4 int_{B(p,rho)} |v|^2` at each requested radius.
///
/// For harmonic `v` the continuum profile is non-decreasing in `rho`; the
/// discrete profile inherits this up to quadrature jitter. Radii must be
/// strictly increasing and every ball must stay inside the unit ball.
pub fn monotonicity_profile(v: &Field, p: [f64; 4], radii: &[f64]) -> Result<Vec<f64>> {
    if radii.is_empty() {
        return Err(Error::Range("no radii requested".into()));
    }
    for w in radii.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Range(format!(
                "radii must be strictly increasing, got {} after {}",
                w[1], w[0]
            )));
        }
    }
    for &rho in radii {
        check_ball(p, rho)?;
    }
    let g = v.grid().clone();
    let h = g.h();
    let cell = h * h * h * h;
    let mut out = Vec::with_capacity(radii.len());
    for &rho in radii {
        let s = par::tree_sum_by(0, g.len(), &|i| {
            let f = joint_fraction(g.coord(i), p, rho, h);
            if f == 0.0 {
                0.0
            } else {
                let nv = v.node_norm(i);
                cell * f * nv * nv
            }
        });
        out.push(s / (rho * rho * rho * rho));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Arc<Grid4> {
        Arc::new(Grid4::build(n).unwrap())
    }

    // Reference oracle: adaptive Simpson for 2 pi^2 Int_0^1 f(r) r^3 dr.
    fn radial_integral(f: &dyn Fn(f64) -> f64) -> f64 {
        fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
            (b - a) / 6.0 * (fa + 4.0 * fm + fb)
        }
        fn adapt(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let fl = f(0.5 * (a + m));
            let fr = f(0.5 * (m + b));
            let left = simpson(a, m, fa, fl, fm);
            let right = simpson(m, b, fm, fr, fb);
            if depth == 0 || (left + right - whole).abs() < 1e-13 * (1.0 + whole.abs()) {
                left + right + (left + right - whole) / 15.0
            } else {
                adapt(f, a, m, fa, fl, fm, left, depth - 1)
                    + adapt(f, m, b, fm, fr, fb, right, depth - 1)
            }
        }
        let g = |r: f64| f(r) * r * r * r;
        let (fa, fm, fb) = (g(0.0), g(0.5), g(1.0));
        let whole = simpson(0.0, 1.0, fa, fm, fb);
        2.0 * PI * PI * adapt(&g, 0.0, 1.0, fa, fm, fb, whole, 40)
    }

    #[test]
    fn bump_quotient_matches_the_frozen_oracle() {
        // (1-r^2)^2: numerator integrand (1+r)^4, denominator 16 pi^2; the
        // exact quotient is 769/2240.
        let w = clamped_bump_field(grid(33));
        let ratio = hardy_ratio(&w).unwrap();
        let oracle = 769.0 / 2240.0;
        assert!(
            (ratio / oracle - 1.0).abs() <= 0.05,
            "hardy quotient {ratio:.5} vs oracle {oracle:.5}"
        );
        // the oracle itself against the quadrature reference
        let num = radial_integral(&|r| (1.0 + r).powi(4));
        let den = radial_integral(&|r| (24.0 * r * r - 16.0) * (24.0 * r * r - 16.0));
        assert!((num / den / oracle - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cube_quotient_matches_the_radial_oracle() {
        // (1-r^2)^3: integrable boundary behaviour on both sides.
        let w = Field::from_fn(grid(33), 1, |x, out| {
            let r2: f64 = x.iter().map(|c| c * c).sum();
            out[0] = if r2 < 1.0 { (1.0 - r2).powi(3) } else { 0.0 };
        });
        let ratio = hardy_ratio(&w).unwrap();
        let num = radial_integral(&|r| (1.0 - r) * (1.0 - r) * (1.0 + r).powi(6));
        let den = radial_integral(&|r| {
            let d = 24.0 * (1.0 - r * r) * (2.0 * r * r - 1.0);
            d * d
        });
        let oracle = num / den;
        assert!(
            (ratio / oracle - 1.0).abs() <= 0.05,
            "cube quotient {ratio:.5} vs oracle {oracle:.5}"
        );
    }

    #[test]
    fn quotient_requires_the_zero_extension() {
        // (1-r^2)^2 sampled without the guard grows again beyond the sphere
        let w = Field::from_fn(grid(9), 1, |x, out| out[0] = maps::clamped_bump(x));
        let err = hardy_ratio(&w).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "got {err}");
    }

    #[test]
    fn quotient_of_the_zero_field_is_degenerate() {
        let w = Field::zeros(grid(9), 1);
        let err = hardy_ratio(&w).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "got {err}");
    }

    #[test]
    fn estimate_families_are_nested_and_monotone() {
        let g = grid(9);
        let bump = hardy_ratio(&clamped_bump_field(g.clone())).unwrap();
        let one = hardy_constant_estimate(g.clone(), 1, 7).unwrap();
        assert_eq!(one.max_ratio, bump);

        let small = hardy_constant_estimate(g.clone(), 3, 7).unwrap();
        let large = hardy_constant_estimate(g.clone(), 6, 7).unwrap();
        assert_eq!(&large.ratios[..3], &small.ratios[..]);
        assert!(large.max_ratio >= small.max_ratio);
        assert!(small.max_ratio >= one.max_ratio);
        // every family member is bounded by the reported estimate
        for r in &large.ratios {
            assert!(*r <= large.max_ratio);
        }

        assert!(matches!(
            hardy_constant_estimate(g, 0, 7).unwrap_err(),
            Error::Range(_)
        ));
    }

    // Reference symbolic Laplacian on a coefficient table.
    fn symbolic_laplacian(terms: &[(i64, [u8; 4])]) -> Vec<(i64, [u8; 4])> {
        let mut out: Vec<(i64, [u8; 4])> = Vec::new();
        for &(c, a) in terms {
            for d in 0..4 {
                if a[d] >= 2 {
                    let mut b = a;
                    b[d] -= 2;
                    let coef = c * (a[d] as i64) * (a[d] as i64 - 1);
                    match out.iter_mut().find(|(_, e)| *e == b) {
                        Some(slot) => slot.0 += coef,
                        None => out.push((coef, b)),
                    }
                }
            }
        }
        out.retain(|&(c, _)| c != 0);
        out
    }

    #[test]
    fn bases_have_the_right_dimensions_and_range_checks() {
        for l in 0..=4usize {
            let dim = harmonic_basis_dim(l);
            assert_eq!(dim, (l + 1) * (l + 1));
            for k in 0..dim {
                let p = harmonic_poly(l, k).unwrap();
                assert_eq!(p.degree(), l);
                assert_eq!(p.index(), k);
                assert!(!p.terms().is_empty());
            }
            assert!(matches!(
                harmonic_poly(l, dim).unwrap_err(),
                Error::Range(_)
            ));
        }
        assert!(matches!(harmonic_poly(5, 0).unwrap_err(), Error::Range(_)));
    }

    #[test]
    fn bases_are_symbolically_harmonic() {
        for l in 0..=4usize {
            for k in 0..harmonic_basis_dim(l) {
                let p = harmonic_poly(l, k).unwrap();
                let lap = symbolic_laplacian(p.terms());
                assert!(lap.is_empty(), "degree {l} index {k}: residue {lap:?}");
            }
        }
    }

    #[test]
    fn cubic_harmonics_are_in_the_discrete_kernel() {
        // central second differences are exact through degree 3, and every
        // interior node of the N = 9 grid carries a central row
        let g = grid(9);
        for l in 0..=3usize {
            for k in 0..harmonic_basis_dim(l) {
                let v = harmonic_poly(l, k).unwrap().sample(g.clone());
                let lap = ops::laplacian(&v).unwrap();
                let mut sup = 0.0f64;
                for &i in g.interior_nodes() {
                    sup = sup.max(lap.node_norm(i as usize));
                }
                assert!(sup <= 1e-8, "degree {l} index {k}: defect {sup:.3e}");
            }
        }
    }

    #[test]
    fn quartic_defect_matches_the_stencil_identity() {
        // for degree 4 the whole defect is the h^2/12 fourth-difference term
        let g = grid(9);
        let h2 = g.h() * g.h();
        for k in 0..harmonic_basis_dim(4) {
            let p = harmonic_poly(4, k).unwrap();
            let expected = h2 / 12.0 * p.fourth_derivative_sum();
            let lap = ops::laplacian(&p.sample(g.clone())).unwrap();
            let mut worst = 0.0f64;
            for &i in g.interior_nodes() {
                worst = worst.max((lap.value(i as usize)[0] - expected).abs());
            }
            assert!(
                worst <= 1e-9 * (1.0 + expected.abs()),
                "index {k}: defect {worst:.3e} vs {expected:.3e}"
            );
        }
    }

    #[test]
    fn restrictions_are_spherical_eigenfunctions() {
        // Laplace-Beltrami via second differences along great circles of an
        // orthonormal tangent frame; eigenvalue -l(l+2) on the unit sphere.
        let candidates = [
            [0.9, -0.3, 0.44, 0.12],
            [0.2, 0.8, -0.5, 0.3],
            [-0.6, 0.1, 0.35, 0.7],
            [0.05, -0.45, 0.85, -0.25],
            [0.5, 0.5, 0.5, 0.5],
        ];
        let normalize = |v: [f64; 4]| {
            let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            [v[0] / n, v[1] / n, v[2] / n, v[3] / n]
        };
        for l in 0..=4usize {
            let dim = harmonic_basis_dim(l);
            for k in [0, dim - 1] {
                let p = harmonic_poly(l, k).unwrap();
                let omega = normalize(
                    *candidates
                        .iter()
                        .max_by(|a, b| {
                            p.eval(normalize(**a))
                                .abs()
                                .total_cmp(&p.eval(normalize(**b)).abs())
                        })
                        .unwrap(),
                );
                let value = p.eval(omega);
                assert!(value.abs() > 1e-3, "degree {l} index {k}: no generic point");

                // orthonormal tangent frame by Gram-Schmidt
                let mut frame: Vec<[f64; 4]> = Vec::new();
                for d in 0..4 {
                    let mut t = [0.0; 4];
                    t[d] = 1.0;
                    let dot = t.iter().zip(&omega).map(|(a, b)| a * b).sum::<f64>();
                    for j in 0..4 {
                        t[j] -= dot * omega[j];
                    }
                    for f in &frame {
                        let dot = t.iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
                        for j in 0..4 {
                            t[j] -= dot * f[j];
                        }
                    }
                    let n = t.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if n > 1e-8 {
                        frame.push(normalize(t));
                    }
                    if frame.len() == 3 {
                        break;
                    }
                }
                assert_eq!(frame.len(), 3);

                let eps = 1e-3;
                let mut beltrami = 0.0;
                for t in &frame {
                    let gamma = |s: f64| {
                        let (c, si) = (s.cos(), s.sin());
                        [
                            c * omega[0] + si * t[0],
                            c * omega[1] + si * t[1],
                            c * omega[2] + si * t[2],
                            c * omega[3] + si * t[3],
                        ]
                    };
                    beltrami += (p.eval(gamma(eps)) - 2.0 * value + p.eval(gamma(-eps)))
                        / (eps * eps);
                }
                let expected = -((l * (l + 2)) as f64) * value;
                assert!(
                    (beltrami - expected).abs() <= 1e-3 * (1.0 + expected.abs()),
                    "degree {l} index {k}: beltrami {beltrami:.6} vs {expected:.6}"
                );
            }
        }
    }

    #[test]
    fn constant_profile_is_the_volume_ratio() {
        let g = grid(17);
        let ones = Field::from_fn(g.clone(), 1, |_, out| out[0] = 1.0);
        let radii = [0.25, 0.5, 0.75, 1.0];
        let m = monotonicity_profile(&ones, [0.0; 4], &radii).unwrap();
        for (&rho, &mi) in radii.iter().zip(&m) {
            // exactly the quadrature volume ratio, and near pi^2/2
            let vol = ball_quadrature_volume(&g, [0.0; 4], rho).unwrap();
            assert_eq!(mi * rho.powi(4), vol);
            assert!(
                (mi / (PI * PI / 2.0) - 1.0).abs() <= 0.03,
                "rho {rho}: m {mi:.5}"
            );
        }
        // the full ball is the sharpest volume oracle
        assert!((m[3] / (PI * PI / 2.0) - 1.0).abs() <= 1e-2);
    }

    #[test]
    fn coordinate_profile_matches_the_radial_oracle() {
        // v = x_1: m(rho) = pi^2 rho^2 / 12, strictly increasing. Radii stay
        // well above h: a ball of radius 2h carries percent-level volume
        // error even with the subsampled cut.
        let g = grid(17);
        let v = Field::from_fn(g, 1, |x, out| out[0] = x[0]);
        let radii = [0.5, 0.75, 1.0];
        let m = monotonicity_profile(&v, [0.0; 4], &radii).unwrap();
        for (&rho, &mi) in radii.iter().zip(&m) {
            let oracle = PI * PI * rho * rho / 12.0;
            assert!(
                (mi / oracle - 1.0).abs() <= 0.05,
                "rho {rho}: m {mi:.5} vs {oracle:.5}"
            );
        }
        assert!(m.windows(2).all(|w| w[1] > w[0]));
        assert!((m[2] / (PI * PI / 12.0) - 1.0).abs() <= 0.02);
    }

    #[test]
    fn offset_profiles_of_low_degree_bases_are_monotone() {
        let g = grid(17);
        let p = [0.2, -0.1, 0.05, 0.0];
        let radii = [0.2, 0.3, 0.45, 0.6];
        for l in 1..=4usize {
            for k in [0, harmonic_basis_dim(l) - 1] {
                let v = harmonic_poly(l, k).unwrap().sample(g.clone());
                let m = monotonicity_profile(&v, p, &radii).unwrap();
                for w in m.windows(2) {
                    assert!(
                        w[1] >= w[0] * (1.0 - 1e-3),
                        "degree {l} index {k}: {m:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn profile_range_checks() {
        let g = grid(9);
        let v = Field::from_fn(g, 1, |_, out| out[0] = 1.0);
        for (p, radii) in [
            ([0.5, 0.0, 0.0, 0.0], vec![0.75]),
            ([0.0; 4], vec![]),
            ([0.0; 4], vec![0.5, 0.25]),
            ([0.0; 4], vec![0.0, 0.5]),
        ] {
            assert!(matches!(
                monotonicity_profile(&v, p, &radii).unwrap_err(),
                Error::Range(_)
            ));
        }
    }

    #[test]
    fn scaling_profile_guards() {
        let g = grid(9);
        let trivial = maps::constant_map(2).unwrap().sample(g.clone());
        assert!(matches!(
            epsilon_regularity_profile(&trivial, 1).unwrap_err(),
            Error::Degenerate(_)
        ));

        // alpha = 1 violates the smallness gate
        let big = maps::great_circle(1.0, 3).unwrap().sample(g.clone());
        assert!(matches!(
            epsilon_regularity_profile(&big, 1).unwrap_err(),
            Error::Precondition(_)
        ));

        // a perturbed map is small but not critical
        let gc = maps::great_circle(0.15, 3).unwrap().sample(g.clone());
        let rough = maps::perturb_interior(&gc, 11, 0.02).unwrap();
        assert!(matches!(
            epsilon_regularity_profile(&rough, 1).unwrap_err(),
            Error::Precondition(_)
        ));

        let ok = maps::great_circle(0.3, 3).unwrap().sample(g);
        assert!(matches!(
            epsilon_regularity_profile(&ok, 3).unwrap_err(),
            Error::Range(_)
        ));
        assert!(epsilon_regularity_profile(&ok, 1).unwrap() > 0.0);
    }

    #[test]
    fn scaling_profile_is_stable_under_refinement_and_amplitude() {
        // sampled great-circle maps are near-critical (measured residual
        // about 3e-4 of |Lap u| at alpha = 0.3), so no flow is needed here
        for l in [1usize, 2] {
            let coarse = epsilon_regularity_profile(
                &maps::great_circle(0.3, 3).unwrap().sample(grid(9)),
                l,
            )
            .unwrap();
            let fine = epsilon_regularity_profile(
                &maps::great_circle(0.3, 3).unwrap().sample(grid(17)),
                l,
            )
            .unwrap();
            assert!(
                coarse / fine <= 2.0 && fine / coarse <= 2.0,
                "order {l}: coarse {coarse:.4} vs fine {fine:.4}"
            );

            // halving alpha doubles the profile exactly (the circle's angle
            // function is harmonic, so |Lap u| scales like alpha^2 against a
            // numerator linear in alpha); that factor is O(1), well below the
            // O(1/h) = 8 a scale-inconsistent estimate would show here
            let half = epsilon_regularity_profile(
                &maps::great_circle(0.15, 3).unwrap().sample(grid(17)),
                l,
            )
            .unwrap();
            assert!(
                fine / half <= 3.0 && half / fine <= 3.0,
                "order {l}: amplitude halving moved {fine:.4} to {half:.4}"
            );
        }
    }

    #[test]
    fn harmonic_defect_separates_degrees() {
        let g = grid(9);
        let cubic = harmonic_poly(3, 2).unwrap().sample(g.clone());
        assert!(harmonic_defect(&cubic).unwrap() <= 1e-8);
        // pick a quartic whose fourth differences do not cancel (basis
        // elements made of mixed monomials only are annihilated exactly)
        let quartic = (0..harmonic_basis_dim(4))
            .map(|k| harmonic_poly(4, k).unwrap())
            .find(|p| p.fourth_derivative_sum() != 0.0)
            .unwrap();
        let defect = harmonic_defect(&quartic.sample(g.clone())).unwrap();
        assert!(defect > 1e-8, "quartic defect {defect:.3e}");
        let bound = g.h() * g.h() / 12.0 * quartic.fourth_derivative_sum().abs();
        assert!(defect <= bound + 1e-9);
    }
}
