//! Closed-form sphere-valued maps, the clamped cutoff bump, and seeded
//! smooth fields used as perturbations and test data.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{BoundaryData, Field};
use crate::grid::{Grid4, NodeClass};

type MapFn = dyn Fn([f64; 4], &mut [f64]) + Send + Sync;

/// A sphere-valued map defined on all of `R^4` with a closed-form radial
/// derivative, so it can serve both as initial data and as clamped boundary
/// data for the same flow.
#[derive(Clone)]
pub struct SmoothMap {
    m: usize,
    value: Arc<MapFn>,
    radial: Arc<MapFn>,
}

impl SmoothMap {
    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eval(&self, x: [f64; 4], out: &mut [f64]) {
        (self.value)(x, out)
    }

    /// Samples the map at every interior and band node.
    pub fn sample(&self, grid: Arc<Grid4>) -> Field {
        let value = self.value.clone();
        Field::from_fn(grid, self.m, move |x, out| value(x, out))
    }

    /// Trace and radial derivative on the unit sphere.
    pub fn boundary_data(&self) -> BoundaryData {
        let value = self.value.clone();
        let radial = self.radial.clone();
        BoundaryData::new(
            self.m,
            move |w, out| value(w, out),
            move |w, out| radial(w, out),
        )
    }
}

/// The constant map `e_1`.
pub fn constant_map(m: usize) -> Result<SmoothMap> {
    if m < 2 {
        return Err(Error::Shape(format!(
            "sphere maps need at least 2 components, got {m}"
        )));
    }
    Ok(SmoothMap {
        m,
        value: Arc::new(move |_x, out| {
            out.fill(0.0);
            out[0] = 1.0;
        }),
        radial: Arc::new(|_x, out| out.fill(0.0)),
    })
}

/// The great-circle map `x -> (cos(alpha x_1), sin(alpha x_1), 0, ...)`,
/// harmonic for every alpha.
pub fn great_circle(alpha: f64, m: usize) -> Result<SmoothMap> {
    if m < 2 {
        return Err(Error::Shape(format!(
            "the great-circle map needs at least 2 components, got {m}"
        )));
    }
    Ok(SmoothMap {
        m,
        value: Arc::new(move |x, out| {
            out.fill(0.0);
            out[0] = (alpha * x[0]).cos();
            out[1] = (alpha * x[0]).sin();
        }),
        // d/dr u(r w) along the ray through w; evaluated on the sphere where
        // x = w, so the chain rule factor is x_1 itself
        radial: Arc::new(move |x, out| {
            out.fill(0.0);
            out[0] = -alpha * x[0] * (alpha * x[0]).sin();
            out[1] = alpha * x[0] * (alpha * x[0]).cos();
        }),
    })
}

/// `(1 - |x|^2)^2`: vanishes with its gradient on the unit sphere, positive
/// inside.
pub fn clamped_bump(x: [f64; 4]) -> f64 {
    let r2: f64 = x.iter().map(|c| c * c).sum();
    (1.0 - r2) * (1.0 - r2)
}

/// The same profile clamped at the interior radius `R = 1 - 2h` instead of
/// the sphere: `((R^2 - |x|^2)/R^2)^2` for `|x| < R`, else 0.
///
/// Flow initial data must vanish to first order where the frozen band
/// begins, not at `|x| = 1`; a profile clamped at the sphere leaves an O(1)
/// discrete Laplacian kink on the interface shell (the 4-d scaling makes
/// the kink energy decay only like h), which would dwarf the smooth energy.
pub fn interior_bump(grid: &Grid4, x: [f64; 4]) -> f64 {
    let rr = 1.0 - 2.0 * grid.h();
    let r2max = rr * rr;
    let r2: f64 = x.iter().map(|c| c * c).sum();
    if r2 >= r2max {
        return 0.0;
    }
    let v = (r2max - r2) / r2max;
    v * v
}

// ---------------------------------------------------------------------------
// seeded fields
// ---------------------------------------------------------------------------

/// Low-frequency trigonometric polynomial with seeded coefficients,
/// normalized so its sup over the ball is at most 1.
struct TrigPoly {
    a: [f64; 4],
    b: [f64; 4],
}

impl TrigPoly {
    fn seeded(rng: &mut ChaCha8Rng) -> TrigPoly {
        let mut a = [0.0; 4];
        let mut b = [0.0; 4];
        for d in 0..4 {
            a[d] = rng.gen_range(-1.0..1.0);
            b[d] = rng.gen_range(-1.0..1.0);
        }
        TrigPoly { a, b }
    }

    fn eval(&self, x: [f64; 4]) -> f64 {
        let mut s = 0.0;
        for d in 0..4 {
            s += self.a[d] * (std::f64::consts::PI * x[d]).sin()
                + self.b[d] * (std::f64::consts::PI * x[d]).cos();
        }
        s / 8.0
    }
}

/// Seeded smooth direction field with `m` components; component 0 is zero so
/// the field is transverse to `e_1`. Deterministic in the seed.
pub fn seeded_direction(grid: Arc<Grid4>, m: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let polys: Vec<TrigPoly> = (1..m).map(|_| TrigPoly::seeded(&mut rng)).collect();
    Field::from_fn(grid, m, move |x, out| {
        out[0] = 0.0;
        for (c, p) in polys.iter().enumerate() {
            out[c + 1] = p.eval(x);
        }
    })
}

/// Seeded scalar field vanishing quadratically on the sphere:
/// `(0.5 + trig) * (1 - |x|^2)^2` for `|x| < 1` and exactly zero beyond,
/// which is the clamped zero extension the Hardy quotient requires.
pub fn seeded_clamped_scalar(grid: Arc<Grid4>, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = TrigPoly::seeded(&mut rng);
    Field::from_fn(grid, 1, move |x, out| {
        let r2: f64 = x.iter().map(|c| c * c).sum();
        out[0] = if r2 < 1.0 {
            (0.5 + p.eval(x)) * clamped_bump(x)
        } else {
            0.0
        };
    })
}

/// Perturbation direction for initial data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    /// Fixed coordinate direction `e_comp`.
    Axis(usize),
    /// Seeded smooth direction field.
    Seeded(u64),
}

/// `P(base + amplitude * bump * direction)` sampled on the grid, where the
/// direction is projected onto the tangent space of the sphere at the base
/// value before scaling and the bump is [`interior_bump`], so the
/// perturbation dies out smoothly before the frozen band begins. The band
/// still needs `extend_boundary` afterwards if exact clamped data matter.
pub fn initial_data(
    grid: Arc<Grid4>,
    base: &SmoothMap,
    pert: Perturbation,
    amplitude: f64,
) -> Result<Field> {
    let m = base.m();
    let mut u = base.sample(grid.clone());
    if amplitude == 0.0 {
        return Ok(u);
    }
    let dir = match pert {
        Perturbation::Axis(c) => {
            if c >= m {
                return Err(Error::Shape(format!(
                    "perturbation axis {c} out of range for m = {m}"
                )));
            }
            Field::from_fn(grid.clone(), m, move |_x, out| {
                out.fill(0.0);
                out[c] = 1.0;
            })
        }
        Perturbation::Seeded(seed) => seeded_direction(grid.clone(), m, seed),
    };
    for i in 0..grid.len() {
        if grid.class(i) == NodeClass::Exterior {
            continue;
        }
        let phi = interior_bump(&grid, grid.coord(i));
        let (uv, dv) = (u.value(i).to_vec(), dir.value(i));
        let dot: f64 = uv.iter().zip(dv).map(|(a, b)| a * b).sum();
        let out = u.value_mut(i);
        for c in 0..m {
            out[c] = uv[c] + amplitude * phi * (dv[c] - dot * uv[c]);
        }
    }
    u.renormalize()?;
    Ok(u)
}

/// Clamped perturbation of an existing sphere-valued field:
/// `Pi(u + amplitude * bump * P_u(eta_seed))` on interior nodes only, with
/// band and exterior left bit-identical, so the result shares the original
/// field's clamped data exactly.
pub fn perturb_interior(u: &Field, seed: u64, amplitude: f64) -> Result<Field> {
    let grid = u.grid().clone();
    let m = u.m();
    let mut v = u.clone();
    if amplitude == 0.0 {
        return Ok(v);
    }
    let dir = seeded_direction(grid.clone(), m, seed);
    for &p in grid.interior_nodes() {
        let p = p as usize;
        let phi = clamped_bump(grid.coord(p));
        let uv = u.value(p);
        let dv = dir.value(p);
        let dot: f64 = uv.iter().zip(dv).map(|(a, b)| a * b).sum();
        let out = v.value_mut(p);
        let mut nsq = 0.0;
        for c in 0..m {
            out[c] = uv[c] + amplitude * phi * (dv[c] - dot * uv[c]);
            nsq += out[c] * out[c];
        }
        let n = nsq.sqrt();
        if n < crate::field::MIN_RENORM_LEN {
            return Err(Error::Numerical(format!(
                "perturbation collapsed the value at node {p} to length {n:.3e}"
            )));
        }
        for c in 0..m {
            out[c] /= n;
        }
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Arc<Grid4> {
        Arc::new(Grid4::build(n).unwrap())
    }

    #[test]
    fn reference_maps_are_sphere_valued_and_consistent() {
        let g = grid(9);
        for map in [constant_map(3).unwrap(), great_circle(1.3, 3).unwrap()] {
            let u = map.sample(g.clone());
            assert!(u.sphere_deviation() <= 1e-12);
            map.boundary_data().validate(&g).unwrap();
        }
    }

    #[test]
    fn bump_is_clamped() {
        assert_eq!(clamped_bump([1.0, 0.0, 0.0, 0.0]), 0.0);
        assert_eq!(clamped_bump([0.0; 4]), 1.0);
        assert!(clamped_bump([0.5, 0.5, 0.0, 0.0]) > 0.0);
        // gradient also vanishes on the sphere: phi(1 - t) = O(t^2)
        let t = 1e-5;
        assert!(clamped_bump([1.0 - t, 0.0, 0.0, 0.0]) <= 5.0 * t * t);
    }

    #[test]
    fn seeded_fields_are_deterministic_and_distinct() {
        let g = grid(9);
        let a = seeded_direction(g.clone(), 3, 42);
        let b = seeded_direction(g.clone(), 3, 42);
        assert_eq!(a.raw(), b.raw());
        let c = seeded_direction(g.clone(), 3, 43);
        assert_ne!(a.raw(), c.raw());
        let sup = a.raw().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup <= 1.0 && sup > 0.01);
        for i in 0..g.len() {
            assert_eq!(a.value(i)[0], 0.0);
        }
    }

    #[test]
    fn initial_data_zero_amplitude_is_the_base() {
        let g = grid(9);
        let base = great_circle(0.7, 3).unwrap();
        let u0 = initial_data(g.clone(), &base, Perturbation::Seeded(5), 0.0).unwrap();
        let want = base.sample(g);
        assert_eq!(u0.raw(), want.raw());
    }

    #[test]
    fn initial_data_is_unit_and_close_to_base() {
        let g = grid(9);
        let base = constant_map(3).unwrap();
        let amp = 0.1;
        let u0 = initial_data(g.clone(), &base, Perturbation::Axis(1), amp).unwrap();
        assert!(u0.sphere_deviation() <= 1e-12);
        // inside the ball the bump caps the perturbation at the amplitude;
        // band values past the sphere are placeholders until extension
        let want = base.sample(g.clone());
        let mut sup: f64 = 0.0;
        for i in 0..g.len() {
            if g.r2(i) >= 1.0 {
                continue;
            }
            for (a, b) in u0.value(i).iter().zip(want.value(i)) {
                sup = sup.max((a - b).abs());
            }
        }
        assert!(sup <= amp + 1e-12 && sup > amp / 2.0, "sup = {sup}");
    }
}
