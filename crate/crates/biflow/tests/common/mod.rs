//! Shared oracles for the integration suite.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use biflow::grid::Grid4;

/// Independent reference for integrals of radial profiles over the unit
/// 4-ball: adaptive Simpson for `2 pi^2 Int_0^1 f(r) r^3 dr`, refined to
/// ~1e-13 relative. Shares no code with the lattice quadrature it checks.
pub fn radial_integral(f: &dyn Fn(f64) -> f64) -> f64 {
    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
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

pub fn grid(n: usize) -> Arc<Grid4> {
    Arc::new(Grid4::build(n).expect("grid size fixed by the test"))
}
