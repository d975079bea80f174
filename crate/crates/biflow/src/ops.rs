//! Finite-difference stencils on the ball lattice.
//!
//! All operators are second order. At nodes whose central neighbors along an
//! axis fall off the lattice or into the exterior, the one-sided
//! second-order stencil pointing back into the ball takes over; this only
//! happens on band nodes at the lattice edge (nodes like `(1, 0, 0, 0)` on
//! grids where the sphere meets the lattice). A node carrying quadrature
//! weight that admits neither stencil is a hard error.
//!
//! The discrete Laplacian is assembled once per grid as a sparse matrix
//! (rows: weight-carrying nodes; everything else reads as zero) so that its
//! exact transpose is available to the energy gradients. The bi-Laplacian is
//! the composition of two Laplacian applications; its values are trustworthy
//! on interior nodes, where both applications are purely central.


use crate::error::{Error, Result};
use crate::field::Field;
use crate::grid::{Grid4, NodeClass};
use crate::par;

// ---------------------------------------------------------------------------
// sparse Laplacian
// ---------------------------------------------------------------------------

/// Row-compressed discrete Laplacian over all lattice nodes. Non-weighted
/// nodes have empty rows; columns may be any interior or band node.
#[derive(Debug)]
pub struct LapOp {
    row_ptr: Vec<u32>,
    cols: Vec<u32>,
    coef: Vec<f64>,
}

/// Gather form of the transpose: for each node, the rows that read it.
#[derive(Debug)]
pub struct LapOpT {
    t_ptr: Vec<u32>,
    t_src: Vec<u32>,
    t_coef: Vec<f64>,
}

impl LapOp {
    fn build(grid: &Grid4) -> std::result::Result<LapOp, String> {
        let len = grid.len();
        let h2 = grid.h() * grid.h();
        let mut row_ptr = Vec::with_capacity(len + 1);
        let mut cols: Vec<u32> = Vec::new();
        let mut coef: Vec<f64> = Vec::new();
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(20);

        let avail = |j: Option<usize>| -> Option<usize> {
            j.filter(|&j| grid.class(j) != NodeClass::Exterior)
        };

        for i in 0..len {
            row_ptr.push(cols.len() as u32);
            if grid.weight(crate::grid::QuadRule::PartialCell, i) == 0.0 {
                continue;
            }
            entries.clear();
            for d in 0..4 {
                let plus = avail(grid.neighbor(i, d, 1));
                let minus = avail(grid.neighbor(i, d, -1));
                match (plus, minus) {
                    (Some(p), Some(q)) => {
                        entries.push((i as u32, -2.0 / h2));
                        entries.push((p as u32, 1.0 / h2));
                        entries.push((q as u32, 1.0 / h2));
                    }
                    (missing_plus, _) => {
                        // one-sided second difference marching into the ball:
                        // (2 f0 - 5 f1 + 4 f2 - f3) / h^2
                        let s: isize = if missing_plus.is_none() { -1 } else { 1 };
                        let mut pts = [0usize; 3];
                        let mut ok = true;
                        for (k, pt) in pts.iter_mut().enumerate() {
                            match avail(grid.neighbor(i, d, s * (k as isize + 1))) {
                                Some(j) => *pt = j,
                                None => {
                                    ok = false;
                                    break;
                                }
                            }
                        }
                        if !ok {
                            return Err(format!(
                                "no admissible second difference at node {i} along axis {d}"
                            ));
                        }
                        entries.push((i as u32, 2.0 / h2));
                        entries.push((pts[0] as u32, -5.0 / h2));
                        entries.push((pts[1] as u32, 4.0 / h2));
                        entries.push((pts[2] as u32, -1.0 / h2));
                    }
                }
            }
            // merge duplicate columns (the center appears once per axis) and
            // keep a deterministic ascending order
            entries.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < entries.len() {
                let col = entries[k].0;
                let mut c = 0.0;
                while k < entries.len() && entries[k].0 == col {
                    c += entries[k].1;
                    k += 1;
                }
                cols.push(col);
                coef.push(c);
            }
        }
        row_ptr.push(cols.len() as u32);
        Ok(LapOp {
            row_ptr,
            cols,
            coef,
        })
    }

    #[inline]
    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let lo = self.row_ptr[i] as usize;
        let hi = self.row_ptr[i + 1] as usize;
        (&self.cols[lo..hi], &self.coef[lo..hi])
    }

    /// `out = Lap u`, componentwise; rows without a stencil read zero.
    pub fn apply(&self, u: &Field, out: &mut Field) {
        debug_assert_eq!(u.grid().len() + 1, self.row_ptr.len());
        let m = u.m();
        let uv = u.raw();
        par::for_each_chunk_mut(out.raw_mut(), m, |i, o| {
            let (cols, coef) = self.row(i);
            o.fill(0.0);
            for (col, c) in cols.iter().zip(coef) {
                let base = *col as usize * m;
                for (ci, oc) in o.iter_mut().enumerate() {
                    *oc += c * uv[base + ci];
                }
            }
        });
    }

    fn transpose(&self, len: usize) -> LapOpT {
        let mut deg = vec![0u32; len + 1];
        for &c in &self.cols {
            deg[c as usize + 1] += 1;
        }
        for q in 0..len {
            deg[q + 1] += deg[q];
        }
        let t_ptr = deg.clone();
        let mut cursor = deg;
        let mut t_src = vec![0u32; self.cols.len()];
        let mut t_coef = vec![0.0f64; self.cols.len()];
        for i in 0..len {
            let (cols, coef) = self.row(i);
            for (col, c) in cols.iter().zip(coef) {
                let pos = cursor[*col as usize] as usize;
                cursor[*col as usize] += 1;
                t_src[pos] = i as u32;
                t_coef[pos] = *c;
            }
        }
        LapOpT {
            t_ptr,
            t_src,
            t_coef,
        }
    }
}

impl LapOpT {
    /// `out = Lap^T a`: the exact adjoint of [`LapOp::apply`], with `a`
    /// read as zero outside the weighted rows.
    pub fn apply(&self, a: &Field, out: &mut Field) {
        debug_assert_eq!(a.grid().len() + 1, self.t_ptr.len());
        let m = a.m();
        let av = a.raw();
        par::for_each_chunk_mut(out.raw_mut(), m, |q, o| {
            let lo = self.t_ptr[q] as usize;
            let hi = self.t_ptr[q + 1] as usize;
            o.fill(0.0);
            for k in lo..hi {
                let base = self.t_src[k] as usize * m;
                let c = self.t_coef[k];
                for (ci, oc) in o.iter_mut().enumerate() {
                    *oc += c * av[base + ci];
                }
            }
        });
    }
}

/// The grid's shared Laplacian assembly.
pub fn lap_op(grid: &Grid4) -> Result<&LapOp> {
    grid.lap_cell
        .get_or_init(|| LapOp::build(grid))
        .as_ref()
        .map_err(|msg| Error::Stencil(msg.clone()))
}

/// The grid's shared Laplacian transpose (built on first use).
pub fn lap_op_t(grid: &Grid4) -> Result<&LapOpT> {
    let lap = lap_op(grid)?;
    Ok(grid.lap_t_cell.get_or_init(|| lap.transpose(grid.len())))
}

// ---------------------------------------------------------------------------
// operator front ends
// ---------------------------------------------------------------------------

/// Discrete Laplacian, supported on weight-carrying nodes.
pub fn laplacian(u: &Field) -> Result<Field> {
    let lap = lap_op(u.grid())?;
    let mut out = Field::zeros(u.grid().clone(), u.m());
    lap.apply(u, &mut out);
    Ok(out)
}

/// Discrete bi-Laplacian `Lap(Lap u)`. Values are second-order accurate on
/// interior nodes, where both passes are purely central.
pub fn bilaplacian(u: &Field) -> Result<Field> {
    let lap = lap_op(u.grid())?;
    let mut mid = Field::zeros(u.grid().clone(), u.m());
    lap.apply(u, &mut mid);
    let mut out = Field::zeros(u.grid().clone(), u.m());
    lap.apply(&mid, &mut out);
    Ok(out)
}

/// Discrete gradient, supported on weight-carrying nodes. The output has
/// `4 m` components per node: derivative of component `c` along axis `d`
/// lives at slot `c * 4 + d`.
pub fn gradient(u: &Field) -> Result<Field> {
    let mut out = Field::zeros(u.grid().clone(), 4 * u.m());
    gradient_into(u, &mut out)?;
    Ok(out)
}

/// [`gradient`] into a preallocated `4 m`-component field.
pub fn gradient_into(u: &Field, out: &mut Field) -> Result<()> {
    let grid = u.grid().clone();
    let m = u.m();
    if out.m() != 4 * m {
        return Err(Error::Shape(format!(
            "gradient output needs {} components, got {}",
            4 * m,
            out.m()
        )));
    }
    let h = grid.h();
    let uv = u.raw();
    let mut bad = std::sync::atomic::AtomicBool::new(false);
    par::for_each_chunk_mut(out.raw_mut(), 4 * m, |i, o| {
        o.fill(0.0);
        if grid.weight(crate::grid::QuadRule::PartialCell, i) == 0.0 {
            return;
        }
        for d in 0..4 {
            match one_axis_derivative(&grid, i, d) {
                Some(st) => {
                    for c in 0..m {
                        let mut v = 0.0;
                        for (j, w) in st.iter().flatten() {
                            v += w * uv[j * m + c];
                        }
                        o[c * 4 + d] = v / (2.0 * h);
                    }
                }
                None => bad.store(true, std::sync::atomic::Ordering::Relaxed),
            }
        }
    });
    if *bad.get_mut() {
        return Err(Error::Stencil(
            "no admissible first difference at a weighted node".into(),
        ));
    }
    Ok(())
}

/// Stencil for `2h * d/dx_d` at node `i`: up to three (node, coefficient)
/// pairs. Central `(+1, -1)`, or one-sided `(-+3, +-4, -+1)`.
fn one_axis_derivative(grid: &Grid4, i: usize, d: usize) -> Option<[Option<(usize, f64)>; 3]> {
    let avail =
        |j: Option<usize>| -> Option<usize> { j.filter(|&j| grid.class(j) != NodeClass::Exterior) };
    let plus = avail(grid.neighbor(i, d, 1));
    let minus = avail(grid.neighbor(i, d, -1));
    match (plus, minus) {
        (Some(p), Some(q)) => Some([Some((p, 1.0)), Some((q, -1.0)), None]),
        (missing_plus, _) => {
            let s: isize = if missing_plus.is_none() { -1 } else { 1 };
            let p1 = avail(grid.neighbor(i, d, s))?;
            let p2 = avail(grid.neighbor(i, d, 2 * s))?;
            let sf = s as f64;
            Some([
                Some((i, -3.0 * sf)),
                Some((p1, 4.0 * sf)),
                Some((p2, -1.0 * sf)),
            ])
        }
    }
}

/// Discrete divergence of a gradient-shaped field (`4 m` components, axis
/// fastest): `out[c] = sum_d d/dx_d v[c * 4 + d]`, supported on
/// weight-carrying nodes.
pub fn divergence(v: &Field) -> Result<Field> {
    if v.m() % 4 != 0 {
        return Err(Error::Shape(format!(
            "divergence input must have 4k components, got {}",
            v.m()
        )));
    }
    let grid = v.grid().clone();
    let m = v.m() / 4;
    let mv = v.m();
    let mut out = Field::zeros(grid.clone(), m);
    let h = grid.h();
    let vv = v.raw();
    let mut bad = std::sync::atomic::AtomicBool::new(false);
    par::for_each_chunk_mut(out.raw_mut(), m, |i, o| {
        if grid.weight(crate::grid::QuadRule::PartialCell, i) == 0.0 {
            return;
        }
        for d in 0..4 {
            match one_axis_derivative(&grid, i, d) {
                Some(st) => {
                    for c in 0..m {
                        let mut acc = 0.0;
                        for (j, w) in st.iter().flatten() {
                            acc += w * vv[j * mv + c * 4 + d];
                        }
                        o[c] += acc / (2.0 * h);
                    }
                }
                None => bad.store(true, std::sync::atomic::Ordering::Relaxed),
            }
        }
    });
    if *bad.get_mut() {
        return Err(Error::Stencil(
            "no admissible first difference at a weighted node".into(),
        ));
    }
    Ok(out)
}

/// Pointwise squared Frobenius norm of a gradient-shaped field.
pub fn grad_norm_sq(g: &Field, i: usize) -> f64 {
    g.value(i).iter().map(|v| v * v).sum()
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------
