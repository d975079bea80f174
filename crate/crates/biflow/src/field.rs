//! Nodal fields over a [`Grid4`] and clamped boundary data.
//!
//! A `Field` stores `m` components per lattice node, node-major. Exterior
//! nodes always hold zeros; constructors and mutators preserve that, which
//! makes snapshot round-trips bit-exact.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid4, NodeClass, QuadRule};
use crate::par;

/// `|chi| = 1` is enforced on every sampled band direction to this tolerance.
pub const CHI_UNIT_TOL: f64 = 1e-8;
/// Nodewise renormalization refuses vectors shorter than this.
pub const MIN_RENORM_LEN: f64 = 1e-6;

// ---------------------------------------------------------------------------
// field
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid4>,
    m: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Arc<Grid4>, m: usize) -> Field {
        assert!(m >= 1);
        let values = vec![0.0; grid.len() * m];
        Field { grid, m, values }
    }

    /// Samples a closed form on all interior and band nodes; exterior nodes
    /// stay zero.
    pub fn from_fn<F>(grid: Arc<Grid4>, m: usize, f: F) -> Field
    where
        F: Fn([f64; 4], &mut [f64]) + Sync + Send,
    {
        let mut field = Field::zeros(grid, m);
        let g = field.grid.clone();
        par::for_each_chunk_mut(&mut field.values, m, |i, out| {
            if g.class(i) != NodeClass::Exterior {
                f(g.coord(i), out);
            }
        });
        field
    }

    #[inline]
    pub fn grid(&self) -> &Arc<Grid4> {
        &self.grid
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn value(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.m..idx * self.m + self.m]
    }

    #[inline]
    pub fn value_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.values[idx * self.m..idx * self.m + self.m]
    }

    #[inline]
    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_shape(&self, other: &Field) -> Result<()> {
        if self.grid.n() != other.grid.n() || self.m != other.m {
            return Err(Error::Shape(format!(
                "fields differ: N {} vs {}, m {} vs {}",
                self.grid.n(),
                other.grid.n(),
                self.m,
                other.m
            )));
        }
        Ok(())
    }

    /// `self - other`.
    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.same_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(&other.values) {
            *a -= b;
        }
        Ok(out)
    }

    /// Nodewise Euclidean norm of the component vector.
    pub fn node_norm(&self, idx: usize) -> f64 {
        self.value(idx).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Min and max of `|u|` over interior and band nodes.
    pub fn norm_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.grid.len() {
            if self.grid.class(i) == NodeClass::Exterior {
                continue;
            }
            let n = self.node_norm(i);
            lo = lo.min(n);
            hi = hi.max(n);
        }
        (lo, hi)
    }

    /// Projects every interior and band value onto the unit sphere.
    pub fn renormalize(&mut self) -> Result<()> {
        let g = self.grid.clone();
        let m = self.m;
        // check first so the parallel pass stays infallible
        for i in 0..g.len() {
            if g.class(i) != NodeClass::Exterior && self.node_norm(i) < MIN_RENORM_LEN {
                return Err(Error::Numerical(format!(
                    "renormalize: node {i} has |u| < {MIN_RENORM_LEN}"
                )));
            }
        }
        par::for_each_chunk_mut(&mut self.values, m, |i, v| {
            if g.class(i) == NodeClass::Exterior {
                return;
            }
            let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            let inv = 1.0 / n;
            for c in v {
                *c *= inv;
            }
        });
        Ok(())
    }

    /// Largest deviation of `|u|` from 1 over interior and band nodes.
    pub fn sphere_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for i in 0..self.grid.len() {
            if self.grid.class(i) != NodeClass::Exterior {
                dev = dev.max((self.node_norm(i) - 1.0).abs());
            }
        }
        dev
    }

    /// Weighted L2 norm squared of the component vector.
    pub fn l2_sq(&self, rule: QuadRule) -> f64 {
        let m = self.m;
        let vals = &self.values;
        self.grid.integrate_with(rule, |i| {
            vals[i * m..i * m + m].iter().map(|v| v * v).sum::<f64>()
        })
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    // -----------------------------------------------------------------------
    // snapshots: "BIF4", u32 N, u32 m, f64 h, then N^4 * m little-endian f64
    // in row-major node order with exterior nodes as zeros
    // -----------------------------------------------------------------------

    pub fn write_snapshot<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"BIF4")?;
        w.write_all(&(self.grid.n() as u32).to_le_bytes())?;
        w.write_all(&(self.m as u32).to_le_bytes())?;
        w.write_all(&self.grid.h().to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot<P: AsRef<Path>>(path: P) -> Result<Field> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        read_exact_at(&mut r, &mut magic, 0)?;
        if &magic != b"BIF4" {
            return Err(Error::SnapshotFormat {
                offset: 0,
                msg: format!("bad magic {magic:?}, expected \"BIF4\""),
            });
        }
        let mut b4 = [0u8; 4];
        read_exact_at(&mut r, &mut b4, 4)?;
        let n = u32::from_le_bytes(b4) as usize;
        read_exact_at(&mut r, &mut b4, 8)?;
        let m = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        read_exact_at(&mut r, &mut b8, 12)?;
        let h = f64::from_le_bytes(b8);

        let grid = Grid4::build(n).map_err(|e| Error::SnapshotFormat {
            offset: 4,
            msg: format!("{e}"),
        })?;
        if m == 0 {
            return Err(Error::SnapshotFormat {
                offset: 8,
                msg: "m must be >= 1".into(),
            });
        }
        if h.to_bits() != grid.h().to_bits() {
            return Err(Error::SnapshotFormat {
                offset: 12,
                msg: format!("h = {h} inconsistent with N = {n}"),
            });
        }

        let len = grid.len() * m;
        let mut values = vec![0.0f64; len];
        for (k, v) in values.iter_mut().enumerate() {
            read_exact_at(&mut r, &mut b8, 20 + 8 * k as u64)?;
            *v = f64::from_le_bytes(b8);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::SnapshotFormat {
                offset: 20 + 8 * len as u64,
                msg: "trailing bytes after node data".into(),
            });
        }
        Ok(Field {
            grid: Arc::new(grid),
            m,
            values,
        })
    }

    /// CSV export: header row, '.' decimal separator, one row per interior
    /// or band node.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "x0,x1,x2,x3")?;
        for c in 0..self.m {
            write!(w, ",v{c}")?;
        }
        writeln!(w)?;
        for i in 0..self.grid.len() {
            if self.grid.class(i) == NodeClass::Exterior {
                continue;
            }
            let x = self.grid.coord(i);
            write!(w, "{},{},{},{}", x[0], x[1], x[2], x[3])?;
            for v in self.value(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::SnapshotFormat {
                offset,
                msg: "unexpected end of file".into(),
            }
        } else {
            Error::Io(e)
        }
    })
}

// ---------------------------------------------------------------------------
// boundary data
// ---------------------------------------------------------------------------

type DirFn = dyn Fn([f64; 4], &mut [f64]) + Send + Sync;

/// Clamped boundary data on the unit sphere: trace `chi` (sphere-valued) and
/// normal derivative `xi` (tangent to the sphere target at `chi`).
#[derive(Clone)]
pub struct BoundaryData {
    m: usize,
    chi: Arc<DirFn>,
    xi: Arc<DirFn>,
}

impl BoundaryData {
    pub fn new(
        m: usize,
        chi: impl Fn([f64; 4], &mut [f64]) + Send + Sync + 'static,
        xi: impl Fn([f64; 4], &mut [f64]) + Send + Sync + 'static,
    ) -> BoundaryData {
        BoundaryData {
            m,
            chi: Arc::new(chi),
            xi: Arc::new(xi),
        }
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn chi(&self, omega: [f64; 4], out: &mut [f64]) {
        (self.chi)(omega, out)
    }

    pub fn xi(&self, omega: [f64; 4], out: &mut [f64]) {
        (self.xi)(omega, out)
    }

    /// Checks `|chi| = 1` and `<chi, xi> = 0` on every band direction of the
    /// grid. The orthogonality is forced by `|u| = 1` along the boundary, so
    /// a violation means inconsistent data.
    pub fn validate(&self, grid: &Grid4) -> Result<()> {
        let mut c = vec![0.0; self.m];
        let mut x = vec![0.0; self.m];
        for i in 0..grid.len() {
            if grid.class(i) != NodeClass::Band {
                continue;
            }
            let omega = unit_direction(grid, i)?;
            (self.chi)(omega, &mut c);
            (self.xi)(omega, &mut x);
            let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > CHI_UNIT_TOL {
                return Err(Error::BoundaryData(format!(
                    "|chi| = {n} at node {i}, must be 1 within {CHI_UNIT_TOL}"
                )));
            }
            let dot: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
            if dot.abs() > 1e-6 {
                return Err(Error::BoundaryData(format!(
                    "<chi, xi> = {dot} at node {i}, must vanish"
                )));
            }
        }
        Ok(())
    }
}

fn unit_direction(grid: &Grid4, idx: usize) -> Result<[f64; 4]> {
    let x = grid.coord(idx);
    let r = grid.r2(idx).sqrt();
    if r == 0.0 {
        return Err(Error::BoundaryData("band node at the origin".into()));
    }
    Ok([x[0] / r, x[1] / r, x[2] / r, x[3] / r])
}

/// Overwrites every band value of `u` with the projected first-order clamped
/// extension `P(chi(x/|x|) + (|x| - 1) xi(x/|x|))`. Interior and exterior
/// nodes are untouched; applying it twice is a no-op.
pub fn extend_boundary(u: &mut Field, b: &BoundaryData) -> Result<()> {
    if u.m() != b.m() {
        return Err(Error::Shape(format!(
            "field has m = {}, boundary data m = {}",
            u.m(),
            b.m()
        )));
    }
    let g = u.grid.clone();
    let m = u.m;
    // validate on one pass first; the fill itself must be infallible
    let mut chi = vec![0.0; m];
    for i in 0..g.len() {
        if g.class(i) != NodeClass::Band {
            continue;
        }
        let omega = unit_direction(&g, i)?;
        b.chi(omega, &mut chi);
        let n = chi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > CHI_UNIT_TOL {
            return Err(Error::BoundaryData(format!(
                "|chi| = {n} at node {i}, must be 1 within {CHI_UNIT_TOL}"
            )));
        }
    }
    let bd = b.clone();
    let mut failed = std::sync::atomic::AtomicBool::new(false);
    par::for_each_chunk_mut(&mut u.values, m, |i, out| {
        if g.class(i) != NodeClass::Band {
            return;
        }
        let x = g.coord(i);
        let r = g.r2(i).sqrt();
        let omega = [x[0] / r, x[1] / r, x[2] / r, x[3] / r];
        let mut chi = vec![0.0; m];
        let mut xi = vec![0.0; m];
        bd.chi(omega, &mut chi);
        bd.xi(omega, &mut xi);
        let mut nsq = 0.0;
        for c in 0..m {
            out[c] = chi[c] + (r - 1.0) * xi[c];
            nsq += out[c] * out[c];
        }
        let n = nsq.sqrt();
        if n < MIN_RENORM_LEN {
            failed.store(true, std::sync::atomic::Ordering::Relaxed);
            return;
        }
        for v in out.iter_mut() {
            *v /= n;
        }
    });
    if *failed.get_mut() {
        return Err(Error::BoundaryData(
            "extension collapsed to zero length on a band node (xi too large?)".into(),
        ));
    }
    Ok(())
}

/// Samples the clamped data on the whole ball by zero-homogeneous extension,
/// `u(x) = normalize(chi(x/|x|) + (|x| - 1) xi(x/|x|))`: the canonical
/// admissible initial datum built from boundary data alone. On the band it
/// agrees bitwise with [`extend_boundary`]. The formula is degree-zero in x,
/// so the direction at the origin is arbitrary; it is frozen to e1.
pub fn radial_extension(grid: Arc<Grid4>, b: &BoundaryData) -> Result<Field> {
    let mut u = Field::zeros(grid.clone(), b.m());
    let g = grid;
    let m = b.m();
    let mut chi = vec![0.0; m];
    for i in 0..g.len() {
        if g.class(i) == NodeClass::Exterior {
            continue;
        }
        let omega = direction_or_e1(&g, i);
        b.chi(omega, &mut chi);
        let n = chi.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > CHI_UNIT_TOL {
            return Err(Error::BoundaryData(format!(
                "|chi| = {n} at node {i}, must be 1 within {CHI_UNIT_TOL}"
            )));
        }
    }
    let bd = b.clone();
    let mut failed = std::sync::atomic::AtomicBool::new(false);
    par::for_each_chunk_mut(&mut u.values, m, |i, out| {
        if g.class(i) == NodeClass::Exterior {
            return;
        }
        let omega = direction_or_e1(&g, i);
        let r = g.r2(i).sqrt();
        let mut chi = vec![0.0; m];
        let mut xi = vec![0.0; m];
        bd.chi(omega, &mut chi);
        bd.xi(omega, &mut xi);
        let mut nsq = 0.0;
        for c in 0..m {
            out[c] = chi[c] + (r - 1.0) * xi[c];
            nsq += out[c] * out[c];
        }
        let n = nsq.sqrt();
        if n < MIN_RENORM_LEN {
            failed.store(true, std::sync::atomic::Ordering::Relaxed);
            return;
        }
        for v in out.iter_mut() {
            *v /= n;
        }
    });
    if *failed.get_mut() {
        return Err(Error::BoundaryData(
            "extension collapsed to zero length on an interior node (xi too large?)".into(),
        ));
    }
    Ok(u)
}

fn direction_or_e1(g: &Grid4, i: usize) -> [f64; 4] {
    let r = g.r2(i).sqrt();
    if r < 1e-12 {
        return [1.0, 0.0, 0.0, 0.0];
    }
    let x = g.coord(i);
    [x[0] / r, x[1] / r, x[2] / r, x[3] / r]
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------
