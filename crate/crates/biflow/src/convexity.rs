//! Static convexity and uniqueness inequalities on generated map pairs.
//!
//! A pair is a numerically stationary map `u` (a flow limit) together with a
//! clamped perturbation `v` of it. The inequalities compare fourth-order
//! "distances" between the two maps against energy differences; all of them
//! are exact in the continuum under the small-energy hypotheses, so the
//! discrete slack must vanish under refinement and the evaluators take a
//! slack proportional to `h^2` times the energy scale.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{radial_extension, BoundaryData, Field};
use crate::flow::{self, EnergyKind, FlowConfig};
use crate::grid::{Grid4, QuadRule};
use crate::maps;
use crate::ops;
use crate::sphere;

/// Relative slack factor for the convexity inequalities.
const SLACK_REL: f64 = 1e-3;
/// A pair base must be stationary to this residual before the theorems
/// apply.
const RESIDUAL_PRE_TOL: f64 = 1e-6;

// ---------------------------------------------------------------------------
// pair construction
// ---------------------------------------------------------------------------

/// Flows the zero-homogeneous extension of `b` to a numerically stationary
/// map of the chosen energy: the `u` of every pair with this data.
pub fn flow_limit(
    grid: &Arc<Grid4>,
    b: &BoundaryData,
    kind: EnergyKind,
    eps0: f64,
) -> Result<Field> {
    let u0 = radial_extension(grid.clone(), b)?;
    let mut cfg = FlowConfig::defaults(grid, kind);
    cfg.eps0 = eps0;
    let tr = flow::run_flow(&u0, b, &cfg)?;
    if !tr.converged {
        return Err(Error::Numerical(format!(
            "pair base flow did not converge (residual {:.3e}, stagnated at {:?})",
            tr.final_residual, tr.stagnated_at
        )));
    }
    Ok(tr.final_state)
}

/// Measured smallness of a pair: `eps_u = int |Lap u|^2` of the base and
/// `eps_v = int |grad v|^4` of the perturbed map.
fn smallness(u: &Field, v: &Field) -> Result<(f64, f64)> {
    let eu = sphere::energies(u)?;
    let ev = sphere::energies(v)?;
    Ok((4.0 * eu.extrinsic, 4.0 * ev.grad4))
}

/// Perturbs a stationary base into a pair `(u, v)` with identical clamped
/// data: `v = Pi(u + amplitude * bump * P_u(eta_seed))` on the interior,
/// band bit-identical. Rejects pairs violating the `eps0` smallness with
/// the measured energies.
pub fn make_pair(u: &Field, seed: u64, amplitude: f64, eps0: f64) -> Result<(Field, Field)> {
    let v = maps::perturb_interior(u, seed, amplitude)?;
    let (eps_u, eps_v) = smallness(u, &v)?;
    if eps_u > eps0 || eps_v > eps0 {
        return Err(Error::Precondition(format!(
            "pair violates smallness: int |Lap u|^2 = {eps_u:.3e}, int |grad v|^4 = {eps_v:.3e}, budget {eps0:.3e}"
        )));
    }
    Ok((u.clone(), v))
}

// ---------------------------------------------------------------------------
// inequality reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ConvexityReport {
    pub lhs: f64,
    /// Middle member of a three-term chain, when the inequality has one.
    pub mid: Option<f64>,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    /// Whether the small-energy hypotheses held; a failed inequality with
    /// unmet hypotheses falsifies nothing.
    pub hypotheses_met: bool,
    /// `int |Lap u|^2` of the base.
    pub eps_u: f64,
    /// `int |grad v|^4` of the perturbed map.
    pub eps_v: f64,
}

fn slack_for(grid: &Grid4, lhs: f64, rhs: f64, energy_scale: f64) -> f64 {
    let h2 = grid.h() * grid.h();
    SLACK_REL * lhs.abs().max(rhs.abs()).max(h2 * energy_scale)
}

/// `int |Lap_h (v - u)|^2` over the weighted set; the band difference is
/// identically zero for generated pairs, so this is a clamped distance.
fn lap_diff_sq(u: &Field, v: &Field) -> Result<f64> {
    let d = v.sub(u)?;
    let ld = ops::laplacian(&d)?;
    Ok(ld.l2_sq(QuadRule::PartialCell))
}

/// `int |tau_h(v) - tau_h(u)|^2`.
fn tension_diff_sq(u: &Field, v: &Field) -> Result<f64> {
    let tu = sphere::tension(u)?;
    let tv = sphere::tension(v)?;
    let d = tv.sub(&tu)?;
    Ok(d.l2_sq(QuadRule::PartialCell))
}

fn require_stationary_intrinsic(u: &Field) -> Result<()> {
    let (_, res) = sphere::residual_intrinsic(u)?;
    if res > RESIDUAL_PRE_TOL {
        return Err(Error::Precondition(format!(
            "base map is not intrinsic bi-harmonic to tolerance: residual {res:.3e} > {RESIDUAL_PRE_TOL:.1e}"
        )));
    }
    Ok(())
}

fn require_stationary_extrinsic(u: &Field) -> Result<()> {
    let g = flow::grad_extrinsic_energy(u)?;
    let (_, res) = sphere::l2_representative(u, &g)?;
    if res > RESIDUAL_PRE_TOL {
        return Err(Error::Precondition(format!(
            "base map is not an extrinsic minimizer to tolerance: residual {res:.3e} > {RESIDUAL_PRE_TOL:.1e}"
        )));
    }
    Ok(())
}

/// The intrinsic energy convexity chain
/// `(1/8) int |Lap(v-u)|^2 <= (1/2) int |tau(v) - tau(u)|^2
///                         <= int |tau(v)|^2 - int |tau(u)|^2`
/// for a stationary base `u`; passes iff the full chain holds within slack.
pub fn eval_intrinsic_convexity(u: &Field, v: &Field, eps0: f64) -> Result<ConvexityReport> {
    u.same_shape(v)?;
    require_stationary_intrinsic(u)?;
    let (eps_u, eps_v) = smallness(u, v)?;
    let lhs = 0.125 * lap_diff_sq(u, v)?;
    let mid = 0.5 * tension_diff_sq(u, v)?;
    let iu = sphere::energies(u)?.intrinsic;
    let iv = sphere::energies(v)?.intrinsic;
    let rhs = 4.0 * (iv - iu);
    let scale = 4.0 * (sphere::energies(u)?.extrinsic + sphere::energies(v)?.extrinsic);
    let slack = slack_for(u.grid(), lhs, rhs, scale);
    Ok(ConvexityReport {
        lhs,
        mid: Some(mid),
        rhs,
        slack,
        pass: lhs <= mid + slack && mid <= rhs + slack && lhs <= rhs + slack,
        hypotheses_met: eps_u <= eps0 && eps_v <= eps0,
        eps_u,
        eps_v,
    })
}

/// The extrinsic analogue for a minimizing base:
/// `(1/2) int |Lap(v-u)|^2 <= int |Lap v|^2 - int |Lap u|^2`.
pub fn eval_extrinsic_convexity(u: &Field, v: &Field, eps0: f64) -> Result<ConvexityReport> {
    u.same_shape(v)?;
    require_stationary_extrinsic(u)?;
    let (eps_u, eps_v) = smallness(u, v)?;
    let lhs = 0.5 * lap_diff_sq(u, v)?;
    let eu = sphere::energies(u)?.extrinsic;
    let ev = sphere::energies(v)?.extrinsic;
    let rhs = 4.0 * (ev - eu);
    let slack = slack_for(u.grid(), lhs, rhs, 4.0 * (eu + ev));
    Ok(ConvexityReport {
        lhs,
        mid: None,
        rhs,
        slack,
        pass: lhs <= rhs + slack,
        hypotheses_met: eps_u <= eps0 && eps_v <= eps0,
        eps_u,
        eps_v,
    })
}

/// The distance-comparison lemma `int |Lap(v-u)|^2 <= 4 int |tau(v)-tau(u)|^2`.
/// No stationarity is needed; out-of-hypothesis pairs still evaluate and
/// only the flag records that a failure would falsify nothing.
pub fn eval_lemma_conv2(u: &Field, v: &Field, eps0: f64) -> Result<ConvexityReport> {
    u.same_shape(v)?;
    let (eps_u, eps_v) = smallness(u, v)?;
    let lhs = lap_diff_sq(u, v)?;
    let rhs = 4.0 * tension_diff_sq(u, v)?;
    let scale = 4.0 * (sphere::energies(u)?.extrinsic + sphere::energies(v)?.extrinsic);
    let slack = slack_for(u.grid(), lhs, rhs, scale);
    Ok(ConvexityReport {
        lhs,
        mid: None,
        rhs,
        slack,
        pass: lhs <= rhs + slack,
        hypotheses_met: eps_u <= eps0 && eps_v <= eps0,
        eps_u,
        eps_v,
    })
}

// ---------------------------------------------------------------------------
// key estimate
// ---------------------------------------------------------------------------

/// The weight `q(u)` in the key estimate's left-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QKind {
    /// `|grad u|^4`.
    Grad4,
    /// `|grad u|^2 |Lap u|`.
    Grad2Lap,
    /// `|grad u| |grad Lap u|`.
    GradGradLap,
}

impl QKind {
    pub const ALL: [QKind; 3] = [QKind::Grad4, QKind::Grad2Lap, QKind::GradGradLap];

    pub fn label(self) -> &'static str {
        match self {
            QKind::Grad4 => "grad4",
            QKind::Grad2Lap => "grad2*lap",
            QKind::GradGradLap => "grad*gradlap",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KeyEstimateReport {
    pub q_kind: QKind,
    /// `int_interior |v - u|^2 q_h(u)`.
    pub numerator: f64,
    /// `int |Lap_h (v - u)|^2`.
    pub denominator: f64,
    pub ratio: f64,
    /// `int |Lap_h u|^2`, the smallness parameter the bound scales with.
    pub eps_u: f64,
    /// `ratio / eps_u`: the empirical constant of the estimate.
    pub bound: f64,
    /// `v = u` gives 0/0; flagged instead of reported as a number.
    pub degenerate: bool,
}

/// Measures `int |v-u|^2 q(u) / int |Lap(v-u)|^2` against the smallness
/// `eps_u`; the estimate asserts the ratio is at most a constant times
/// `eps_u`, and the report carries the empirical constant.
pub fn eval_key_estimate(u: &Field, v: &Field, q_kind: QKind) -> Result<KeyEstimateReport> {
    u.same_shape(v)?;
    let grid = u.grid().clone();
    let m = u.m();
    let d = v.sub(u)?;
    let gu = ops::gradient(u)?;
    let lu = ops::laplacian(u)?;
    let glu = match q_kind {
        QKind::GradGradLap => Some(ops::gradient(&lu)?),
        _ => None,
    };
    // q is quartic in derivatives of u; one-sided rows near the band are
    // too rough for it, so the numerator stays on the interior
    let numerator = grid.integrate_with(QuadRule::PartialCell, |i| {
        if grid.class(i) != crate::grid::NodeClass::Interior {
            return 0.0;
        }
        let d2: f64 = d.value(i).iter().map(|x| x * x).sum();
        let g2 = ops::grad_norm_sq(&gu, i);
        let q = match q_kind {
            QKind::Grad4 => g2 * g2,
            QKind::Grad2Lap => {
                let l2: f64 = lu.value(i).iter().map(|x| x * x).sum();
                g2 * l2.sqrt()
            }
            QKind::GradGradLap => {
                let gl2 = ops::grad_norm_sq(glu.as_ref().unwrap(), i);
                (g2 * gl2).sqrt()
            }
        };
        d2 * q
    });
    let _ = m;
    let denominator = lap_diff_sq(u, v)?;
    let eps_u = 4.0 * sphere::energies(u)?.extrinsic;
    let degenerate = denominator <= f64::MIN_POSITIVE;
    let ratio = if degenerate { 0.0 } else { numerator / denominator };
    let bound = if degenerate || eps_u == 0.0 {
        0.0
    } else {
        ratio / eps_u
    };
    Ok(KeyEstimateReport {
        q_kind,
        numerator,
        denominator,
        ratio,
        eps_u,
        bound,
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SweepRow {
    pub seed: u64,
    pub amplitude: f64,
    pub report: ConvexityReport,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub all_pass: bool,
}

fn sweep_pairs(n_pairs: usize, amplitudes: &[f64]) -> Vec<(u64, f64)> {
    (0..n_pairs)
        .map(|k| (k as u64 + 1, amplitudes[k % amplitudes.len()]))
        .collect()
}

/// Intrinsic chain and distance lemma over `n_pairs` seeded perturbations of
/// a stationary base, amplitudes cycling through `amplitudes`.
pub fn intrinsic_sweep(
    u: &Field,
    n_pairs: usize,
    amplitudes: &[f64],
    eps0: f64,
) -> Result<(SweepOutcome, SweepOutcome)> {
    let mut chain = Vec::with_capacity(n_pairs);
    let mut conv2 = Vec::with_capacity(n_pairs);
    for (seed, amplitude) in sweep_pairs(n_pairs, amplitudes) {
        let (u, v) = make_pair(u, seed, amplitude, eps0)?;
        chain.push(SweepRow {
            seed,
            amplitude,
            report: eval_intrinsic_convexity(&u, &v, eps0)?,
        });
        conv2.push(SweepRow {
            seed,
            amplitude,
            report: eval_lemma_conv2(&u, &v, eps0)?,
        });
    }
    let all = |rows: &[SweepRow]| rows.iter().all(|r| r.report.pass);
    Ok((
        SweepOutcome {
            all_pass: all(&chain),
            rows: chain,
        },
        SweepOutcome {
            all_pass: all(&conv2),
            rows: conv2,
        },
    ))
}

/// Extrinsic convexity over the same style of sweep, with a base minimizing
/// the extrinsic energy.
pub fn extrinsic_sweep(
    u: &Field,
    n_pairs: usize,
    amplitudes: &[f64],
    eps0: f64,
) -> Result<SweepOutcome> {
    let mut rows = Vec::with_capacity(n_pairs);
    for (seed, amplitude) in sweep_pairs(n_pairs, amplitudes) {
        let (u, v) = make_pair(u, seed, amplitude, eps0)?;
        rows.push(SweepRow {
            seed,
            amplitude,
            report: eval_extrinsic_convexity(&u, &v, eps0)?,
        });
    }
    Ok(SweepOutcome {
        all_pass: rows.iter().all(|r| r.report.pass),
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct KeySweepOutcome {
    /// `(seed, amplitude, per-q reports)` per pair.
    pub rows: Vec<(u64, f64, [KeyEstimateReport; 3])>,
    /// Worst empirical constant per q kind, in `QKind::ALL` order.
    pub worst_bound: [f64; 3],
}

/// Key-estimate ratios across the pair sweep for all three q kinds.
pub fn key_estimate_sweep(
    u: &Field,
    n_pairs: usize,
    amplitudes: &[f64],
    eps0: f64,
) -> Result<KeySweepOutcome> {
    let mut rows = Vec::with_capacity(n_pairs);
    let mut worst = [0.0f64; 3];
    for (seed, amplitude) in sweep_pairs(n_pairs, amplitudes) {
        let (u, v) = make_pair(u, seed, amplitude, eps0)?;
        let mut reports = [eval_key_estimate(&u, &v, QKind::Grad4)?; 3];
        for (k, q) in QKind::ALL.iter().enumerate() {
            reports[k] = eval_key_estimate(&u, &v, *q)?;
            if !reports[k].degenerate {
                worst[k] = worst[k].max(reports[k].bound);
            }
        }
        rows.push((seed, amplitude, reports));
    }
    Ok(KeySweepOutcome {
        rows,
        worst_bound: worst,
    })
}

pub fn write_convexity_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "seed,amplitude,eps_u,eps_v,lhs,mid,rhs,slack,pass")?;
    for r in rows {
        let mid = r
            .report
            .mid
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.amplitude,
            r.report.eps_u,
            r.report.eps_v,
            r.report.lhs,
            mid,
            r.report.rhs,
            r.report.slack,
            r.report.pass
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// uniqueness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct UniquenessReport {
    /// `(seed_i, seed_j, distance)` for every unordered pair of limits.
    pub distances: Vec<(u64, u64, f64)>,
    pub max_distance: f64,
}

/// Discrete `W^{2,2}` distance
/// `(int |Lap d|^2 + int |grad d|^2 + int |d|^2)^{1/2}` with `d = a - b`.
pub fn w22_distance(a: &Field, b: &Field) -> Result<f64> {
    let d = a.sub(b)?;
    let ld = ops::laplacian(&d)?;
    let gd = ops::gradient(&d)?;
    let grid = d.grid();
    let grad_sq = grid.integrate_with(QuadRule::PartialCell, |i| ops::grad_norm_sq(&gd, i));
    Ok((ld.l2_sq(QuadRule::PartialCell) + grad_sq + d.l2_sq(QuadRule::PartialCell)).sqrt())
}

/// Flows one seeded perturbation of the extension per seed and measures how
/// far apart the limits land: uniqueness of the small-energy stationary map
/// predicts they coincide.
pub fn uniqueness_experiment(
    grid: &Arc<Grid4>,
    b: &BoundaryData,
    seeds: &[u64],
    amplitude: f64,
    cfg: &FlowConfig,
) -> Result<UniquenessReport> {
    let base = radial_extension(grid.clone(), b)?;
    let mut limits: Vec<(u64, Field)> = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let u0 = maps::perturb_interior(&base, seed, amplitude)?;
        let tr = flow::run_flow(&u0, b, cfg)?;
        if !tr.converged {
            return Err(Error::Numerical(format!(
                "uniqueness flow for seed {seed} did not converge (residual {:.3e}, stagnated at {:?})",
                tr.final_residual, tr.stagnated_at
            )));
        }
        limits.push((seed, tr.final_state));
    }
    let mut distances = Vec::new();
    let mut max_distance = 0.0f64;
    for i in 0..limits.len() {
        for j in i + 1..limits.len() {
            let dist = w22_distance(&limits[i].1, &limits[j].1)?;
            max_distance = max_distance.max(dist);
            distances.push((limits[i].0, limits[j].0, dist));
        }
    }
    Ok(UniquenessReport {
        distances,
        max_distance,
    })
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------
