//! Experiment runners and machine-readable summaries.
//!
//! Every configuration kind maps to one deterministic routine: it builds
//! its fixtures from the config, runs the measurement, writes one or more
//! CSV reports plus a `summary.json` into the output directory, and
//! returns the checks it evaluated. Identical configs produce bit-wise
//! identical output files; the summary embeds a hash of the canonical
//! config text and the crate version so a report stays attributable.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::analysis;
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::convexity;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::flow::{self, EnergyKind, FlowConfig};
use crate::green;
use crate::grid::{Grid4, NodeClass, QuadRule};
use crate::maps;
use crate::ops;
use crate::sphere;

// ---------------------------------------------------------------------------
// tolerances and fixed fixture parameters
// ---------------------------------------------------------------------------

/// Roundoff allowance for identities that are exact in exact arithmetic
/// (linear gradients, the energy pythagoras, tension orthogonality).
const EXACT_TOL: f64 = 1e-12;

/// Roundoff allowance for second differences, whose `h^-2` scaling
/// amplifies float noise beyond `EXACT_TOL`.
const STENCIL_TOL: f64 = 1e-10;

/// Second-order window for the measured laplacian convergence rate.
const ORDER_WINDOW: (f64, f64) = (1.8, 2.2);

/// Grid ladder of the convergence-rate measurement. Fixed: rates are a
/// property of the stencil, not of the configured resolution.
const ORDER_LADDER: [usize; 3] = [9, 17, 33];

/// Factor the great-circle tension norm must drop by from N = 9 to 17.
const TENSION_DECAY_MIN: f64 = 3.0;

/// Factor the normal-consistency defect must drop by from N = 9 to 17.
const DEFECT_DECAY_MIN: f64 = 2.0;

/// Relative gate on the great-circle energy against `pi^2 / 8`.
const GC_ENERGY_TOL: f64 = 0.1;

/// Gate on the calibrated sphere-form residual. The deep-interior fit
/// needs a real deep interior, so the calibration runs at N >= 17.
const SIGMA_RESIDUAL_TOL: f64 = 0.2;
const SIGMA_MIN_GRID: usize = 17;

/// Number of random directions of the energy-gradient finite-difference
/// check, split evenly between the two energies.
const FD_DIRECTIONS: usize = 20;
const FD_GRID: usize = 9;
const FD_STEP: f64 = 1e-6;

/// Admission budget for flows of seeded perturbations: the initial
/// extrinsic energy of an amplitude-0.1 bump sits far above the pair
/// smallness budget, so uniqueness flows admit against this gate instead.
const UNIQUENESS_ADMISSION: f64 = 0.5;

/// Seed-stability gate of the empirical Hardy constant.
const HARDY_STABILITY_TOL: f64 = 0.2;

/// Offset separating the two seeded Hardy families.
const HARDY_SEED_OFFSET: u64 = 1000;

/// Largest grid for which the dense kernel solves (full field, all pairs)
/// stay affordable; beyond it the green runner evaluates single targets.
const GREEN_DENSE_MAX: usize = 17;

/// Empirical cap on the kernel-vs-FD cross constant `|psi_fd - psi| / h`;
/// measured values sit near 2.5 on coarse grids.
const GREEN_CROSS_CAP: f64 = 8.0;

/// Gate on the reconstruction error of the quintic calibration bump,
/// relaxed on the coarsest grids where the solve is preasymptotic.
const CALIBRATION_TOL_FINE: f64 = 0.05;
const CALIBRATION_TOL_COARSE: f64 = 0.5;

/// Ratio the targeted `psi(0)` error must drop by per grid refinement;
/// first-order convergence gives 0.5.
const PSI0_DECAY_MAX: f64 = 0.75;

/// Support radius of the quintic calibration bump.
const CALIBRATION_RADIUS: f64 = 0.75;

/// Radius of the seeded ball the monotonicity centers are drawn from.
const CENTER_RADIUS: f64 = 0.25;

/// Largest monotonicity profile radius; centers plus radii stay inside
/// the unit ball.
const PROFILE_RHO_MAX: f64 = 0.7;

/// Empirical cap on the key-estimate constants; measured values are
/// reported next to it in the summary.
const KEY_BOUND_CAP: f64 = 1e6;

/// Fraction of the smallness budget spent on the key-estimate base map.
const KEY_BASE_BUDGET: f64 = 0.7;

// ---------------------------------------------------------------------------
// checks and summaries
// ---------------------------------------------------------------------------

/// One evaluated gate: a measured value against its bound.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    fn le(name: &str, value: f64, bound: f64) -> Check {
        Check {
            name: name.to_string(),
            value,
            bound,
            pass: value <= bound,
        }
    }

    fn ge(name: &str, value: f64, bound: f64) -> Check {
        Check {
            name: name.to_string(),
            value,
            bound,
            pass: value >= bound,
        }
    }

    fn window(name: &str, value: f64, lo: f64, hi: f64) -> Check {
        Check {
            name: name.to_string(),
            value,
            bound: hi,
            pass: value >= lo && value <= hi,
        }
    }
}

/// Outcome of a finished run: per-check verdicts plus every measured
/// constant worth recording.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub kind: ExperimentKind,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub constants: Vec<(String, f64)>,
}

/// Runs the experiment a config describes. Reports land in the configured
/// output directory; the returned summary drives the process exit code.
/// Reports written before a mid-run error are left in place.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let out = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out)?;
    let (checks, constants) = match cfg.kind {
        ExperimentKind::OperatorSelftest => run_selftest(cfg, &out)?,
        ExperimentKind::Flow => run_flow_experiment(cfg, &out)?,
        ExperimentKind::ConvexityIntrinsic => run_convexity(cfg, &out, EnergyKind::Intrinsic)?,
        ExperimentKind::ConvexityExtrinsic => run_convexity(cfg, &out, EnergyKind::Extrinsic)?,
        ExperimentKind::Uniqueness => run_uniqueness(cfg, &out)?,
        ExperimentKind::Hardy => run_hardy(cfg, &out)?,
        ExperimentKind::Green => run_green(cfg, &out)?,
        ExperimentKind::Monotonicity => run_monotonicity(cfg, &out)?,
        ExperimentKind::EpsRegularity => run_eps_regularity(cfg, &out)?,
    };
    let summary = RunSummary {
        kind: cfg.kind,
        pass: checks.iter().all(|c| c.pass),
        checks,
        constants,
    };
    write_summary(cfg, &summary, &out)?;
    Ok(summary)
}

/// Formats the per-check verdict lines a run prints.
pub fn format_summary(s: &RunSummary) -> String {
    let mut text = String::new();
    for c in &s.checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(
            text,
            "[{verdict}] {:<44} value {:>12.5e}  bound {:>12.5e}",
            c.name, c.value, c.bound
        );
    }
    let _ = writeln!(
        text,
        "{}: {}",
        s.kind.name(),
        if s.pass { "all checks passed" } else { "CHECKS FAILED" }
    );
    text
}

fn write_summary(cfg: &ExperimentConfig, s: &RunSummary, out: &Path) -> Result<()> {
    let mut hasher = Sha256::new();
    hasher.update(cfg.serialize().as_bytes());
    let hash: String = hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();

    let checks: Vec<serde_json::Value> = s
        .checks
        .iter()
        .map(|c| {
            serde_json::json!({
                "bound": c.bound,
                "name": c.name,
                "pass": c.pass,
                "value": c.value,
            })
        })
        .collect();
    let mut constants = serde_json::Map::new();
    for (k, v) in &s.constants {
        constants.insert(k.clone(), serde_json::json!(v));
    }
    let doc = serde_json::json!({
        "checks": checks,
        "config_sha256": hash,
        "constants": constants,
        "kind": s.kind.name(),
        "pass": s.pass,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Numerical(format!("summary serialization: {e}")))?;
    text.push('\n');
    std::fs::write(out.join("summary.json"), text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// shared fixtures
// ---------------------------------------------------------------------------

fn build_grid(n: usize) -> Result<Arc<Grid4>> {
    Ok(Arc::new(Grid4::build(n)?))
}

/// Seeded sphere-valued map with independent values at every non-exterior
/// node: the roughest admissible input, used for identity checks.
fn random_sphere_map(g: &Arc<Grid4>, m: usize, seed: u64) -> Result<Field> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut u = Field::zeros(g.clone(), m);
    for i in 0..g.len() {
        if g.class(i) != NodeClass::Exterior {
            for v in u.value_mut(i) {
                *v = rng.gen_range(-1.0..1.0f64) + 0.2;
            }
        }
    }
    u.renormalize()?;
    Ok(u)
}

fn rel_l2(a: &Field, b: &Field) -> Result<f64> {
    let d = a.sub(b)?;
    let num = d.l2_sq(QuadRule::PartialCell);
    let den = b.l2_sq(QuadRule::PartialCell);
    if den == 0.0 {
        return Err(Error::Degenerate("relative error against zero".into()));
    }
    Ok((num / den).sqrt())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// operator selftest
// ---------------------------------------------------------------------------

/// Exactness of the stencils on polynomials, laplacian convergence order,
/// the energy-gradient finite-difference check, the pointwise sphere
/// identities, great-circle oracles, and the sphere-form sign calibration.
fn run_selftest(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<Check>, Vec<(String, f64)>)> {
    let mut checks = Vec::new();
    let mut constants = Vec::new();
    let g = build_grid(cfg.grid_n)?;
    let m = cfg.sphere_n + 1;

    // exactness on polynomials: both stencils reproduce linears and
    // quadratics up to roundoff
    let coef = [0.3, -0.7, 0.11, 0.05];
    let linear = Field::from_fn(g.clone(), 1, move |x, out| {
        out[0] = 0.2 + (0..4).map(|d| coef[d] * x[d]).sum::<f64>();
    });
    let quad_coef = [1.0, 2.0, -1.0, 0.5];
    let quadratic = Field::from_fn(g.clone(), 1, move |x, out| {
        out[0] = 0.2
            + (0..4)
                .map(|d| coef[d] * x[d] + quad_coef[d] * x[d] * x[d])
                .sum::<f64>();
    });

    let grad_lin = ops::gradient(&linear)?;
    let mut worst = 0.0f64;
    for &i in g.weighted_nodes() {
        let gv = grad_lin.value(i as usize);
        for d in 0..4 {
            worst = worst.max((gv[d] - coef[d]).abs());
        }
    }
    checks.push(Check::le("gradient exact on linears", worst, EXACT_TOL));

    let grad_quad = ops::gradient(&quadratic)?;
    let mut worst = 0.0f64;
    for &i in g.weighted_nodes() {
        let x = g.coord(i as usize);
        let gv = grad_quad.value(i as usize);
        for d in 0..4 {
            worst = worst.max((gv[d] - (coef[d] + 2.0 * quad_coef[d] * x[d])).abs());
        }
    }
    checks.push(Check::le("gradient exact on quadratics", worst, STENCIL_TOL));

    let lap_lin = ops::laplacian(&linear)?;
    let mut worst = 0.0f64;
    for &i in g.weighted_nodes() {
        worst = worst.max(lap_lin.value(i as usize)[0].abs());
    }
    checks.push(Check::le("laplacian exact on linears", worst, STENCIL_TOL));

    let lap_quad = ops::laplacian(&quadratic)?;
    let exact = 2.0 * quad_coef.iter().sum::<f64>();
    let mut worst = 0.0f64;
    for &i in g.weighted_nodes() {
        worst = worst.max((lap_quad.value(i as usize)[0] - exact).abs());
    }
    checks.push(Check::le("laplacian exact on quadratics", worst, STENCIL_TOL));

    // second-order convergence on a transcendental profile; sup over the
    // fixed half ball, so error placement does not drift with the
    // grid-dependent interior margin
    let mut errs = Vec::new();
    for n in ORDER_LADDER {
        let gn = build_grid(n)?;
        let f = Field::from_fn(gn.clone(), 1, |x, out| out[0] = x[0].sin());
        let lap = ops::laplacian(&f)?;
        let mut sup = 0.0f64;
        for &i in gn.interior_nodes() {
            let i = i as usize;
            if gn.r2(i) <= 0.25 {
                sup = sup.max((lap.value(i)[0] + gn.coord(i)[0].sin()).abs());
            }
        }
        errs.push(sup);
    }
    let order_coarse = (errs[0] / errs[1]).log2();
    let order_fine = (errs[1] / errs[2]).log2();
    checks.push(Check::window(
        "laplacian order 9 to 17",
        order_coarse,
        ORDER_WINDOW.0,
        ORDER_WINDOW.1,
    ));
    checks.push(Check::window(
        "laplacian order 17 to 33",
        order_fine,
        ORDER_WINDOW.0,
        ORDER_WINDOW.1,
    ));
    constants.push(("order_coarse".into(), order_coarse));
    constants.push(("order_fine".into(), order_fine));

    // energy gradients against central differences, both energies, half
    // the directions each; runs on the coarse grid regardless of the
    // configured resolution
    let g9 = build_grid(FD_GRID)?;
    let u = random_sphere_map(&g9, m, 3)?;
    let mut worst_rel = 0.0f64;
    for kind in [EnergyKind::Intrinsic, EnergyKind::Extrinsic] {
        let grad = match kind {
            EnergyKind::Intrinsic => flow::grad_intrinsic_energy(&u)?,
            EnergyKind::Extrinsic => flow::grad_extrinsic_energy(&u)?,
        };
        for dir in 0..(FD_DIRECTIONS / 2) as u64 {
            let mut delta = maps::seeded_direction(g9.clone(), m, 100 + dir);
            for p in 0..g9.len() {
                if g9.class(p) != NodeClass::Interior {
                    delta.value_mut(p).fill(0.0);
                }
            }
            let mut up = u.clone();
            let mut um = u.clone();
            for (o, d) in up.raw_mut().iter_mut().zip(delta.raw()) {
                *o += FD_STEP * d;
            }
            for (o, d) in um.raw_mut().iter_mut().zip(delta.raw()) {
                *o -= FD_STEP * d;
            }
            let (ep, em) = match kind {
                EnergyKind::Intrinsic => (
                    flow::intrinsic_energy_raw(&up)?,
                    flow::intrinsic_energy_raw(&um)?,
                ),
                EnergyKind::Extrinsic => (
                    flow::extrinsic_energy_raw(&up)?,
                    flow::extrinsic_energy_raw(&um)?,
                ),
            };
            let fd = (ep - em) / (2.0 * FD_STEP);
            let dot: f64 = grad.raw().iter().zip(delta.raw()).map(|(a, b)| a * b).sum();
            worst_rel = worst_rel.max((fd - dot).abs() / fd.abs().max(dot.abs()));
        }
    }
    checks.push(Check::le(
        "energy gradient matches finite differences",
        worst_rel,
        cfg.tol_rel,
    ));
    constants.push(("fd_worst_rel".into(), worst_rel));

    // pointwise sphere identities on a rough admissible map
    let u = random_sphere_map(&g, m, 5)?;
    let tau = sphere::tension(&u)?;
    let mut orth = 0.0f64;
    for &i in g.weighted_nodes() {
        let dot: f64 = u
            .value(i as usize)
            .iter()
            .zip(tau.value(i as usize))
            .map(|(a, b)| a * b)
            .sum();
        orth = orth.max(dot.abs());
    }
    let tau_scale = 1.0 + tau.linf();
    checks.push(Check::le(
        "tension orthogonal to the map",
        orth / tau_scale,
        EXACT_TOL,
    ));
    let e = sphere::energies(&u)?;
    checks.push(Check::le(
        "energy pythagoras",
        (e.extrinsic - e.intrinsic - e.normal).abs() / e.extrinsic,
        EXACT_TOL,
    ));

    // the normal-consistency defect of a smooth map is pure
    // discretization error and halves (at least) per refinement
    let gc = maps::great_circle(1.0, m.max(3))?;
    let d9 = sphere::normal_consistency_defect(&gc.sample(build_grid(9)?))?;
    let d17 = sphere::normal_consistency_defect(&gc.sample(build_grid(17)?))?;
    checks.push(Check::ge(
        "normal defect decays under refinement",
        d9 / d17,
        DEFECT_DECAY_MIN,
    ));
    constants.push(("defect_ratio".into(), d9 / d17));

    // great-circle oracles: the sampled map is discretely almost harmonic
    // and its extrinsic energy approaches pi^2 / 8
    let t9 = sphere::tension(&gc.sample(build_grid(9)?))?
        .l2_sq(QuadRule::PartialCell)
        .sqrt();
    let t17 = sphere::tension(&gc.sample(build_grid(17)?))?
        .l2_sq(QuadRule::PartialCell)
        .sqrt();
    checks.push(Check::ge(
        "great-circle tension decays under refinement",
        t9 / t17,
        TENSION_DECAY_MIN,
    ));
    constants.push(("tension_ratio".into(), t9 / t17));

    let e_gc = sphere::energies(&gc.sample(g.clone()))?.extrinsic;
    let oracle = std::f64::consts::PI.powi(2) / 8.0;
    checks.push(Check::le(
        "great-circle energy near pi^2/8",
        (e_gc / oracle - 1.0).abs(),
        GC_ENERGY_TOL,
    ));
    constants.push(("gc_energy".into(), e_gc));
    constants.push(("gc_energy_oracle".into(), oracle));

    // sphere-form sign calibration; the fit needs a deep interior
    let sig = sphere::calibrate_sigma(cfg.grid_n.max(SIGMA_MIN_GRID))?;
    checks.push(Check::le(
        "calibrated sphere-form residual",
        sig.rel_residual,
        SIGMA_RESIDUAL_TOL,
    ));
    constants.push(("sigma".into(), sig.sigma));
    constants.push(("sigma_fitted".into(), sig.fitted));
    constants.push(("sigma_residual".into(), sig.rel_residual));

    let mut csv = String::from("check,value,bound,pass\n");
    for c in &checks {
        let _ = writeln!(csv, "{},{},{},{}", c.name, c.value, c.bound, c.pass);
    }
    write_file(&out.join("selftest.csv"), &csv)?;
    Ok((checks, constants))
}

// ---------------------------------------------------------------------------
// flow
// ---------------------------------------------------------------------------

/// Gradient flow of a bump perturbation of the constant map: dissipation
/// monotonicity, the energy inequality, and the along-the-flow convexity
/// and dissipation-mean checks past the transient.
fn run_flow_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<Check>, Vec<(String, f64)>)> {
    let g = build_grid(cfg.grid_n)?;
    let m = cfg.sphere_n + 1;
    let base = maps::constant_map(m)?;
    // the smallest amplitude keeps the data inside the configured budget
    let amp = cfg
        .amplitudes
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let u0 = maps::initial_data(g.clone(), &base, maps::Perturbation::Axis(1), amp)?;
    let bdata = base.boundary_data();

    let mut fcfg = FlowConfig::defaults(&g, EnergyKind::Intrinsic);
    fcfg.tol = cfg.tol_residual;
    fcfg.eps0 = cfg.eps0;
    let tr = flow::run_flow(&u0, &bdata, &fcfg)?;

    let mut checks = Vec::new();
    let mut constants = Vec::new();

    checks.push(Check::le(
        "flow converged",
        tr.final_residual,
        cfg.tol_residual,
    ));

    // intrinsic energy may never rise across accepted steps, exactly
    let accepted: Vec<&flow::LedgerRow> = tr.rows.iter().filter(|r| r.dt > 0.0).collect();
    let mut worst_rise = f64::NEG_INFINITY;
    for w in accepted.windows(2) {
        worst_rise = worst_rise.max(w[1].intrinsic - w[0].intrinsic);
    }
    checks.push(Check::le("intrinsic energy monotone", worst_rise, 0.0));

    let ei = &tr.energy_inequality;
    checks.push(Check::le(
        "energy inequality slack",
        ei.slack,
        cfg.tol_rel * ei.initial_tau_sq,
    ));
    constants.push(("dissipation".into(), ei.dissipation));
    constants.push(("initial_tau_sq".into(), ei.initial_tau_sq));
    constants.push(("final_tau_sq".into(), ei.final_tau_sq));

    // past the transient: dissipation-mean monotonicity and snapshot
    // convexity
    match tr.transient_end(cfg.eps0) {
        Some(t1) => {
            checks.push(Check::ge("transient reached", 1.0, 1.0));
            let ut = flow::check_ut_monotone(&tr.rows, t1)?;
            checks.push(Check::le(
                "dissipation mean bound past transient",
                ut.worst_slack,
                1e-3 * ut.peak_ut_sq,
            ));
            constants.push(("ut_pairs_checked".into(), ut.pairs_checked as f64));

            let sweep = flow::flow_convexity_sweep(&tr, tr.rows[t1].step)?;
            let failures = sweep.iter().filter(|c| !c.pass).count();
            checks.push(Check::le(
                "flow convexity across snapshots",
                failures as f64,
                0.0,
            ));
            constants.push(("convexity_pairs_checked".into(), sweep.len() as f64));
        }
        None => checks.push(Check::ge("transient reached", 0.0, 1.0)),
    }

    constants.push(("steps".into(), accepted.len() as f64));
    constants.push(("final_intrinsic".into(), tr.rows.last().map_or(0.0, |r| r.intrinsic)));
    constants.push(("final_residual".into(), tr.final_residual));

    let mut csv = Vec::new();
    tr.write_ledger_csv(&mut csv)?;
    std::fs::write(out.join("ledger.csv"), csv)?;
    tr.final_state.write_snapshot(out.join("final.snap"))?;
    Ok((checks, constants))
}

// ---------------------------------------------------------------------------
// convexity sweeps
// ---------------------------------------------------------------------------

/// Seeded perturbation pairs around the flow limit of constant boundary
/// data; evaluates the three-term chain (intrinsic) or the two-sided
/// comparison (extrinsic) on every pair.
fn run_convexity(
    cfg: &ExperimentConfig,
    out: &Path,
    kind: EnergyKind,
) -> Result<(Vec<Check>, Vec<(String, f64)>)> {
    let g = build_grid(cfg.grid_n)?;
    let m = cfg.sphere_n + 1;
    let b = maps::constant_map(m)?.boundary_data();
    let base = convexity::flow_limit(&g, &b, kind, cfg.eps0)?;

    let mut checks = Vec::new();
    let mut constants = Vec::new();
    let n_pairs = cfg.seeds.len();

    match kind {
        EnergyKind::Intrinsic => {
            let (chain, conv2) =
                convexity::intrinsic_sweep(&base, n_pairs, &cfg.amplitudes, cfg.eps0)?;
            let chain_fail = chain.rows.iter().filter(|r| !r.report.pass).count();
            checks.push(Check::le("chain inequality sweep", chain_fail as f64, 0.0));
            let conv2_fail = conv2.rows.iter().filter(|r| !r.report.pass).count();
            checks.push(Check::le(
                "tension comparison sweep",
                conv2_fail as f64,
                0.0,
            ));
            constants.push(("pairs".into(), chain.rows.len() as f64));

            let mut csv = Vec::new();
            convexity::write_convexity_csv(&chain.rows, &mut csv)?;
            std::fs::write(out.join("chain.csv"), csv)?;
            let mut csv = Vec::new();
            convexity::write_convexity_csv(&conv2.rows, &mut csv)?;
            std::fs::write(out.join("conv2.csv"), csv)?;
        }
        EnergyKind::Extrinsic => {
            let sweep = convexity::extrinsic_sweep(&base, n_pairs, &cfg.amplitudes, cfg.eps0)?;
            let fail = sweep.rows.iter().filter(|r| !r.report.pass).count();
            checks.push(Check::le(
                "extrinsic convexity sweep",
                fail as f64,
                0.0,
            ));
            constants.push(("pairs".into(), sweep.rows.len() as f64));

            let mut csv = Vec::new();
            convexity::write_convexity_csv(&sweep.rows, &mut csv)?;
            std::fs::write(out.join("extrinsic.csv"), csv)?;
        }
    }
    Ok((checks, constants))
}

// ---------------------------------------------------------------------------
// uniqueness
// ---------------------------------------------------------------------------

/// Flows differently seeded perturbations of the same clamped data to
/// their limits and gates the worst pairwise `W^{2,2}` distance.
fn run_uniqueness(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<Check>, Vec<(String, f64)>)> {
    let g = build_grid(cfg.grid_n)?;
    let m = cfg.sphere_n + 1;
    let b = maps::constant_map(m)?.boundary_data();
    let amp = cfg
        .amplitudes
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);

    let mut fcfg = FlowConfig::defaults(&g, EnergyKind::Intrinsic);
    fcfg.tol = cfg.tol_residual;
    fcfg.eps0 = cfg.eps0.max(UNIQUENESS_ADMISSION);
    let rep = convexity::uniqueness_experiment(&g, &b, &cfg.seeds, amp, &fcfg)?;

    let checks = vec![Check::le(
        "seeded limits coincide",
        rep.max_distance,
        cfg.tol_distance,
    )];
    let constants = vec![
        ("max_distance".into(), rep.max_distance),
        ("flows".into(), cfg.seeds.len() as f64),
        ("amplitude".into(), amp),
    ];

    let mut csv = String::from("seed_a,seed_b,w22_distance\n");
    for (a, b, d) in &rep.distances {
        let _ = writeln!(csv, "{a},{b},{d}");
    }
    write_file(&out.join("distances.csv"), &csv)?;
    Ok((checks, constants))
}

// ---------------------------------------------------------------------------
// hardy
// ---------------------------------------------------------------------------

/// Weighted Hardy quotients: the bump oracle and the seeded empirical
/// constant with a disjoint-family stability cross-check.
fn run_hardy(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<Check>, Vec<(String, f64)>)> {
    let g = build_grid(cfg.grid_n)?;
    let bump_ratio = analysis::hardy_ratio(&analysis::clamped_bump_field(g.clone()))?;
    let oracle = 769.0 / 2240.0;

    let mut checks = Vec::new();
    let mut constants = Vec::new();
    checks.push(Check::le(
        "bump quotient near the closed form",
        (bump_ratio / oracle - 1.0).abs(),
        cfg.tol_rel,
    ));
    constants.push(("bump_ratio".into(), bump_ratio));
    constants.push(("bump_oracle".into(), oracle));

    let k = cfg.seeds.len();
    let seed = cfg.seeds[0];
    let est_a = analysis::hardy_constant_estimate(g.clone(), k, seed)?;
    let est_b = analysis::hardy_constant_estimate(g, k, seed + HARDY_SEED_OFFSET)?;
    checks.push(Check {
        name: "empirical constant finite and positive".into(),
        value: est_a.max_ratio,
        bound: 0.0,
        pass: est_a.max_ratio.is_finite() && est_a.max_ratio > 0.0,
    });
    let spread = (est_a.max_ratio - est_b.max_ratio).abs() / est_a.max_ratio.max(est_b.max_ratio);
    checks.push(Check::le(
        "empirical constant seed-stable",
        spread,
        HARDY_STABILITY_TOL,
    ));
    constants.push(("estimate_a".into(), est_a.max_ratio));
    constants.push(("estimate_b".into(), est_b.max_ratio));

    let mut csv = String::from("index,ratio\n");
    for (i, r) in est_a.ratios.iter().enumerate() {
        let _ = writeln!(csv, "{i},{r}");
    }
    write_file(&out.join("ratios.csv"), &csv)?;
    Ok((checks, constants))
}

// ---------------------------------------------------------------------------
// green
// ---------------------------------------------------------------------------

fn quintic_bump(g: &Arc<Grid4>) -> Field {
    let rr = CALIBRATION_RADIUS * CALIBRATION_RADIUS;
    Field::from_fn(g.clone(), 1, move |x, out| {
        let s: f64 = x.iter().map(|c| c * c).sum();
        out[0] = if s < rr { (rr - s).powi(5) } else { 0.0 };
    })
}

fn quintic_bump_source(g: &Arc<Grid4>) -> Field {
    let rr = CALIBRATION_RADIUS * CALIBRATION_RADIUS;
    Field::from_fn(g.clone(), 1, move |x, out| {
        let s: f64 = x.iter().map(|c| c * c).sum();
        out[0] = if s < rr {
            1920.0 * rr.powi(3) - 11520.0 * rr.powi(2) * s + 19200.0 * rr * s * s
                - 9600.0 * s.powi(3)
        } else {
            0.0
        };
    })
}

/// Kernel representation checks: the constant-source bump at the origin
/// with its refinement decay, the kernel-vs-finite-difference cross
/// constant, the source-term norm bounds, and the calibration solve that
/// pins the kernel normalization.
fn run_green(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<Check>, Vec<(String, f64)>)> {
    let mut checks = Vec::new();
    let mut constants = Vec::new();

    // psi(0) for f = 192 has the closed form 1; targeted evaluation stays
    // cheap at any grid
    let psi0_at = |n: usize| -> Result<f64> {
        let g = build_grid(n)?;
        let f = Field::from_fn(g.clone(), 1, |_, out| out[0] = 192.0);
        let origin = g.idx([(n - 1) / 2; 4]);
        Ok(green::eval_clamped_biharmonic(&f, &[origin])?[0])
    };
    let psi0 = psi0_at(cfg.grid_n)?;
    let err_coarse = (psi0 - 1.0).abs();
    checks.push(Check::le(
        "constant-source bump value at the origin",
        err_coarse,
        cfg.tol_rel,
    ));
    constants.push(("psi0".into(), psi0));

    let n_fine = 2 * cfg.grid_n - 1;
    if n_fine <= 33 {
        let psi0_fine = psi0_at(n_fine)?;
        let err_fine = (psi0_fine - 1.0).abs();
        checks.push(Check::le(
            "origin error decays under refinement",
            err_fine,
            PSI0_DECAY_MAX * err_coarse,
        ));
        constants.push(("psi0_fine".into(), psi0_fine));
    }

    // dense solves: affordable only while the source count stays small
    if cfg.grid_n <= GREEN_DENSE_MAX {
        let g = build_grid(cfg.grid_n)?;
        let h = g.h();
        let f = Field::from_fn(g.clone(), 1, |_, out| out[0] = 192.0);
        let psi_kernel = green::solve_clamped_biharmonic(&f)?;
        let psi_fd = green::solve_clamped_fd(&f)?;
        let cross = rel_l2(&psi_fd, &psi_kernel)? / h;
        checks.push(Check::le(
            "kernel and difference solvers agree to first order",
            cross,
            GREEN_CROSS_CAP,
        ));
        constants.push(("cross_constant".into(), cross));

        // admissible shell source saturating the envelope beyond r = 1/2
        let half_h = 0.5 * h;
        let shell = Field::from_fn(g.clone(), 1, move |x, out| {
            let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
            out[0] = if r > 0.5 {
                (1.0f64).min((1.0 - r + half_h).powi(-4))
            } else {
                0.0
            };
        });
        let rep = green::verify_thm_b2_bounds(&shell, 1.0)?;
        checks.push(Check {
            name: "source-term norm ratio finite".into(),
            value: rep.ratio,
            bound: 0.0,
            pass: rep.ratio.is_finite() && rep.ratio > 0.0,
        });
        constants.push(("thmb2_ratio".into(), rep.ratio));
        constants.push(("thmb2_mass".into(), rep.mass));
        constants.push(("thmb2_norm_lap2".into(), rep.norm_lap2));
        constants.push(("thmb2_norm_grad4".into(), rep.norm_grad4));
        constants.push(("thmb2_norm_inf".into(), rep.norm_inf));

        // calibration: recover a known smooth bump from its bilaplacian;
        // this is the check that the normalization is computed, not
        // assumed
        let phi = quintic_bump(&g);
        let rhs = quintic_bump_source(&g);
        let recovered = green::solve_clamped_biharmonic(&rhs)?;
        let err = rel_l2(&recovered, &phi)?;
        let gate = if cfg.grid_n >= 13 {
            CALIBRATION_TOL_FINE
        } else {
            CALIBRATION_TOL_COARSE
        };
        checks.push(Check::le("calibration reproduces the bump", err, gate));
        constants.push(("calibration_err".into(), err));
    }
    constants.push(("kernel_normalization".into(), green::KERNEL_NORMALIZATION));

    let mut csv = String::from("quantity,value\n");
    for (k, v) in &constants {
        let _ = writeln!(csv, "{k},{v}");
    }
    write_file(&out.join("green.csv"), &csv)?;
    Ok((checks, constants))
}

// ---------------------------------------------------------------------------
// monotonicity
// ---------------------------------------------------------------------------

fn seeded_center(seed: u64) -> [f64; 4] {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    loop {
        let p = [(); 4].map(|_| rng.gen_range(-CENTER_RADIUS..CENTER_RADIUS));
        if p.iter().map(|c| c * c).sum::<f64>() < CENTER_RADIUS * CENTER_RADIUS {
            return p;
        }
    }
}

/// Profile radii: small balls carry too few quadrature cells to trust, so
/// the ladder starts a few cells out.
fn profile_radii(h: f64) -> Vec<f64> {
    let lo = (4.0 * h).clamp(0.2, 0.5);
    (0..4)
        .map(|k| lo + (PROFILE_RHO_MAX - lo) * k as f64 / 3.0)
        .collect()
}

/// Normalized ball means of squared harmonic polynomials at seeded
/// centers: monotone in the radius for every degree up to 4, exactly flat
/// for constants.
fn run_monotonicity(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<Check>, Vec<(String, f64)>)> {
    let g = build_grid(cfg.grid_n)?;
    let radii = profile_radii(g.h());
    let centers: Vec<[f64; 4]> = cfg.seeds.iter().map(|&s| seeded_center(s)).collect();

    let mut checks = Vec::new();
    let mut constants = Vec::new();
    let mut csv = String::from("degree,index,seed,rho,value\n");

    // the constant case is an exact identity: the normalized mean equals
    // the quadrature volume ratio at every center and radius
    let ones = Field::from_fn(g.clone(), 1, |_, out| out[0] = 1.0);
    let mut worst_flat = 0.0f64;
    for (&seed, p) in cfg.seeds.iter().zip(&centers) {
        let prof = analysis::monotonicity_profile(&ones, *p, &radii)?;
        for (&rho, &v) in radii.iter().zip(&prof) {
            let vol = analysis::ball_quadrature_volume(&g, *p, rho)?;
            worst_flat = worst_flat.max((v * rho.powi(4) / vol - 1.0).abs());
            let _ = writeln!(csv, "0,0,{seed},{rho},{v}");
        }
    }
    checks.push(Check::le("constant profile exactly flat", worst_flat, EXACT_TOL));

    let full = analysis::monotonicity_profile(&ones, [0.0; 4], &[1.0])?[0];
    let vol_oracle = std::f64::consts::PI.powi(2) / 2.0;
    constants.push(("full_ball_mean".into(), full));
    constants.push(("quadrature_volume_ratio".into(), full / vol_oracle));

    // every squared harmonic polynomial grows (weakly) in the radius
    for l in 1..=4usize {
        let mut worst_dip = 0.0f64;
        for k in 0..analysis::harmonic_basis_dim(l) {
            let poly = analysis::harmonic_poly(l, k)?;
            let v = poly.sample(g.clone());
            for (&seed, p) in cfg.seeds.iter().zip(&centers) {
                let prof = analysis::monotonicity_profile(&v, *p, &radii)?;
                for w in prof.windows(2) {
                    if w[0] > 0.0 {
                        worst_dip = worst_dip.max((w[0] - w[1]) / w[0]);
                    }
                }
                for (&rho, &val) in radii.iter().zip(&prof) {
                    let _ = writeln!(csv, "{l},{k},{seed},{rho},{val}");
                }
            }
        }
        checks.push(Check::le(
            &format!("degree {l} profiles monotone"),
            worst_dip,
            cfg.tol_rel,
        ));
        constants.push((format!("worst_dip_degree_{l}"), worst_dip));
    }

    write_file(&out.join("profiles.csv"), &csv)?;
    Ok((checks, constants))
}

// ---------------------------------------------------------------------------
// epsilon-regularity
// ---------------------------------------------------------------------------

/// The key-estimate constants across a seeded pair sweep, plus the
/// interior scaling profiles of the great-circle family, whose product
/// with the amplitude is scale-free.
fn run_eps_regularity(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<Check>, Vec<(String, f64)>)> {
    let g = build_grid(cfg.grid_n)?;
    let m = cfg.sphere_n + 1;
    // A constant base has vanishing derivative weights and reports nothing;
    // the sweep instead perturbs a great-circle map with the phase rate set
    // so the base mass int |Lap u|^2 = alpha^4 pi^2/2 sits at 70% of the
    // smallness budget.
    let alpha = (2.0 * KEY_BASE_BUDGET * cfg.eps0 / std::f64::consts::PI.powi(2)).powf(0.25);
    let base = maps::great_circle(alpha, m)?.sample(g.clone());

    let mut checks = Vec::new();
    let mut constants = vec![("key_base_alpha".to_string(), alpha)];

    let sweep = convexity::key_estimate_sweep(&base, cfg.seeds.len(), &cfg.amplitudes, cfg.eps0)?;
    let mut csv = String::from("seed,amplitude,q,numerator,denominator,ratio,eps_u,bound\n");
    for (seed, amp, reports) in &sweep.rows {
        for r in reports {
            let _ = writeln!(
                csv,
                "{seed},{amp},{},{},{},{},{},{}",
                r.q_kind.label(),
                r.numerator,
                r.denominator,
                r.ratio,
                r.eps_u,
                r.bound
            );
        }
    }
    write_file(&out.join("key.csv"), &csv)?;
    for (k, q) in convexity::QKind::ALL.iter().enumerate() {
        let bound = sweep.worst_bound[k];
        checks.push(Check::le(
            &format!("key estimate bounded for {}", q.label()),
            bound,
            KEY_BOUND_CAP,
        ));
        constants.push((format!("key_bound_{}", q.label()), bound));
    }

    // scaling profiles of the near-critical great-circle family: the
    // order-l profile scales like amplitude^(l - 2), so its product with
    // amplitude^(2 - l) is scale-free up to discretization
    let mut csv = String::from("alpha,l,profile\n");
    for l in [1usize, 2] {
        let mut scaled = Vec::new();
        for &alpha in &cfg.amplitudes {
            let u = maps::great_circle(alpha, m.max(3))?.sample(g.clone());
            let p = analysis::epsilon_regularity_profile(&u, l)?;
            scaled.push(alpha.powi(2 - l as i32) * p);
            let _ = writeln!(csv, "{alpha},{l},{p}");
            constants.push((format!("profile_l{l}_alpha_{alpha}"), p));
        }
        let hi = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        checks.push(Check::le(
            &format!("order {l} profile scale-stable"),
            hi / lo,
            cfg.tol_rel.max(1.0),
        ));
    }
    write_file(&out.join("profiles.csv"), &csv)?;
    Ok((checks, constants))
}

// ---------------------------------------------------------------------------
// tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, ExperimentKind};

    fn cfg_at(kind: ExperimentKind, n: usize, dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(kind);
        cfg.grid_n = n;
        cfg.out_dir = dir.to_string_lossy().into_owned();
        cfg
    }

    #[test]
    fn check_constructors_gate_as_named() {
        assert!(Check::le("a", 1.0, 2.0).pass);
        assert!(!Check::le("a", 3.0, 2.0).pass);
        assert!(Check::ge("b", 3.0, 2.0).pass);
        assert!(!Check::ge("b", 1.0, 2.0).pass);
        assert!(Check::window("c", 2.0, 1.8, 2.2).pass);
        assert!(!Check::window("c", 2.5, 1.8, 2.2).pass);
    }

    #[test]
    fn selftest_passes_on_the_coarse_grid() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_at(ExperimentKind::OperatorSelftest, 9, dir.path());
        let s = run_experiment(&cfg).unwrap();
        for c in &s.checks {
            assert!(c.pass, "{}: value {:.3e} bound {:.3e}", c.name, c.value, c.bound);
        }
        assert!(dir.path().join("selftest.csv").exists());
        assert!(dir.path().join("summary.json").exists());
    }

    #[test]
    fn hardy_runner_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg_at(ExperimentKind::Hardy, 9, dir.path());
        cfg.seeds = (1..=8).collect();
        // the coarse-grid quotient sits well off the closed form; the
        // deterministic outputs are what this test is about
        cfg.tol_rel = 0.6;

        let s1 = run_experiment(&cfg).unwrap();
        let first: Vec<Vec<u8>> = ["summary.json", "ratios.csv"]
            .iter()
            .map(|n| std::fs::read(dir.path().join(n)).unwrap())
            .collect();
        let s2 = run_experiment(&cfg).unwrap();
        assert_eq!(s1.pass, s2.pass);
        for (name, a) in ["summary.json", "ratios.csv"].iter().zip(&first) {
            let b = std::fs::read(dir.path().join(name)).unwrap();
            assert_eq!(a, &b, "{name} differs between identical runs");
        }

        let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["version"], env!("CARGO_PKG_VERSION"));
        assert_eq!(doc["config_sha256"].as_str().unwrap().len(), 64);
        assert_eq!(doc["kind"], "hardy");
        assert!(s1.pass, "{:?}", s1.checks);
    }

    #[test]
    fn green_runner_covers_the_kernel_checks() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_at(ExperimentKind::Green, 9, dir.path());
        let s = run_experiment(&cfg).unwrap();
        for c in &s.checks {
            assert!(c.pass, "{}: value {:.3e} bound {:.3e}", c.name, c.value, c.bound);
        }
        let names: Vec<&str> = s.checks.iter().map(|c| c.name.as_str()).collect();
        assert!(names.contains(&"calibration reproduces the bump"));
        assert!(dir.path().join("green.csv").exists());
    }

    #[test]
    fn flow_runner_reports_the_dissipation_checks() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg_at(ExperimentKind::Flow, 9, dir.path());
        cfg.eps0 = 0.5;
        let s = run_experiment(&cfg).unwrap();
        for c in &s.checks {
            assert!(c.pass, "{}: value {:.3e} bound {:.3e}", c.name, c.value, c.bound);
        }
        assert!(dir.path().join("ledger.csv").exists());
        assert!(dir.path().join("final.snap").exists());
    }

    #[test]
    fn convexity_runner_sweeps_both_lemmas() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg_at(ExperimentKind::ConvexityIntrinsic, 9, dir.path());
        cfg.seeds = (1..=4).collect();
        let s = run_experiment(&cfg).unwrap();
        assert!(s.pass, "{:?}", s.checks);
        assert!(dir.path().join("chain.csv").exists());
        assert!(dir.path().join("conv2.csv").exists());
    }

    #[test]
    fn monotonicity_runner_handles_every_degree() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg_at(ExperimentKind::Monotonicity, 13, dir.path());
        cfg.seeds = vec![1, 2];
        let s = run_experiment(&cfg).unwrap();
        assert!(s.pass, "{:?}", s.checks);
        assert_eq!(s.checks.len(), 5);
    }

    #[test]
    fn uniqueness_runner_gates_the_limit_distance() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = cfg_at(ExperimentKind::Uniqueness, 9, dir.path());
        let s = run_experiment(&cfg).unwrap();
        assert!(s.pass, "{:?}", s.checks);
        assert!(dir.path().join("distances.csv").exists());
    }

    #[test]
    fn eps_regularity_runner_reports_key_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = cfg_at(ExperimentKind::EpsRegularity, 9, dir.path());
        cfg.seeds = (1..=4).collect();
        let s = run_experiment(&cfg).unwrap();
        assert!(s.pass, "{:?}", s.checks);
        assert!(dir.path().join("key.csv").exists());
        assert!(dir.path().join("profiles.csv").exists());
        let bounds: Vec<f64> = s
            .constants
            .iter()
            .filter(|(k, _)| k.starts_with("key_bound"))
            .map(|(_, v)| *v)
            .collect();
        assert_eq!(bounds.len(), 3);
        // a degenerate sweep would report zeros; the great-circle base
        // keeps every derivative weight active
        assert!(bounds.iter().all(|b| b.is_finite() && *b > 0.0));
    }
}
