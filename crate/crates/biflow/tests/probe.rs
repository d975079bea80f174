//! Scratch measurements. Not part of the suite.
mod common;

use std::time::Instant;

use biflow::analysis::{clamped_bump_field, hardy_constant_estimate, hardy_ratio};
use common::grid;

#[test]
#[ignore]
fn probe_hardy_at_33() {
    // Oracle from the radial rule: num = int (1+r)^4, den = int (24r^2-16)^2.
    let num = common::radial_integral(&|r| {
        let s = 1.0 + r;
        s * s * s * s
    });
    let den = common::radial_integral(&|r| {
        let d = 24.0 * r * r - 16.0;
        d * d
    });
    let oracle = num / den;
    println!("oracle {} vs 769/2240 {}", oracle, 769.0 / 2240.0);
    for n in [9usize, 17, 33] {
        let t = Instant::now();
        let g = grid(n);
        let w = clamped_bump_field(g.clone());
        let r = hardy_ratio(&w).unwrap();
        println!(
            "N={n}: ratio {r:.6} dev {:.5} ({:.2?})",
            (r / oracle - 1.0).abs(),
            t.elapsed()
        );
    }
}

#[test]
#[ignore]
fn probe_hardy_estimate_cost_33() {
    let g = grid(33);
    let t = Instant::now();
    let est = hardy_constant_estimate(g.clone(), 50, 1).unwrap();
    println!("est(seed 1) {:.5} in {:.2?}", est.max_ratio, t.elapsed());
    let t = Instant::now();
    let est2 = hardy_constant_estimate(g, 50, 1001).unwrap();
    println!("est(seed 1001) {:.5} in {:.2?}", est2.max_ratio, t.elapsed());
    println!(
        "spread {:.4}",
        (est.max_ratio - est2.max_ratio).abs() / est.max_ratio.max(est2.max_ratio)
    );
}

#[test]
#[ignore]
fn probe_psi0_halving() {
    use biflow::green::eval_clamped_biharmonic;
    for n in [17usize, 33] {
        let t = Instant::now();
        let g = grid(n);
        let c = (n - 1) / 2;
        let origin = g.idx([c, c, c, c]);
        let f = biflow::field::Field::from_fn(g.clone(), 1, |_, out| out[0] = 192.0);
        let psi = eval_clamped_biharmonic(&f, &[origin]).unwrap();
        println!("N={n}: psi(0) {} err {:.6} ({:.2?})", psi[0], (psi[0] - 1.0).abs(), t.elapsed());
    }
}

#[test]
#[ignore]
fn probe_monotonicity_33() {
    use biflow::analysis::{ball_quadrature_volume, harmonic_basis_dim, harmonic_poly, monotonicity_profile};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let g = grid(33);
    let radii = [0.25, 0.4, 0.55, 0.7];
    let mut centers = Vec::new();
    for seed in 1u64..=5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let p = [(); 4].map(|_| rng.gen_range(-0.25..0.25));
            if p.iter().map(|c| c * c).sum::<f64>() < 0.25 * 0.25 {
                centers.push(p);
                break;
            }
        }
    }
    let t = Instant::now();
    let mut worst = 0.0f64;
    for l in 1usize..=4 {
        for k in 0..harmonic_basis_dim(l) {
            let poly = harmonic_poly(l, k).unwrap();
            let v = poly.sample(g.clone());
            for &p in &centers {
                let prof = monotonicity_profile(&v, p, &radii).unwrap();
                for w in prof.windows(2) {
                    let scale = w[0].abs().max(w[1].abs()).max(1e-300);
                    worst = worst.max((w[0] - w[1]) / scale);
                }
            }
        }
    }
    println!("worst relative dip {:.3e} in {:.2?}", worst, t.elapsed());
    let vol = ball_quadrature_volume(&g, [0.0; 4], 0.5).unwrap();
    println!("quad vol ratio at rho=0.5 {}", vol / (0.5f64.powi(4)));
}

#[test]
#[ignore]
fn probe_convexity_sweeps_17() {
    use biflow::convexity::{extrinsic_sweep, flow_limit, intrinsic_sweep, key_estimate_sweep};
    use biflow::flow::EnergyKind;
    use biflow::maps::constant_map;

    let g = grid(17);
    let b = constant_map(3).unwrap().boundary_data();
    let amps = [0.02, 0.05, 0.1];
    let t = Instant::now();
    let ui = flow_limit(&g, &b, EnergyKind::Intrinsic, 0.05).unwrap();
    println!("intrinsic base in {:.2?}", t.elapsed());
    let t = Instant::now();
    let (chain, conv2) = intrinsic_sweep(&ui, 50, &amps, 0.05).unwrap();
    println!("intrinsic sweep {} {} in {:.2?}", chain.all_pass, conv2.all_pass, t.elapsed());
    let t = Instant::now();
    let ue = flow_limit(&g, &b, EnergyKind::Extrinsic, 0.05).unwrap();
    let ext = extrinsic_sweep(&ue, 50, &amps, 0.05).unwrap();
    println!("extrinsic sweep {} in {:.2?}", ext.all_pass, t.elapsed());
    let t = Instant::now();
    let key = key_estimate_sweep(&ui, 50, &amps, 0.05).unwrap();
    println!("key bounds {:?} in {:.2?}", key.worst_bound, t.elapsed());
}

#[test]
#[ignore]
fn probe_key_sweep_gc_base() {
    use biflow::convexity::key_estimate_sweep;
    use biflow::maps::great_circle;
    use biflow::sphere::energies;

    let g = grid(17);
    for alpha in [0.2f64, 0.25, 0.3] {
        let u = great_circle(alpha, 3).unwrap().sample(g.clone());
        let e = energies(&u).unwrap();
        println!("alpha {alpha}: eps_u {:.4} grad4 {:.4}", 4.0 * e.extrinsic, e.grad4);
    }
    let u = great_circle(0.25, 3).unwrap().sample(g.clone());
    let t = Instant::now();
    let key = key_estimate_sweep(&u, 50, &[0.02, 0.05, 0.1], 0.05).unwrap();
    println!("key bounds {:?} in {:.2?}", key.worst_bound, t.elapsed());
    let degen = key.rows.iter().flat_map(|r| r.2.iter()).filter(|r| r.degenerate).count();
    println!("degenerate {} of {}", degen, key.rows.len() * 3);
}
