// isolate per-piece costs at the criterion-9 geometry
use std::time::Instant;
use trimc::jastrow::{Configuration, MoveScratch};
use trimc::mc::{run_chain, sample_estimator_with, McParams};
use trimc::metric::{BoxGeometry, Vec3};
use trimc::scattering::{CutoffProfile, ScatteringProfile};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64Mcg;

fn main() {
    let a = 1.0f64;
    let rho_a3 = 1e-4f64;
    let ell = a * rho_a3.powf(-1.0 / 7.0);
    let p = ScatteringProfile::new(a, ell, CutoffProfile::SmoothExponential).unwrap();
    let n = 512usize;
    let l = a * (n as f64 / rho_a3).cbrt();
    let geom = BoxGeometry::periodic(l);
    let mut rng = Pcg64Mcg::seed_from_u64(77);
    // spread particles uniformly (admissible almost surely at this dilution)
    let cfg = loop {
        let pos: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.random::<f64>() * l, rng.random::<f64>() * l, rng.random::<f64>() * l))
            .collect();
        if let Ok(c) = Configuration::from_positions(pos, geom, p) { break c; }
    };
    println!("uses grid: {}", cfg.uses_cell_grid());

    let mut scratch = MoveScratch::default();
    // move_delta cost
    let t = Instant::now();
    let mut acc = 0.0;
    let m = 2_000_000u64;
    for i in 0..m {
        let prop = Vec3::new(
            (i % 1009) as f64 / 1009.0 * l,
            (i % 1013) as f64 / 1013.0 * l,
            (i % 1019) as f64 / 1019.0 * l,
        );
        acc += cfg.move_delta_with((i % 512) as usize, prop, &mut scratch).delta_log_psi;
    }
    println!("move_delta: {:.0} ns (acc {acc:.3})", t.elapsed().as_secs_f64() / m as f64 * 1e9);

    // estimator cost
    let mut triples = Vec::new();
    let mut per = Vec::new();
    let t = Instant::now();
    let k = 20_000u64;
    let mut s = 0.0;
    for _ in 0..k {
        s += sample_estimator_with(&cfg, &mut triples, &mut per, &mut scratch).t;
    }
    println!("estimator: {:.1} us (s {s:.3})", t.elapsed().as_secs_f64() / k as f64 * 1e6);

    // single-chain sweep cost
    let mc = McParams { sweeps: 50_000, burn_in: 500, step: l / 2.0, seed: 5, chains: 1, thinning: 1 };
    let t = Instant::now();
    let out = run_chain(&cfg, &mc, 0).unwrap();
    println!(
        "sweep: {:.1} us single-chain (acceptance {:.4})",
        t.elapsed().as_secs_f64() / 50_000.0 * 1e6, out.acceptance()
    );
}
