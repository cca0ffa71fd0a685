// (a) quadrature vs plain 6D MC at the criterion-9 ell/a
// (b) chain event rate vs the analytic active-triple rate
use trimc::integrals::{mc_energy_integral_check, quad_energy_integral, S5Setting};
use trimc::jastrow::{Configuration, MoveScratch};
use trimc::metric::{BoxGeometry, ModifiedMetric, Vec3};
use trimc::quad::QuadratureSpec;
use trimc::scattering::{CutoffProfile, ScatteringProfile};
use rand::{RngExt, SeedableRng};
use std::f64::consts::PI;

fn main() {
    let a = 1.0f64;
    let rho_a3 = 1e-4f64;
    let ell = a * rho_a3.powf(-1.0 / 7.0);
    let p = ScatteringProfile::new(a, ell, CutoffProfile::SmoothExponential).unwrap();
    let qe = quad_energy_integral(&p, &QuadratureSpec::default(), S5Setting::Pi3).unwrap();
    let (mc_qe, mc_se) = mc_energy_integral_check(&p, 4_000_000, 99);
    println!("QE quadrature {qe:.5} vs 6D MC {mc_qe:.5} +- {mc_se:.5} (pull {:+.2})",
             (mc_qe - qe) / mc_se);

    let n = 512usize;
    let l = a * (n as f64 / rho_a3).cbrt();
    let geom = BoxGeometry::periodic(l);
    let mut cfg = Configuration::from_lattice(n, geom, p).unwrap();
    let vol_act = ModifiedMetric::new().det * PI.powi(3) / 6.0 * ell.powi(6);
    let n3 = (n * (n - 1) * (n - 2) / 6) as f64;
    let expected_rate = n3 * vol_act / l.powi(6);
    let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(31);
    let mut scratch = MoveScratch::default();
    let mut triples = Vec::new();
    let mut events = 0u64;
    let mut sum_val = 0.0;
    let sweeps = 3_000_000u64;
    let mut samples = 0u64;
    for sweep in 0..sweeps {
        for i in 0..n {
            let cur = cfg.position(i);
            let cand = cfg.wrap(cur + Vec3::new(
                (2.0 * rng.random::<f64>() - 1.0) * l / 2.0,
                (2.0 * rng.random::<f64>() - 1.0) * l / 2.0,
                (2.0 * rng.random::<f64>() - 1.0) * l / 2.0,
            ));
            let d = cfg.move_delta_tabled(i, cand, &mut scratch).unwrap();
            if d.admissible
                && (d.delta_log_psi >= 0.0 || rng.random::<f64>() < (2.0 * d.delta_log_psi).exp())
            {
                cfg.apply_move_from_scratch(i, cand, &mut scratch);
            }
        }
        if sweep >= 2000 {
            cfg.active_triples_tabled(&mut triples);
            events += triples.len() as u64;
            for t in &triples {
                sum_val += t.glog_i.norm2() + t.glog_j.norm2() + t.glog_k.norm2();
            }
            samples += 1;
        }
    }
    let rate = events as f64 / samples as f64;
    println!(
        "event rate {rate:.5e} vs uniform-gas expectation {expected_rate:.5e} (ratio {:.4}, {} events)",
        rate / expected_rate, events
    );
    println!("mean T_diag per sample {:.5e}", sum_val / samples as f64);
}
