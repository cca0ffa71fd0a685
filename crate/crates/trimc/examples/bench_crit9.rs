// criterion-9 rehearsal: e1 vs quadrature reference at the acceptance scale
use std::time::Instant;
use trimc::integrals::{quad_energy_integral, S5Setting};
use trimc::jastrow::Configuration;
use trimc::mc::{run_chains, Channel, McParams};
use trimc::metric::BoxGeometry;
use trimc::quad::QuadratureSpec;
use trimc::scattering::{CutoffProfile, ScatteringProfile};

fn main() {
    let a = 1.0f64;
    let rho_a3 = 1e-4f64;
    let ell = a * rho_a3.powf(-1.0 / 7.0);
    let p = ScatteringProfile::new(a, ell, CutoffProfile::SmoothExponential).unwrap();
    let n = 512usize;
    let l = a * (n as f64 / rho_a3).cbrt();
    let rho = n as f64 / (l * l * l);
    let geom = BoxGeometry::periodic(l);
    let cfg = Configuration::from_lattice(n, geom, p).unwrap();
    let qe = quad_energy_integral(&p, &QuadratureSpec::default(), S5Setting::Pi3).unwrap();
    let e_ref = rho * rho / 3.0 * qe;
    for (sweeps, seed) in [(1_000_000u64, 21u64), (4_000_000, 22)] {
        let mc = McParams { sweeps, burn_in: 2_000, step: l / 2.0, seed, chains: 2, thinning: 1 };
        let t0 = Instant::now();
        let merged = run_chains(&cfg, &mc).unwrap();
        let e1 = merged.channel_mean(Channel::Diag) / n as f64;
        let (se1, _) = merged.channel_stderr(Channel::Diag);
        let se1 = se1 / n as f64;
        let e2 = merged.channel_mean(Channel::Share) / n as f64;
        let e3 = merged.channel_mean(Channel::Disj) / n as f64;
        println!(
            "sweeps {sweeps:.1e} seed {seed}: e1/e_ref = {:.4} +- {:.4} | (e2+e3)/e1 = {:.5} (10 rho l^3 = {:.4}) [{:.0}s]",
            e1 / e_ref, se1 / e_ref, (e2 + e3) / e1,
            10.0 * rho * ell.powi(3), t0.elapsed().as_secs_f64()
        );
    }
}
