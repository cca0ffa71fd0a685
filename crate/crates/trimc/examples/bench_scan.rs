// stderr scaling scan over ell/a for the small-N oracle geometry
use std::time::Instant;
use trimc::jastrow::Configuration;
use trimc::mc::{run_chains, Channel, McParams};
use trimc::metric::BoxGeometry;
use trimc::qmc;
use trimc::scattering::{CutoffProfile, ScatteringProfile};

fn main() {
    let a = 1.0;
    let args: Vec<String> = std::env::args().collect();
    let sweeps: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(200_000_000);
    for la in [3.0, 3.5, 4.0] {
        let p = ScatteringProfile::new(a, la * a, CutoffProfile::SmoothExponential).unwrap();
        let l = 8.0 * p.ell_tilde();
        let geom = BoxGeometry::periodic(l);
        let cfg = Configuration::from_lattice(3, geom, p).unwrap();
        let mc = McParams { sweeps, burn_in: 1000, step: l / 2.0, seed: 777, chains: 2, thinning: 1 };
        let t0 = Instant::now();
        let merged = run_chains(&cfg, &mc).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let mean = merged.channel_mean(Channel::Total) / 3.0;
        let (se, _) = merged.channel_stderr(Channel::Total);
        let se = se / 3.0;
        let est = qmc::qmc_oracle(3, &geom, &p, 100_000, 16, 99).unwrap();
        println!(
            "ell/a={la}: {:.0}ns/sweep e={mean:.5e} rel_se={:.4} | oracle {:.5e} rel {:.5} | pull {:+.2}",
            dt / sweeps as f64 * 1e9, se / mean,
            est.energy_per_particle, est.stderr / est.energy_per_particle,
            (mean - est.energy_per_particle) / se.hypot(est.stderr)
        );
    }
}
