//! Quasi-random oracle for small particle numbers.
//!
//! Estimates the energy quotient int sum_i |grad_i psi|^2 / int psi^2 for
//! N = 3 or 4 directly, with no Markov chain: randomized (shifted) Halton
//! points drive an exact change of variables that anchors one triple inside
//! its interaction ellipsoid |M^-1 v| <= ell, where all the support lives.
//! Uniform sampling of the box would waste all but ~4e-6 of its points at
//! these geometries; the anchored form is an exact rewriting, not an
//! approximation. Standard errors come from independent randomizations.

use crate::mc::McError;
use crate::metric::{Boundary, BoxGeometry, ModifiedMetric, Vec3, Vec6};
use crate::scattering::ScatteringProfile;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64Mcg;
use serde::Serialize;
use std::f64::consts::{PI, TAU};

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
const QMC_TAG: u64 = 0x716d_6331;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct QmcEstimate {
    pub energy_per_particle: f64,
    pub stderr: f64,
    pub numerator: f64,
    pub numerator_stderr: f64,
    pub denominator: f64,
    pub denominator_stderr: f64,
    pub points: u64,
    pub randomizations: u32,
}

fn mix_seed(seed: u64, tag: u64, idx: u64) -> u64 {
    let mut z = seed ^ tag.rotate_left(29) ^ idx.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut r = 0.0;
    while n > 0 {
        r += (n % base) as f64 * inv;
        n /= base;
        inv /= b;
    }
    r
}

fn halton_point(idx: u64, shifts: &[f64; 12], out: &mut [f64; 12]) {
    for d in 0..12 {
        let x = radical_inverse(idx, PRIMES[d]) + shifts[d];
        out[d] = x - x.floor();
    }
}

/// Maps 6 uniforms to a uniform point of the unit ball in R^6, exactly:
/// radius from u0^(1/6); direction from three phases and a uniform simplex
/// split of the squared 2D radii (order statistics of two uniforms).
pub fn unit_ball6(u: &[f64]) -> Vec6 {
    let r = u[0].powf(1.0 / 6.0);
    let (lo, hi) = if u[1] <= u[2] { (u[1], u[2]) } else { (u[2], u[1]) };
    let parts = [lo, hi - lo, 1.0 - hi];
    let mut c = [0.0; 6];
    for k in 0..3 {
        let s = parts[k].max(0.0).sqrt() * r;
        let phase = TAU * u[3 + k];
        c[2 * k] = s * phase.cos();
        c[2 * k + 1] = s * phase.sin();
    }
    Vec6::from_array(c)
}

/// All sorted particle triples of 0..n.
fn triple_list(n: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                out.push([i, j, k]);
            }
        }
    }
    out
}

struct RawTriple {
    f: f64,
    /// gradient of f with respect to each member, in triple order
    grad: [Vec3; 3],
    mgrad_norm2: f64,
}

fn raw_triple(
    positions: &[Vec3],
    geom: &BoxGeometry,
    p: &ScatteringProfile,
    t: [usize; 3],
) -> RawTriple {
    let xp = positions[t[0]];
    let xq = positions[t[1]];
    let xr = positions[t[2]];
    let dpq = geom.pair_diff(xp, xq);
    let dpr = geom.pair_diff(xp, xr);
    let dqr = geom.pair_diff(xq, xr);
    let hyp = crate::metric::hyperradius_from_sq(dpq.norm2(), dpr.norm2(), dqr.norm2());
    if hyp >= p.ell() {
        return RawTriple { f: 1.0, grad: [Vec3::ZERO; 3], mgrad_norm2: 0.0 };
    }
    let f = p.truncated_radial(hyp).f_ell;
    let g = p.grad_f_ell_at(Vec6::new(dpq, dpr), hyp);
    RawTriple {
        f,
        grad: [g.grad6.u + g.grad6.v, -g.grad6.u, -g.grad6.v],
        mgrad_norm2: g.mgrad6.norm2(),
    }
}

fn slot_of(t: [usize; 3], particle: usize) -> Option<usize> {
    t.iter().position(|&m| m == particle)
}

/// Energy quotient for N in {3, 4} by randomized anchored quasi-Monte
/// Carlo. Requires the cutoff plateau to cover the hard core, so the
/// product state vanishes on the core without an extra indicator.
pub fn qmc_oracle(
    n: usize,
    geom: &BoxGeometry,
    p: &ScatteringProfile,
    points: u64,
    randomizations: u32,
    seed: u64,
) -> Result<QmcEstimate, McError> {
    if !(3..=4).contains(&n) {
        return Err(McError::OracleBadN(n));
    }
    if !p.plateau_covers_core() {
        return Err(McError::BadParams(
            "oracle needs ell >= 2 sqrt(2) a so the state vanishes on the core".into(),
        ));
    }
    if geom.boundary == Boundary::Periodic && p.ell_tilde() >= geom.l / 2.0 {
        return Err(McError::BadParams(format!(
            "periodic oracle needs ell_tilde < L/2, got {} vs {}",
            p.ell_tilde(),
            geom.l
        )));
    }
    if points == 0 || randomizations < 2 {
        return Err(McError::BadParams(
            "oracle needs points >= 1 and randomizations >= 2".into(),
        ));
    }

    let metric = ModifiedMetric::new();
    let ell = p.ell();
    let l = geom.l;
    let vol_box = geom.volume();
    // volume of the anchored ellipsoid {|M^-1 v| <= ell}
    let vol_ell = metric.det * PI.powi(3) / 6.0 * ell.powi(6);
    // anchored weight: pivot position, ellipsoid, and any extra particle
    let weight = vol_box * vol_ell * if n == 4 { vol_box } else { 1.0 };
    let l_3n = vol_box.powi(n as i32);
    let triples = triple_list(n);
    let periodic = geom.boundary == Boundary::Periodic;

    let mut num_estimates = Vec::with_capacity(randomizations as usize);
    let mut den_estimates = Vec::with_capacity(randomizations as usize);
    let mut e_estimates = Vec::with_capacity(randomizations as usize);

    let mut u = [0.0; 12];
    let mut positions = vec![Vec3::ZERO; n];
    for r in 0..randomizations {
        let mut rng = Pcg64Mcg::seed_from_u64(mix_seed(seed, QMC_TAG, r as u64));
        let mut shifts = [0.0; 12];
        for s in shifts.iter_mut() {
            *s = rng.random::<f64>();
        }
        let mut num_sum = 0.0;
        let mut den_corr_sums = vec![0.0; triples.len()];
        for idx in 0..points {
            halton_point(idx, &shifts, &mut u);
            // numerator, anchored at the first triple
            if let Some(pos) =
                build_anchored(&mut positions, &u, geom, &metric, ell, triples[0], n)
            {
                num_sum += numerator_integrand(pos, geom, p, &triples, triples[0]);
            }
            // denominator telescope: term k anchored at triple k
            for (k, &tk) in triples.iter().enumerate() {
                if let Some(pos) =
                    build_anchored(&mut positions, &u, geom, &metric, ell, tk, n)
                {
                    let mut term = {
                        let rt = raw_triple(pos, geom, p, tk);
                        (1.0 - rt.f) * (1.0 + rt.f)
                    };
                    if term != 0.0 {
                        for &tm in triples.iter().take(k) {
                            let fm = raw_triple(pos, geom, p, tm).f;
                            term *= fm * fm;
                        }
                        den_corr_sums[k] += term;
                    }
                }
            }
        }
        let symmetry = triples.len() as f64; // equivalent anchors for the numerator
        let num = symmetry * weight * num_sum / points as f64;
        let den_corr: f64 =
            den_corr_sums.iter().map(|s| weight * s / points as f64).sum();
        let den = l_3n - den_corr;
        num_estimates.push(num);
        den_estimates.push(den);
        e_estimates.push(num / (n as f64 * den));
        let _ = periodic;
        let _ = l;
    }

    let stat = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
            / (xs.len() as f64 - 1.0).max(1.0);
        (m, (var / xs.len() as f64).sqrt())
    };
    let (den_mean, den_se) = stat(&den_estimates);
    if den_mean <= 3.0 * den_se {
        return Err(McError::OracleDenominatorZero { mean: den_mean, stderr: den_se });
    }
    let (num_mean, num_se) = stat(&num_estimates);
    let (e_mean, e_se) = stat(&e_estimates);
    Ok(QmcEstimate {
        energy_per_particle: e_mean,
        stderr: e_se,
        numerator: num_mean,
        numerator_stderr: num_se,
        denominator: den_mean,
        denominator_stderr: den_se,
        points,
        randomizations,
    })
}

/// Fills positions for the anchor layout: pivot of `t` uniform in the box,
/// the two other members of `t` displaced by the ellipsoid point, remaining
/// particles uniform. Returns None when an open box clips a member.
fn build_anchored<'a>(
    positions: &'a mut [Vec3],
    u: &[f64; 12],
    geom: &BoxGeometry,
    metric: &ModifiedMetric,
    ell: f64,
    t: [usize; 3],
    n: usize,
) -> Option<&'a [Vec3]> {
    let l = geom.l;
    let pivot = Vec3::new(u[0] * l, u[1] * l, u[2] * l);
    let y = unit_ball6(&u[3..9]);
    let v = metric.apply(y.scale(ell));
    let x_b = pivot - v.u;
    let x_c = pivot - v.v;
    let open = geom.boundary == Boundary::Open;
    if open && (!geom.contains(x_b) || !geom.contains(x_c)) {
        return None;
    }
    positions[t[0]] = pivot;
    positions[t[1]] = geom.wrap(x_b);
    positions[t[2]] = geom.wrap(x_c);
    if n == 4 {
        let extra = (0..n).find(|i| !t.contains(i)).unwrap();
        positions[extra] = Vec3::new(u[9] * l, u[10] * l, u[11] * l);
    }
    Some(positions)
}

/// sum over triples t' and shared particles i of
/// (grad_i f_t0 . grad_i f_t') * psi^2 / (f_t0 f_t'), with the divisions
/// cancelled analytically so the integrand stays bounded on the core.
fn numerator_integrand(
    positions: &[Vec3],
    geom: &BoxGeometry,
    p: &ScatteringProfile,
    triples: &[[usize; 3]],
    t0: [usize; 3],
) -> f64 {
    let raws: Vec<RawTriple> =
        triples.iter().map(|&t| raw_triple(positions, geom, p, t)).collect();
    let slot0 = triples.iter().position(|&t| t == t0).unwrap();
    let r0 = &raws[slot0];
    if r0.mgrad_norm2 == 0.0 {
        return 0.0;
    }
    // diagonal: 2 |M grad f_t0|^2 * prod_{t != t0} f_t^2
    let mut other_sq = 1.0;
    for (k, r) in raws.iter().enumerate() {
        if k != slot0 {
            other_sq *= r.f * r.f;
        }
    }
    let mut total = 2.0 * r0.mgrad_norm2 * other_sq;
    // cross terms with every other triple, cancelling f_t0 f_t'
    for (k, r) in raws.iter().enumerate() {
        if k == slot0 || r.mgrad_norm2 == 0.0 {
            continue;
        }
        let mut dot = 0.0;
        for &particle in &t0 {
            if let (Some(s0), Some(s1)) = (slot_of(t0, particle), slot_of(triples[k], particle)) {
                dot += r0.grad[s0].dot(r.grad[s1]);
            }
        }
        if dot == 0.0 {
            continue;
        }
        let mut rest = 1.0;
        for (m, rm) in raws.iter().enumerate() {
            if m != slot0 && m != k {
                rest *= rm.f * rm.f;
            }
        }
        total += dot * r0.f * r.f * rest;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrals::{quad_energy_integral, quad_u_integral, S5Setting};
    use crate::quad::QuadratureSpec;
    use crate::scattering::CutoffProfile;

    #[test]
    fn ball_map_moments() {
        let mut rng = Pcg64Mcg::seed_from_u64(77);
        let n = 200_000;
        let mut m2 = 0.0;
        let mut comp2 = [0.0; 6];
        for _ in 0..n {
            let u: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
            let y = unit_ball6(&u);
            m2 += y.norm2();
            for (d, c) in y.to_array().iter().enumerate() {
                comp2[d] += c * c;
            }
        }
        let mean_r2 = m2 / n as f64;
        assert!((mean_r2 - 0.75).abs() < 0.005, "E|y|^2 = {mean_r2}");
        for c in comp2 {
            let m = c / n as f64;
            assert!((m - 0.125).abs() < 0.004, "component second moment {m}");
        }
    }

    #[test]
    fn free_gas_oracle_is_zero() {
        let p = ScatteringProfile::new(0.0, 1.0, CutoffProfile::SmoothExponential).unwrap();
        let geom = BoxGeometry::periodic(10.0);
        let est = qmc_oracle(3, &geom, &p, 2_000, 4, 1).unwrap();
        assert_eq!(est.energy_per_particle, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn n3_periodic_matches_radial_quadrature() {
        // closed form: e = 2 QE / (3 (L^6 - U))
        let a = 1.0;
        let p = ScatteringProfile::new(a, 4.0 * a, CutoffProfile::SmoothExponential).unwrap();
        let l = 8.0 * p.ell_tilde();
        let geom = BoxGeometry::periodic(l);
        let spec = QuadratureSpec::default();
        let qe = quad_energy_integral(&p, &spec, S5Setting::Pi3).unwrap();
        let uu = quad_u_integral(&p, &spec, S5Setting::Pi3).unwrap();
        let expect = 2.0 * qe / (3.0 * (l.powi(6) - uu));
        let est = qmc_oracle(3, &geom, &p, 60_000, 12, 3).unwrap();
        let tol = 4.0 * est.stderr + 1e-3 * expect;
        assert!(
            (est.energy_per_particle - expect).abs() < tol,
            "oracle {} +- {} vs quadrature {}",
            est.energy_per_particle,
            est.stderr,
            expect
        );
        assert!(est.stderr < 0.02 * est.energy_per_particle);
    }

    #[test]
    fn n3_open_box_close_to_periodic_at_large_l() {
        let a = 1.0;
        let p = ScatteringProfile::new(a, 3.0 * a, CutoffProfile::QuinticPolynomial).unwrap();
        let l = 20.0 * p.ell_tilde();
        let per = qmc_oracle(3, &BoxGeometry::periodic(l), &p, 40_000, 8, 5).unwrap();
        let open = qmc_oracle(3, &BoxGeometry::open(l), &p, 40_000, 8, 5).unwrap();
        // surface effects are O(ell_tilde / L) ~ 15%
        let rel = (open.energy_per_particle - per.energy_per_particle).abs()
            / per.energy_per_particle;
        assert!(rel < 0.25, "open vs periodic differ by {rel}");
    }

    #[test]
    fn doubling_points_reduces_stderr() {
        let a = 1.0;
        let p = ScatteringProfile::new(a, 4.0 * a, CutoffProfile::SmoothExponential).unwrap();
        let geom = BoxGeometry::periodic(8.0 * p.ell_tilde());
        let e1 = qmc_oracle(4, &geom, &p, 8_000, 12, 9).unwrap();
        let e2 = qmc_oracle(4, &geom, &p, 16_000, 12, 9).unwrap();
        let ratio = e1.stderr / e2.stderr;
        assert!(ratio > 1.15, "stderr ratio {ratio} after doubling points");
    }

    #[test]
    fn oracle_is_deterministic() {
        let a = 1.0;
        let p = ScatteringProfile::new(a, 4.0 * a, CutoffProfile::SmoothExponential).unwrap();
        let geom = BoxGeometry::periodic(8.0 * p.ell_tilde());
        let e1 = qmc_oracle(3, &geom, &p, 5_000, 4, 42).unwrap();
        let e2 = qmc_oracle(3, &geom, &p, 5_000, 4, 42).unwrap();
        assert_eq!(e1.energy_per_particle.to_bits(), e2.energy_per_particle.to_bits());
    }

    #[test]
    fn bad_inputs_rejected() {
        let p = ScatteringProfile::new(1.0, 4.0, CutoffProfile::SmoothExponential).unwrap();
        let geom = BoxGeometry::periodic(40.0);
        assert!(matches!(qmc_oracle(5, &geom, &p, 100, 4, 0), Err(McError::OracleBadN(5))));
        assert!(matches!(qmc_oracle(2, &geom, &p, 100, 4, 0), Err(McError::OracleBadN(2))));
        // plateau does not cover the core
        let tight = ScatteringProfile::new(1.0, 2.0, CutoffProfile::SmoothExponential).unwrap();
        assert!(qmc_oracle(3, &geom, &tight, 100, 4, 0).is_err());
    }

    /// Plain uniform-sampling reference for the N=4 numerator: per-particle
    /// gradients of the full product, no anchoring, usable only in small
    /// boxes where the support fraction is macroscopic.
    fn plain_numerator(
        geom: &BoxGeometry,
        p: &ScatteringProfile,
        points: u64,
        seed: u64,
    ) -> (f64, f64) {
        let triples = triple_list(4);
        let mut rng = Pcg64Mcg::seed_from_u64(seed);
        let l = geom.l;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut pos = vec![Vec3::ZERO; 4];
        for _ in 0..points {
            for q in pos.iter_mut() {
                *q = Vec3::new(
                    rng.random::<f64>() * l,
                    rng.random::<f64>() * l,
                    rng.random::<f64>() * l,
                );
            }
            let raws: Vec<RawTriple> =
                triples.iter().map(|&t| raw_triple(&pos, geom, p, t)).collect();
            let mut val = 0.0;
            for i in 0..4 {
                // gradient of the product with respect to particle i
                let mut gi = Vec3::ZERO;
                for (k, &t) in triples.iter().enumerate() {
                    if let Some(slot) = slot_of(t, i) {
                        let mut rest = 1.0;
                        for (m, rm) in raws.iter().enumerate() {
                            if m != k {
                                rest *= rm.f;
                            }
                        }
                        gi = gi + raws[k].grad[slot] * rest;
                    }
                }
                val += gi.norm2();
            }
            sum += val;
            sum2 += val * val;
        }
        let n = points as f64;
        let mean = sum / n;
        let var = (sum2 / n - mean * mean).max(0.0);
        let vol = l.powi(12);
        (vol * mean, vol * (var / n).sqrt())
    }

    #[test]
    fn n4_numerator_matches_plain_uniform_reference() {
        let a = 1.0;
        let p = ScatteringProfile::new(a, 3.0 * a, CutoffProfile::QuinticPolynomial).unwrap();
        let l = 2.5 * p.ell_tilde();
        let geom = BoxGeometry::periodic(l);
        let (plain, plain_se) = plain_numerator(&geom, &p, 400_000, 31);
        let est = qmc_oracle(4, &geom, &p, 50_000, 8, 13).unwrap();
        let tol = 4.0 * (plain_se + est.numerator_stderr) + 0.01 * plain.abs();
        assert!(
            (est.numerator - plain).abs() < tol,
            "anchored {} +- {} vs plain {} +- {}",
            est.numerator,
            est.numerator_stderr,
            plain,
            plain_se
        );
    }
}
