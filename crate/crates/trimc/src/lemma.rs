//! Randomized verification suite for the scattering estimates.
//!
//! Probes, over seeded random points: the support and envelope of
//! grad f_ell and of u_ell = 1 - f_ell^2 (reporting the smallest constants
//! that hold on the sample), the pair floor f_ell(x1, x2) >= max(g(x1),
//! g(x2)), harmonicity of the untruncated solution under a finite-difference
//! modified Laplacian, the three-gradient identity, and the relabeling
//! symmetry. Any counterexample is reported with its witness point.

use crate::metric::{
    hyperradius, hyperradius_triple, metric_apply, BoxGeometry, MetricFactor, Vec3, Vec6,
};
use crate::scattering::{scattering_f, ScatteringProfile};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::Serialize;

/// Smallest constants for an envelope of the form
/// value <= C * scale * 1_{C1 <= |x|/len <= C2} / |x|^4, fitted on a sample.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnvelopeFit {
    /// max over the sample of value * |x|^4 / (a^4 * prefactor)
    pub c: f64,
    /// inner edge of the observed support, in units of the reference length
    pub c1: f64,
    /// outer edge of the observed support, in units of the reference length
    pub c2: f64,
    pub nonzero_samples: u64,
    /// points where the quantity is nonzero outside its provable support
    pub support_violations: u64,
    pub worst_violation: Option<[f64; 6]>,
}

impl EnvelopeFit {
    fn empty() -> Self {
        EnvelopeFit {
            c: 0.0,
            c1: f64::INFINITY,
            c2: 0.0,
            nonzero_samples: 0,
            support_violations: 0,
            worst_violation: None,
        }
    }

    fn merge(mut self, o: Self) -> Self {
        self.c = self.c.max(o.c);
        self.c1 = self.c1.min(o.c1);
        self.c2 = self.c2.max(o.c2);
        self.nonzero_samples += o.nonzero_samples;
        self.support_violations += o.support_violations;
        if self.worst_violation.is_none() {
            self.worst_violation = o.worst_violation;
        }
        self
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CounterexampleCheck {
    pub samples: u64,
    pub counterexamples: u64,
    pub worst: Option<[f64; 6]>,
}

impl CounterexampleCheck {
    fn empty() -> Self {
        CounterexampleCheck { samples: 0, counterexamples: 0, worst: None }
    }

    fn merge(mut self, o: Self) -> Self {
        self.samples += o.samples;
        self.counterexamples += o.counterexamples;
        if self.worst.is_none() {
            self.worst = o.worst;
        }
        self
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MaxDeviationCheck {
    pub samples: u64,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaReport {
    pub profile: String,
    pub a: f64,
    pub ell: f64,
    pub samples: u64,
    pub seed: u64,
    pub grad_envelope: EnvelopeFit,
    pub u_envelope: EnvelopeFit,
    pub pair_floor: CounterexampleCheck,
    pub harmonicity: MaxDeviationCheck,
    pub gradient_identity: MaxDeviationCheck,
    pub relabeling_symmetry: MaxDeviationCheck,
    pub pass: bool,
}

fn mix_seed(seed: u64, tag: u64, idx: u64) -> u64 {
    // splitmix64 over the concatenated inputs; stable across platforms
    let mut z = seed ^ tag.rotate_left(17) ^ idx.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn shard_rng(seed: u64, tag: u64, idx: u64) -> Pcg64Mcg {
    Pcg64Mcg::seed_from_u64(mix_seed(seed, tag, idx))
}

fn unit_direction6(rng: &mut Pcg64Mcg) -> Vec6 {
    loop {
        let mut c = [0.0; 6];
        let mut n2 = 0.0;
        for x in c.iter_mut() {
            let u: f64 = rng.random::<f64>().max(1e-300);
            let v: f64 = rng.random();
            *x = (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos();
            n2 += *x * *x;
        }
        if n2 > 1e-12 {
            return Vec6::from_array(c.map(|x| x / n2.sqrt()));
        }
    }
}

/// Random 6D point with log-uniform hyperradius in [lo, hi].
fn point_log_uniform(rng: &mut Pcg64Mcg, lo: f64, hi: f64) -> Vec6 {
    let s = lo * (hi / lo).powf(rng.random::<f64>());
    let dir = unit_direction6(rng);
    metric_apply(dir.scale(s), MetricFactor::M)
}

fn unit_direction3(rng: &mut Pcg64Mcg) -> Vec3 {
    loop {
        let g = |rng: &mut Pcg64Mcg| {
            let u: f64 = rng.random::<f64>().max(1e-300);
            let v: f64 = rng.random();
            (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        };
        let x = Vec3::new(g(rng), g(rng), g(rng));
        let n = x.norm();
        if n > 1e-6 {
            return x * (1.0 / n);
        }
    }
}

/// Finite-difference modified Laplacian div(M^2 grad) of the untruncated
/// scattering solution at w, with step h.
pub fn fd_modified_laplacian(w: Vec6, a: f64, h: f64) -> f64 {
    let arr = w.to_array();
    let f = |c: [f64; 6]| scattering_f(Vec6::from_array(c), a);
    let center = f(arr);
    let mut acc = 0.0;
    // diagonal second differences: all six axes carry coefficient 1
    for d in 0..6 {
        let mut hi = arr;
        let mut lo = arr;
        hi[d] += h;
        lo[d] -= h;
        acc += (f(hi) - 2.0 * center + f(lo)) / (h * h);
    }
    // mixed terms partner each axis with the same component of the other half
    for d in 0..3 {
        let (i, j) = (d, d + 3);
        let mut pp = arr;
        let mut pm = arr;
        let mut mp = arr;
        let mut mm = arr;
        pp[i] += h;
        pp[j] += h;
        pm[i] += h;
        pm[j] -= h;
        mp[i] -= h;
        mp[j] += h;
        mm[i] -= h;
        mm[j] -= h;
        acc += (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
    }
    acc
}

/// Max |FD modified Laplacian| * a^2 over `n` points in the annulus
/// 2 sqrt(2) a <= hyperradius <= 10 a, at step h.
pub fn harmonicity_residual(a: f64, n: u64, h: f64, seed: u64) -> f64 {
    let shards = rayon::current_num_threads().max(1) as u64 * 4;
    let per = n.div_ceil(shards);
    (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = shard_rng(seed, 0x4a41, shard);
            let mut worst = 0.0f64;
            for _ in 0..per {
                let w = point_log_uniform(
                    &mut rng,
                    2.0 * std::f64::consts::SQRT_2 * a,
                    10.0 * a,
                );
                worst = worst.max(fd_modified_laplacian(w, a, h).abs());
            }
            worst * a * a
        })
        .reduce(|| 0.0, f64::max)
}

/// Randomized check of the metric-layer identities: hyperradius closed form
/// against the explicit M^-1 product, centre-of-mass round trip, and the
/// operator-norm bounds of M^-1.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricReport {
    pub samples: u64,
    pub hyperradius_max_rel_dev: f64,
    pub roundtrip_max_rel_dev: f64,
    pub norm_bound_violations: u64,
    pub pass: bool,
}

pub fn metric_suite(samples: u64, seed: u64) -> MetricReport {
    use crate::metric::{centered_coordinates, reconstruct_triple, SQRT_2};
    let shards = (rayon::current_num_threads().max(1) as u64) * 8;
    let per = samples.div_ceil(shards);
    let outs: Vec<(f64, f64, u64)> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = shard_rng(seed, 0x6d65, shard);
            let mut hyp_dev = 0.0f64;
            let mut rt_dev = 0.0f64;
            let mut viol = 0u64;
            for _ in 0..per {
                let scale = 10f64.powf(4.0 * rng.random::<f64>() - 2.0);
                let w = point_log_uniform(&mut rng, 0.5 * scale, scale);
                let closed = hyperradius(w.u, w.v);
                let explicit = metric_apply(w, MetricFactor::MInverse).norm();
                hyp_dev = hyp_dev.max((closed - explicit).abs() / closed.max(1e-300));
                let lo = (2.0f64 / 3.0).sqrt() * w.norm();
                let hi = SQRT_2 * w.norm();
                if explicit < lo * (1.0 - 1e-12) || explicit > hi * (1.0 + 1e-12) {
                    viol += 1;
                }
                let x = unit_direction3(&mut rng) * (scale * rng.random::<f64>());
                let y = unit_direction3(&mut rng) * (scale * rng.random::<f64>());
                let z = unit_direction3(&mut rng) * (scale * rng.random::<f64>());
                let (r1, rel) = centered_coordinates(x, y, z);
                let (x2, y2, z2) = reconstruct_triple(r1, rel);
                let norm = 1.0 + x.norm() + y.norm() + z.norm();
                let dev = (x - x2).norm().max((y - y2).norm()).max((z - z2).norm()) / norm;
                rt_dev = rt_dev.max(dev);
            }
            (hyp_dev, rt_dev, viol)
        })
        .collect();
    let mut hyp_dev = 0.0f64;
    let mut rt_dev = 0.0f64;
    let mut viol = 0;
    for (h, r, v) in outs {
        hyp_dev = hyp_dev.max(h);
        rt_dev = rt_dev.max(r);
        viol += v;
    }
    MetricReport {
        samples: per * shards,
        hyperradius_max_rel_dev: hyp_dev,
        roundtrip_max_rel_dev: rt_dev,
        norm_bound_violations: viol,
        pass: hyp_dev <= 1e-12 && rt_dev <= 1e-14 && viol == 0,
    }
}

struct ShardOut {
    grad: EnvelopeFit,
    u: EnvelopeFit,
    floor: CounterexampleCheck,
    identity_dev: f64,
    symmetry_dev: f64,
}

pub fn lemma_suite(p: &ScatteringProfile, sample_count: u64, seed: u64) -> LemmaReport {
    let a = p.a();
    let ell = p.ell();
    let shards = (rayon::current_num_threads().max(1) as u64) * 8;
    let per_shard = sample_count.div_ceil(shards);

    let outs: Vec<ShardOut> = (0..shards)
        .into_par_iter()
        .map(|shard| run_shard(p, per_shard, seed, shard))
        .collect();

    let mut grad = EnvelopeFit::empty();
    let mut u = EnvelopeFit::empty();
    let mut floor = CounterexampleCheck::empty();
    let mut identity_dev = 0.0f64;
    let mut symmetry_dev = 0.0f64;
    for o in outs {
        grad = grad.merge(o.grad);
        u = u.merge(o.u);
        floor = floor.merge(o.floor);
        identity_dev = identity_dev.max(o.identity_dev);
        symmetry_dev = symmetry_dev.max(o.symmetry_dev);
    }

    let harm_points = (sample_count / 10).clamp(1_000, 100_000);
    let harm = if a > 0.0 {
        harmonicity_residual(a, harm_points, 1e-4 * a, mix_seed(seed, 0x48, 0))
    } else {
        0.0
    };
    let harm_tol = 1e-4;

    let identity = MaxDeviationCheck {
        samples: sample_count,
        max_deviation: identity_dev,
        tolerance: 1e-10,
        pass: identity_dev <= 1e-10,
    };
    let symmetry = MaxDeviationCheck {
        samples: sample_count,
        max_deviation: symmetry_dev,
        tolerance: 0.0,
        pass: symmetry_dev == 0.0,
    };
    let harmonicity = MaxDeviationCheck {
        samples: harm_points,
        max_deviation: harm,
        tolerance: harm_tol,
        pass: harm <= harm_tol,
    };

    let pass = grad.support_violations == 0
        && u.support_violations == 0
        && floor.counterexamples == 0
        && identity.pass
        && symmetry.pass
        && harmonicity.pass;

    LemmaReport {
        profile: p.profile().name().to_string(),
        a,
        ell,
        samples: sample_count,
        seed,
        grad_envelope: grad,
        u_envelope: u,
        pair_floor: floor,
        harmonicity,
        gradient_identity: identity,
        relabeling_symmetry: symmetry,
        pass,
    }
}

fn run_shard(p: &ScatteringProfile, n: u64, seed: u64, shard: u64) -> ShardOut {
    let a = p.a();
    let ell = p.ell();
    let core = p.core_radius();
    let lt = p.ell_tilde();
    let covers = p.plateau_covers_core();
    let mut rng = shard_rng(seed, 0x5u64, shard);

    let mut grad = EnvelopeFit::empty();
    let mut u = EnvelopeFit::empty();
    let mut floor = CounterexampleCheck::empty();
    let mut identity_dev = 0.0f64;
    let mut symmetry_dev = 0.0f64;

    let a4 = if a > 0.0 { a.powi(4) } else { 1.0 };
    let s_lo = if a > 0.0 { 0.3 * core } else { 1e-3 * ell };

    for _ in 0..n {
        let w = point_log_uniform(&mut rng, s_lo, 2.0 * ell);
        let s = hyperradius(w.u, w.v);
        let x_norm = w.norm();

        // gradient envelope and support
        let g = p.grad_f_ell(w);
        let gnorm = g.grad6.norm();
        if gnorm > 0.0 {
            grad.nonzero_samples += 1;
            grad.c = grad.c.max(gnorm * x_norm.powi(4) * ell / a4);
            grad.c1 = grad.c1.min(x_norm / ell);
            grad.c2 = grad.c2.max(x_norm / ell);
            let outside = s >= ell || (covers && s <= core);
            if outside {
                grad.support_violations += 1;
                if grad.worst_violation.is_none() {
                    grad.worst_violation = Some(w.to_array());
                }
            }
        }

        // u envelope and support
        let t = p.truncated_radial(s);
        if !(0.0..=1.0).contains(&t.u_ell) || (t.u_ell > 0.0 && s >= ell) {
            u.support_violations += 1;
            if u.worst_violation.is_none() {
                u.worst_violation = Some(w.to_array());
            }
        }
        if t.u_ell > 0.0 {
            u.nonzero_samples += 1;
            u.c = u.c.max(t.u_ell * x_norm.powi(4) / a4);
            u.c1 = u.c1.min(x_norm / a.max(1e-300));
            u.c2 = u.c2.max(x_norm / ell);
        }

        // pair floor: f_ell(x1, x2) >= max(g_ell(x1), g_ell(x2))
        let scale = lt * (0.1 + 2.9 * rng.random::<f64>());
        let x1 = unit_direction3(&mut rng) * scale;
        let x2 = unit_direction3(&mut rng) * (lt * (0.1 + 2.9 * rng.random::<f64>()));
        let fv = p.truncated_eval(Vec6::new(x1, x2)).f_ell;
        let (g1, _) = p.g_and_v(x1);
        let (g2, _) = p.g_and_v(x2);
        floor.samples += 1;
        if fv < g1.max(g2) {
            floor.counterexamples += 1;
            if floor.worst.is_none() {
                floor.worst = Some(Vec6::new(x1, x2).to_array());
            }
        }

        // three-gradient identity on an active-range triple
        if gnorm > 0.0 {
            let g1v = g.grad6.u + g.grad6.v;
            let g2v = -g.grad6.u;
            let g3v = -g.grad6.v;
            let lhs = g1v.norm2() + g2v.norm2() + g3v.norm2();
            let rhs = 2.0 * g.mgrad6.norm2();
            identity_dev = identity_dev.max((lhs - rhs).abs() / rhs.max(1e-300));
        }

        // relabeling symmetry, bitwise: evaluate the triple through each pivot
        let x = unit_direction3(&mut rng) * (lt * rng.random::<f64>());
        let y = unit_direction3(&mut rng) * (lt * rng.random::<f64>());
        let z = unit_direction3(&mut rng) * (lt * rng.random::<f64>());
        let geom = BoxGeometry::open(1.0);
        let h0 = hyperradius_triple(x, y, z, &geom);
        for (aa, bb, cc) in [(y, x, z), (y, z, x), (z, x, y), (z, y, x), (x, z, y)] {
            let h1 = hyperradius_triple(aa, bb, cc, &geom);
            if h1.to_bits() != h0.to_bits() {
                symmetry_dev = symmetry_dev.max((h1 - h0).abs().max(f64::MIN_POSITIVE));
            }
        }
        // swap symmetry of the 6D form
        let fa = p.truncated_eval(Vec6::new(x1, x2)).f_ell;
        let fb = p.truncated_eval(Vec6::new(x2, x1)).f_ell;
        if fa.to_bits() != fb.to_bits() {
            symmetry_dev = symmetry_dev.max((fa - fb).abs().max(f64::MIN_POSITIVE));
        }
    }

    ShardOut { grad, u, floor, identity_dev, symmetry_dev }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scattering::CutoffProfile;

    #[test]
    fn suite_passes_on_both_profiles() {
        for profile in [CutoffProfile::SmoothExponential, CutoffProfile::QuinticPolynomial] {
            let p = ScatteringProfile::new(0.05, 1.0, profile).unwrap();
            let r = lemma_suite(&p, 20_000, 42);
            assert!(r.pass, "suite failed: {r:?}");
            assert_eq!(r.pair_floor.counterexamples, 0);
            assert_eq!(r.grad_envelope.support_violations, 0);
            assert_eq!(r.u_envelope.support_violations, 0);
            assert!(r.grad_envelope.nonzero_samples > 0);
            assert!(r.u_envelope.nonzero_samples > 0);
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let p = ScatteringProfile::new(0.05, 1.0, CutoffProfile::SmoothExponential).unwrap();
        let r1 = lemma_suite(&p, 5_000, 7);
        let r2 = lemma_suite(&p, 5_000, 7);
        assert_eq!(r1.grad_envelope.c.to_bits(), r2.grad_envelope.c.to_bits());
        assert_eq!(r1.u_envelope.c.to_bits(), r2.u_envelope.c.to_bits());
        assert_eq!(
            r1.gradient_identity.max_deviation.to_bits(),
            r2.gradient_identity.max_deviation.to_bits()
        );
    }

    #[test]
    fn harmonicity_residual_shrinks_quadratically() {
        let a = 1.0;
        let r1 = harmonicity_residual(a, 2_000, 4e-3 * a, 11);
        let r2 = harmonicity_residual(a, 2_000, 2e-3 * a, 11);
        let order = (r1 / r2).log2();
        assert!((order - 2.0).abs() < 0.4, "fd order {order} (r1 {r1}, r2 {r2})");
    }

    #[test]
    fn outer_support_edge_matches_ell_tilde_scale() {
        // nonzero gradients live at |x| <= sqrt(3/2) ell
        let p = ScatteringProfile::new(0.05, 1.0, CutoffProfile::SmoothExponential).unwrap();
        let r = lemma_suite(&p, 50_000, 3);
        assert!(r.grad_envelope.c2 <= (1.5f64).sqrt() + 1e-9);
        assert!(r.grad_envelope.c2 > 1.0);
    }
}
