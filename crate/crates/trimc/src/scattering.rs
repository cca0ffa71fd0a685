//! Zero-energy scattering solution of the three-body hard core and its
//! smooth truncation.
//!
//! In the hyperradius s = |M^-1 x| the exterior solution is
//! f = 1 - 4 a^4 / s^4, vanishing on the core boundary s = sqrt(2) a. The
//! truncated variant multiplies omega = 1 - f by a radial cutoff chi(s / ell)
//! that is 1 below ell/2 and 0 above ell, so the product state built from
//! f_ell = 1 - chi * omega has finite range.

use crate::metric::{hyperradius, ModifiedMetric, Vec3, Vec6, SQRT_2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScatteringError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("quadrature did not converge: partial value {partial}, error estimate {err}")]
    QuadratureDidNotConverge { partial: f64, err: f64 },
}

/// Radial cutoff shape. Both choices are 1 on [0, 1/2], 0 on [1, inf) and
/// monotone in between; they differ in smoothness and in the size of the
/// envelope constants, which is exactly what the verification suite probes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutoffProfile {
    /// C-infinity partition-of-unity bump built from H(t) = exp(-1/t).
    SmoothExponential,
    /// C^2 quintic smoothstep; cheaper, with smaller envelope constants.
    QuinticPolynomial,
}

impl CutoffProfile {
    /// chi(r): 1 for r <= 1/2, 0 for r >= 1, smooth monotone in between.
    pub fn chi(self, r: f64) -> f64 {
        if r <= 0.5 {
            return 1.0;
        }
        if r >= 1.0 {
            return 0.0;
        }
        match self {
            CutoffProfile::SmoothExponential => {
                let h1 = bump(1.0 - r);
                let h2 = bump(r - 0.5);
                h1 / (h1 + h2)
            }
            CutoffProfile::QuinticPolynomial => {
                let t = (r - 0.5) * 2.0;
                1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
            }
        }
    }

    /// d chi / d r.
    pub fn chi_prime(self, r: f64) -> f64 {
        if r <= 0.5 || r >= 1.0 {
            return 0.0;
        }
        match self {
            CutoffProfile::SmoothExponential => {
                let h1 = bump(1.0 - r);
                let h2 = bump(r - 0.5);
                let hp1 = bump_prime(1.0 - r);
                let hp2 = bump_prime(r - 0.5);
                let den = h1 + h2;
                -(hp1 * h2 + h1 * hp2) / (den * den)
            }
            CutoffProfile::QuinticPolynomial => {
                let t = (r - 0.5) * 2.0;
                let omt = 1.0 - t;
                -60.0 * t * t * omt * omt
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CutoffProfile::SmoothExponential => "smooth-exponential",
            CutoffProfile::QuinticPolynomial => "quintic-polynomial",
        }
    }
}

fn bump(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

fn bump_prime(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp() / (t * t)
    } else {
        0.0
    }
}

/// Hard-core radius plus truncation scale. `ell_tilde = sqrt(3/2) * ell` is
/// the pair distance beyond which a triple is guaranteed inactive.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScatteringProfile {
    a: f64,
    ell: f64,
    ell_tilde: f64,
    profile: CutoffProfile,
}

impl ScatteringProfile {
    /// Requires finite 0 <= a < ell. `a = 0` is the free gas and is allowed
    /// for diagnostics.
    pub fn new(a: f64, ell: f64, profile: CutoffProfile) -> Result<Self, ScatteringError> {
        if !a.is_finite() || a < 0.0 {
            return Err(ScatteringError::InvalidProfile(format!(
                "hard-core radius must be finite and nonnegative, got {a}"
            )));
        }
        if !ell.is_finite() || ell <= a {
            return Err(ScatteringError::InvalidProfile(format!(
                "truncation length must satisfy ell > a, got ell = {ell}, a = {a}"
            )));
        }
        Ok(ScatteringProfile { a, ell, ell_tilde: (1.5f64).sqrt() * ell, profile })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn ell_tilde(&self) -> f64 {
        self.ell_tilde
    }

    pub fn profile(&self) -> CutoffProfile {
        self.profile
    }

    /// Core boundary in the hyperradius, sqrt(2) * a.
    pub fn core_radius(&self) -> f64 {
        SQRT_2 * self.a
    }

    /// True when the cutoff plateau covers the core (ell >= 2 sqrt(2) a), so
    /// the truncated solution still vanishes on the whole core.
    pub fn plateau_covers_core(&self) -> bool {
        self.core_radius() <= 0.5 * self.ell
    }

    /// omega restricted to the radial variable: 1 inside the core,
    /// 4 a^4 / s^4 outside.
    pub fn omega_radial(&self, s: f64) -> f64 {
        omega_radial(s, self.a)
    }

    /// d omega / d s (0 inside the core).
    pub fn omega_radial_prime(&self, s: f64) -> f64 {
        if s <= self.core_radius() || self.a == 0.0 {
            0.0
        } else {
            let a2 = self.a * self.a;
            -16.0 * a2 * a2 / (s * s * s * s * s)
        }
    }

    /// Truncated values at hyperradius s.
    pub fn truncated_radial(&self, s: f64) -> TruncatedValues {
        let chi = self.profile.chi(s / self.ell);
        let omega_ell = chi * self.omega_radial(s);
        let f_ell = 1.0 - omega_ell;
        // u = 1 - f^2 = omega (2 - omega), exact and cancellation free
        let u_ell = omega_ell * (2.0 - omega_ell);
        TruncatedValues { f_ell, omega_ell, u_ell }
    }

    /// Evaluates the truncated solution at a 6D point.
    pub fn truncated_eval(&self, w: Vec6) -> TruncatedValues {
        self.truncated_radial(hyperradius(w.u, w.v))
    }

    /// Radial derivative of f_ell as a function of the hyperradius. This is
    /// also |M grad f_ell| up to sign, since f_ell is radial in M^-1
    /// coordinates.
    pub fn f_ell_radial_prime(&self, s: f64) -> f64 {
        let t = s / self.ell;
        let chi = self.profile.chi(t);
        let chi_p = self.profile.chi_prime(t);
        -(chi_p / self.ell * self.omega_radial(s) + chi * self.omega_radial_prime(s))
    }

    /// Analytic gradient of f_ell at a 6D point, with hyperradius supplied by
    /// the caller so values and gradients share one radial argument.
    pub fn grad_f_ell_at(&self, w: Vec6, s: f64) -> GradFEll {
        let d = self.f_ell_radial_prime(s);
        if d == 0.0 {
            return GradFEll {
                grad6: Vec6::ZERO,
                mgrad6: Vec6::ZERO,
                grad_particle1: Vec3::ZERO,
            };
        }
        let m = ModifiedMetric::new();
        let y = m.apply_inverse(w);
        let mgrad6 = y.scale(d / y.norm());
        let grad6 = m.apply_inverse(mgrad6);
        GradFEll { grad6, mgrad6, grad_particle1: grad6.u + grad6.v }
    }

    pub fn grad_f_ell(&self, w: Vec6) -> GradFEll {
        self.grad_f_ell_at(w, hyperradius(w.u, w.v))
    }

    /// Pair indicator g_ell(x) = 1_{|x| >= ell_tilde} and v_ell = 1 - g_ell.
    pub fn g_and_v(&self, x: Vec3) -> (f64, f64) {
        if x.norm2() >= self.ell_tilde * self.ell_tilde {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        }
    }
}

/// Untruncated scattering solution at a 6D point; 0 on the closed core.
pub fn scattering_f(w: Vec6, a: f64) -> f64 {
    scattering_f_radial(hyperradius(w.u, w.v), a)
}

/// Untruncated scattering solution as a function of the hyperradius.
pub fn scattering_f_radial(s: f64, a: f64) -> f64 {
    1.0 - omega_radial(s, a)
}

fn omega_radial(s: f64, a: f64) -> f64 {
    if s <= SQRT_2 * a {
        1.0
    } else {
        let q = a / s;
        let q2 = q * q;
        4.0 * q2 * q2
    }
}

/// Radial cutoff evaluated at a 6D point through the hyperradius.
pub fn cutoff_chi(w: Vec6, ell: f64, profile: CutoffProfile) -> f64 {
    profile.chi(hyperradius(w.u, w.v) / ell)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncatedValues {
    pub f_ell: f64,
    pub omega_ell: f64,
    pub u_ell: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradFEll {
    /// Full 6D gradient of f_ell.
    pub grad6: Vec6,
    /// M applied to the gradient; |mgrad6| = |f_ell_radial_prime|.
    pub mgrad6: Vec6,
    /// Gradient with respect to the first particle of the triple, i.e. the
    /// sum of the two 3D halves of grad6.
    pub grad_particle1: Vec3,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::metric_apply;
    use crate::metric::MetricFactor;
    use rand::{RngExt, SeedableRng};
    use rand_pcg::Pcg64Mcg;

    fn point_at_hyperradius(s: f64, rng: &mut Pcg64Mcg) -> Vec6 {
        // random direction in M^-1 coordinates, then mapped back through M
        let mut y = [0.0; 6];
        let mut n2 = 0.0;
        for c in y.iter_mut() {
            // Box-Muller
            let u: f64 = rng.random::<f64>().max(1e-16);
            let v: f64 = rng.random();
            *c = (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos();
            n2 += *c * *c;
        }
        let scale = s / n2.sqrt();
        let y = Vec6::from_array(y.map(|c| c * scale));
        metric_apply(y, MetricFactor::M)
    }

    #[test]
    fn f_vanishes_on_core_boundary_exactly() {
        let a = 1.3;
        assert_eq!(scattering_f_radial(SQRT_2 * a, a), 0.0);
        assert_eq!(scattering_f_radial(0.5 * a, a), 0.0);
    }

    #[test]
    fn f_value_examples() {
        let a = 0.7;
        let f = scattering_f_radial(2.0 * SQRT_2 * a, a);
        assert!((f - 15.0 / 16.0).abs() < 1e-15);
        let f_far = scattering_f_radial(1e6 * a, a);
        assert!((f_far - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f_monotone_in_hyperradius() {
        let a = 1.0;
        let mut last = -1.0;
        for i in 0..2000 {
            let s = 1e-2 + 8.0 * (i as f64) / 2000.0;
            let f = scattering_f_radial(s, a);
            assert!(f >= last);
            assert!((0.0..=1.0).contains(&f));
            last = f;
        }
    }

    #[test]
    fn chi_plateaus_and_monotone() {
        for profile in [CutoffProfile::SmoothExponential, CutoffProfile::QuinticPolynomial] {
            assert_eq!(profile.chi(0.4), 1.0);
            assert_eq!(profile.chi(0.5), 1.0);
            assert_eq!(profile.chi(1.0), 0.0);
            assert_eq!(profile.chi(1.5), 0.0);
            let mid = profile.chi(0.75);
            assert!(mid > 0.0 && mid < 1.0);
            let mut last = 1.0;
            for i in 0..=1000 {
                let r = 0.5 + 0.5 * (i as f64) / 1000.0;
                let c = profile.chi(r);
                assert!(c <= last + 1e-15, "profile {profile:?} not monotone at {r}");
                last = c;
            }
        }
    }

    #[test]
    fn chi_prime_matches_finite_differences() {
        for profile in [CutoffProfile::SmoothExponential, CutoffProfile::QuinticPolynomial] {
            for i in 1..40 {
                let r = 0.5 + 0.5 * (i as f64) / 40.0;
                let h = 1e-7;
                let fd = (profile.chi(r + h) - profile.chi(r - h)) / (2.0 * h);
                let an = profile.chi_prime(r);
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                    "{profile:?} at {r}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn truncated_regions() {
        let a = 0.05;
        let p = ScatteringProfile::new(a, 1.0, CutoffProfile::SmoothExponential).unwrap();
        // inside the core (plateau covers it at this a/ell)
        let inside = p.truncated_radial(a);
        assert_eq!(inside.f_ell, 0.0);
        assert_eq!(inside.omega_ell, 1.0);
        assert_eq!(inside.u_ell, 1.0);
        // outside the cutoff support
        let out = p.truncated_radial(1.2);
        assert_eq!(out.f_ell, 1.0);
        assert_eq!(out.omega_ell, 0.0);
        assert_eq!(out.u_ell, 0.0);
        // in the plateau region f_ell coincides with the untruncated solution
        let s = 0.3;
        let mid = p.truncated_radial(s);
        assert_eq!(mid.f_ell, scattering_f_radial(s, a));
        // u stays in [0, 1] across the whole range
        for i in 0..=2000 {
            let s = 1.3 * (i as f64) / 2000.0;
            let t = p.truncated_radial(s);
            assert!((0.0..=1.0).contains(&t.u_ell));
            assert!((0.0..=1.0).contains(&t.f_ell));
        }
    }

    #[test]
    fn profile_construction_guards() {
        assert!(ScatteringProfile::new(1.0, 0.5, CutoffProfile::SmoothExponential).is_err());
        assert!(ScatteringProfile::new(1.0, 1.0, CutoffProfile::SmoothExponential).is_err());
        assert!(ScatteringProfile::new(-1.0, 2.0, CutoffProfile::SmoothExponential).is_err());
        assert!(ScatteringProfile::new(f64::NAN, 2.0, CutoffProfile::SmoothExponential).is_err());
        assert!(ScatteringProfile::new(0.0, 2.0, CutoffProfile::SmoothExponential).is_ok());
    }

    #[test]
    fn gradient_zero_on_core_and_outside_cutoff() {
        let p = ScatteringProfile::new(0.1, 1.0, CutoffProfile::SmoothExponential).unwrap();
        let mut rng = Pcg64Mcg::seed_from_u64(7);
        for s in [0.05, 0.14, 1.0, 1.5] {
            let w = point_at_hyperradius(s, &mut rng);
            let g = p.grad_f_ell(w);
            assert_eq!(g.grad6, Vec6::ZERO, "s = {s}");
            assert_eq!(g.mgrad6, Vec6::ZERO);
            assert_eq!(g.grad_particle1, Vec3::ZERO);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_of_omega() {
        // central differences on omega_ell; grad f_ell = -grad omega_ell
        let mut rng = Pcg64Mcg::seed_from_u64(99);
        for profile in [CutoffProfile::SmoothExponential, CutoffProfile::QuinticPolynomial] {
            let p = ScatteringProfile::new(0.08, 1.0, profile).unwrap();
            for _ in 0..200 {
                let s = 0.15 + 0.8 * rng.random::<f64>();
                let w = point_at_hyperradius(s, &mut rng);
                let g = p.grad_f_ell(w);
                let h = 1e-6;
                let arr = w.to_array();
                for d in 0..6 {
                    let mut hi = arr;
                    let mut lo = arr;
                    hi[d] += h;
                    lo[d] -= h;
                    let fd = -(p.truncated_eval(Vec6::from_array(hi)).omega_ell
                        - p.truncated_eval(Vec6::from_array(lo)).omega_ell)
                        / (2.0 * h);
                    let an = g.grad6.to_array()[d];
                    let scale = g.grad6.norm().max(1e-12);
                    assert!(
                        (fd - an).abs() <= 2e-5 * scale,
                        "{profile:?} s={s} d={d}: fd {fd} vs {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn mgrad_magnitude_is_radial_derivative() {
        let p = ScatteringProfile::new(0.1, 1.0, CutoffProfile::QuinticPolynomial).unwrap();
        let mut rng = Pcg64Mcg::seed_from_u64(3);
        for _ in 0..500 {
            let s = 0.15 + 0.8 * rng.random::<f64>();
            let w = point_at_hyperradius(s, &mut rng);
            let g = p.grad_f_ell(w);
            let d = p.f_ell_radial_prime(hyperradius(w.u, w.v));
            assert!((g.mgrad6.norm() - d.abs()).abs() <= 1e-10 * (1.0 + d.abs()));
        }
    }

    #[test]
    fn g_and_v_indicator() {
        let p = ScatteringProfile::new(0.1, 1.0, CutoffProfile::SmoothExponential).unwrap();
        let lt = p.ell_tilde();
        assert_eq!(p.g_and_v(Vec3::new(lt, 0.0, 0.0)), (1.0, 0.0));
        assert_eq!(p.g_and_v(Vec3::ZERO), (0.0, 1.0));
        assert_eq!(p.g_and_v(Vec3::new(0.0, 2.0 * lt, 0.0)), (1.0, 0.0));
        assert_eq!(p.g_and_v(Vec3::new(0.0, 0.0, 0.9 * lt)), (0.0, 1.0));
    }
}
