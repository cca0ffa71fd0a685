//! Adaptive Simpson quadrature for the radial integrals.
//!
//! The 6D integrals in this crate are all radial once pulled back through
//! M^-1, so a careful 1D rule with explicit breakpoints is the whole story.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec { abs_tol: 1e-13, rel_tol: 1e-11, max_depth: 48 }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err("quadrature tolerances must be positive".into());
        }
        if self.max_depth == 0 {
            return Err("quadrature max_depth must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: f64,
    pub err_estimate: f64,
    pub converged: bool,
}

/// Integrates `f` over [a, b] with adaptive Simpson and Richardson
/// extrapolation. The error estimate is the accumulated |S2 - S1| / 15.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, spec: &QuadratureSpec) -> QuadResult {
    if a == b {
        return QuadResult { value: 0.0, err_estimate: 0.0, converged: true };
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0;
    let mut acc = Acc { value: 0.0, err: 0.0, converged: true };
    refine(f, a, m, b, fa, fm, fb, whole, spec, spec.max_depth, &mut acc);
    QuadResult { value: acc.value, err_estimate: acc.err, converged: acc.converged }
}

/// Integrates over a piecewise-smooth function by splitting at the given
/// breakpoints first. Breakpoints outside [a, b] are ignored.
///
/// Interior knots are pulled inwards by a few ulps on each side, so a jump
/// exactly at a knot is always sampled from the segment it belongs to. The
/// skipped sliver is O(eps * |f|), far below the requested tolerances.
pub fn integrate_with_breakpoints<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    spec: &QuadratureSpec,
) -> QuadResult {
    let mut knots: Vec<f64> = vec![a, b];
    knots.extend(breakpoints.iter().copied().filter(|&x| x > a && x < b));
    knots.sort_by(|p, q| p.partial_cmp(q).unwrap());
    knots.dedup();
    let mut total = QuadResult { value: 0.0, err_estimate: 0.0, converged: true };
    let last = knots.len() - 1;
    for (idx, w) in knots.windows(2).enumerate() {
        let eta = |k: f64| k.abs().max(1e-300) * (8.0 * f64::EPSILON);
        let lo = if idx == 0 { w[0] } else { w[0] + eta(w[0]) };
        let hi = if idx + 1 == last { w[1] } else { w[1] - eta(w[1]) };
        if lo >= hi {
            continue;
        }
        let r = integrate(f, lo, hi, spec);
        total.value += r.value;
        total.err_estimate += r.err_estimate;
        total.converged &= r.converged;
    }
    total
}

struct Acc {
    value: f64,
    err: f64,
    converged: bool,
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    m: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    spec: &QuadratureSpec,
    depth: u32,
    acc: &mut Acc,
) {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) * (fa + 4.0 * flm + fm) / 6.0;
    let right = (b - m) * (fm + 4.0 * frm + fb) / 6.0;
    let delta = left + right - whole;
    let tol = spec.abs_tol.max(spec.rel_tol * whole.abs());
    if delta.abs() <= 15.0 * tol || depth == 0 || (m - a) < f64::EPSILON * (1.0 + a.abs()) {
        acc.value += left + right + delta / 15.0;
        acc.err += delta.abs() / 15.0;
        if depth == 0 && delta.abs() > 15.0 * tol {
            acc.converged = false;
        }
        return;
    }
    let half = QuadratureSpec { abs_tol: spec.abs_tol * 0.5, ..*spec };
    refine(f, a, lm, m, fa, flm, fm, left, &half, depth - 1, acc);
    refine(f, m, rm, b, fm, frm, fb, right, &half, depth - 1, acc);
}
