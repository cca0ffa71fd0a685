//! Python bindings for the three-body hard-core Monte Carlo crate: the
//! scattering profile and its integrals, configurations, the Metropolis
//! energy estimate and the quasi-random oracle.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use trimc::integrals;
use trimc::jastrow::Configuration;
use trimc::mc::{self, McParams};
use trimc::metric::{self, BoxGeometry, Vec3};
use trimc::observables::{self, EstimateMeta};
use trimc::qmc;
use trimc::quad::QuadratureSpec;
use trimc::scattering::{self, CutoffProfile};

fn to_value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_runtime_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse_profile(name: &str) -> PyResult<CutoffProfile> {
    match name {
        "smooth-exponential" => Ok(CutoffProfile::SmoothExponential),
        "quintic-polynomial" => Ok(CutoffProfile::QuinticPolynomial),
        other => Err(PyValueError::new_err(format!(
            "profile must be smooth-exponential or quintic-polynomial, got {other}"
        ))),
    }
}

fn parse_s5(name: &str) -> PyResult<integrals::S5Setting> {
    match name {
        "pi3" => Ok(integrals::S5Setting::Pi3),
        "8pi2_3" => Ok(integrals::S5Setting::EightPi2Over3),
        other => Err(PyValueError::new_err(format!("s5 must be pi3 or 8pi2_3, got {other}"))),
    }
}

fn parse_boundary(name: &str, box_l: f64) -> PyResult<BoxGeometry> {
    match name {
        "periodic" => Ok(BoxGeometry::periodic(box_l)),
        "open" => Ok(BoxGeometry::open(box_l)),
        other => Err(PyValueError::new_err(format!(
            "boundary must be open or periodic, got {other}"
        ))),
    }
}

fn vec3(p: (f64, f64, f64)) -> Vec3 {
    Vec3::new(p.0, p.1, p.2)
}

/// Truncated scattering solution f_ell with its hard-core radius and
/// cutoff length.
#[pyclass(module = "trimc_py")]
#[derive(Clone)]
struct ScatteringProfile {
    inner: scattering::ScatteringProfile,
}

#[pymethods]
impl ScatteringProfile {
    #[new]
    #[pyo3(signature = (a, ell, profile = "smooth-exponential"))]
    fn new(a: f64, ell: f64, profile: &str) -> PyResult<Self> {
        let inner = scattering::ScatteringProfile::new(a, ell, parse_profile(profile)?)
            .map_err(to_value_err)?;
        Ok(ScatteringProfile { inner })
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a()
    }

    #[getter]
    fn ell(&self) -> f64 {
        self.inner.ell()
    }

    #[getter]
    fn ell_tilde(&self) -> f64 {
        self.inner.ell_tilde()
    }

    /// Untruncated solution as a function of the hyperradius.
    fn f_radial(&self, s: f64) -> f64 {
        scattering::scattering_f_radial(s, self.inner.a())
    }

    /// (f_ell, omega_ell, u_ell) at hyperradius s.
    fn truncated_radial(&self, s: f64) -> (f64, f64, f64) {
        let t = self.inner.truncated_radial(s);
        (t.f_ell, t.omega_ell, t.u_ell)
    }

    /// Full 6D gradient of f_ell at the relative pair (r2, r3).
    fn grad_f_ell(
        &self,
        r2: (f64, f64, f64),
        r3: (f64, f64, f64),
    ) -> ((f64, f64, f64), (f64, f64, f64)) {
        let g = self.inner.grad_f_ell(metric::Vec6::new(vec3(r2), vec3(r3)));
        (
            (g.grad6.u.x, g.grad6.u.y, g.grad6.u.z),
            (g.grad6.v.x, g.grad6.v.y, g.grad6.v.z),
        )
    }

    /// int |M grad f_ell|^2 over R^6 by radial quadrature.
    #[pyo3(signature = (s5 = "pi3"))]
    fn energy_integral(&self, s5: &str) -> PyResult<f64> {
        integrals::quad_energy_integral(&self.inner, &QuadratureSpec::default(), parse_s5(s5)?)
            .map_err(to_runtime_err)
    }

    /// int u_ell over R^6 by radial quadrature.
    #[pyo3(signature = (s5 = "pi3"))]
    fn u_integral(&self, s5: &str) -> PyResult<f64> {
        integrals::quad_u_integral(&self.inner, &QuadratureSpec::default(), parse_s5(s5)?)
            .map_err(to_runtime_err)
    }

    fn v_integral(&self) -> f64 {
        integrals::v_integral(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "ScatteringProfile(a={}, ell={}, profile='{}')",
            self.inner.a(),
            self.inner.ell(),
            self.inner.profile().name()
        )
    }
}

/// Hyperradius |M^-1 (r2, r3)| of a relative pair.
#[pyfunction]
fn hyperradius(r2: (f64, f64, f64), r3: (f64, f64, f64)) -> f64 {
    metric::hyperradius(vec3(r2), vec3(r3))
}

/// True when the triple sits on or inside the hard core of radius a.
#[pyfunction]
#[pyo3(signature = (x, y, z, a, box_l = None))]
fn hard_core_violated(
    x: (f64, f64, f64),
    y: (f64, f64, f64),
    z: (f64, f64, f64),
    a: f64,
    box_l: Option<f64>,
) -> bool {
    let geom = match box_l {
        Some(l) => BoxGeometry::periodic(l),
        None => BoxGeometry::open(f64::INFINITY),
    };
    metric::hard_core_violated(vec3(x), vec3(y), vec3(z), a, &geom)
}

/// N particles in a box carrying the triple-product trial state.
#[pyclass(module = "trimc_py", name = "Configuration")]
struct PyConfiguration {
    inner: Configuration,
}

#[pymethods]
impl PyConfiguration {
    #[new]
    #[pyo3(signature = (n, box_l, profile, boundary = "periodic", positions = None))]
    fn new(
        n: usize,
        box_l: f64,
        profile: &ScatteringProfile,
        boundary: &str,
        positions: Option<Vec<(f64, f64, f64)>>,
    ) -> PyResult<Self> {
        let geom = parse_boundary(boundary, box_l)?;
        let inner = match positions {
            Some(pos) => {
                if pos.len() != n {
                    return Err(PyValueError::new_err(format!(
                        "expected {n} positions, got {}",
                        pos.len()
                    )));
                }
                let pos: Vec<Vec3> = pos.into_iter().map(vec3).collect();
                Configuration::from_positions(pos, geom, profile.inner).map_err(to_value_err)?
            }
            None => Configuration::from_lattice(n, geom, profile.inner).map_err(to_value_err)?,
        };
        Ok(PyConfiguration { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn log_psi(&self) -> f64 {
        self.inner.log_psi()
    }

    fn grad_log_psi(&self, i: usize) -> PyResult<(f64, f64, f64)> {
        if i >= self.inner.n() {
            return Err(PyValueError::new_err(format!("particle index {i} out of range")));
        }
        let g = self.inner.grad_log_psi(i);
        Ok((g.x, g.y, g.z))
    }

    /// (i, j, k, f) for every triple with f < 1.
    fn active_triples(&self) -> Vec<(u32, u32, u32, f64)> {
        self.inner
            .active_triples()
            .into_iter()
            .map(|t| (t.i, t.j, t.k, t.f))
            .collect()
    }

    fn positions(&self) -> Vec<(f64, f64, f64)> {
        self.inner.positions().iter().map(|p| (p.x, p.y, p.z)).collect()
    }
}

/// Metropolis energy estimate; returns a dict with the channel split.
#[pyfunction]
#[pyo3(signature = (config, sweeps, burn_in, step, seed = 0, chains = 2, thinning = 1))]
#[allow(clippy::too_many_arguments)]
fn run_energy<'py>(
    py: Python<'py>,
    config: &PyConfiguration,
    sweeps: u64,
    burn_in: u64,
    step: f64,
    seed: u64,
    chains: u32,
    thinning: u64,
) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let mc = McParams { sweeps, burn_in, step, seed, chains, thinning };
    let merged = mc::run_chains(&config.inner, &mc).map_err(to_runtime_err)?;
    let geom = config.inner.geometry();
    let meta = EstimateMeta {
        n: config.inner.n(),
        l: geom.l,
        rho: config.inner.n() as f64 / geom.volume(),
        a: config.inner.profile().a(),
        ell: config.inner.profile().ell(),
        boundary: geom.boundary,
    };
    let est = observables::energy_from_chains(&merged, meta).map_err(to_runtime_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("e", est.e)?;
    d.set_item("stderr", est.stderr)?;
    d.set_item("e1", est.e1)?;
    d.set_item("e2", est.e2)?;
    d.set_item("e3", est.e3)?;
    d.set_item("acceptance", est.acceptance)?;
    d.set_item("samples", est.samples)?;
    Ok(d)
}

/// Quasi-random oracle for 3- or 4-particle systems; returns (energy, stderr).
#[pyfunction]
#[pyo3(signature = (n, box_l, profile, points = 100_000, randomizations = 16, seed = 0, boundary = "periodic"))]
fn oracle_energy(
    n: usize,
    box_l: f64,
    profile: &ScatteringProfile,
    points: u64,
    randomizations: u32,
    seed: u64,
    boundary: &str,
) -> PyResult<(f64, f64)> {
    let geom = parse_boundary(boundary, box_l)?;
    let est = qmc::qmc_oracle(n, &geom, &profile.inner, points, randomizations, seed)
        .map_err(to_runtime_err)?;
    Ok((est.energy_per_particle, est.stderr))
}

/// Leading-order reference (rho^2 / 3) * energy integral.
#[pyfunction]
#[pyo3(signature = (profile, rho, s5 = "pi3"))]
fn leading_order_reference(profile: &ScatteringProfile, rho: f64, s5: &str) -> PyResult<f64> {
    observables::leading_order_reference(
        &profile.inner,
        rho,
        &QuadratureSpec::default(),
        parse_s5(s5)?,
    )
    .map_err(to_runtime_err)
}

/// ell = a (rho a^3)^(-1/7), the truncation rule used by the sweeps.
#[pyfunction]
fn ell_rule(a: f64, rho_a3: f64) -> f64 {
    trimc::cli::ell_from_rule(a, rho_a3)
}

#[pymodule]
fn trimc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ScatteringProfile>()?;
    m.add_class::<PyConfiguration>()?;
    m.add_function(wrap_pyfunction!(hyperradius, m)?)?;
    m.add_function(wrap_pyfunction!(hard_core_violated, m)?)?;
    m.add_function(wrap_pyfunction!(run_energy, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_energy, m)?)?;
    m.add_function(wrap_pyfunction!(leading_order_reference, m)?)?;
    m.add_function(wrap_pyfunction!(ell_rule, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
