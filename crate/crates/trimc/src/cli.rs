//! Configuration ingestion and subcommand orchestration.
//!
//! Subcommands: verify (property suites), integrals (quadrature and
//! constant table), energy (Metropolis estimate), oracle (quasi-random
//! cross-check), sweep (density scan with the exponent fit). All outputs
//! are written atomically (temp file + rename) and embed the config hash,
//! the seed and the code version, so a rerun with identical inputs is
//! byte-identical.

use crate::integrals::{
    energy_integral_limit, quad_energy_integral, quad_u_integral, v_integral, S5Setting,
};
use crate::jastrow::{sandwich_suite, Configuration, SandwichReport};
use crate::lemma::{lemma_suite, metric_suite, LemmaReport, MetricReport};
use crate::mc::{run_chains, tune_step, McParams, MergedAccumulators};
use crate::metric::{Boundary, BoxGeometry};
use crate::observables::{
    constant_ratio_report, energy_from_chains, fit_nu, leading_order_reference,
    literature_leading_constant, literature_scattering_energy, ConstantRatioReport,
    EnergyEstimate, EstimateMeta, SweepPoint, SweepResult,
};
use crate::qmc::{qmc_oracle, QmcEstimate};
use crate::quad::QuadratureSpec;
use crate::scattering::{CutoffProfile, ScatteringProfile};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_COUNTEREXAMPLE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("property suite found a counterexample: {0}")]
    Counterexample(String),
    #[error("io error on {path}: {err}")]
    Io { path: String, err: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Counterexample(_) => EXIT_COUNTEREXAMPLE,
            CliError::Io { .. } => EXIT_NUMERICAL,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Verify,
    Integrals,
    Energy,
    Oracle,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Integrals => "integrals",
            Command::Energy => "energy",
            Command::Oracle => "oracle",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    sweeps: Option<u64>,
    burn_in: Option<u64>,
    step: Option<f64>,
    chains: Option<u32>,
    thinning: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuad {
    abs_tol: Option<f64>,
    rel_tol: Option<f64>,
    max_depth: Option<u32>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    points: Option<u64>,
    randomizations: Option<u32>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerify {
    samples: Option<u64>,
    sandwich_configurations: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    rho_a3: Option<Vec<f64>>,
    sweeps_per_point: Option<Vec<u64>>,
}

/// On-disk configuration. Unknown keys are rejected.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    a: f64,
    rho_a3: Option<f64>,
    n: Option<usize>,
    box_l: Option<f64>,
    ell: Option<f64>,
    ell_rule: Option<bool>,
    profile: Option<String>,
    s5: Option<String>,
    boundary: Option<String>,
    seed: Option<u64>,
    mc: Option<RawMc>,
    quad: Option<RawQuad>,
    oracle: Option<RawOracle>,
    verify: Option<RawVerify>,
    sweep: Option<RawSweep>,
}

/// Fully validated run configuration; the config hash is the SHA-256 of
/// this struct's canonical JSON.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub a: f64,
    pub rho_a3: Option<f64>,
    pub n: Option<usize>,
    pub box_l: Option<f64>,
    pub ell: Option<f64>,
    pub ell_rule: bool,
    pub profile: CutoffProfile,
    pub s5: S5Setting,
    pub boundary: Boundary,
    pub seed: u64,
    pub sweeps: u64,
    pub burn_in: Option<u64>,
    pub step: Option<f64>,
    pub chains: u32,
    pub thinning: u64,
    pub quad: QuadratureSpec,
    pub oracle_points: u64,
    pub oracle_randomizations: u32,
    pub verify_samples: u64,
    pub sandwich_configurations: u64,
    pub sweep_rho_a3: Vec<f64>,
    pub sweep_sweeps_per_point: Vec<u64>,
}

impl RunConfig {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialization");
        let mut h = Sha256::new();
        h.update(&bytes);
        let digest = h.finalize();
        let mut s = String::with_capacity(64);
        for b in digest {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    /// Truncation length for the single-system commands.
    pub fn resolve_ell(&self) -> Result<f64, CliError> {
        if self.ell_rule {
            let rho_a3 = self.rho_a3.ok_or_else(|| {
                config_err("ell_rule needs rho_a3 (the rule is ell = a (rho a^3)^(-1/7))")
            })?;
            if !(self.a > 0.0) || !(rho_a3 > 0.0) {
                return Err(config_err("ell_rule needs a > 0 and rho_a3 > 0"));
            }
            Ok(ell_from_rule(self.a, rho_a3))
        } else {
            self.ell.ok_or_else(|| config_err("field `ell` is required when ell_rule is off"))
        }
    }

    pub fn profile_with_ell(&self, ell: f64) -> Result<ScatteringProfile, CliError> {
        ScatteringProfile::new(self.a, ell, self.profile).map_err(|e| {
            config_err(format!("{e}; the truncation must satisfy ell in (a, L)"))
        })
    }

    /// Box side and particle count for the single-system commands.
    pub fn resolve_box(&self) -> Result<(usize, f64), CliError> {
        let n = self.n.ok_or_else(|| config_err("field `n` is required"))?;
        if n == 0 {
            return Err(config_err("field `n` must be positive"));
        }
        match (self.rho_a3, self.box_l) {
            (Some(_), Some(_)) => {
                Err(config_err("give either `rho_a3` or `box_l`, not both"))
            }
            (None, None) => Err(config_err("one of `rho_a3` or `box_l` is required")),
            (Some(rho_a3), None) => {
                if !(rho_a3 > 0.0) || !(self.a > 0.0) {
                    return Err(config_err("`rho_a3` needs a > 0 and rho_a3 > 0"));
                }
                let l = self.a * (n as f64 / rho_a3).cbrt();
                Ok((n, l))
            }
            (None, Some(l)) => {
                if !(l > 0.0) {
                    return Err(config_err("`box_l` must be positive"));
                }
                Ok((n, l))
            }
        }
    }
}

pub fn ell_from_rule(a: f64, rho_a3: f64) -> f64 {
    a * rho_a3.powf(-1.0 / 7.0)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| {
        config_err(format!("cannot read config {}: {e}", path.display()))
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let raw: RawConfig =
        serde_json::from_str(text).map_err(|e| config_err(format!("malformed config: {e}")))?;
    resolve(raw)
}

fn resolve(raw: RawConfig) -> Result<RunConfig, CliError> {
    if !raw.a.is_finite() || raw.a < 0.0 {
        return Err(config_err("field `a` must be finite and nonnegative"));
    }
    let ell_rule = raw.ell_rule.unwrap_or(false);
    if ell_rule && raw.ell.is_some() {
        return Err(config_err("fields `ell` and `ell_rule` are mutually exclusive"));
    }
    if let Some(e) = raw.ell {
        if !(e > raw.a) {
            return Err(config_err(format!(
                "field `ell` = {e} must exceed a = {}; the truncation needs ell in (a, L)",
                raw.a
            )));
        }
    }
    let profile = match raw.profile.as_deref() {
        None | Some("smooth-exponential") => CutoffProfile::SmoothExponential,
        Some("quintic-polynomial") => CutoffProfile::QuinticPolynomial,
        Some(other) => {
            return Err(config_err(format!(
                "field `profile` must be smooth-exponential or quintic-polynomial, got {other}"
            )))
        }
    };
    let s5 = match raw.s5.as_deref() {
        None | Some("pi3") => S5Setting::Pi3,
        Some("8pi2_3") => S5Setting::EightPi2Over3,
        Some(other) => {
            return Err(config_err(format!("field `s5` must be pi3 or 8pi2_3, got {other}")))
        }
    };
    let boundary = match raw.boundary.as_deref() {
        None | Some("open") => Boundary::Open,
        Some("periodic") => Boundary::Periodic,
        Some(other) => {
            return Err(config_err(format!(
                "field `boundary` must be open or periodic, got {other}"
            )))
        }
    };
    let mc = raw.mc.unwrap_or_default();
    let quad_raw = raw.quad.unwrap_or_default();
    let quad = QuadratureSpec {
        abs_tol: quad_raw.abs_tol.unwrap_or(1e-13),
        rel_tol: quad_raw.rel_tol.unwrap_or(1e-11),
        max_depth: quad_raw.max_depth.unwrap_or(48),
    };
    quad.validate().map_err(|e| config_err(format!("field `quad`: {e}")))?;
    let oracle = raw.oracle.unwrap_or_default();
    let verify = raw.verify.unwrap_or_default();
    let sweep = raw.sweep.unwrap_or_default();
    let sweep_rho_a3 = sweep.rho_a3.unwrap_or_else(|| {
        vec![1e-2, 10f64.powf(-2.5), 1e-3, 10f64.powf(-3.5), 1e-4]
    });
    if sweep_rho_a3.iter().any(|&x| !(x > 0.0)) {
        return Err(config_err("field `sweep.rho_a3` entries must be positive"));
    }
    let sweep_sweeps = match sweep.sweeps_per_point {
        Some(v) => {
            if v.len() != sweep_rho_a3.len() {
                return Err(config_err(format!(
                    "field `sweep.sweeps_per_point` has {} entries for {} points",
                    v.len(),
                    sweep_rho_a3.len()
                )));
            }
            v
        }
        None => default_sweep_budget(&sweep_rho_a3),
    };
    let cfg = RunConfig {
        a: raw.a,
        rho_a3: raw.rho_a3,
        n: raw.n,
        box_l: raw.box_l,
        ell: raw.ell,
        ell_rule,
        profile,
        s5,
        boundary,
        seed: raw.seed.unwrap_or(0),
        sweeps: mc.sweeps.unwrap_or(50_000),
        burn_in: mc.burn_in,
        step: mc.step,
        chains: mc.chains.unwrap_or(2),
        thinning: mc.thinning.unwrap_or(1),
        quad,
        oracle_points: oracle.points.unwrap_or(200_000),
        oracle_randomizations: oracle.randomizations.unwrap_or(16),
        verify_samples: verify.samples.unwrap_or(200_000),
        sandwich_configurations: verify.sandwich_configurations.unwrap_or(2_000),
        sweep_rho_a3,
        sweep_sweeps_per_point: sweep_sweeps,
    };
    if let Some(rho) = cfg.rho_a3 {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(config_err("field `rho_a3` must be positive and finite"));
        }
    }
    Ok(cfg)
}

/// Sweep budgets that roughly equalize the rare-event counts per point:
/// the pair-sharing channel thins out as (rho a^3)^(12/7), so dilute points
/// get proportionally more sweeps.
fn default_sweep_budget(rho_a3: &[f64]) -> Vec<u64> {
    rho_a3
        .iter()
        .map(|&x| {
            let scale = (1e-2 / x).powf(12.0 / 7.0);
            ((6_000.0 * scale) as u64).clamp(6_000, 20_000_000)
        })
        .collect()
}

/// Builds the lattice starting system for the chain commands and validates
/// every geometric precondition before any compute starts.
fn build_system(
    cfg: &RunConfig,
) -> Result<(Configuration, ScatteringProfile, EstimateMeta), CliError> {
    let ell = cfg.resolve_ell()?;
    let (n, l) = cfg.resolve_box()?;
    if ell >= l {
        return Err(config_err(format!(
            "truncation ell = {ell} must stay below L = {l}; the rule is ell in (a, L)"
        )));
    }
    let profile = cfg.profile_with_ell(ell)?;
    if cfg.boundary == Boundary::Periodic && profile.ell_tilde() >= l / 2.0 {
        return Err(config_err(format!(
            "periodic geometry needs ell_tilde < L/2, got ell_tilde = {} vs L = {l}",
            profile.ell_tilde()
        )));
    }
    let geom = BoxGeometry { l, boundary: cfg.boundary };
    let start = Configuration::from_lattice(n, geom, profile)
        .map_err(|e| config_err(format!("cannot build the starting lattice: {e}")))?;
    let rho = n as f64 / geom.volume();
    let meta = EstimateMeta { n, l, rho, a: cfg.a, ell, boundary: cfg.boundary };
    Ok((start, profile, meta))
}

/// Step tuning plus pilot-driven burn-in resolution (ten times the blocking
/// plateau depth of a pilot run) when either is unset.
fn resolve_mc(
    cfg: &RunConfig,
    start: &Configuration,
    sweeps: u64,
    seed: u64,
) -> Result<(McParams, Vec<String>), CliError> {
    let mut warnings = Vec::new();
    let mut mc = McParams {
        sweeps,
        burn_in: 0,
        step: cfg.step.unwrap_or(0.0),
        seed,
        chains: cfg.chains,
        thinning: cfg.thinning,
    };
    if cfg.step.is_none() {
        let (step, warn) =
            tune_step(start, &McParams { step: start.geometry().l / 4.0, ..mc }, 0.5)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
        if warn {
            warnings.push(format!("step tuning ended best-effort at {step}"));
        }
        mc.step = step;
    }
    mc.burn_in = match cfg.burn_in {
        Some(b) => b,
        None => {
            let pilot_sweeps = 2_048.min(sweeps / 4).max(64);
            let pilot = McParams {
                sweeps: pilot_sweeps,
                burn_in: pilot_sweeps / 8,
                thinning: 1,
                chains: 1,
                ..mc
            };
            let acc = crate::mc::run_chain(start, &pilot, u32::MAX - 7)
                .map_err(|e| CliError::Numerical(e.to_string()))?;
            let (_, level, found) = acc.channel_blocking(crate::mc::Channel::Total);
            if !found {
                warnings.push("pilot run found no blocking plateau; burn-in is a guess".into());
            }
            (10u64 << level).clamp(64, (sweeps / 5).max(64))
        }
    };
    if mc.burn_in >= mc.sweeps {
        return Err(config_err(format!(
            "burn-in {} must stay below sweeps {}",
            mc.burn_in, mc.sweeps
        )));
    }
    Ok((mc, warnings))
}

#[derive(Serialize)]
pub struct Envelope<T: Serialize> {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub payload: T,
}

fn envelope<T: Serialize>(cmd: Command, cfg: &RunConfig, payload: T) -> Envelope<T> {
    Envelope {
        command: cmd.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_hash: cfg.hash(),
        payload,
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let io_err = |e: std::io::Error| CliError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json serialization");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Serialize)]
pub struct VerifyPayload {
    pub metric: MetricReport,
    pub lemma: Vec<LemmaReport>,
    pub sandwich: SandwichReport,
    pub pass: bool,
}

fn run_verify(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let ell = cfg.resolve_ell().unwrap_or(1.0);
    let a = if cfg.a > 0.0 { cfg.a } else { 0.05 * ell };
    let metric = metric_suite(cfg.verify_samples.max(1_000_000), cfg.seed);
    let mut lemma = Vec::new();
    for profile in [CutoffProfile::SmoothExponential, CutoffProfile::QuinticPolynomial] {
        let p = ScatteringProfile::new(a, ell.max(4.0 * a), profile)
            .map_err(|e| config_err(e.to_string()))?;
        lemma.push(lemma_suite(&p, cfg.verify_samples, cfg.seed));
    }
    let p = ScatteringProfile::new(a, ell.max(4.0 * a), cfg.profile)
        .map_err(|e| config_err(e.to_string()))?;
    let sandwich = sandwich_suite(&p, 20, cfg.sandwich_configurations, cfg.seed);
    let pass = metric.pass && lemma.iter().all(|r| r.pass) && sandwich.pass;
    let payload = VerifyPayload { metric, lemma, sandwich, pass };
    write_json(&out.join("verify_report.json"), &envelope(Command::Verify, cfg, payload))?;
    if pass {
        Ok(EXIT_OK)
    } else {
        Err(CliError::Counterexample(format!(
            "see {}",
            out.join("verify_report.json").display()
        )))
    }
}

#[derive(Serialize)]
pub struct IntegralsPayload {
    pub a: f64,
    pub ell: f64,
    pub profile: String,
    pub quad_energy: Vec<(String, f64)>,
    pub quad_u: Vec<(String, f64)>,
    pub v_integral: f64,
    pub energy_limit: Vec<(String, f64)>,
    pub constants: Vec<(String, f64)>,
    /// ratio of the pi3 quadrature limit to each literature constant
    pub ratios: Vec<(String, f64)>,
}

fn run_integrals(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let ell = cfg.resolve_ell()?;
    let p = cfg.profile_with_ell(ell)?;
    let numerical = |e: crate::scattering::ScatteringError| CliError::Numerical(e.to_string());
    let mut quad_energy = Vec::new();
    let mut quad_u = Vec::new();
    let mut energy_limit = Vec::new();
    for s5 in [S5Setting::Pi3, S5Setting::EightPi2Over3] {
        quad_energy.push((
            s5.name().to_string(),
            quad_energy_integral(&p, &cfg.quad, s5).map_err(numerical)?,
        ));
        quad_u.push((
            s5.name().to_string(),
            quad_u_integral(&p, &cfg.quad, s5).map_err(numerical)?,
        ));
        energy_limit.push((s5.name().to_string(), energy_integral_limit(cfg.a, s5)));
    }
    let a4 = cfg.a.powi(4);
    let constants = vec![
        ("literature_leading_constant".into(), literature_leading_constant()),
        ("literature_scattering_energy".into(), literature_scattering_energy() * a4),
        ("literature_scattering_energy_half".into(), literature_scattering_energy() / 2.0 * a4),
        (
            "literature_energy_bound_no_pi2".into(),
            32.0 / (3.0 * 3f64.sqrt()) * a4,
        ),
    ];
    let pi3_limit = energy_integral_limit(cfg.a, S5Setting::Pi3);
    let ratios = constants
        .iter()
        .filter(|(_, v)| *v != 0.0)
        .map(|(name, v)| (format!("quad_pi3_limit_over_{name}"), pi3_limit / v))
        .collect();
    let payload = IntegralsPayload {
        a: cfg.a,
        ell,
        profile: p.profile().name().to_string(),
        quad_energy,
        quad_u,
        v_integral: v_integral(&p),
        energy_limit,
        constants,
        ratios,
    };
    write_json(&out.join("integrals.json"), &envelope(Command::Integrals, cfg, &payload))?;
    let mut csv = String::from("quantity,s5,value\n");
    for (s5, v) in &payload.quad_energy {
        let _ = writeln!(csv, "quad_energy_integral,{s5},{v}");
    }
    for (s5, v) in &payload.quad_u {
        let _ = writeln!(csv, "quad_u_integral,{s5},{v}");
    }
    for (s5, v) in &payload.energy_limit {
        let _ = writeln!(csv, "energy_integral_limit,{s5},{v}");
    }
    let _ = writeln!(csv, "v_integral,,{}", payload.v_integral);
    for (name, v) in &payload.constants {
        let _ = writeln!(csv, "{name},,{v}");
    }
    for (name, v) in &payload.ratios {
        let _ = writeln!(csv, "{name},,{v}");
    }
    write_atomic(&out.join("integrals.csv"), csv.as_bytes())?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
pub struct EnergyPayload {
    pub estimate: EnergyEstimate,
    pub e_ref: f64,
    pub constants: ConstantRatioReport,
    pub step: f64,
    pub burn_in: u64,
    pub warnings: Vec<String>,
}

fn series_csv(merged: &MergedAccumulators) -> Vec<(u32, String)> {
    merged
        .chains
        .iter()
        .map(|c| {
            let mut csv = String::from("sweep,t,t_diag,t_share,t_disj,acceptance\n");
            for r in &c.series.rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    r.sweep, r.t, r.t_diag, r.t_share, r.t_disj, r.acceptance
                );
            }
            (c.chain_index, csv)
        })
        .collect()
}

fn run_energy(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let (start, profile, meta) = build_system(cfg)?;
    let (mc, warnings) = resolve_mc(cfg, &start, cfg.sweeps, cfg.seed)?;
    let merged = run_chains(&start, &mc).map_err(|e| CliError::Numerical(e.to_string()))?;
    let estimate = energy_from_chains(&merged, meta)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let e_ref = leading_order_reference(&profile, meta.rho, &cfg.quad, cfg.s5)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let constants = constant_ratio_report(&estimate, &profile);
    let payload = EnergyPayload {
        estimate,
        e_ref,
        constants,
        step: mc.step,
        burn_in: mc.burn_in,
        warnings,
    };
    write_json(&out.join("energy.json"), &envelope(Command::Energy, cfg, &payload))?;
    for (idx, csv) in series_csv(&merged) {
        write_atomic(&out.join(format!("series_chain_{idx}.csv")), csv.as_bytes())?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
pub struct OraclePayload {
    pub oracle: QmcEstimate,
    pub metropolis: EnergyEstimate,
    pub difference: f64,
    pub combined_stderr: f64,
    pub within_3_sigma: bool,
    pub step: f64,
    pub burn_in: u64,
    pub warnings: Vec<String>,
}

fn run_oracle(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let (start, profile, meta) = build_system(cfg)?;
    if !(3..=4).contains(&meta.n) {
        return Err(config_err(format!(
            "the oracle compares 3- or 4-particle systems, got n = {}",
            meta.n
        )));
    }
    let geom = *start.geometry();
    let oracle = qmc_oracle(
        meta.n,
        &geom,
        &profile,
        cfg.oracle_points,
        cfg.oracle_randomizations,
        cfg.seed,
    )
    .map_err(|e| CliError::Numerical(e.to_string()))?;
    let (mc, warnings) = resolve_mc(cfg, &start, cfg.sweeps, cfg.seed)?;
    let merged = run_chains(&start, &mc).map_err(|e| CliError::Numerical(e.to_string()))?;
    let metropolis = energy_from_chains(&merged, meta)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let difference = metropolis.e - oracle.energy_per_particle;
    let combined = metropolis.stderr.hypot(oracle.stderr);
    let payload = OraclePayload {
        oracle,
        metropolis,
        difference,
        combined_stderr: combined,
        within_3_sigma: difference.abs() <= 3.0 * combined,
        step: mc.step,
        burn_in: mc.burn_in,
        warnings,
    };
    write_json(&out.join("oracle.json"), &envelope(Command::Oracle, cfg, &payload))?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
pub struct SweepPayload {
    pub result: SweepResult,
    pub warnings: Vec<String>,
}

fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<i32, CliError> {
    let n = cfg.n.ok_or_else(|| config_err("field `n` is required for sweep"))?;
    if cfg.box_l.is_some() || cfg.ell.is_some() {
        return Err(config_err(
            "sweep derives `box_l` and `ell` per point; give only `a`, `n` and sweep.rho_a3",
        ));
    }
    let mut warnings = Vec::new();
    let mut points: Vec<SweepPoint> = Vec::new();
    for (idx, (&rho_a3, &sweeps)) in cfg
        .sweep_rho_a3
        .iter()
        .zip(&cfg.sweep_sweeps_per_point)
        .enumerate()
    {
        let point_cfg = RunConfig {
            rho_a3: Some(rho_a3),
            box_l: None,
            ell: None,
            ell_rule: true,
            n: Some(n),
            ..cfg.clone()
        };
        let (start, profile, meta) = build_system(&point_cfg)?;
        let (mc, mut w) =
            resolve_mc(&point_cfg, &start, sweeps, mix_point_seed(cfg.seed, idx as u64))?;
        warnings.append(&mut w);
        let merged = run_chains(&start, &mc).map_err(|e| CliError::Numerical(e.to_string()))?;
        let estimate = energy_from_chains(&merged, meta)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        let e_ref = leading_order_reference(&profile, meta.rho, &cfg.quad, cfg.s5)
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        points.push(SweepPoint::from_estimate(estimate, e_ref, cfg.a));
    }
    let result = fit_nu(&points, 1_000, cfg.seed);
    let payload = SweepPayload { result, warnings };
    write_json(&out.join("sweep.json"), &envelope(Command::Sweep, cfg, &payload))?;
    let mut csv =
        String::from("rho_a3,ell_over_a,n,l,e,stderr,e1,e2,e3,e_ref,ratio\n");
    for p in &payload.result.points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.rho_a3,
            p.ell_over_a,
            p.n,
            p.estimate.meta.l,
            p.estimate.e,
            p.estimate.stderr,
            p.estimate.e1,
            p.estimate.e2,
            p.estimate.e3,
            p.e_ref,
            p.channel_ratio
        );
    }
    write_atomic(&out.join("sweep.csv"), csv.as_bytes())?;
    Ok(EXIT_OK)
}

fn mix_point_seed(seed: u64, idx: u64) -> u64 {
    let mut z = seed ^ 0x7377_6565u64.rotate_left(11) ^ idx.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^ (z >> 31)
}

/// Runs a subcommand; returns the process exit code on success and a typed
/// error (with its exit code) otherwise. No partial outputs are left behind
/// on failure: every artifact goes through the temp-and-rename path.
pub fn run(cmd: Command, cfg: &RunConfig, out_dir: &PathBuf) -> Result<i32, CliError> {
    match cmd {
        Command::Verify => run_verify(cfg, out_dir),
        Command::Integrals => run_integrals(cfg, out_dir),
        Command::Energy => run_energy(cfg, out_dir),
        Command::Oracle => run_oracle(cfg, out_dir),
        Command::Sweep => run_sweep(cfg, out_dir),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_energy_config() -> &'static str {
        r#"{
            "a": 1.0,
            "rho_a3": 1e-3,
            "n": 32,
            "ell_rule": true,
            "seed": 7,
            "boundary": "periodic",
            "mc": {"sweeps": 500, "burn_in": 50}
        }"#
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(minimal_energy_config()).unwrap();
        assert_eq!(cfg.chains, 2);
        assert_eq!(cfg.thinning, 1);
        assert_eq!(cfg.s5, S5Setting::Pi3);
        assert_eq!(cfg.profile, CutoffProfile::SmoothExponential);
        let ell = cfg.resolve_ell().unwrap();
        assert!((ell - 1e-3f64.powf(-1.0 / 7.0)).abs() < 1e-12);
        let (n, l) = cfg.resolve_box().unwrap();
        assert_eq!(n, 32);
        assert!((l - (32.0 / 1e-3f64).cbrt()).abs() < 1e-9);
    }

    #[test]
    fn both_ell_and_rule_rejected() {
        let text = r#"{"a": 1.0, "ell": 3.0, "ell_rule": true}"#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("mutually exclusive"), "{err}");
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"a": 1.0, "ell": 3.0, "bogus": 1}"#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn ell_must_exceed_a() {
        let text = r#"{"a": 2.0, "ell": 1.0}"#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("ell"), "{err}");
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn periodic_box_checked_before_compute() {
        // dense point: ell_tilde comparable to L/2 fails upfront
        let text = r#"{
            "a": 1.0, "rho_a3": 0.5, "n": 8, "ell_rule": true,
            "boundary": "periodic"
        }"#;
        let cfg = parse_config(text).unwrap();
        let err = build_system(&cfg).unwrap_err();
        assert!(err.to_string().contains("ell_tilde"), "{err}");
    }

    #[test]
    fn config_hash_tracks_semantic_changes() {
        let c1 = parse_config(minimal_energy_config()).unwrap();
        let mut c2 = c1.clone();
        assert_eq!(c1.hash(), c2.hash());
        c2.seed = 8;
        assert_ne!(c1.hash(), c2.hash());
        let mut c3 = c1.clone();
        c3.sweeps += 1;
        assert_ne!(c1.hash(), c3.hash());
    }

    #[test]
    fn sweep_rejects_explicit_geometry() {
        let text = r#"{"a": 1.0, "n": 16, "box_l": 40.0}"#;
        let cfg = parse_config(text).unwrap();
        let err = run_sweep(&cfg, &PathBuf::from("/nonexistent")).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn default_sweep_budget_grows_toward_dilute() {
        let pts = [1e-2, 1e-3, 1e-4];
        let b = default_sweep_budget(&pts);
        assert!(b[0] < b[1] && b[1] < b[2]);
    }
}
