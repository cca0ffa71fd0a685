//! Metropolis sampling of the squared trial state.
//!
//! Single-particle uniform-cube proposals, acceptance min(1, exp(2 delta
//! log psi)), hard-core violating proposals always rejected. The energy
//! estimator is the gradient form sum_i |grad_i ln psi|^2, split into the
//! same-triple, pair-sharing and disjoint-pair channels; blocking trees give
//! autocorrelation-aware error bars without storing the full series.

use crate::jastrow::{Configuration, MoveScratch, TripleTerm};
use crate::metric::{Boundary, Vec3};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid MC parameters: {0}")]
    BadParams(String),
    #[error("acceptance ratio {ratio:.4} collapsed below 1% (step {step})")]
    AcceptanceCollapse { ratio: f64, step: f64 },
    #[error("blocking needs at least 16 samples, got {0}")]
    SeriesTooShort(usize),
    #[error("quasi-random oracle denominator is consistent with zero: {mean} +- {stderr}")]
    OracleDenominatorZero { mean: f64, stderr: f64 },
    #[error("quasi-random oracle supports 3 or 4 particles, got {0}")]
    OracleBadN(usize),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McParams {
    pub sweeps: u64,
    pub burn_in: u64,
    /// half-width of the uniform cube proposal, length units
    pub step: f64,
    pub seed: u64,
    pub chains: u32,
    pub thinning: u64,
}

impl McParams {
    pub fn validate(&self) -> Result<(), McError> {
        if self.burn_in >= self.sweeps {
            return Err(McError::BadParams(format!(
                "burn_in {} must be below sweeps {}",
                self.burn_in, self.sweeps
            )));
        }
        if !(self.step > 0.0) {
            return Err(McError::BadParams(format!("step must be positive, got {}", self.step)));
        }
        if self.chains == 0 {
            return Err(McError::BadParams("chain count must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(McError::BadParams("thinning interval must be at least 1".into()));
        }
        Ok(())
    }
}

fn mix_seed(seed: u64, tag: u64, idx: u64) -> u64 {
    let mut z = seed ^ tag.rotate_left(23) ^ idx.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const CHAIN_TAG: u64 = 0x6368_6169;
const TUNE_TAG: u64 = 0x7475_6e65;

/// One estimator sample. t = sum_i |grad_i ln psi|^2; the three channels
/// add up to t: diag keeps same-triple squares, share keeps cross terms of
/// triples sharing a second particle, disj the rest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EstimatorSample {
    pub t: f64,
    pub t_diag: f64,
    pub t_share: f64,
    pub t_disj: f64,
}

/// Gradient-form energy estimator on the current configuration.
pub fn sample_estimator(cfg: &Configuration) -> EstimatorSample {
    let mut scratch = MoveScratch::default();
    let mut triples = Vec::new();
    let mut per = Vec::new();
    sample_estimator_with(cfg, &mut triples, &mut per, &mut scratch)
}

/// Entry of the per-particle gradient table: (particle, other1, other2,
/// gradient of ln f for that triple).
pub type GradEntry = (u32, u32, u32, Vec3);

pub fn sample_estimator_with(
    cfg: &Configuration,
    triples: &mut Vec<TripleTerm>,
    per: &mut Vec<GradEntry>,
    scratch: &mut MoveScratch,
) -> EstimatorSample {
    cfg.active_triples_into(triples, scratch);
    channels_from_triples(triples, per)
}

/// Channel split of the estimator given the active triples.
pub fn channels_from_triples(
    triples: &[TripleTerm],
    per: &mut Vec<GradEntry>,
) -> EstimatorSample {
    if triples.is_empty() {
        return EstimatorSample::default();
    }
    per.clear();
    for t in triples.iter() {
        per.push((t.i, t.j, t.k, t.glog_i));
        per.push((t.j, t.i, t.k, t.glog_j));
        per.push((t.k, t.i, t.j, t.glog_k));
    }
    per.sort_unstable_by_key(|e| e.0);

    let mut out = EstimatorSample::default();
    let mut start = 0;
    while start < per.len() {
        let particle = per[start].0;
        let mut end = start + 1;
        while end < per.len() && per[end].0 == particle {
            end += 1;
        }
        let group = &per[start..end];
        let mut total = Vec3::ZERO;
        for e in group {
            total = total + e.3;
            out.t_diag += e.3.norm2();
        }
        out.t += total.norm2();
        for (ai, a) in group.iter().enumerate() {
            for b in &group[ai + 1..] {
                let shared = a.1 == b.1 || a.1 == b.2 || a.2 == b.1 || a.2 == b.2;
                let cross = 2.0 * a.3.dot(b.3);
                if shared {
                    out.t_share += cross;
                } else {
                    out.t_disj += cross;
                }
            }
        }
        start = end;
    }
    out
}

/// Online blocking (successive pairwise averaging). Level k holds the
/// Welford statistics of the series averaged over blocks of 2^k samples.
#[derive(Clone, Debug, Default, Serialize)]
pub struct BlockingTree {
    levels: Vec<LevelStat>,
}

/// Same tree for the four estimator channels at once; one carry walk per
/// sample instead of four.
#[derive(Clone, Debug, Default, Serialize)]
struct BlockingTree4 {
    levels: Vec<Level4>,
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
struct Level4 {
    n: u64,
    mean: [f64; 4],
    m2: [f64; 4],
    pending: Option<[f64; 4]>,
}

impl BlockingTree4 {
    #[inline]
    fn push(&mut self, x: [f64; 4]) {
        let mut level = 0;
        let mut value = x;
        loop {
            if self.levels.len() <= level {
                self.levels.push(Level4::default());
            }
            let l = &mut self.levels[level];
            l.n += 1;
            let inv = 1.0 / l.n as f64;
            for c in 0..4 {
                let d = value[c] - l.mean[c];
                l.mean[c] += d * inv;
                l.m2[c] += d * (value[c] - l.mean[c]);
            }
            match l.pending.take() {
                None => {
                    l.pending = Some(value);
                    return;
                }
                Some(prev) => {
                    for c in 0..4 {
                        value[c] = 0.5 * (prev[c] + value[c]);
                    }
                    level += 1;
                }
            }
        }
    }

    fn channel(&self, c: usize) -> BlockingTree {
        BlockingTree {
            levels: self
                .levels
                .iter()
                .map(|l| LevelStat {
                    n: l.n,
                    mean: l.mean[c],
                    m2: l.m2[c],
                    pending: l.pending.map(|p| p[c]),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
struct LevelStat {
    n: u64,
    mean: f64,
    m2: f64,
    pending: Option<f64>,
}

impl LevelStat {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn stderr_of_mean(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        (self.m2 / ((self.n - 1) as f64) / self.n as f64).sqrt()
    }
}

impl BlockingTree {
    pub fn push(&mut self, x: f64) {
        let mut level = 0;
        let mut value = x;
        loop {
            if self.levels.len() <= level {
                self.levels.push(LevelStat::default());
            }
            self.levels[level].push(value);
            match self.levels[level].pending.take() {
                None => {
                    self.levels[level].pending = Some(value);
                    return;
                }
                Some(prev) => {
                    value = 0.5 * (prev + value);
                    level += 1;
                }
            }
        }
    }

    pub fn n(&self) -> u64 {
        self.levels.first().map_or(0, |l| l.n)
    }

    pub fn mean(&self) -> f64 {
        self.levels.first().map_or(f64::NAN, |l| l.mean)
    }

    /// Blocked standard errors per level, for levels with at least 2 blocks.
    pub fn level_stderrs(&self) -> Vec<(u32, u64, f64)> {
        self.levels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.n >= 2)
            .map(|(k, l)| (k as u32, l.n, l.stderr_of_mean()))
            .collect()
    }

    /// Standard error at the plateau of the blocked variance. Returns
    /// (stderr, plateau_level, plateau_found); without a plateau the deepest
    /// usable level is reported with the flag unset.
    pub fn plateau(&self) -> (f64, u32, bool) {
        let levels = self.level_stderrs();
        if levels.is_empty() {
            return (f64::NAN, 0, false);
        }
        let usable: Vec<&(u32, u64, f64)> = levels.iter().filter(|l| l.1 >= 32).collect();
        if usable.is_empty() {
            let last = levels.last().unwrap();
            return (last.2, last.0, false);
        }
        for w in usable.windows(2) {
            let (_, n1, se0) = *w[0];
            let (k1, n1b, se1) = *w[1];
            let _ = n1;
            // growth below its own sampling noise twice in a row
            let tol = 1.0 + 1.0 / (2.0 * (n1b.saturating_sub(1)) as f64).sqrt();
            if se1 <= se0 * tol {
                return (se0.max(se1), k1, true);
            }
        }
        let last = usable.last().unwrap();
        (last.2, last.0, false)
    }
}

/// Blocking analysis of an explicit series.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BlockingResult {
    pub mean: f64,
    pub stderr: f64,
    pub plateau_level: u32,
    pub plateau_found: bool,
}

pub fn blocking_error(series: &[f64]) -> Result<BlockingResult, McError> {
    if series.len() < 16 {
        return Err(McError::SeriesTooShort(series.len()));
    }
    let mut tree = BlockingTree::default();
    for &x in series {
        tree.push(x);
    }
    let (stderr, plateau_level, plateau_found) = tree.plateau();
    Ok(BlockingResult { mean: tree.mean(), stderr, plateau_level, plateau_found })
}

/// Estimator channels tracked by every chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Total,
    Diag,
    Share,
    Disj,
}

pub const CHANNELS: [Channel; 4] = [Channel::Total, Channel::Diag, Channel::Share, Channel::Disj];

impl Channel {
    fn index(self) -> usize {
        match self {
            Channel::Total => 0,
            Channel::Diag => 1,
            Channel::Share => 2,
            Channel::Disj => 3,
        }
    }

}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SeriesRow {
    pub sweep: u64,
    pub t: f64,
    pub t_diag: f64,
    pub t_share: f64,
    pub t_disj: f64,
    pub acceptance: f64,
}

/// Bounded sample series for CSV dumps: once the cap is hit the stored
/// stride doubles and every other row is dropped, deterministically. The
/// stride stays a power of two so the cadence test is a mask.
#[derive(Clone, Debug, Serialize)]
pub struct BoundedSeries {
    stride_mask: u64,
    seen: u64,
    pub rows: Vec<SeriesRow>,
    cap: usize,
}

impl BoundedSeries {
    pub fn new(cap: usize) -> Self {
        BoundedSeries { stride_mask: 0, seen: 0, rows: Vec::new(), cap: cap.max(16) }
    }

    #[inline]
    fn push(&mut self, row: SeriesRow) {
        if self.seen & self.stride_mask == 0 {
            if self.rows.len() == self.cap {
                let mut idx = 0;
                self.rows.retain(|_| {
                    let keep = idx % 2 == 0;
                    idx += 1;
                    keep
                });
                self.stride_mask = self.stride_mask * 2 + 1;
                if self.seen & self.stride_mask != 0 {
                    self.seen += 1;
                    return;
                }
            }
            self.rows.push(row);
        }
        self.seen += 1;
    }

    pub fn stride(&self) -> u64 {
        self.stride_mask + 1
    }
}

/// Per-chain running state: acceptance counters, blocking trees for the
/// four channels, and a bounded series for offline analysis.
#[derive(Clone, Debug, Serialize)]
pub struct ChainAccumulators {
    pub chain_index: u32,
    pub proposed: u64,
    pub accepted: u64,
    pub samples: u64,
    trees: BlockingTree4,
    pub series: BoundedSeries,
    pub identity_max_dev: f64,
}

impl ChainAccumulators {
    fn new(chain_index: u32) -> Self {
        ChainAccumulators {
            chain_index,
            proposed: 0,
            accepted: 0,
            samples: 0,
            trees: Default::default(),
            series: BoundedSeries::new(1 << 14),
            identity_max_dev: 0.0,
        }
    }

    #[inline]
    fn push(&mut self, sweep: u64, s: EstimatorSample) {
        self.samples += 1;
        self.trees.push([s.t, s.t_diag, s.t_share, s.t_disj]);
        if s.t != 0.0 {
            let recon = s.t_diag + s.t_share + s.t_disj;
            let dev = (s.t - recon).abs() / s.t.abs();
            self.identity_max_dev = self.identity_max_dev.max(dev);
            self.series.push(SeriesRow {
                sweep,
                t: s.t,
                t_diag: s.t_diag,
                t_share: s.t_share,
                t_disj: s.t_disj,
                acceptance: self.acceptance(),
            });
        } else {
            self.series.push(SeriesRow {
                sweep,
                t: s.t,
                t_diag: s.t_diag,
                t_share: s.t_share,
                t_disj: s.t_disj,
                acceptance: self.acceptance(),
            });
        }
    }

    pub fn acceptance(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn channel_mean(&self, ch: Channel) -> f64 {
        self.trees.channel(ch.index()).mean()
    }

    pub fn channel_blocking(&self, ch: Channel) -> (f64, u32, bool) {
        self.trees.channel(ch.index()).plateau()
    }
}

/// Chains merged into one estimate; merging is a sorted union, so it is
/// associative and commutative with bitwise-identical statistics.
#[derive(Clone, Debug, Default, Serialize)]
pub struct MergedAccumulators {
    pub chains: Vec<ChainAccumulators>,
}

impl MergedAccumulators {
    pub fn from_chains(mut chains: Vec<ChainAccumulators>) -> Self {
        chains.sort_by_key(|c| c.chain_index);
        MergedAccumulators { chains }
    }

    pub fn merge(mut self, other: MergedAccumulators) -> Self {
        self.chains.extend(other.chains);
        self.chains.sort_by_key(|c| c.chain_index);
        Self { chains: self.chains }
    }

    pub fn samples(&self) -> u64 {
        self.chains.iter().map(|c| c.samples).sum()
    }

    pub fn acceptance(&self) -> f64 {
        let proposed: u64 = self.chains.iter().map(|c| c.proposed).sum();
        let accepted: u64 = self.chains.iter().map(|c| c.accepted).sum();
        if proposed == 0 {
            0.0
        } else {
            accepted as f64 / proposed as f64
        }
    }

    /// Sample-weighted mean over chains.
    pub fn channel_mean(&self, ch: Channel) -> f64 {
        let total: u64 = self.samples();
        if total == 0 {
            return f64::NAN;
        }
        self.chains
            .iter()
            .map(|c| c.channel_mean(ch) * (c.samples as f64 / total as f64))
            .sum()
    }

    /// Standard error of the merged mean from per-chain blocking plateaus,
    /// and whether every chain found a plateau.
    pub fn channel_stderr(&self, ch: Channel) -> (f64, bool) {
        let total = self.samples() as f64;
        if total == 0.0 {
            return (f64::NAN, false);
        }
        let mut var = 0.0;
        let mut all_plateau = true;
        for c in &self.chains {
            let (se, _, found) = c.channel_blocking(ch);
            let w = c.samples as f64 / total;
            if se.is_finite() {
                var += w * w * se * se;
            }
            all_plateau &= found;
        }
        (var.sqrt(), all_plateau)
    }
}

/// Metropolis chain. Fully deterministic given (params.seed, chain_index).
pub fn run_chain(
    c0: &Configuration,
    mc: &McParams,
    chain_index: u32,
) -> Result<ChainAccumulators, McError> {
    mc.validate()?;
    let mut cfg = c0.clone();
    let n = cfg.n();
    let geom = *cfg.geometry();
    let periodic = geom.boundary == Boundary::Periodic;
    let mut rng = Pcg64Mcg::seed_from_u64(mix_seed(mc.seed, CHAIN_TAG, chain_index as u64));
    let mut acc = ChainAccumulators::new(chain_index);
    let mut scratch = MoveScratch::default();
    let mut triples = Vec::new();
    let mut per = Vec::new();
    let mut cache = cfg.pair_cache();

    for sweep in 0..mc.sweeps {
        for i in 0..n {
            acc.proposed += 1;
            let cur = cfg.position(i);
            let dx = Vec3::new(
                (2.0 * rng.random::<f64>() - 1.0) * mc.step,
                (2.0 * rng.random::<f64>() - 1.0) * mc.step,
                (2.0 * rng.random::<f64>() - 1.0) * mc.step,
            );
            let cand = cur + dx;
            let cand = if periodic {
                cfg.wrap(cand)
            } else {
                if !geom.contains(cand) {
                    continue;
                }
                cand
            };
            match &mut cache {
                Some(cache) => {
                    let (d, row) = cfg.move_delta_cached(i, cand, cache);
                    if !d.admissible {
                        continue;
                    }
                    let accept = d.delta_log_psi >= 0.0
                        || rng.random::<f64>() < (2.0 * d.delta_log_psi).exp();
                    if accept {
                        cfg.apply_move_cached(i, cand, cache, &row);
                        acc.accepted += 1;
                    }
                }
                None => {
                    let d = match cfg.move_delta_tabled(i, cand, &mut scratch) {
                        Some(d) => d,
                        None => cfg.move_delta_with(i, cand, &mut scratch),
                    };
                    if !d.admissible {
                        continue;
                    }
                    let accept = d.delta_log_psi >= 0.0
                        || rng.random::<f64>() < (2.0 * d.delta_log_psi).exp();
                    if accept {
                        if cfg.has_neighbor_table() {
                            cfg.apply_move_from_scratch(i, cand, &mut scratch);
                        } else {
                            cfg.apply_move(i, cand);
                        }
                        acc.accepted += 1;
                    }
                }
            }
        }
        #[cfg(debug_assertions)]
        {
            debug_assert!(cfg.first_violation().is_none(), "inadmissible state at sweep {sweep}");
            debug_assert!(cfg.neighbor_table_consistent(), "stale neighbor table at sweep {sweep}");
        }
        if sweep + 1 == mc.burn_in && acc.acceptance() < 0.01 && n > 0 {
            return Err(McError::AcceptanceCollapse { ratio: acc.acceptance(), step: mc.step });
        }
        if sweep >= mc.burn_in && (sweep - mc.burn_in) % mc.thinning == 0 {
            let s = match &cache {
                Some(cache) => {
                    cfg.active_triples_cached(cache, &mut triples);
                    channels_from_triples(&triples, &mut per)
                }
                None => {
                    if cfg.active_triples_tabled(&mut triples) {
                        channels_from_triples(&triples, &mut per)
                    } else {
                        sample_estimator_with(&cfg, &mut triples, &mut per, &mut scratch)
                    }
                }
            };
            acc.push(sweep, s);
        }
    }
    if acc.acceptance() < 0.01 && n > 0 {
        return Err(McError::AcceptanceCollapse { ratio: acc.acceptance(), step: mc.step });
    }
    Ok(acc)
}

/// Runs `mc.chains` independent chains (rayon) and merges them in chain
/// order; the result depends only on (params, seed, chain count).
pub fn run_chains(c0: &Configuration, mc: &McParams) -> Result<MergedAccumulators, McError> {
    let chains: Result<Vec<ChainAccumulators>, McError> = (0..mc.chains)
        .into_par_iter()
        .map(|idx| run_chain(c0, mc, idx))
        .collect();
    Ok(MergedAccumulators::from_chains(chains?))
}

/// Measured acceptance of a short pilot run at the given step size.
fn pilot_acceptance(c0: &Configuration, mc: &McParams, step: f64, pilot_sweeps: u64) -> f64 {
    let pilot = McParams {
        sweeps: pilot_sweeps,
        burn_in: 0,
        step,
        seed: mix_seed(mc.seed, TUNE_TAG, 0),
        chains: 1,
        thinning: u64::MAX,
    };
    // thinning = MAX records no samples; only acceptance counters matter
    match run_chain(c0, &McParams { thinning: pilot_sweeps + 1, ..pilot }, u32::MAX - 1) {
        Ok(acc) => acc.acceptance(),
        Err(_) => 0.0,
    }
}

/// Bisects the proposal step until the pilot acceptance lands within
/// +-0.05 of `target`; returns (step, best_effort_warning).
pub fn tune_step(c0: &Configuration, mc: &McParams, target: f64) -> Result<(f64, bool), McError> {
    if !(0.2..=0.8).contains(&target) {
        return Err(McError::BadParams(format!(
            "tuning target must lie in [0.2, 0.8], got {target}"
        )));
    }
    let l = c0.geometry().l;
    let n = c0.n().max(1) as u64;
    let pilot_sweeps = (20_000 / n).clamp(16, 4096);
    let band = 0.05;
    let max_step = l / 2.0;
    let mut lo = 1e-6 * l;
    let mut hi = max_step;
    let acc_hi = pilot_acceptance(c0, mc, hi, pilot_sweeps);
    if acc_hi >= target - band {
        // even the largest step is accepted often enough
        return Ok((hi, acc_hi > target + band));
    }
    let acc_lo = pilot_acceptance(c0, mc, lo, pilot_sweeps);
    if acc_lo <= target + band {
        return Ok((lo, acc_lo < target - band));
    }
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        let acc = pilot_acceptance(c0, mc, mid, pilot_sweeps);
        if (acc - target).abs() <= band {
            return Ok((mid, false));
        }
        if acc > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-3 {
            break;
        }
    }
    let best = (lo * hi).sqrt();
    Ok((best, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jastrow::Configuration;
    use crate::metric::BoxGeometry;
    use crate::scattering::{CutoffProfile, ScatteringProfile};

    fn small_system(a: f64, n: usize, l: f64, seed: u64) -> Configuration {
        let p = ScatteringProfile::new(a, 3.0 * a.max(0.3), CutoffProfile::SmoothExponential)
            .unwrap();
        let geom = BoxGeometry::periodic(l);
        let mut rng = Pcg64Mcg::seed_from_u64(seed);
        loop {
            let pos: Vec<Vec3> = (0..n)
                .map(|_| {
                    Vec3::new(
                        rng.random::<f64>() * l,
                        rng.random::<f64>() * l,
                        rng.random::<f64>() * l,
                    )
                })
                .collect();
            if let Ok(c) = Configuration::from_positions(pos, geom, p) {
                return c;
            }
        }
    }

    #[test]
    fn free_gas_accepts_everything_and_t_is_zero() {
        let p = ScatteringProfile::new(0.0, 1.0, CutoffProfile::SmoothExponential).unwrap();
        let geom = BoxGeometry::periodic(8.0);
        let cfg = Configuration::from_lattice(8, geom, p).unwrap();
        let mc = McParams { sweeps: 200, burn_in: 10, step: 3.0, seed: 1, chains: 1, thinning: 1 };
        let acc = run_chain(&cfg, &mc, 0).unwrap();
        assert_eq!(acc.acceptance(), 1.0);
        assert_eq!(acc.channel_mean(Channel::Total), 0.0);
    }

    #[test]
    fn equal_seeds_give_bitwise_identical_accumulators() {
        let cfg = small_system(0.2, 12, 6.0, 4);
        let mc =
            McParams { sweeps: 400, burn_in: 50, step: 1.0, seed: 99, chains: 1, thinning: 2 };
        let a1 = run_chain(&cfg, &mc, 0).unwrap();
        let a2 = run_chain(&cfg, &mc, 0).unwrap();
        assert_eq!(a1.accepted, a2.accepted);
        assert_eq!(a1.samples, a2.samples);
        assert_eq!(
            a1.channel_mean(Channel::Total).to_bits(),
            a2.channel_mean(Channel::Total).to_bits()
        );
        for (r1, r2) in a1.series.rows.iter().zip(&a2.series.rows) {
            assert_eq!(r1.t.to_bits(), r2.t.to_bits());
        }
    }

    #[test]
    fn estimator_identity_and_small_n_channels() {
        // N = 3: a single triple can exist, so share and disj vanish
        let cfg = small_system(0.3, 3, 3.0, 7);
        let mc =
            McParams { sweeps: 3000, burn_in: 100, step: 1.5, seed: 5, chains: 1, thinning: 1 };
        let acc = run_chain(&cfg, &mc, 0).unwrap();
        assert_eq!(acc.channel_mean(Channel::Share), 0.0);
        assert_eq!(acc.channel_mean(Channel::Disj), 0.0);
        assert!(acc.identity_max_dev <= 1e-10, "identity dev {}", acc.identity_max_dev);
    }

    #[test]
    fn estimator_matches_grad_log_psi_sum() {
        let cfg = small_system(0.25, 20, 4.0, 11);
        let s = sample_estimator(&cfg);
        let mut t = 0.0;
        for i in 0..cfg.n() {
            t += cfg.grad_log_psi(i).norm2();
        }
        assert!((s.t - t).abs() <= 1e-10 * t.abs().max(1.0), "{} vs {t}", s.t);
        let recon = s.t_diag + s.t_share + s.t_disj;
        assert!((s.t - recon).abs() <= 1e-10 * s.t.abs().max(1e-300));
    }

    #[test]
    fn four_particles_have_no_disjoint_channel() {
        for seed in 0..20 {
            let cfg = small_system(0.3, 4, 2.5, 100 + seed);
            let s = sample_estimator(&cfg);
            assert_eq!(s.t_disj, 0.0);
        }
    }

    #[test]
    fn detailed_balance_on_enumerated_moves() {
        let cfg = small_system(0.3, 5, 3.0, 13);
        let mut rng = Pcg64Mcg::seed_from_u64(21);
        let lp = cfg.log_psi();
        for _ in 0..200 {
            let i = (rng.random::<f64>() * 5.0) as usize % 5;
            let prop = cfg.geometry().wrap(
                cfg.position(i)
                    + Vec3::new(
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                    ),
            );
            let d = cfg.move_delta(i, prop);
            if !d.admissible {
                continue;
            }
            // pi(c) A(c -> c') == pi(c') A(c' -> c) with pi = exp(2 ln psi)
            let fwd = (2.0 * lp).exp() * (2.0 * d.delta_log_psi).exp().min(1.0);
            let bwd = (2.0 * (lp + d.delta_log_psi)).exp() * (-2.0 * d.delta_log_psi).exp().min(1.0);
            assert!((fwd - bwd).abs() <= 1e-12 * fwd.abs().max(1e-300));
        }
    }

    #[test]
    fn merge_is_weighted_and_order_free() {
        let cfg = small_system(0.25, 10, 4.0, 2);
        let mc =
            McParams { sweeps: 300, burn_in: 50, step: 1.0, seed: 17, chains: 3, thinning: 1 };
        let a: Vec<ChainAccumulators> =
            (0..3).map(|i| run_chain(&cfg, &mc, i).unwrap()).collect();
        let m1 = MergedAccumulators::from_chains(vec![a[0].clone(), a[1].clone()])
            .merge(MergedAccumulators::from_chains(vec![a[2].clone()]));
        let m2 = MergedAccumulators::from_chains(vec![a[2].clone()])
            .merge(MergedAccumulators::from_chains(vec![a[1].clone(), a[0].clone()]));
        assert_eq!(
            m1.channel_mean(Channel::Total).to_bits(),
            m2.channel_mean(Channel::Total).to_bits()
        );
        // weighted mean equals the manual combination
        let total: u64 = a.iter().map(|c| c.samples).sum();
        let manual: f64 = a
            .iter()
            .map(|c| c.channel_mean(Channel::Total) * c.samples as f64 / total as f64)
            .sum();
        assert!((m1.channel_mean(Channel::Total) - manual).abs() <= 1e-12 * manual.abs().max(1.0));
    }

    #[test]
    fn blocking_iid_series() {
        let mut rng = Pcg64Mcg::seed_from_u64(8);
        let n = 1 << 14;
        let series: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>().max(1e-16);
                let v: f64 = rng.random();
                (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
            })
            .collect();
        let r = blocking_error(&series).unwrap();
        let expect = (1.0 / n as f64).sqrt();
        assert!(
            (r.stderr - expect).abs() < 0.10 * expect,
            "stderr {} vs iid {expect}",
            r.stderr
        );
    }

    #[test]
    fn blocking_constant_series() {
        let series = vec![4.2; 1024];
        let r = blocking_error(&series).unwrap();
        assert_eq!(r.mean, 4.2);
        assert_eq!(r.stderr, 0.0);
    }

    #[test]
    fn blocking_ar1_series() {
        let phi: f64 = 0.9;
        let mut rng = Pcg64Mcg::seed_from_u64(30);
        let n = 1 << 17;
        let mut x = 0.0;
        let scale = (1.0 - phi * phi).sqrt();
        let series: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>().max(1e-16);
                let v: f64 = rng.random();
                let g = (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos();
                x = phi * x + scale * g;
                x
            })
            .collect();
        let r = blocking_error(&series).unwrap();
        // effective-sample-size inflation (1 + phi) / (1 - phi) = 19
        let expect = ((1.0 + phi) / (1.0 - phi) / n as f64).sqrt();
        assert!(
            (r.stderr - expect).abs() < 0.25 * expect,
            "stderr {} vs ar1 {expect} (plateau level {}, found {})",
            r.stderr,
            r.plateau_level,
            r.plateau_found
        );
        assert!(r.plateau_found);
    }

    #[test]
    fn blocking_short_series_rejected() {
        assert!(matches!(blocking_error(&[1.0; 8]), Err(McError::SeriesTooShort(8))));
    }

    #[test]
    fn tune_step_free_gas_returns_max() {
        let p = ScatteringProfile::new(0.0, 1.0, CutoffProfile::SmoothExponential).unwrap();
        let geom = BoxGeometry::periodic(8.0);
        let cfg = Configuration::from_lattice(8, geom, p).unwrap();
        let mc = McParams { sweeps: 100, burn_in: 0, step: 1.0, seed: 3, chains: 1, thinning: 1 };
        let (step, warn) = tune_step(&cfg, &mc, 0.5).unwrap();
        assert_eq!(step, 4.0);
        assert!(warn);
    }

    #[test]
    fn tune_step_deterministic_and_in_band() {
        let cfg = small_system(0.45, 40, 3.6, 19);
        let mc = McParams { sweeps: 100, burn_in: 0, step: 1.0, seed: 3, chains: 1, thinning: 1 };
        let (s1, w1) = tune_step(&cfg, &mc, 0.5).unwrap();
        let (s2, _) = tune_step(&cfg, &mc, 0.5).unwrap();
        assert_eq!(s1.to_bits(), s2.to_bits());
        if !w1 {
            let acc = pilot_acceptance(&cfg, &mc, s1, 512);
            assert!((acc - 0.5).abs() < 0.1, "acceptance {acc}");
        }
    }

    #[test]
    fn bounded_series_rethins_deterministically() {
        let mut s = BoundedSeries::new(16);
        for i in 0..1000u64 {
            s.push(SeriesRow {
                sweep: i,
                t: i as f64,
                t_diag: 0.0,
                t_share: 0.0,
                t_disj: 0.0,
                acceptance: 1.0,
            });
        }
        assert!(s.rows.len() <= 16);
        assert!(s.stride() >= 64);
        for w in s.rows.windows(2) {
            assert_eq!(w[1].sweep - w[0].sweep, s.stride());
        }
    }
}
