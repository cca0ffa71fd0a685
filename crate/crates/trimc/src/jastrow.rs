//! N-particle configurations and the triple-product trial state.
//!
//! The trial state is a product of truncated scattering factors over all
//! unordered particle triples. A triple only contributes when its
//! hyperradius is below ell, which forces all three pair distances below
//! ell_tilde; the cell grid exploits that to enumerate candidate triples in
//! O(N) at fixed density. Hard-core violating configurations are
//! unrepresentable after construction: every mutation goes through the
//! admissibility gate of `move_delta`.

use crate::metric::{hyperradius_from_sq, Boundary, BoxGeometry, Vec3, Vec6, SQRT_2};
use crate::scattering::ScatteringProfile;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JastrowError {
    #[error("lattice spacing {spacing} must exceed twice the hard-core radius {a}")]
    LatticeTooDense { spacing: f64, a: f64 },
    #[error("position {index} is not finite or lies outside the box")]
    BadPosition { index: usize },
    #[error("hard-core violation by triple ({i}, {j}, {k})")]
    HardCoreViolation { i: u32, j: u32, k: u32 },
    #[error("periodic boxes need ell_tilde < L/2, got ell_tilde = {ell_tilde}, L = {l}")]
    BoxTooSmall { ell_tilde: f64, l: f64 },
    #[error("malformed configuration table at line {line}: {reason}")]
    BadTable { line: usize, reason: String },
}

/// One active triple: indices i < j < k, the factor value, and the
/// per-particle gradients of ln f. Gradients are zero when f = 1 (such
/// triples are never stored).
#[derive(Clone, Copy, Debug)]
pub struct TripleTerm {
    pub i: u32,
    pub j: u32,
    pub k: u32,
    pub f: f64,
    pub glog_i: Vec3,
    pub glog_j: Vec3,
    pub glog_k: Vec3,
}

#[derive(Clone, Copy, Debug)]
pub struct MoveDelta {
    pub delta_log_psi: f64,
    pub admissible: bool,
}

enum TripleEval {
    Violated,
    Inactive,
    Active { f: f64, hyp: f64, v: Vec6 },
}

enum RadialClass {
    Violated,
    Inactive,
    Active(f64),
}

/// Squared pair distances of a small grid-less system.
#[derive(Clone, Copy, Debug)]
pub struct PairCache {
    d2: [[f64; 8]; 8],
}

/// Linked-cell acceleration structure: one head index per cell, one next
/// index per particle. Cell count is capped so the head array stays
/// cache resident; occupancy rather than cell side drives the cap.
#[derive(Clone, Debug)]
struct CellGrid {
    dim: usize,
    inv_cell: f64,
    head: Vec<i32>,
    next: Vec<i32>,
}

impl CellGrid {
    fn cell_of(&self, p: Vec3) -> (usize, usize, usize) {
        let f = |c: f64| {
            let idx = (c * self.inv_cell) as isize;
            idx.clamp(0, self.dim as isize - 1) as usize
        };
        (f(p.x), f(p.y), f(p.z))
    }

    fn flat(&self, c: (usize, usize, usize)) -> usize {
        (c.0 * self.dim + c.1) * self.dim + c.2
    }

    fn insert(&mut self, idx: u32, p: Vec3) {
        let cell = self.flat(self.cell_of(p));
        self.next[idx as usize] = self.head[cell];
        self.head[cell] = idx as i32;
    }

    fn remove(&mut self, idx: u32, p: Vec3) {
        let cell = self.flat(self.cell_of(p));
        let mut cur = self.head[cell];
        if cur == idx as i32 {
            self.head[cell] = self.next[idx as usize];
            return;
        }
        while cur >= 0 {
            let nxt = self.next[cur as usize];
            if nxt == idx as i32 {
                self.next[cur as usize] = self.next[idx as usize];
                return;
            }
            cur = nxt;
        }
        unreachable!("particle missing from its cell chain");
    }
}

/// Ordered particle positions in a box, with the acceleration structure and
/// the scattering profile that defines the trial state.
#[derive(Clone, Debug)]
pub struct Configuration {
    positions: Vec<Vec3>,
    geom: BoxGeometry,
    profile: ScatteringProfile,
    gate: f64,
    inv_l: f64,
    periodic: bool,
    grid: Option<CellGrid>,
    /// per-particle gate neighbors, kept in sync by apply_move; present
    /// exactly when the grid is
    nbrs: Option<Vec<Vec<u32>>>,
    generation: u64,
}

/// Scratch buffers for the hot move and estimator paths; reuse across calls
/// to avoid allocations.
#[derive(Default)]
pub struct MoveScratch {
    nbrs: Vec<u32>,
    above: Vec<u32>,
}

impl Configuration {
    /// Particles on a simple cubic lattice; the spacing L / ceil(N^(1/3))
    /// must exceed 2a so the configuration is admissible by construction.
    pub fn from_lattice(
        n: usize,
        geom: BoxGeometry,
        profile: ScatteringProfile,
    ) -> Result<Self, JastrowError> {
        let m = (n as f64).cbrt().ceil().max(1.0) as usize;
        let spacing = geom.l / m as f64;
        if n >= 2 && spacing <= 2.0 * profile.a() {
            return Err(JastrowError::LatticeTooDense { spacing, a: profile.a() });
        }
        let mut positions = Vec::with_capacity(n);
        for idx in 0..n {
            let ix = idx % m;
            let iy = (idx / m) % m;
            let iz = idx / (m * m);
            positions.push(Vec3::new(
                (ix as f64 + 0.5) * spacing,
                (iy as f64 + 0.5) * spacing,
                (iz as f64 + 0.5) * spacing,
            ));
        }
        Self::from_positions(positions, geom, profile)
    }

    /// Wraps caller-provided positions; rejects out-of-box points and
    /// hard-core violating triples.
    pub fn from_positions(
        positions: Vec<Vec3>,
        geom: BoxGeometry,
        profile: ScatteringProfile,
    ) -> Result<Self, JastrowError> {
        if geom.boundary == Boundary::Periodic && profile.ell_tilde() >= geom.l / 2.0 {
            return Err(JastrowError::BoxTooSmall {
                ell_tilde: profile.ell_tilde(),
                l: geom.l,
            });
        }
        for (index, p) in positions.iter().enumerate() {
            if !p.is_finite() || !geom.contains(*p) {
                return Err(JastrowError::BadPosition { index });
            }
        }
        let gate = profile.ell_tilde().max(3f64.sqrt() * profile.a());
        let mut cfg = Configuration {
            positions,
            geom,
            profile,
            gate,
            inv_l: 1.0 / geom.l,
            periodic: geom.boundary == Boundary::Periodic,
            grid: None,
            nbrs: None,
            generation: 0,
        };
        cfg.grid = cfg.build_grid();
        if cfg.grid.is_some() {
            let mut sets = vec![Vec::new(); cfg.positions.len()];
            let mut buf = Vec::new();
            for i in 0..cfg.positions.len() {
                cfg.neighbors_into(cfg.positions[i], Some(i as u32), &mut buf);
                sets[i] = buf.clone();
            }
            cfg.nbrs = Some(sets);
        }
        if let Some((i, j, k)) = cfg.first_violation() {
            return Err(JastrowError::HardCoreViolation { i, j, k });
        }
        Ok(cfg)
    }

    fn build_grid(&self) -> Option<CellGrid> {
        let n = self.positions.len();
        let by_gate = (self.geom.l / self.gate).floor() as usize;
        // keep average occupancy near 1/4 so candidate lists stay short
        // while the head array stays small enough to live in cache
        let by_count = ((4 * n) as f64).cbrt().ceil() as usize;
        let dim = by_gate.min(by_count).min(32);
        if n < 32 || dim < 4 {
            return None;
        }
        let mut grid = CellGrid {
            dim,
            inv_cell: dim as f64 / self.geom.l,
            head: vec![-1; dim * dim * dim],
            next: vec![-1; n],
        };
        for (idx, p) in self.positions.iter().enumerate() {
            grid.insert(idx as u32, *p);
        }
        Some(grid)
    }

    /// Minimum-image pair difference through the precomputed 1/L; raw
    /// difference in open mode.
    #[inline]
    fn diff(&self, a: Vec3, b: Vec3) -> Vec3 {
        let d = a - b;
        if !self.periodic {
            return d;
        }
        let l = self.geom.l;
        let inv = self.inv_l;
        Vec3::new(
            d.x - l * (d.x * inv + 0.5).floor(),
            d.y - l * (d.y * inv + 0.5).floor(),
            d.z - l * (d.z * inv + 0.5).floor(),
        )
    }

    /// Wraps a proposal into [0, L)^3 (periodic mode), identity otherwise.
    #[inline]
    pub fn wrap(&self, p: Vec3) -> Vec3 {
        if !self.periodic {
            return p;
        }
        let l = self.geom.l;
        let inv = self.inv_l;
        let w = |c: f64| {
            let x = c - l * (c * inv).floor();
            if x >= l {
                x - l
            } else {
                x
            }
        };
        Vec3::new(w(p.x), w(p.y), w(p.z))
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> Vec3 {
        self.positions[i]
    }

    pub fn geometry(&self) -> &BoxGeometry {
        &self.geom
    }

    pub fn profile(&self) -> &ScatteringProfile {
        &self.profile
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn uses_cell_grid(&self) -> bool {
        self.grid.is_some()
    }

    pub fn has_neighbor_table(&self) -> bool {
        self.nbrs.is_some()
    }

    /// Particles within the gate radius of `pos` (pair distance
    /// <= max(ell_tilde, sqrt(3) a), inclusive), excluding `exclude`.
    fn neighbors_into(&self, pos: Vec3, exclude: Option<u32>, out: &mut Vec<u32>) {
        out.clear();
        let gate2 = self.gate * self.gate;
        let excl = exclude.map_or(u32::MAX, |e| e);
        match &self.grid {
            None => {
                for (idx, p) in self.positions.iter().enumerate() {
                    if idx as u32 == excl {
                        continue;
                    }
                    if self.diff(pos, *p).norm2() <= gate2 {
                        out.push(idx as u32);
                    }
                }
            }
            Some(grid) => {
                let dim = grid.dim as isize;
                let (cx, cy, cz) = grid.cell_of(pos);
                // wrap (or clip) each axis offset once; avoids per-cell
                // integer divisions in the stencil walk
                let mut axis = [[-1isize; 3]; 3];
                for (a, &c) in [cx, cy, cz].iter().enumerate() {
                    for (o, d) in (-1isize..=1).enumerate() {
                        let mut v = c as isize + d;
                        if self.periodic {
                            if v < 0 {
                                v += dim;
                            } else if v >= dim {
                                v -= dim;
                            }
                        } else if v < 0 || v >= dim {
                            v = -1;
                        }
                        axis[a][o] = v;
                    }
                }
                for &x in &axis[0] {
                    if x < 0 {
                        continue;
                    }
                    for &y in &axis[1] {
                        if y < 0 {
                            continue;
                        }
                        for &z in &axis[2] {
                            if z < 0 {
                                continue;
                            }
                            let flat = grid.flat((x as usize, y as usize, z as usize));
                            let mut cur = grid.head[flat];
                            while cur >= 0 {
                                let idx = cur as u32;
                                cur = grid.next[cur as usize];
                                if idx == excl {
                                    continue;
                                }
                                let d2 =
                                    self.diff(pos, self.positions[idx as usize]).norm2();
                                if d2 <= gate2 {
                                    out.push(idx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Evaluates the triple with pivot at `pos_i` (playing particle `i`)
    /// against particles j and k at their current positions.
    fn eval_triple_at(&self, pos_i: Vec3, j: u32, k: u32) -> TripleEval {
        let xj = self.positions[j as usize];
        let xk = self.positions[k as usize];
        let dij = self.diff(pos_i, xj);
        let dik = self.diff(pos_i, xk);
        let djk = self.diff(xj, xk);
        self.classify_triple(hyperradius_from_sq(dij.norm2(), dik.norm2(), djk.norm2()), || {
            Vec6::new(dij, dik)
        })
    }

    /// Variant with the squared pair distances already at hand; the 6D
    /// vector is rebuilt only for active triples.
    fn eval_triple_given_sq(
        &self,
        i: usize,
        j: usize,
        k: usize,
        dij2: f64,
        dik2: f64,
        djk2: f64,
    ) -> TripleEval {
        self.classify_triple(hyperradius_from_sq(dij2, dik2, djk2), || {
            Vec6::new(
                self.diff(self.positions[i], self.positions[j]),
                self.diff(self.positions[i], self.positions[k]),
            )
        })
    }

    #[inline]
    fn classify_triple(&self, hyp: f64, make_v: impl FnOnce() -> Vec6) -> TripleEval {
        match self.classify_radial(hyp) {
            RadialClass::Violated => TripleEval::Violated,
            RadialClass::Inactive => TripleEval::Inactive,
            RadialClass::Active(f) => TripleEval::Active { f, hyp, v: make_v() },
        }
    }

    /// All triples with f < 1, each reported once (pivot = smallest index).
    pub fn active_triples(&self) -> Vec<TripleTerm> {
        let mut out = Vec::new();
        self.active_triples_into(&mut out, &mut MoveScratch::default());
        out
    }

    /// Allocation-free variant of [`Self::active_triples`] for hot loops.
    pub fn active_triples_into(&self, out: &mut Vec<TripleTerm>, scratch: &mut MoveScratch) {
        out.clear();
        if self.grid.is_none() && self.positions.len() <= 8 {
            // cache the pair distances once; triples rarely pass the gate
            let n = self.positions.len();
            let gate2 = self.gate * self.gate;
            let mut d2 = [[0.0f64; 8]; 8];
            let mut near = [[false; 8]; 8];
            for p in 0..n {
                for q in p + 1..n {
                    let v = self.diff(self.positions[p], self.positions[q]).norm2();
                    d2[p][q] = v;
                    near[p][q] = v <= gate2;
                }
            }
            for i in 0..n {
                for j in i + 1..n {
                    if !near[i][j] {
                        continue;
                    }
                    for k in j + 1..n {
                        if !near[i][k] || !near[j][k] {
                            continue;
                        }
                        if let TripleEval::Active { f, hyp, v } =
                            self.eval_triple_given_sq(i, j, k, d2[i][j], d2[i][k], d2[j][k])
                        {
                            let g = self.profile.grad_f_ell_at(v, hyp);
                            let inv_f = 1.0 / f;
                            out.push(TripleTerm {
                                i: i as u32,
                                j: j as u32,
                                k: k as u32,
                                f,
                                glog_i: (g.grad6.u + g.grad6.v) * inv_f,
                                glog_j: -g.grad6.u * inv_f,
                                glog_k: -g.grad6.v * inv_f,
                            });
                        }
                    }
                }
            }
            return;
        }
        for i in 0..self.positions.len() as u32 {
            self.neighbors_into(self.positions[i as usize], Some(i), &mut scratch.nbrs);
            // only j, k above the pivot so each triple appears once
            scratch.above.clear();
            scratch.above.extend(scratch.nbrs.iter().copied().filter(|&j| j > i));
            for aj in 0..scratch.above.len() {
                let j0 = scratch.above[aj];
                for &k0 in &scratch.above[aj + 1..] {
                    let (j, k) = if j0 < k0 { (j0, k0) } else { (k0, j0) };
                    if let TripleEval::Active { f, hyp, v } =
                        self.eval_triple_at(self.positions[i as usize], j, k)
                    {
                        let g = self.profile.grad_f_ell_at(v, hyp);
                        let inv_f = 1.0 / f;
                        out.push(TripleTerm {
                            i,
                            j,
                            k,
                            f,
                            glog_i: (g.grad6.u + g.grad6.v) * inv_f,
                            glog_j: -g.grad6.u * inv_f,
                            glog_k: -g.grad6.v * inv_f,
                        });
                    }
                }
            }
        }
    }

    /// ln of the trial state: sum of ln f over active triples, 0 when there
    /// are none. A hard-core violating triple yields -inf; admissible
    /// configurations never produce one.
    pub fn log_psi(&self) -> f64 {
        let mut sum = 0.0;
        let mut nbrs = Vec::new();
        for i in 0..self.positions.len() as u32 {
            self.neighbors_into(self.positions[i as usize], Some(i), &mut nbrs);
            let above: Vec<u32> = nbrs.iter().copied().filter(|&j| j > i).collect();
            for (aj, &j) in above.iter().enumerate() {
                for &k in &above[aj + 1..] {
                    match self.eval_triple_at(self.positions[i as usize], j, k) {
                        TripleEval::Active { f, .. } => sum += f.ln(),
                        TripleEval::Violated => return f64::NEG_INFINITY,
                        TripleEval::Inactive => {}
                    }
                }
            }
        }
        sum
    }

    /// Gradient of ln psi with respect to particle i, accumulated with
    /// compensated summation.
    pub fn grad_log_psi(&self, i: usize) -> Vec3 {
        let mut nbrs = Vec::new();
        self.neighbors_into(self.positions[i], Some(i as u32), &mut nbrs);
        let mut sum = KahanVec3::default();
        for (aj, &p) in nbrs.iter().enumerate() {
            for &q in &nbrs[aj + 1..] {
                if let TripleEval::Active { f, hyp, v } =
                    self.eval_triple_at(self.positions[i], p, q)
                {
                    let g = self.profile.grad_f_ell_at(v, hyp);
                    sum.add((g.grad6.u + g.grad6.v) * (1.0 / f));
                }
            }
        }
        sum.value()
    }

    /// Log-weight change and admissibility of moving particle i to
    /// `proposal`, touching only triples that contain i.
    pub fn move_delta(&self, i: usize, proposal: Vec3) -> MoveDelta {
        let mut scratch = MoveScratch::default();
        self.move_delta_with(i, proposal, &mut scratch)
    }

    pub fn move_delta_with(
        &self,
        i: usize,
        proposal: Vec3,
        scratch: &mut MoveScratch,
    ) -> MoveDelta {
        debug_assert!(self.geom.contains(proposal));
        let iu = i as u32;
        if self.grid.is_none() && self.positions.len() <= 8 {
            // stack-allocated gate prefilter; triples rarely survive it
            let n = self.positions.len();
            let gate2 = self.gate * self.gate;
            let mut near_new = [false; 8];
            let mut near_old = [false; 8];
            let mut any_new = false;
            let mut any_old = false;
            let cur = self.positions[i];
            for (p, xp) in self.positions.iter().enumerate() {
                if p == i {
                    continue;
                }
                near_new[p] = self.diff(proposal, *xp).norm2() <= gate2;
                near_old[p] = self.diff(cur, *xp).norm2() <= gate2;
                any_new |= near_new[p];
                any_old |= near_old[p];
            }
            if !any_new && !any_old {
                return MoveDelta { delta_log_psi: 0.0, admissible: true };
            }
            let mut new_sum = 0.0;
            let mut old_sum = 0.0;
            for p in 0..n {
                if p == i {
                    continue;
                }
                for q in p + 1..n {
                    if q == i {
                        continue;
                    }
                    if near_new[p] && near_new[q] {
                        match self.eval_triple_at(proposal, p as u32, q as u32) {
                            TripleEval::Active { f, .. } => new_sum += f.ln(),
                            TripleEval::Violated => {
                                return MoveDelta {
                                    delta_log_psi: f64::NEG_INFINITY,
                                    admissible: false,
                                }
                            }
                            TripleEval::Inactive => {}
                        }
                    }
                    if near_old[p] && near_old[q] {
                        if let TripleEval::Active { f, .. } =
                            self.eval_triple_at(cur, p as u32, q as u32)
                        {
                            old_sum += f.ln();
                        }
                    }
                }
            }
            return MoveDelta { delta_log_psi: new_sum - old_sum, admissible: true };
        }
        // triples containing i at the proposed position
        let mut new_sum = 0.0;
        self.neighbors_into(proposal, Some(iu), &mut scratch.nbrs);
        for aj in 0..scratch.nbrs.len() {
            let p = scratch.nbrs[aj];
            for &q in &scratch.nbrs[aj + 1..] {
                match self.eval_triple_at(proposal, p, q) {
                    TripleEval::Active { f, .. } => new_sum += f.ln(),
                    TripleEval::Violated => {
                        return MoveDelta { delta_log_psi: f64::NEG_INFINITY, admissible: false }
                    }
                    TripleEval::Inactive => {}
                }
            }
        }
        // triples containing i at the current position
        let mut old_sum = 0.0;
        self.neighbors_into(self.positions[i], Some(iu), &mut scratch.nbrs);
        for aj in 0..scratch.nbrs.len() {
            let p = scratch.nbrs[aj];
            for &q in &scratch.nbrs[aj + 1..] {
                if let TripleEval::Active { f, .. } =
                    self.eval_triple_at(self.positions[i], p, q)
                {
                    old_sum += f.ln();
                }
            }
        }
        MoveDelta { delta_log_psi: new_sum - old_sum, admissible: true }
    }

    /// Pair-distance cache for grid-less systems of at most 8 particles;
    /// the chain kernel keeps it in sync across accepted moves. Squared
    /// distances are argument-order independent, so the cached values are
    /// bit-identical to fresh evaluation.
    pub fn pair_cache(&self) -> Option<PairCache> {
        let n = self.positions.len();
        if self.grid.is_some() || n > 8 {
            return None;
        }
        let mut d2 = [[0.0; 8]; 8];
        for p in 0..n {
            for q in p + 1..n {
                let v = self.diff(self.positions[p], self.positions[q]).norm2();
                d2[p][q] = v;
                d2[q][p] = v;
            }
        }
        Some(PairCache { d2 })
    }

    /// `move_delta` against the cached old distances; also returns the new
    /// distance row so an accepted move can refresh the cache.
    pub fn move_delta_cached(
        &self,
        i: usize,
        proposal: Vec3,
        cache: &PairCache,
    ) -> (MoveDelta, [f64; 8]) {
        let n = self.positions.len();
        let gate2 = self.gate * self.gate;
        let mut row = [f64::INFINITY; 8];
        let mut any_new = false;
        let mut any_old = false;
        for p in 0..n {
            if p == i {
                continue;
            }
            let v = self.diff(proposal, self.positions[p]).norm2();
            row[p] = v;
            any_new |= v <= gate2;
            any_old |= cache.d2[i][p] <= gate2;
        }
        if !any_new && !any_old {
            return (MoveDelta { delta_log_psi: 0.0, admissible: true }, row);
        }
        let mut new_sum = 0.0;
        let mut old_sum = 0.0;
        for p in 0..n {
            if p == i {
                continue;
            }
            for q in p + 1..n {
                if q == i {
                    continue;
                }
                if row[p] <= gate2 && row[q] <= gate2 {
                    let hyp = hyperradius_from_sq(row[p], row[q], cache.d2[p][q]);
                    match self.classify_radial(hyp) {
                        RadialClass::Active(f) => new_sum += f.ln(),
                        RadialClass::Violated => {
                            return (
                                MoveDelta {
                                    delta_log_psi: f64::NEG_INFINITY,
                                    admissible: false,
                                },
                                row,
                            )
                        }
                        RadialClass::Inactive => {}
                    }
                }
                if cache.d2[i][p] <= gate2 && cache.d2[i][q] <= gate2 {
                    let hyp =
                        hyperradius_from_sq(cache.d2[i][p], cache.d2[i][q], cache.d2[p][q]);
                    if let RadialClass::Active(f) = self.classify_radial(hyp) {
                        old_sum += f.ln();
                    }
                }
            }
        }
        (MoveDelta { delta_log_psi: new_sum - old_sum, admissible: true }, row)
    }

    /// Commits a cached move and refreshes the distance row of particle i.
    pub fn apply_move_cached(
        &mut self,
        i: usize,
        new_pos: Vec3,
        cache: &mut PairCache,
        row: &[f64; 8],
    ) {
        self.apply_move(i, new_pos);
        let n = self.positions.len();
        for p in 0..n {
            if p == i {
                continue;
            }
            cache.d2[i][p] = row[p];
            cache.d2[p][i] = row[p];
        }
    }

    /// Active triples read off the pair cache; bit-identical to
    /// [`Self::active_triples`] for systems the cache supports.
    pub fn active_triples_cached(&self, cache: &PairCache, out: &mut Vec<TripleTerm>) {
        out.clear();
        let n = self.positions.len();
        let gate2 = self.gate * self.gate;
        for i in 0..n {
            for j in i + 1..n {
                if cache.d2[i][j] > gate2 {
                    continue;
                }
                for k in j + 1..n {
                    if cache.d2[i][k] > gate2 || cache.d2[j][k] > gate2 {
                        continue;
                    }
                    if let TripleEval::Active { f, hyp, v } = self.eval_triple_given_sq(
                        i,
                        j,
                        k,
                        cache.d2[i][j],
                        cache.d2[i][k],
                        cache.d2[j][k],
                    ) {
                        let g = self.profile.grad_f_ell_at(v, hyp);
                        let inv_f = 1.0 / f;
                        out.push(TripleTerm {
                            i: i as u32,
                            j: j as u32,
                            k: k as u32,
                            f,
                            glog_i: (g.grad6.u + g.grad6.v) * inv_f,
                            glog_j: -g.grad6.u * inv_f,
                            glog_k: -g.grad6.v * inv_f,
                        });
                    }
                }
            }
        }
    }

    #[inline]
    fn classify_radial(&self, hyp: f64) -> RadialClass {
        if hyp <= SQRT_2 * self.profile.a() {
            return RadialClass::Violated;
        }
        if hyp >= self.profile.ell() {
            return RadialClass::Inactive;
        }
        let f = self.profile.truncated_radial(hyp).f_ell;
        if f >= 1.0 {
            RadialClass::Inactive
        } else if f <= 0.0 {
            RadialClass::Violated
        } else {
            RadialClass::Active(f)
        }
    }

    /// Commits a move; the caller is responsible for having checked
    /// admissibility through `move_delta`.
    pub fn apply_move(&mut self, i: usize, new_pos: Vec3) {
        if self.nbrs.is_some() {
            let mut fresh = Vec::new();
            self.neighbors_into(new_pos, Some(i as u32), &mut fresh);
            self.apply_move_tabled(i, new_pos, &fresh);
        } else {
            self.commit_position(i, new_pos);
        }
    }

    /// Commit variant for the chain kernel: consumes the neighbor list a
    /// preceding `move_delta_tabled` left in the scratch buffer.
    pub fn apply_move_from_scratch(&mut self, i: usize, new_pos: Vec3, scratch: &mut MoveScratch) {
        let nbrs = std::mem::take(&mut scratch.nbrs);
        self.apply_move_tabled(i, new_pos, &nbrs);
        scratch.nbrs = nbrs;
    }

    /// Commit variant for the chain kernel: the caller supplies the gate
    /// neighbors of the new position (as produced by `move_delta_tabled`),
    /// saving the lookup.
    pub fn apply_move_tabled(&mut self, i: usize, new_pos: Vec3, new_nbrs: &[u32]) {
        if let Some(sets) = &mut self.nbrs {
            let old = std::mem::take(&mut sets[i]);
            for &j in &old {
                let set = &mut sets[j as usize];
                if let Some(at) = set.iter().position(|&x| x == i as u32) {
                    set.swap_remove(at);
                }
            }
            for &j in new_nbrs {
                sets[j as usize].push(i as u32);
            }
            let mut mine = old;
            mine.clear();
            mine.extend_from_slice(new_nbrs);
            sets[i] = mine;
        }
        self.commit_position(i, new_pos);
    }

    fn commit_position(&mut self, i: usize, new_pos: Vec3) {
        if let Some(grid) = &mut self.grid {
            let old_cell = grid.cell_of(self.positions[i]);
            let new_cell = grid.cell_of(new_pos);
            if old_cell != new_cell {
                grid.remove(i as u32, self.positions[i]);
                grid.insert(i as u32, new_pos);
            }
        }
        self.positions[i] = new_pos;
        self.generation += 1;
    }

    /// `move_delta` for the chain kernel: old-side triples come from the
    /// neighbor table, the new side from one grid lookup whose result is
    /// left in `scratch.nbrs` for `apply_move_tabled`.
    pub fn move_delta_tabled(
        &self,
        i: usize,
        proposal: Vec3,
        scratch: &mut MoveScratch,
    ) -> Option<MoveDelta> {
        let sets = self.nbrs.as_ref()?;
        debug_assert!(self.geom.contains(proposal));
        let iu = i as u32;
        self.neighbors_into(proposal, Some(iu), &mut scratch.nbrs);
        let mut new_sum = 0.0;
        for aj in 0..scratch.nbrs.len() {
            let p = scratch.nbrs[aj];
            for &q in &scratch.nbrs[aj + 1..] {
                match self.eval_triple_at(proposal, p, q) {
                    TripleEval::Active { f, .. } => new_sum += f.ln(),
                    TripleEval::Violated => {
                        return Some(MoveDelta {
                            delta_log_psi: f64::NEG_INFINITY,
                            admissible: false,
                        })
                    }
                    TripleEval::Inactive => {}
                }
            }
        }
        let mine = &sets[i];
        let mut old_sum = 0.0;
        for aj in 0..mine.len() {
            let p = mine[aj];
            for &q in &mine[aj + 1..] {
                if let TripleEval::Active { f, .. } =
                    self.eval_triple_at(self.positions[i], p, q)
                {
                    old_sum += f.ln();
                }
            }
        }
        Some(MoveDelta { delta_log_psi: new_sum - old_sum, admissible: true })
    }

    /// Active triples read off the neighbor table (grid systems only).
    pub fn active_triples_tabled(&self, out: &mut Vec<TripleTerm>) -> bool {
        let Some(sets) = self.nbrs.as_ref() else {
            return false;
        };
        out.clear();
        for (i, set) in sets.iter().enumerate() {
            let iu = i as u32;
            for (aj, &j0) in set.iter().enumerate() {
                if j0 <= iu {
                    continue;
                }
                for &k0 in &set[aj + 1..] {
                    if k0 <= iu {
                        continue;
                    }
                    let (j, k) = if j0 < k0 { (j0, k0) } else { (k0, j0) };
                    if let TripleEval::Active { f, hyp, v } =
                        self.eval_triple_at(self.positions[i], j, k)
                    {
                        let g = self.profile.grad_f_ell_at(v, hyp);
                        let inv_f = 1.0 / f;
                        out.push(TripleTerm {
                            i: iu,
                            j,
                            k,
                            f,
                            glog_i: (g.grad6.u + g.grad6.v) * inv_f,
                            glog_j: -g.grad6.u * inv_f,
                            glog_k: -g.grad6.v * inv_f,
                        });
                    }
                }
            }
        }
        true
    }

    /// Rebuilds the neighbor table from scratch and compares; for the
    /// consistency checks of the chain kernel.
    pub fn neighbor_table_consistent(&self) -> bool {
        let Some(sets) = self.nbrs.as_ref() else {
            return true;
        };
        let mut buf = Vec::new();
        for i in 0..self.positions.len() {
            self.neighbors_into(self.positions[i], Some(i as u32), &mut buf);
            let mut expect = buf.clone();
            expect.sort_unstable();
            let mut got = sets[i].clone();
            got.sort_unstable();
            if expect != got {
                return false;
            }
        }
        true
    }

    /// First hard-core violating triple, if any.
    pub fn first_violation(&self) -> Option<(u32, u32, u32)> {
        let mut nbrs = Vec::new();
        for i in 0..self.positions.len() as u32 {
            self.neighbors_into(self.positions[i as usize], Some(i), &mut nbrs);
            let above: Vec<u32> = nbrs.iter().copied().filter(|&j| j > i).collect();
            for (aj, &j) in above.iter().enumerate() {
                for &k in &above[aj + 1..] {
                    if let TripleEval::Violated =
                        self.eval_triple_at(self.positions[i as usize], j, k)
                    {
                        return Some((i, j.min(k), j.max(k)));
                    }
                }
            }
        }
        None
    }

    /// Bracket check for the pair (0, 1): the partial product of the squared
    /// factors that couple particles 0 and 1 to the rest lies between
    /// 1 - sum v_{0j} - sum v_{1j} - sum u_{01k} and 1.
    pub fn sandwich_sample(&self) -> Option<SandwichSample> {
        let n = self.n();
        if n < 3 {
            return None;
        }
        let x0 = self.positions[0];
        let x1 = self.positions[1];
        let mut product = 1.0;
        for j in 2..n {
            for k in (j + 1)..n {
                for pivot in [x0, x1] {
                    if let TripleEval::Active { f, .. } =
                        self.eval_triple_at(pivot, j as u32, k as u32)
                    {
                        product *= f * f;
                    }
                }
            }
        }
        let mut lower = 1.0;
        for k in 2..n {
            if let TripleEval::Active { f, .. } = self.eval_triple_at(x0, 1, k as u32) {
                product *= f * f;
            }
            let d01 = self.geom.pair_diff(x0, x1);
            let d0k = self.geom.pair_diff(x0, self.positions[k]);
            let hyp = hyperradius_from_sq(
                d01.norm2(),
                d0k.norm2(),
                self.geom.pair_diff(x1, self.positions[k]).norm2(),
            );
            lower -= self.profile.truncated_radial(hyp).u_ell;
        }
        for j in 2..n {
            let (_, v0) = self.profile.g_and_v(self.geom.pair_diff(x0, self.positions[j]));
            let (_, v1) = self.profile.g_and_v(self.geom.pair_diff(x1, self.positions[j]));
            lower -= v0 + v1;
        }
        Some(SandwichSample { lower, product, upper: 1.0 })
    }

    /// Plain-text table, one particle per line, three floats.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.positions {
            s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
        }
        s
    }

    pub fn parse_text(table: &str) -> Result<Vec<Vec3>, JastrowError> {
        let mut out = Vec::new();
        for (lineno, line) in table.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let mut next = |reason: &str| -> Result<f64, JastrowError> {
                parts
                    .next()
                    .ok_or_else(|| JastrowError::BadTable {
                        line: lineno + 1,
                        reason: reason.to_string(),
                    })?
                    .parse::<f64>()
                    .map_err(|e| JastrowError::BadTable { line: lineno + 1, reason: e.to_string() })
            };
            let x = next("missing x")?;
            let y = next("missing y")?;
            let z = next("missing z")?;
            out.push(Vec3::new(x, y, z));
        }
        Ok(out)
    }
}

/// Randomized check of the pair-decoupling bracket over admissible
/// configurations with 3 to `n_max` particles.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SandwichReport {
    pub configurations: u64,
    pub violations: u64,
    pub worst_margin: f64,
    pub pass: bool,
}

pub fn sandwich_suite(
    p: &ScatteringProfile,
    n_max: usize,
    configurations: u64,
    seed: u64,
) -> SandwichReport {
    use rand::{RngExt, SeedableRng};
    let l = 5.0 * p.ell_tilde().max(4.0 * p.a());
    let geom = crate::metric::BoxGeometry::open(l);
    let mut rng = rand_pcg::Pcg64Mcg::seed_from_u64(seed ^ 0x5a5d);
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    let mut done = 0;
    while done < configurations {
        let n = 3 + (rng.random::<f64>() * (n_max.max(3) - 2) as f64) as usize;
        let pos: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random::<f64>() * l,
                    rng.random::<f64>() * l,
                    rng.random::<f64>() * l,
                )
            })
            .collect();
        let Ok(cfg) = Configuration::from_positions(pos, geom, *p) else {
            continue;
        };
        let s = cfg.sandwich_sample().unwrap();
        done += 1;
        worst = worst.min((s.product - s.lower).min(s.upper - s.product));
        if !s.holds() {
            violations += 1;
        }
    }
    SandwichReport {
        configurations: done,
        violations,
        worst_margin: worst,
        pass: violations == 0,
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SandwichSample {
    pub lower: f64,
    pub product: f64,
    pub upper: f64,
}

impl SandwichSample {
    pub fn holds(&self) -> bool {
        self.lower <= self.product + 1e-12 && self.product <= self.upper + 1e-12
    }
}

#[derive(Clone, Copy, Default)]
struct KahanVec3 {
    sum: Vec3,
    c: Vec3,
}

impl KahanVec3 {
    fn add(&mut self, x: Vec3) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(self) -> Vec3 {
        self.sum
    }
}

/// Brute-force reference implementations used by the test suites; these scan
/// all O(N^3) triples and never touch the cell grid.
pub mod reference {
    use super::*;

    fn eval(cfg: &Configuration, i: u32, j: u32, k: u32) -> TripleEval {
        cfg.eval_triple_at(cfg.positions[i as usize], j, k)
    }

    pub fn active_triples(cfg: &Configuration) -> Vec<TripleTerm> {
        let n = cfg.n() as u32;
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    if let TripleEval::Active { f, hyp, v } = eval(cfg, i, j, k) {
                        let g = cfg.profile.grad_f_ell_at(v, hyp);
                        let inv_f = 1.0 / f;
                        out.push(TripleTerm {
                            i,
                            j,
                            k,
                            f,
                            glog_i: (g.grad6.u + g.grad6.v) * inv_f,
                            glog_j: -g.grad6.u * inv_f,
                            glog_k: -g.grad6.v * inv_f,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn log_psi(cfg: &Configuration) -> f64 {
        let n = cfg.n() as u32;
        let mut sum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    match eval(cfg, i, j, k) {
                        TripleEval::Active { f, .. } => sum += f.ln(),
                        TripleEval::Violated => return f64::NEG_INFINITY,
                        TripleEval::Inactive => {}
                    }
                }
            }
        }
        sum
    }

    pub fn grad_log_psi(cfg: &Configuration, i: usize) -> Vec3 {
        let n = cfg.n() as u32;
        let iu = i as u32;
        let mut sum = Vec3::ZERO;
        for p in 0..n {
            if p == iu {
                continue;
            }
            for q in (p + 1)..n {
                if q == iu {
                    continue;
                }
                if let TripleEval::Active { f, hyp, v } =
                    cfg.eval_triple_at(cfg.positions[i], p, q)
                {
                    let g = cfg.profile.grad_f_ell_at(v, hyp);
                    sum = sum + (g.grad6.u + g.grad6.v) * (1.0 / f);
                }
            }
        }
        sum
    }

    pub fn move_delta(cfg: &Configuration, i: usize, proposal: Vec3) -> MoveDelta {
        let before = log_psi(cfg);
        let mut moved = cfg.clone();
        moved.positions[i] = proposal;
        let after = log_psi(&moved);
        if after == f64::NEG_INFINITY {
            MoveDelta { delta_log_psi: f64::NEG_INFINITY, admissible: false }
        } else {
            MoveDelta { delta_log_psi: after - before, admissible: true }
        }
    }
}
