//! User association and subchannel allocation for the terrestrial tier.
//!
//! Users are matched one-to-one with (cell, subchannel) units. A greedy pass
//! seeds every subchannel, after which matched units propose candidate
//! co-channel pairs ranked by an interference-aware score, each subchannel
//! admits the candidate that raises its weighted sum rate the most, and users
//! holding several offers keep the best one. When proposals dry up, any user
//! left out while a covering unit is still free is admitted along an
//! augmenting path, and remaining blocking pair-swaps are executed.

use crate::channel::{terrestrial_rate_unchecked, ChannelRealization, RadioParams};
use crate::error::{Error, Result};
use crate::scenario::{coverage_matrix, CoverageMatrix, Scenario};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Substitute for exact-zero squared channel gains in preference scores.
pub const GAIN_FLOOR: f64 = 1e-30;

/// Relative slack below which a utility change does not count as a gain.
pub const UTILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreferenceParams {
    /// Weight on the candidate's own link gain.
    pub rho1: f64,
    /// Weight on the interference the candidate causes at the proposer.
    pub rho2: f64,
    /// Value of one accessed user in the offloading objective.
    pub mu: f64,
}

impl Default for PreferenceParams {
    fn default() -> Self {
        Self { rho1: 1.0, rho2: 1.0, mu: 1.0 }
    }
}

impl PreferenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho1 >= 0.0 && self.rho2 >= 0.0) {
            return Err(Error::Config("preference exponents must be >= 0".into()));
        }
        if self.rho1 == 0.0 && self.rho2 == 0.0 {
            return Err(Error::Config("rho1 and rho2 cannot both be zero".into()));
        }
        if !self.mu.is_finite() {
            return Err(Error::Config("mu must be finite".into()));
        }
        Ok(())
    }
}

/// Partial bijection between users and (cell, subchannel) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MatchingRecord", try_from = "MatchingRecord")]
pub struct TerrestrialMatching {
    n_cells: usize,
    n_users: usize,
    k_subch: usize,
    /// Holder of unit `(m, k)` at `m * K + k`.
    unit_user: Vec<Option<usize>>,
    user_unit: Vec<Option<(usize, usize)>>,
    /// Cycles (greedy passes, proposal rounds, completion cycles) that
    /// admitted at least one user.
    pub rounds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchingRecord {
    n_cells: usize,
    n_users: usize,
    k_subch: usize,
    /// (user, cell, subchannel)
    pairs: Vec<(usize, usize, usize)>,
    unmatched_users: Vec<usize>,
    rounds: usize,
}

impl From<TerrestrialMatching> for MatchingRecord {
    fn from(t: TerrestrialMatching) -> Self {
        Self {
            n_cells: t.n_cells,
            n_users: t.n_users,
            k_subch: t.k_subch,
            pairs: t.pairs(),
            unmatched_users: t.unmatched_users().collect(),
            rounds: t.rounds,
        }
    }
}

impl TryFrom<MatchingRecord> for TerrestrialMatching {
    type Error = Error;
    fn try_from(r: MatchingRecord) -> Result<Self> {
        let mut t = TerrestrialMatching::empty(r.n_cells, r.n_users, r.k_subch);
        for (j, m, k) in r.pairs {
            t.assign(j, m, k)?;
        }
        let mut listed = r.unmatched_users;
        listed.sort_unstable();
        if listed != t.unmatched_users().collect::<Vec<_>>() {
            return Err(Error::Contract("unmatched user list disagrees with pairs".into()));
        }
        t.rounds = r.rounds;
        Ok(t)
    }
}

impl TerrestrialMatching {
    pub fn empty(n_cells: usize, n_users: usize, k_subch: usize) -> Self {
        Self {
            n_cells,
            n_users,
            k_subch,
            unit_user: vec![None; n_cells * k_subch],
            user_unit: vec![None; n_users],
            rounds: 0,
        }
    }

    pub fn for_scenario(s: &Scenario) -> Self {
        Self::empty(s.n_cells(), s.n_users(), s.k_subch)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn k_subch(&self) -> usize {
        self.k_subch
    }

    /// Flat unit-indexed assignment as consumed by the rate formulas.
    pub fn unit_users(&self) -> &[Option<usize>] {
        &self.unit_user
    }

    pub fn holder(&self, m: usize, k: usize) -> Option<usize> {
        self.unit_user[m * self.k_subch + k]
    }

    pub fn unit_of(&self, j: usize) -> Option<(usize, usize)> {
        self.user_unit[j]
    }

    pub fn is_matched(&self, j: usize) -> bool {
        self.user_unit[j].is_some()
    }

    pub fn assign(&mut self, j: usize, m: usize, k: usize) -> Result<()> {
        if j >= self.n_users || m >= self.n_cells || k >= self.k_subch {
            return Err(Error::Contract(format!("pair ({j}, {m}, {k}) out of range")));
        }
        if self.user_unit[j].is_some() {
            return Err(Error::Contract(format!("user {j} already matched")));
        }
        if self.holder(m, k).is_some() {
            return Err(Error::Contract(format!("unit ({m}, {k}) already matched")));
        }
        self.unit_user[m * self.k_subch + k] = Some(j);
        self.user_unit[j] = Some((m, k));
        Ok(())
    }

    /// Removes user `j` from its unit, returning the unit it held.
    pub fn release(&mut self, j: usize) -> Option<(usize, usize)> {
        let (m, k) = self.user_unit[j].take()?;
        self.unit_user[m * self.k_subch + k] = None;
        Some((m, k))
    }

    pub fn accessed(&self) -> usize {
        self.user_unit.iter().filter(|u| u.is_some()).count()
    }

    /// All pairs as (user, cell, subchannel), ordered by user.
    pub fn pairs(&self) -> Vec<(usize, usize, usize)> {
        self.user_unit
            .iter()
            .enumerate()
            .filter_map(|(j, u)| u.map(|(m, k)| (j, m, k)))
            .collect()
    }

    pub fn unmatched_users(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_users).filter(|&j| self.user_unit[j].is_none())
    }

    pub fn users_of_cell(&self, m: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.k_subch).filter_map(move |k| self.holder(m, k).map(|j| (j, k)))
    }

    pub fn free_units(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.k_subch).filter(move |&k| self.holder(m, k).is_none())
    }

    /// Checks the partial-bijection and coverage invariants.
    pub fn check(&self, cov: &CoverageMatrix) -> Result<()> {
        for m in 0..self.n_cells {
            for k in 0..self.k_subch {
                if let Some(j) = self.holder(m, k) {
                    if self.user_unit[j] != Some((m, k)) {
                        return Err(Error::Contract(format!("unit ({m}, {k}) and user {j} disagree")));
                    }
                    if !cov.covers(m, j) {
                        return Err(Error::Contract(format!("user {j} not covered by cell {m}")));
                    }
                }
            }
        }
        for (j, u) in self.user_unit.iter().enumerate() {
            if let Some((m, k)) = *u {
                if self.holder(m, k) != Some(j) {
                    return Err(Error::Contract(format!("user {j} and unit ({m}, {k}) disagree")));
                }
            }
        }
        Ok(())
    }
}

/// Preference score of unit `(m, k)` for the candidate pair `(j2, (m2, k))`:
/// `|h_{m2,j2,k}|^(rho1 * lambda_{m2}) / |h_{m,j2,k}|^rho2`.
#[allow(clippy::too_many_arguments)]
pub fn unit_preference(
    m: usize,
    k: usize,
    m2: usize,
    j2: usize,
    lambda: &[f64],
    real: &ChannelRealization,
    prefs: &PreferenceParams,
) -> f64 {
    log_preference(m, k, m2, j2, lambda, real, prefs).exp()
}

fn log_preference(
    m: usize,
    k: usize,
    m2: usize,
    j2: usize,
    lambda: &[f64],
    real: &ChannelRealization,
    prefs: &PreferenceParams,
) -> f64 {
    // |h| = sqrt(|h|^2), so ln|h| = ln(|h|^2) / 2.
    let own = 0.5 * real.hb(m2, j2, k).max(GAIN_FLOOR).ln();
    let cross = 0.5 * real.hb(m, j2, k).max(GAIN_FLOOR).ln();
    prefs.rho1 * lambda[m2] * own - prefs.rho2 * cross
}

/// Weighted utility of subchannel `k`: `sum_m (1 - lambda_m) R_{m,j,k}`.
pub fn subchannel_utility(
    k: usize,
    psi: &TerrestrialMatching,
    lambda: &[f64],
    real: &ChannelRealization,
    params: &RadioParams,
) -> f64 {
    (0..psi.n_cells)
        .filter_map(|m| psi.holder(m, k).map(|j| (m, j)))
        .map(|(m, j)| {
            (1.0 - lambda[m]) * terrestrial_rate_unchecked(m, j, k, psi.unit_users(), real, params)
        })
        .sum()
}

/// `sum_m (1 - lambda_m) R^B_m + mu * accessed`, rates in bits/s/Hz.
pub fn weighted_objective(
    psi: &TerrestrialMatching,
    real: &ChannelRealization,
    params: &RadioParams,
    lambda: &[f64],
    prefs: &PreferenceParams,
) -> f64 {
    let rates: f64 = (0..psi.k_subch)
        .map(|k| subchannel_utility(k, psi, lambda, real, params))
        .sum();
    rates + prefs.mu * psi.accessed() as f64
}

fn improves(new: f64, old: f64) -> bool {
    new > old + UTILITY_TOL * old.abs().max(1e-300)
}

/// Shared read-only inputs of one matching run.
pub struct TuasaContext<'a> {
    pub cov: CoverageMatrix,
    pub real: &'a ChannelRealization,
    pub params: &'a RadioParams,
    pub lambda: &'a [f64],
    pub prefs: &'a PreferenceParams,
}

impl<'a> TuasaContext<'a> {
    pub fn new(
        s: &Scenario,
        real: &'a ChannelRealization,
        params: &'a RadioParams,
        lambda: &'a [f64],
        prefs: &'a PreferenceParams,
    ) -> Result<Self> {
        if lambda.len() != s.n_cells() {
            return Err(Error::Contract(format!(
                "lambda has {} entries for {} cells",
                lambda.len(),
                s.n_cells()
            )));
        }
        if real.n_cells != s.n_cells() || real.n_users != s.n_users() || real.k_subch != s.k_subch {
            return Err(Error::Contract("channel realization does not match scenario".into()));
        }
        prefs.validate()?;
        Ok(Self { cov: coverage_matrix(s), real, params, lambda, prefs })
    }

    fn utility(&self, k: usize, psi: &TerrestrialMatching) -> f64 {
        subchannel_utility(k, psi, self.lambda, self.real, self.params)
    }
}

/// Greedy seeding: every unmatched subchannel proposes to the covered
/// (user, cell) combination with the largest squared gain among unmatched
/// users; a user offered several units keeps the strongest.
pub fn tuasa_initialize(ctx: &TuasaContext) -> TerrestrialMatching {
    let real = ctx.real;
    let (nc, nu, kk) = (real.n_cells, real.n_users, real.k_subch);
    let mut psi = TerrestrialMatching::empty(nc, nu, kk);
    loop {
        // offers[j] = (gain, m, k)
        let mut offers: Vec<Option<(f64, usize, usize)>> = vec![None; nu];
        let mut any = false;
        for k in 0..kk {
            if (0..nc).any(|m| psi.holder(m, k).is_some()) {
                continue;
            }
            let mut best: Option<(f64, usize, usize)> = None;
            for j in psi.unmatched_users() {
                for m in ctx.cov.cells_covering(j) {
                    let g = real.hb(m, j, k);
                    if best.is_none_or(|(bg, _, _)| g > bg) {
                        best = Some((g, j, m));
                    }
                }
            }
            if let Some((g, j, m)) = best {
                any = true;
                if offers[j].is_none_or(|(bg, _, _)| g > bg) {
                    offers[j] = Some((g, m, k));
                }
            }
        }
        if !any {
            break;
        }
        for (j, o) in offers.into_iter().enumerate() {
            if let Some((_, m, k)) = o {
                psi.assign(j, m, k).expect("greedy offer targets free unit and user");
            }
        }
        psi.rounds += 1;
    }
    psi
}

/// One propose / subchannel-reject / user-reject cycle. Returns whether any
/// user was admitted.
pub fn tuasa_round(psi: &mut TerrestrialMatching, ctx: &TuasaContext) -> bool {
    let real = ctx.real;
    let (nc, kk) = (real.n_cells, real.k_subch);
    let unmatched: Vec<usize> = psi.unmatched_users().collect();
    if unmatched.is_empty() {
        return false;
    }

    // Per subchannel: the admitted candidate (user, cell, utility gain).
    let mut chosen: Vec<Option<(usize, usize, f64)>> = vec![None; kk];
    for (k, slot) in chosen.iter_mut().enumerate() {
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for m in 0..nc {
            if psi.holder(m, k).is_none() {
                continue;
            }
            let mut best: Option<(f64, usize, usize)> = None;
            for &j2 in &unmatched {
                for m2 in ctx.cov.cells_covering(j2) {
                    if m2 == m || psi.holder(m2, k).is_some() {
                        continue;
                    }
                    let z = log_preference(m, k, m2, j2, ctx.lambda, real, ctx.prefs);
                    if best.is_none_or(|(bz, _, _)| z > bz) {
                        best = Some((z, j2, m2));
                    }
                }
            }
            if let Some((_, j2, m2)) = best {
                if !candidates.contains(&(j2, m2)) {
                    candidates.push((j2, m2));
                }
            }
        }
        if candidates.is_empty() {
            continue;
        }
        let base = ctx.utility(k, psi);
        let mut best: Option<(f64, usize, usize)> = None;
        for (j2, m2) in candidates {
            psi.assign(j2, m2, k).expect("candidate unit and user are free");
            let u = ctx.utility(k, psi);
            psi.release(j2);
            let better = match best {
                None => true,
                Some((bu, bj, bm)) => u > bu || (u == bu && (j2, m2) < (bj, bm)),
            };
            if better {
                best = Some((u, j2, m2));
            }
        }
        if let Some((u, j2, m2)) = best {
            if improves(u, base) {
                *slot = Some((j2, m2, u - base));
            }
        }
    }

    // A user picked by several subchannels keeps the largest utility gain.
    let mut accept: Vec<Option<(f64, usize, usize)>> = vec![None; real.n_users];
    for (k, c) in chosen.iter().enumerate() {
        if let Some((j, m, gain)) = *c {
            if accept[j].is_none_or(|(bg, _, _)| gain > bg) {
                accept[j] = Some((gain, m, k));
            }
        }
    }
    let mut progressed = false;
    for (j, a) in accept.into_iter().enumerate() {
        if let Some((_, m, k)) = a {
            psi.assign(j, m, k).expect("accepted unit is free");
            progressed = true;
        }
    }
    progressed
}

/// Admits users along augmenting paths of the user/cell coverage graph, up to
/// `K` per call. Users moved along a path take the free unit of their new
/// cell with the largest squared gain. Returns the number admitted.
pub fn complete_access(psi: &mut TerrestrialMatching, ctx: &TuasaContext) -> usize {
    let real = ctx.real;
    let nc = real.n_cells;
    let mut admitted = 0;
    while admitted < real.k_subch {
        let Some(path) = find_augmenting_path(psi, &ctx.cov, nc) else {
            break;
        };
        // path = [(user, cell)]: each user moves into the next cell; the last
        // cell has a free unit.
        for &(j, m) in path.iter().rev() {
            psi.release(j);
            let k = psi
                .free_units(m)
                .max_by(|&a, &b| real.hb(m, j, a).total_cmp(&real.hb(m, j, b)).then(b.cmp(&a)))
                .expect("augmenting path target has a free unit");
            psi.assign(j, m, k).expect("free unit");
        }
        admitted += 1;
    }
    admitted
}

fn find_augmenting_path(
    psi: &TerrestrialMatching,
    cov: &CoverageMatrix,
    nc: usize,
) -> Option<Vec<(usize, usize)>> {
    for root in psi.unmatched_users() {
        if cov.cells_covering(root).next().is_none() {
            continue;
        }
        // BFS over cells; parent[m] = (user entering m, cell that user left).
        let mut parent: Vec<Option<(usize, Option<usize>)>> = vec![None; nc];
        let mut queue = VecDeque::new();
        for m in cov.cells_covering(root) {
            parent[m] = Some((root, None));
            queue.push_back(m);
        }
        while let Some(m) = queue.pop_front() {
            if psi.free_units(m).next().is_some() {
                let mut path = Vec::new();
                let mut cur = Some(m);
                while let Some(c) = cur {
                    let (j, from) = parent[c].expect("visited");
                    path.push((j, c));
                    cur = from;
                }
                path.reverse();
                return Some(path);
            }
            for (j, _) in psi.users_of_cell(m) {
                for m2 in cov.cells_covering(j) {
                    if parent[m2].is_none() {
                        parent[m2] = Some((j, Some(m)));
                        queue.push_back(m2);
                    }
                }
            }
        }
    }
    None
}

/// Executes pair-swaps that strictly raise the rate of both swapped links
/// and of every other link on the touched subchannels, until none is left.
/// Returns the number of swaps executed.
pub fn resolve_blocking_swaps(psi: &mut TerrestrialMatching, ctx: &TuasaContext) -> usize {
    let mut executed = 0;
    let cap = 4 * psi.n_users.max(1) * psi.n_users.max(1) + 16;
    'outer: while executed < cap {
        let pairs = psi.pairs();
        for a in 0..pairs.len() {
            for b in (a + 1)..pairs.len() {
                let (j1, m1, k1) = pairs[a];
                let (j2, m2, k2) = pairs[b];
                if is_blocking_swap(psi, ctx, (j1, m1, k1), (j2, m2, k2)) {
                    psi.release(j1);
                    psi.release(j2);
                    psi.assign(j1, m2, k2).expect("swapped unit free");
                    psi.assign(j2, m1, k1).expect("swapped unit free");
                    executed += 1;
                    continue 'outer;
                }
            }
        }
        break;
    }
    executed
}

fn is_blocking_swap(
    psi: &mut TerrestrialMatching,
    ctx: &TuasaContext,
    (j1, m1, k1): (usize, usize, usize),
    (j2, m2, k2): (usize, usize, usize),
) -> bool {
    if m1 == m2 && k1 == k2 {
        return false;
    }
    if !ctx.cov.covers(m2, j1) || !ctx.cov.covers(m1, j2) {
        return false;
    }
    let (real, params) = (ctx.real, ctx.params);
    let rate = |p: &TerrestrialMatching, m: usize, j: usize, k: usize| {
        terrestrial_rate_unchecked(m, j, k, p.unit_users(), real, params)
    };
    let before1 = rate(psi, m1, j1, k1);
    let before2 = rate(psi, m2, j2, k2);
    let others: Vec<(usize, usize, usize, f64)> = psi
        .pairs()
        .into_iter()
        .filter(|&(j, _, k)| (k == k1 || k == k2) && j != j1 && j != j2)
        .map(|(j, m, k)| (j, m, k, rate(psi, m, j, k)))
        .collect();

    let swap = |p: &mut TerrestrialMatching, a: (usize, usize, usize), b: (usize, usize, usize)| {
        p.release(a.0);
        p.release(b.0);
        p.assign(a.0, a.1, a.2).expect("free");
        p.assign(b.0, b.1, b.2).expect("free");
    };
    swap(psi, (j1, m2, k2), (j2, m1, k1));
    let ok = rate(psi, m1, j2, k1) > before1
        && rate(psi, m2, j1, k2) > before2
        && others.iter().all(|&(j, m, k, r)| rate(psi, m, j, k) > r);
    swap(psi, (j1, m1, k1), (j2, m2, k2));
    ok
}

/// Full association: greedy seeding, proposal rounds until none admits a
/// user, access completion, then blocking-swap resolution.
pub fn tuasa(ctx: &TuasaContext) -> TerrestrialMatching {
    let mut psi = tuasa_initialize(ctx);
    loop {
        while tuasa_round(&mut psi, ctx) {
            psi.rounds += 1;
        }
        if complete_access(&mut psi, ctx) == 0 {
            break;
        }
        psi.rounds += 1;
    }
    resolve_blocking_swaps(&mut psi, ctx);
    psi
}

/// Convenience wrapper building the context from its parts.
pub fn run_tuasa(
    s: &Scenario,
    real: &ChannelRealization,
    params: &RadioParams,
    lambda: &[f64],
    prefs: &PreferenceParams,
) -> Result<TerrestrialMatching> {
    let ctx = TuasaContext::new(s, real, params, lambda, prefs)?;
    Ok(tuasa(&ctx))
}
