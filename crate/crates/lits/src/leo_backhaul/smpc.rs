//! Swap matching with power control: a one-to-one seeding pass followed by
//! pruned swap sweeps until no feasible swap is approved.

use super::swap::{check_feasible, evaluate_swap, prune, Swap, SwapType, Unit};
use super::{
    backhaul_capacity, log_tst_preference, subchannel_utility, weighted_capacity, BackhaulCapacity,
    BackhaulMatching, GradientMatrix, LeoContext,
};
use crate::error::Result;
use serde::{Deserialize, Serialize};

/// Upper bound on executed swaps per run; never reached in practice since
/// every swap strictly raises a bounded objective.
pub const MAX_SWAPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmpcOptions {
    /// Start from this matching instead of the seeding pass (must fit the
    /// instance). Powers are kept.
    #[serde(skip)]
    pub warm_start: Option<BackhaulMatching>,
    /// After the pruned sweep stalls, evaluate every feasible candidate
    /// once more without pruning and resume if one is approved.
    pub exhaustive_final_pass: bool,
    pub max_swaps: usize,
}

impl Default for SmpcOptions {
    fn default() -> Self {
        Self { warm_start: None, exhaustive_final_pass: true, max_swaps: MAX_SWAPS }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SmpcReport {
    /// Executed swaps per type, index `type - 1`.
    pub executed: [usize; 5],
    /// Feasible candidates that passed pruning and were evaluated.
    pub evaluated: usize,
    /// Feasible candidates removed by pruning.
    pub pruned: usize,
    /// Swaps found only by the unpruned pass.
    pub rescued: usize,
    /// `sum lambda C~` (bits/s) after seeding and after every executed swap.
    pub objective_trace: Vec<f64>,
    /// Whether the swap cap stopped the run.
    pub capped: bool,
    /// Same-subchannel power problems that hit their iteration cap.
    pub unconverged_pc2: usize,
}

impl SmpcReport {
    pub fn total_swaps(&self) -> usize {
        self.executed.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmpcResult {
    pub matching: BackhaulMatching,
    pub capacity: BackhaulCapacity,
    pub report: SmpcReport,
}

/// Seeding: one link per terminal at power `P_T / N_r`. Empty subchannels
/// first go to the strongest unmatched (terminal, satellite); then every
/// held unit proposes to the unmatched terminal and free unit on its
/// subchannel that it prefers, and a subchannel admits its best proposal
/// when that raises its utility.
pub fn smpc_initialize(ctx: &LeoContext, phi: &mut BackhaulMatching) {
    let (nt, ns, qq) = (phi.n_tst(), phi.n_sat(), phi.q_subch());
    if ns == 0 || phi.n_r() == 0 {
        return;
    }
    let p0 = phi.p_max() / phi.n_r() as f64;
    let g = ctx.geo.g_bore;

    loop {
        // (q, t, n, gain) proposals from empty subchannels.
        let mut best_for_tst: Vec<Option<(f64, usize, usize)>> = vec![None; nt];
        for q in 0..qq {
            if (0..ns).any(|n| phi.holder(n, q).is_some()) {
                continue;
            }
            let mut pick: Option<(f64, usize, usize)> = None;
            for t in (0..nt).filter(|&t| phi.degree(t) == 0) {
                for n in (0..ns).filter(|&n| ctx.geo.visible(t, n)) {
                    let v = g * ctx.real.ht(t, n, q);
                    if pick.is_none_or(|(b, _, _)| v > b) {
                        pick = Some((v, t, n));
                    }
                }
            }
            if let Some((v, t, n)) = pick {
                if best_for_tst[t].is_none_or(|(b, _, _)| v > b) {
                    best_for_tst[t] = Some((v, n, q));
                }
            }
        }
        let mut changed = false;
        for (t, choice) in best_for_tst.into_iter().enumerate() {
            if let Some((_, n, q)) = choice {
                phi.add_link(t, n, q, p0).expect("free unit");
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    loop {
        // Per subchannel: the admitted (t2, n2) and its utility gain.
        let mut offers: Vec<Vec<(f64, usize, usize)>> = vec![Vec::new(); nt];
        for q in 0..qq {
            let base = subchannel_utility(ctx, phi, q);
            let mut best: Option<(f64, usize, usize)> = None;
            let held: Vec<usize> = (0..ns).filter(|&n| phi.holder(n, q).is_some()).collect();
            for &n in &held {
                let mut pick: Option<(f64, usize, usize)> = None;
                for t2 in (0..nt).filter(|&t| phi.degree(t) == 0) {
                    for n2 in (0..ns).filter(|&n2| n2 != n && phi.holder(n2, q).is_none()) {
                        if !ctx.geo.visible(t2, n2) {
                            continue;
                        }
                        let w = log_tst_preference(ctx, n, q, t2, n2);
                        if pick.is_none_or(|(b, _, _)| w > b) {
                            pick = Some((w, t2, n2));
                        }
                    }
                }
                if let Some((_, t2, n2)) = pick {
                    let mut trial = phi.clone();
                    trial.add_link(t2, n2, q, p0).expect("free unit");
                    let gain = subchannel_utility(ctx, &trial, q) - base;
                    if gain > 0.0 && best.is_none_or(|(b, _, _)| gain > b) {
                        best = Some((gain, t2, n2));
                    }
                }
            }
            if let Some((gain, t2, n2)) = best {
                offers[t2].push((gain, n2, q));
            }
        }
        let mut changed = false;
        for (t, list) in offers.into_iter().enumerate() {
            let mut pick: Option<(f64, usize, usize)> = None;
            for o in list {
                if pick.is_none_or(|(b, _, _)| o.0 > b) {
                    pick = Some(o);
                }
            }
            if let Some((_, n, q)) = pick {
                phi.add_link(t, n, q, p0).expect("free unit");
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// All structurally possible candidates in sweep order: Type 1, 2, 3 and
/// then exchanges. Infeasible ones are filtered by the caller.
pub fn candidates(phi: &BackhaulMatching) -> Vec<Swap> {
    let (nt, ns, qq) = (phi.n_tst(), phi.n_sat(), phi.q_subch());
    let units: Vec<Unit> = (0..ns).flat_map(|n| (0..qq).map(move |q| (n, q))).collect();
    let mut out = Vec::new();
    for t in 0..nt {
        for &u in &units {
            if phi.holder(u.0, u.1).is_none() {
                out.push(Swap::acquire(t, u));
            }
        }
    }
    for t in 0..nt {
        for u in phi.links_of(t) {
            out.push(Swap::withdraw(t, u));
        }
    }
    for t in 0..nt {
        let own = phi.links_of(t);
        for (i, &u1) in own.iter().enumerate() {
            for &u2 in &own[i + 1..] {
                out.push(Swap::rebalance(t, u1, u2));
            }
            for &u2 in &units {
                if phi.holder(u2.0, u2.1).is_none() {
                    out.push(Swap::rebalance(t, u1, u2));
                }
            }
        }
    }
    for t1 in 0..nt {
        for u1 in phi.links_of(t1) {
            for t2 in t1 + 1..nt {
                for u2 in phi.links_of(t2) {
                    out.push(Swap::exchange(t1, u1, t2, u2));
                }
            }
        }
    }
    out
}

fn type_index(k: SwapType) -> usize {
    k.number() as usize - 1
}

/// Runs the swap phase from `phi` to a stable matching.
pub fn smpc_swaps(ctx: &LeoContext, phi: &mut BackhaulMatching, opts: &SmpcOptions, report: &mut SmpcReport) {
    let mut grads = GradientMatrix::build(ctx, phi);
    let mut pruned_pass = true;
    loop {
        if report.total_swaps() >= opts.max_swaps {
            report.capped = true;
            return;
        }
        let mut executed = None;
        for s in candidates(phi) {
            if check_feasible(ctx, phi, &s).is_err() {
                continue;
            }
            if pruned_pass && !prune(ctx, phi, &grads, &s) {
                report.pruned += 1;
                continue;
            }
            report.evaluated += 1;
            let out = evaluate_swap(ctx, phi, &s).expect("feasibility checked");
            if !out.converged {
                report.unconverged_pc2 += 1;
            }
            if out.approved {
                out.apply(phi).expect("approved swap keeps the matching valid");
                debug_assert!(phi.check(ctx.geo).is_ok());
                executed = Some((s, out));
                break;
            }
        }
        match executed {
            Some((s, out)) => {
                report.executed[type_index(s.kind)] += 1;
                if !pruned_pass {
                    report.rescued += 1;
                    pruned_pass = true;
                }
                report.objective_trace.push(weighted_capacity(ctx, phi));
                let mut qs: Vec<usize> = out.changes.iter().map(|c| c.unit.1).collect();
                qs.sort_unstable();
                qs.dedup();
                for q in qs {
                    grads.refresh_subchannel(ctx, phi, q);
                }
            }
            None if pruned_pass && opts.exhaustive_final_pass => pruned_pass = false,
            None => return,
        }
    }
}

/// Full backhaul solve: seeding (or warm start), swaps, then capacities.
/// `delays` is per satellite in seconds, `loads` per terminal in bits.
pub fn smpc(ctx: &LeoContext, delays: &[f64], loads: &[f64], opts: &SmpcOptions) -> Result<SmpcResult> {
    let nt = ctx.geo.n_tst;
    let ns = ctx.geo.n_sat;
    let mut phi = match &opts.warm_start {
        Some(w) => {
            w.check(ctx.geo)?;
            w.clone()
        }
        None => {
            let mut phi = BackhaulMatching::empty(nt, ns, ctx.real.q_subch, ctx.geo.n_r, ctx.params.p_t_max_w);
            smpc_initialize(ctx, &mut phi);
            phi
        }
    };
    let mut report = SmpcReport { objective_trace: vec![weighted_capacity(ctx, &phi)], ..Default::default() };
    smpc_swaps(ctx, &mut phi, opts, &mut report);
    let capacity = backhaul_capacity(ctx, &phi, delays, loads)?;
    Ok(SmpcResult { matching: phi, capacity, report })
}

/// Worst-case numbers of Type-1/2, Type-3 and Type-4/5 swap candidates for
/// `t` terminals, `n` satellites, `q` subchannels and `n_r` links each.
pub fn count_swap_space(t: u64, n: u64, q: u64, n_r: u64) -> (u64, u64, u64) {
    let n12 = n * q * t;
    let n3 = n_r * n_r.saturating_sub(1) * t / 2;
    let (nq, t, nr) = (n as i128 * q as i128, t as i128, n_r as i128);
    let n45 = if t == 0 { 0 } else { nr * (t - 1) * (2 * nq - t * nr).max(t * nr) / 2 };
    (n12, n3, n45 as u64)
}

/// Structural candidate counts on a concrete assignment `holders[n * Q + q]`:
/// every (terminal, unit) pair for Types 1/2, every pair of one terminal's
/// links for Type 3, and for Types 4/5 every link of terminal `i` paired
/// with a unit not held by terminals `0..=i`.
pub fn structural_counts(holders: &[Option<usize>], n_tst: usize) -> (u64, u64, u64) {
    let units = holders.len() as u64;
    let deg: Vec<u64> = (0..n_tst).map(|t| holders.iter().filter(|h| **h == Some(t)).count() as u64).collect();
    let n12 = units * n_tst as u64;
    let n3 = deg.iter().map(|d| d * d.saturating_sub(1) / 2).sum();
    let mut n45 = 0;
    let mut held_so_far = 0;
    // The last terminal has nobody after it.
    for d in deg.iter().take(n_tst.saturating_sub(1)) {
        held_so_far += d;
        n45 += d * (units - held_so_far);
    }
    (n12, n3, n45)
}

/// Candidate counts on the worst-case structure: every terminal holds as
/// many units as `n_r` and availability allow, assigned in index order.
pub fn enumerate_swap_space(t: usize, n: usize, q: usize, n_r: usize) -> (u64, u64, u64) {
    let mut holders = vec![None; n * q];
    let mut next = 0;
    for tst in 0..t {
        for _ in 0..n_r {
            if next < holders.len() {
                holders[next] = Some(tst);
                next += 1;
            }
        }
    }
    structural_counts(&holders, t)
}
