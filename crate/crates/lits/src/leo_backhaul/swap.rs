//! Swap operations on the backhaul matching: classification, feasibility,
//! gradient pruning and evaluation with power re-optimization.

use super::power::{solve_pc1, solve_pc2, solve_pc3, Region};
use super::{
    gradient_entry, subchannel_objective, subchannel_utility, BackhaulMatching, GradientMatrix, LeoContext,
    PlannedLink, PowerSpec,
};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// `(satellite, subchannel)`.
pub type Unit = (usize, usize);

/// Relative margin a swap must clear to count as a strict improvement.
pub const APPROVAL_RTOL: f64 = 1e-10;
/// Absolute margin, bits/s/Hz of weighted utility.
pub const APPROVAL_ATOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SwapType {
    /// A terminal takes an unmatched unit.
    Type1,
    /// A terminal lowers the power on one of its links.
    Type2,
    /// A terminal rebalances two of its links, or moves one to a free unit.
    Type3,
    /// Two terminals exchange units on different subchannels.
    Type4,
    /// Two terminals exchange units on the same subchannel.
    Type5,
}

impl SwapType {
    pub fn number(self) -> u8 {
        match self {
            SwapType::Type1 => 1,
            SwapType::Type2 => 2,
            SwapType::Type3 => 3,
            SwapType::Type4 => 4,
            SwapType::Type5 => 5,
        }
    }
}

/// One side of a swap; `None` marks a virtual terminal or unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub tst: Option<usize>,
    pub unit: Option<Unit>,
}

impl Pair {
    pub fn new(tst: Option<usize>, unit: Option<Unit>) -> Self {
        Self { tst, unit }
    }
}

/// Classifies the exchange of `p1 = (m1, (n1, q1))` with `p2 = (m2, (n2, q2))`.
pub fn classify_swap(p1: Pair, p2: Pair) -> Result<SwapType> {
    let bad = || Error::Classification(format!("{p1:?} / {p2:?}"));
    match (p1.tst, p1.unit, p2.tst, p2.unit) {
        (Some(_), None, None, Some(_)) => Ok(SwapType::Type1),
        (Some(_), Some(_), None, None) => Ok(SwapType::Type2),
        (Some(m1), Some(_), Some(m2), Some(_)) if m1 == m2 => Ok(SwapType::Type3),
        (Some(_), Some((_, q1)), Some(_), Some((_, q2))) => {
            Ok(if q1 == q2 { SwapType::Type5 } else { SwapType::Type4 })
        }
        _ => Err(bad()),
    }
}

/// A candidate swap. `u1` is the unit of `m1` being given up or re-powered,
/// `u2` the unit it moves to (held by `m2` for Types 4 and 5).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Swap {
    pub kind: SwapType,
    pub m1: usize,
    pub u1: Option<Unit>,
    pub m2: Option<usize>,
    pub u2: Option<Unit>,
}

impl Swap {
    pub fn from_pairs(p1: Pair, p2: Pair) -> Result<Self> {
        let kind = classify_swap(p1, p2)?;
        Ok(Self { kind, m1: p1.tst.expect("classified"), u1: p1.unit, m2: p2.tst, u2: p2.unit })
    }
    pub fn acquire(m1: usize, u2: Unit) -> Self {
        Self { kind: SwapType::Type1, m1, u1: None, m2: None, u2: Some(u2) }
    }
    pub fn withdraw(m1: usize, u1: Unit) -> Self {
        Self { kind: SwapType::Type2, m1, u1: Some(u1), m2: None, u2: None }
    }
    pub fn rebalance(m1: usize, u1: Unit, u2: Unit) -> Self {
        Self { kind: SwapType::Type3, m1, u1: Some(u1), m2: Some(m1), u2: Some(u2) }
    }
    pub fn exchange(m1: usize, u1: Unit, m2: usize, u2: Unit) -> Self {
        let kind = if u1.1 == u2.1 { SwapType::Type5 } else { SwapType::Type4 };
        Self { kind, m1, u1: Some(u1), m2: Some(m2), u2: Some(u2) }
    }

    fn unit1(&self) -> Unit {
        self.u1.expect("swap type carries u1")
    }
    fn unit2(&self) -> Unit {
        self.u2.expect("swap type carries u2")
    }
}

/// New holder and power of one unit after a swap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitChange {
    pub unit: Unit,
    pub holder: Option<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapOutcome {
    pub approved: bool,
    /// Sum of `R_q` over the touched subchannels before and after.
    pub before: f64,
    pub after: f64,
    pub changes: Vec<UnitChange>,
    /// False if a same-subchannel power problem hit its iteration cap.
    pub converged: bool,
}

impl SwapOutcome {
    pub fn apply(&self, phi: &mut BackhaulMatching) -> Result<()> {
        for c in &self.changes {
            phi.remove_link(c.unit.0, c.unit.1);
        }
        for c in &self.changes {
            if let Some((t, p)) = c.holder {
                phi.add_link(t, c.unit.0, c.unit.1, p)?;
            }
        }
        Ok(())
    }
}

pub fn is_approved(before: f64, after: f64) -> bool {
    after > before * (1.0 + APPROVAL_RTOL) + APPROVAL_ATOL
}

/// The link of `m` whose power reduction costs least: argmax of
/// `-dR_q/dp` over `m`'s links, ties to the lowest unit.
pub fn least_affected_link(ctx: &LeoContext, phi: &BackhaulMatching, m: usize) -> Result<Unit> {
    let mut best: Option<(Unit, f64)> = None;
    for (n, q) in phi.links_of(m) {
        let w = gradient_entry(ctx, phi, m, n, q);
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some(((n, q), w));
        }
    }
    best.map(|(u, _)| u).ok_or_else(|| {
        Error::Contract(format!("terminal {m} has no links; only its unallocated power is available"))
    })
}

fn gate_ok(ctx: &LeoContext, phi: &BackhaulMatching, t: usize, n: usize, q: usize, ignore: Option<Unit>) -> bool {
    phi.links_of(t)
        .into_iter()
        .filter(|&u| Some(u) != ignore && u.1 == q)
        .all(|(n2, _)| ctx.geo.gate(t, n, n2))
}

/// Definition-level feasibility: visibility, the co-subchannel elevation
/// gate, the per-terminal link cap and unit exclusivity after the swap.
pub fn check_feasible(ctx: &LeoContext, phi: &BackhaulMatching, s: &Swap) -> Result<()> {
    let infeasible = |why: &str| Err(Error::InfeasibleSwap(format!("{s:?}: {why}")));
    let in_range = |u: Unit| u.0 < phi.n_sat() && u.1 < phi.q_subch();
    if s.m1 >= phi.n_tst() || s.m2.is_some_and(|m| m >= phi.n_tst()) {
        return infeasible("terminal out of range");
    }
    if s.u1.is_some_and(|u| !in_range(u)) || s.u2.is_some_and(|u| !in_range(u)) {
        return infeasible("unit out of range");
    }
    let held_by = |u: Unit, t: usize| phi.holder(u.0, u.1) == Some(t);
    match s.kind {
        SwapType::Type1 => {
            let (n2, q2) = s.unit2();
            if phi.holder(n2, q2).is_some() {
                return infeasible("target unit is held");
            }
            if !ctx.geo.visible(s.m1, n2) {
                return infeasible("target satellite not visible");
            }
            if phi.degree(s.m1) >= phi.n_r() {
                return infeasible("terminal already holds N_r links");
            }
            if !gate_ok(ctx, phi, s.m1, n2, q2, None) {
                return infeasible("elevation gate");
            }
        }
        SwapType::Type2 => {
            if !held_by(s.unit1(), s.m1) {
                return infeasible("terminal does not hold the unit");
            }
        }
        SwapType::Type3 => {
            let (u1, u2) = (s.unit1(), s.unit2());
            if !held_by(u1, s.m1) || u1 == u2 {
                return infeasible("source unit not held or identical units");
            }
            match phi.holder(u2.0, u2.1) {
                Some(t) if t == s.m1 => {}
                Some(_) => return infeasible("target unit held by another terminal"),
                None => {
                    if !ctx.geo.visible(s.m1, u2.0) {
                        return infeasible("target satellite not visible");
                    }
                    if !gate_ok(ctx, phi, s.m1, u2.0, u2.1, Some(u1)) {
                        return infeasible("elevation gate");
                    }
                }
            }
        }
        SwapType::Type4 | SwapType::Type5 => {
            let (u1, u2) = (s.unit1(), s.unit2());
            let m2 = s.m2.expect("exchange has m2");
            if m2 == s.m1 || !held_by(u1, s.m1) || !held_by(u2, m2) {
                return infeasible("units not held by the two distinct terminals");
            }
            if (u1.1 == u2.1) != (s.kind == SwapType::Type5) {
                return infeasible("type does not match the subchannels");
            }
            if !ctx.geo.visible(s.m1, u2.0) || !ctx.geo.visible(m2, u1.0) {
                return infeasible("exchanged satellite not visible");
            }
            if !gate_ok(ctx, phi, s.m1, u2.0, u2.1, Some(u1)) || !gate_ok(ctx, phi, m2, u1.0, u1.1, Some(u2)) {
                return infeasible("elevation gate");
            }
        }
    }
    Ok(())
}

/// Gradient of `m1` on `u2` and of `m2` on `u1` at zero power in the
/// post-exchange structure.
pub fn post_exchange_gradients(ctx: &LeoContext, phi: &BackhaulMatching, s: &Swap) -> (f64, f64) {
    let (u1, u2) = (s.unit1(), s.unit2());
    let m2 = s.m2.expect("exchange has m2");
    if s.kind == SwapType::Type4 {
        // Different subchannels: each side only sees its own replacement.
        return (gradient_entry(ctx, phi, s.m1, u2.0, u2.1), gradient_entry(ctx, phi, m2, u1.0, u1.1));
    }
    let mut post = phi.clone();
    post.remove_link(u1.0, u1.1);
    post.remove_link(u2.0, u2.1);
    post.add_link(m2, u1.0, u1.1, 0.0).expect("freed unit");
    post.add_link(s.m1, u2.0, u2.1, 0.0).expect("freed unit");
    (gradient_entry(ctx, &post, s.m1, u2.0, u2.1), gradient_entry(ctx, &post, m2, u1.0, u1.1))
}

/// Gradient-based candidate filter; `true` keeps the candidate.
pub fn prune(ctx: &LeoContext, phi: &BackhaulMatching, grads: &GradientMatrix, s: &Swap) -> bool {
    let w = |t: usize, u: Unit| grads.get(t, u.0, u.1);
    match s.kind {
        SwapType::Type1 => w(s.m1, s.unit2()) < 0.0,
        SwapType::Type2 => w(s.m1, s.unit1()) > 0.0,
        SwapType::Type3 => {
            let (w1, w2) = (w(s.m1, s.unit1()), w(s.m1, s.unit2()));
            let (n2, q2) = s.unit2();
            if phi.holder(n2, q2).is_none() {
                w2 < 0.0 && w2 < w1
            } else {
                w1 != w2
            }
        }
        SwapType::Type4 | SwapType::Type5 => {
            let (a, b) = post_exchange_gradients(ctx, phi, s);
            !(a > 0.0 && b > 0.0)
        }
    }
}

/// Objective on subchannel `q` of `phi` with the listed units turned into
/// decision variables `0` and `1`.
fn objective_with_vars(
    ctx: &LeoContext,
    phi: &BackhaulMatching,
    q: usize,
    vars: &[Unit],
) -> super::power::RateObjective<f64> {
    let links: Vec<PlannedLink> = phi
        .links_on(q)
        .into_iter()
        .map(|l| {
            let power = match vars.iter().position(|u| *u == (l.sat, q)) {
                Some(i) => PowerSpec::Var(i),
                None => PowerSpec::Fixed(l.power),
            };
            PlannedLink { tst: l.tst, sat: l.sat, power }
        })
        .collect();
    subchannel_objective(ctx, q, &links)
}

fn touched(s: &Swap, extra: Option<Unit>) -> Vec<usize> {
    let mut qs: Vec<usize> = [s.u1, s.u2, extra].into_iter().flatten().map(|u| u.1).collect();
    qs.sort_unstable();
    qs.dedup();
    qs
}

/// Re-optimizes the powers of the swap and decides approval. Infeasible
/// swaps are reported as [`Error::InfeasibleSwap`].
pub fn evaluate_swap(ctx: &LeoContext, phi: &BackhaulMatching, s: &Swap) -> Result<SwapOutcome> {
    check_feasible(ctx, phi, s)?;
    let p_max = phi.p_max();
    let mut post = phi.clone();
    let mut converged = true;
    let mut extra = None;
    let set = |post: &mut BackhaulMatching, u: Unit, p: f64| post.set_power(u.0, u.1, p).expect("held unit");
    match s.kind {
        SwapType::Type1 => {
            let u2 = s.unit2();
            let spare = phi.spare(s.m1);
            post.add_link(s.m1, u2.0, u2.1, 0.0)?;
            if phi.degree(s.m1) == 0 {
                let obj = objective_with_vars(ctx, &post, u2.1, &[u2]);
                let (p, _) = solve_pc3(&obj, 0.0, spare.min(p_max));
                set(&mut post, u2, p);
            } else {
                let us = least_affected_link(ctx, phi, s.m1)?;
                extra = Some(us);
                let budget = spare + phi.power(us.0, us.1);
                if us.1 != u2.1 {
                    let f0 = objective_with_vars(ctx, &post, u2.1, &[u2]);
                    let f1 = objective_with_vars(ctx, &post, us.1, &[us]);
                    let (x, _) = solve_pc1(&f0, &f1, budget, p_max);
                    set(&mut post, u2, x[0]);
                    set(&mut post, us, x[1]);
                } else {
                    let obj = objective_with_vars(ctx, &post, u2.1, &[u2, us]);
                    let out = solve_pc2(&obj, Region::Simplex(budget));
                    converged = out.converged;
                    set(&mut post, u2, out.x[0]);
                    set(&mut post, us, out.x[1]);
                }
            }
        }
        SwapType::Type2 => {
            let u1 = s.unit1();
            let obj = objective_with_vars(ctx, &post, u1.1, &[u1]);
            let (p, _) = solve_pc3(&obj, 0.0, phi.power(u1.0, u1.1));
            set(&mut post, u1, p);
        }
        SwapType::Type3 => {
            let (u1, u2) = (s.unit1(), s.unit2());
            let p1 = phi.power(u1.0, u1.1);
            let spare = phi.spare(s.m1);
            if phi.holder(u2.0, u2.1).is_none() {
                post.remove_link(u1.0, u1.1);
                post.add_link(s.m1, u2.0, u2.1, 0.0)?;
                let obj = objective_with_vars(ctx, &post, u2.1, &[u2]);
                let (p, _) = solve_pc3(&obj, 0.0, (p1 + spare).min(p_max));
                set(&mut post, u2, p);
            } else {
                let budget = p1 + phi.power(u2.0, u2.1) + spare;
                if u1.1 != u2.1 {
                    let f0 = objective_with_vars(ctx, &post, u1.1, &[u1]);
                    let f1 = objective_with_vars(ctx, &post, u2.1, &[u2]);
                    let (x, _) = solve_pc1(&f0, &f1, budget, p_max);
                    set(&mut post, u1, x[0]);
                    set(&mut post, u2, x[1]);
                } else {
                    let obj = objective_with_vars(ctx, &post, u1.1, &[u1, u2]);
                    let out = solve_pc2(&obj, Region::Simplex(budget));
                    converged = out.converged;
                    set(&mut post, u1, out.x[0]);
                    set(&mut post, u2, out.x[1]);
                }
            }
        }
        SwapType::Type4 | SwapType::Type5 => {
            let (u1, u2) = (s.unit1(), s.unit2());
            let m2 = s.m2.expect("exchange has m2");
            let b1 = phi.power(u1.0, u1.1) + phi.spare(s.m1);
            let b2 = phi.power(u2.0, u2.1) + phi.spare(m2);
            post.remove_link(u1.0, u1.1);
            post.remove_link(u2.0, u2.1);
            post.add_link(m2, u1.0, u1.1, 0.0)?;
            post.add_link(s.m1, u2.0, u2.1, 0.0)?;
            if s.kind == SwapType::Type4 {
                let f1 = objective_with_vars(ctx, &post, u2.1, &[u2]);
                let (x1, _) = solve_pc3(&f1, 0.0, b1.min(p_max));
                let f2 = objective_with_vars(ctx, &post, u1.1, &[u1]);
                let (x2, _) = solve_pc3(&f2, 0.0, b2.min(p_max));
                set(&mut post, u2, x1);
                set(&mut post, u1, x2);
            } else {
                let obj = objective_with_vars(ctx, &post, u2.1, &[u2, u1]);
                let out = solve_pc2(&obj, Region::Box([b1.min(p_max), b2.min(p_max)]));
                converged = out.converged;
                set(&mut post, u2, out.x[0]);
                set(&mut post, u1, out.x[1]);
            }
        }
    }
    let qs = touched(s, extra);
    let before: f64 = qs.iter().map(|&q| subchannel_utility(ctx, phi, q)).sum();
    let after: f64 = qs.iter().map(|&q| subchannel_utility(ctx, &post, q)).sum();

    // Links left without power release their unit.
    let mut units: Vec<Unit> = [s.u1, s.u2, extra].into_iter().flatten().collect();
    units.sort_unstable();
    units.dedup();
    let changes = units
        .into_iter()
        .map(|u| {
            let holder = post.holder(u.0, u.1).map(|t| (t, post.power(u.0, u.1))).filter(|&(_, p)| p > 0.0);
            UnitChange { unit: u, holder }
        })
        .collect();
    Ok(SwapOutcome { approved: is_approved(before, after), before, after, changes, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leo_backhaul::tests::fixture;
    use crate::leo_backhaul::total_utility;
    use crate::terrestrial_matching::PreferenceParams;

    #[test]
    fn classification_of_canonical_shapes() {
        let p = |t: Option<usize>, u: Option<Unit>| Pair::new(t, u);
        assert_eq!(classify_swap(p(Some(0), None), p(None, Some((1, 0)))).unwrap(), SwapType::Type1);
        assert_eq!(classify_swap(p(Some(0), Some((1, 0))), p(None, None)).unwrap(), SwapType::Type2);
        assert_eq!(classify_swap(p(Some(0), Some((1, 0))), p(Some(0), Some((2, 1)))).unwrap(), SwapType::Type3);
        assert_eq!(classify_swap(p(Some(0), Some((1, 0))), p(Some(1), Some((2, 1)))).unwrap(), SwapType::Type4);
        assert_eq!(classify_swap(p(Some(0), Some((1, 0))), p(Some(1), Some((2, 0)))).unwrap(), SwapType::Type5);
        assert!(matches!(
            classify_swap(p(None, Some((1, 0))), p(Some(1), Some((2, 0)))),
            Err(Error::Classification(_))
        ));
        assert!(classify_swap(p(Some(0), None), p(Some(1), Some((2, 0)))).is_err());
    }

    fn grads_with(w: f64) -> GradientMatrix {
        GradientMatrix { n_sat: 3, q_subch: 3, w: vec![vec![w; 9]; 3] }
    }

    #[test]
    fn pruning_rules() {
        let (_s, p, g, r) = fixture(11);
        let lambda = [1.0; 3];
        let prefs = PreferenceParams::default();
        let ctx = LeoContext::new(&g, &r, &p, &lambda, &prefs).unwrap();
        let mut b = BackhaulMatching::empty(3, 3, 3, 2, 2.0);
        b.add_link(0, 0, 0, 1.0).unwrap();
        b.add_link(0, 1, 1, 1.0).unwrap();
        let plus = grads_with(0.3);
        assert!(!prune(&ctx, &b, &plus, &Swap::acquire(0, (2, 2))));
        assert!(prune(&ctx, &b, &grads_with(-0.3), &Swap::acquire(0, (2, 2))));
        assert!(prune(&ctx, &b, &plus, &Swap::withdraw(0, (0, 0))));
        assert!(!prune(&ctx, &b, &plus, &Swap::rebalance(0, (0, 0), (1, 1))));
        let mut mixed = plus.clone();
        mixed.w[0][2 * 3 + 2] = -0.5;
        assert!(prune(&ctx, &b, &mixed, &Swap::rebalance(0, (0, 0), (2, 2))));
        mixed.w[0][2 * 3 + 2] = 0.4;
        assert!(!prune(&ctx, &b, &mixed, &Swap::rebalance(0, (0, 0), (2, 2))));
    }

    #[test]
    fn identity_and_infeasible_swaps() {
        let (s, p, g, r) = fixture(12);
        let lambda = [1.0, 0.5, 0.8];
        let prefs = PreferenceParams::default();
        let ctx = LeoContext::new(&g, &r, &p, &lambda, &prefs).unwrap();
        let visible: Vec<usize> = (0..3).filter(|&n| s.is_visible(0, n)).collect();
        assert!(!visible.is_empty());
        let mut b = BackhaulMatching::empty(3, 3, 3, 1, 2.0);
        b.add_link(0, visible[0], 0, 2.0).unwrap();
        // Full power on an interference-free link is already optimal.
        let out = evaluate_swap(&ctx, &b, &Swap::withdraw(0, (visible[0], 0))).unwrap();
        assert!(!out.approved);
        // N_r = 1 already used.
        let other = ((visible[0] + 1) % 3, 1);
        assert!(matches!(
            evaluate_swap(&ctx, &b, &Swap::acquire(0, other)),
            Err(Error::InfeasibleSwap(_))
        ));
        // Same unit twice.
        let u = (visible[0], 0);
        assert!(matches!(evaluate_swap(&ctx, &b, &Swap::rebalance(0, u, u)), Err(Error::InfeasibleSwap(_))));
    }

    #[test]
    fn gate_violation_is_infeasible() {
        let (_s, p, mut g, r) = fixture(13);
        g.visible.iter_mut().for_each(|v| *v = true);
        g.elevation = vec![40.0, 41.0, 80.0, 40.0, 41.0, 80.0, 40.0, 41.0, 80.0];
        g.theta_th = 5.0;
        let lambda = [1.0; 3];
        let prefs = PreferenceParams::default();
        let ctx = LeoContext::new(&g, &r, &p, &lambda, &prefs).unwrap();
        let mut b = BackhaulMatching::empty(3, 3, 3, 2, 2.0);
        b.add_link(0, 0, 0, 1.0).unwrap();
        assert!(matches!(evaluate_swap(&ctx, &b, &Swap::acquire(0, (1, 0))), Err(Error::InfeasibleSwap(_))));
        assert!(evaluate_swap(&ctx, &b, &Swap::acquire(0, (2, 0))).is_ok());
        // Different subchannel is never gated.
        assert!(evaluate_swap(&ctx, &b, &Swap::acquire(0, (1, 1))).is_ok());
    }

    #[test]
    fn withdrawal_from_dominant_interferer_is_approved() {
        let (_s, p, mut g, mut r) = fixture(14);
        g.visible.iter_mut().for_each(|v| *v = true);
        let sigma2 = p.sigma2_t(3);
        // Terminal 0 has a weak own link but blasts satellite 1, where
        // terminal 1 has a strong link with a larger weight.
        r.set_ht(0, 0, 0, 0.01 * sigma2 / g.g_bore);
        r.set_ht(1, 1, 0, 1e4 * sigma2 / g.g_bore);
        r.set_ht(0, 1, 0, 1e3 * sigma2 / g.gain(0, 1, 0));
        r.set_ht(1, 0, 0, 0.0);
        let lambda = [0.1, 1.0, 1.0];
        let prefs = PreferenceParams::default();
        let ctx = LeoContext::new(&g, &r, &p, &lambda, &prefs).unwrap();
        let mut b = BackhaulMatching::empty(3, 3, 3, 2, 2.0);
        b.add_link(0, 0, 0, 1.0).unwrap();
        b.add_link(1, 1, 0, 1.0).unwrap();
        let s = Swap::withdraw(0, (0, 0));
        let out = evaluate_swap(&ctx, &b, &s).unwrap();
        assert!(out.approved);
        let mut after = b.clone();
        out.apply(&mut after).unwrap();
        let direct = subchannel_utility(&ctx, &after, 0);
        assert!((direct - out.after).abs() < 1e-12 * direct);
        assert!(direct > subchannel_utility(&ctx, &b, 0));
        assert!(after.power(0, 0) < 1.0);
        assert!(total_utility(&ctx, &after) > total_utility(&ctx, &b));
    }

    #[test]
    fn least_affected_link_rules() {
        let (_s, p, g, r) = fixture(15);
        let lambda = [1.0; 3];
        let prefs = PreferenceParams::default();
        let ctx = LeoContext::new(&g, &r, &p, &lambda, &prefs).unwrap();
        let mut b = BackhaulMatching::empty(3, 3, 3, 2, 2.0);
        assert!(least_affected_link(&ctx, &b, 0).is_err());
        b.add_link(0, 1, 2, 0.5).unwrap();
        assert_eq!(least_affected_link(&ctx, &b, 0).unwrap(), (1, 2));
        b.add_link(0, 2, 0, 1.5).unwrap();
        let pick = least_affected_link(&ctx, &b, 0).unwrap();
        let w = |u: Unit| gradient_entry(&ctx, &b, 0, u.0, u.1);
        let other = if pick == (1, 2) { (2, 0) } else { (1, 2) };
        assert!(w(pick) >= w(other));
    }
}
