use super::{refined_grid_pc, GridRegion};
use crate::channel::{ka_link_rate, ChannelRealization, KaGeometry, KaLink, RadioParams};
use crate::error::{Error, Result};
use crate::leo_backhaul::BackhaulMatching;
use crate::scenario::Scenario;

/// A swap is reported only if the grid gains more than this, relative...
pub const ORACLE_RTOL: f64 = 1e-6;
/// ...plus this, absolute (bits/s/Hz).
pub const ORACLE_ATOL: f64 = 1e-9;

const COARSE_1D: usize = 2000;
const COARSE_2D: usize = 60;
const ZOOM: usize = 20;
const ZOOM_LEVELS: usize = 3;

type Unit = (usize, usize);

/// `(holder, power)` per unit, indexed `n * Q + q`.
#[derive(Clone)]
struct Layout {
    q: usize,
    slots: Vec<Option<(usize, f64)>>,
}

impl Layout {
    fn of(phi: &BackhaulMatching) -> Self {
        let q = phi.q_subch();
        let slots = phi.holders().iter().zip(phi.powers()).map(|(h, &p)| h.map(|t| (t, p))).collect();
        Self { q, slots }
    }

    fn get(&self, u: Unit) -> Option<(usize, f64)> {
        self.slots[u.0 * self.q + u.1]
    }

    fn set(&mut self, u: Unit, v: Option<(usize, f64)>) {
        self.slots[u.0 * self.q + u.1] = v;
    }

    fn units_of(&self, t: usize) -> Vec<Unit> {
        (0..self.slots.len())
            .filter(|&i| self.slots[i].is_some_and(|(h, _)| h == t))
            .map(|i| (i / self.q, i % self.q))
            .collect()
    }

    fn spent(&self, t: usize) -> f64 {
        self.slots.iter().flatten().filter(|(h, _)| *h == t).map(|(_, p)| p).sum()
    }
}

struct Eval<'a> {
    geo: &'a KaGeometry,
    real: &'a ChannelRealization,
    lambda: &'a [f64],
    sigma2: f64,
    n_sat: usize,
}

impl Eval<'_> {
    fn utility(&self, lay: &Layout, q: usize) -> f64 {
        let links: Vec<KaLink> = (0..self.n_sat)
            .filter_map(|n| lay.get((n, q)).map(|(tst, power)| KaLink { tst, sat: n, power }))
            .collect();
        (0..links.len())
            .map(|i| self.lambda[links[i].tst] * ka_link_rate(&links, i, q, self.geo, self.real, self.sigma2))
            .sum()
    }

    fn total(&self, lay: &Layout, qs: &[usize]) -> f64 {
        qs.iter().map(|&q| self.utility(lay, q)).sum()
    }

    /// `-dU_q/dp` of the link on `u` by central (or one-sided at zero)
    /// differences.
    fn negative_gradient(&self, lay: &Layout, u: Unit) -> f64 {
        let (t, p) = lay.get(u).expect("held unit");
        let h = 1e-7 * p.max(1e-3);
        let at = |x: f64| {
            let mut l = lay.clone();
            l.set(u, Some((t, x)));
            self.utility(&l, u.1)
        };
        if p > h {
            -(at(p + h) - at(p - h)) / (2.0 * h)
        } else {
            -(at(p + h) - at(p)) / h
        }
    }

    fn gate_ok(&self, lay: &Layout, t: usize, n: usize, q: usize, ignore: Option<Unit>) -> bool {
        lay.units_of(t)
            .into_iter()
            .filter(|&u| Some(u) != ignore && u.1 == q && u.0 != n)
            .all(|(n2, _)| self.geo.gate(t, n, n2))
    }
}

/// A feasible swap whose best grid power setting beats the current
/// utility of the touched subchannels.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSwap {
    /// Swap type number, 1 to 5.
    pub kind: u8,
    pub m1: usize,
    pub u1: Option<Unit>,
    pub m2: Option<usize>,
    pub u2: Option<Unit>,
    pub before: f64,
    pub after: f64,
}

fn optimize<F: FnMut(&[f64]) -> f64>(f: F, region: GridRegion) -> f64 {
    let coarse = if region.dim() == 1 { COARSE_1D } else { COARSE_2D };
    refined_grid_pc(f, region, coarse, ZOOM, ZOOM_LEVELS).1
}

fn dedup(mut qs: Vec<usize>) -> Vec<usize> {
    qs.sort_unstable();
    qs.dedup();
    qs
}

/// Force-evaluates every structurally possible swap of `phi` (acquiring a
/// free unit, withdrawing power, moving or rebalancing within a terminal,
/// exchanging between terminals) with grid power control and returns the
/// ones that would be approved.
pub fn verify_swap_stability(
    phi: &BackhaulMatching,
    geo: &KaGeometry,
    real: &ChannelRealization,
    params: &RadioParams,
    lambda: &[f64],
) -> Vec<OracleSwap> {
    let (nt, ns, qq, nr, p_max) = (phi.n_tst(), phi.n_sat(), phi.q_subch(), phi.n_r(), phi.p_max());
    let ev = Eval { geo, real, lambda, sigma2: params.sigma2_t(qq), n_sat: ns };
    let lay = Layout::of(phi);
    let units: Vec<Unit> = (0..ns).flat_map(|n| (0..qq).map(move |q| (n, q))).collect();
    let mut out = Vec::new();
    let mut report = |kind: u8, m1, u1, m2, u2, qs: &[usize], after: f64| {
        let before = ev.total(&lay, qs);
        if after > before + ORACLE_RTOL * before.abs() + ORACLE_ATOL {
            out.push(OracleSwap { kind, m1, u1, m2, u2, before, after });
        }
    };

    for t in 0..nt {
        let mine = lay.units_of(t);
        let spare = (p_max - lay.spent(t)).max(0.0);
        // Type 1: acquire a free unit.
        if mine.len() < nr {
            for &u2 in units.iter().filter(|&&u| lay.get(u).is_none()) {
                if !geo.visible(t, u2.0) || !ev.gate_ok(&lay, t, u2.0, u2.1, None) {
                    continue;
                }
                let mut post = lay.clone();
                if mine.is_empty() {
                    let qs = [u2.1];
                    let after = optimize(
                        |x| {
                            post.set(u2, Some((t, x[0])));
                            ev.total(&post, &qs)
                        },
                        GridRegion::Interval { lo: 0.0, hi: spare.min(p_max) },
                    );
                    report(1, t, None, None, Some(u2), &qs, after);
                } else {
                    let star = *mine
                        .iter()
                        .max_by(|a, b| ev.negative_gradient(&lay, **a).total_cmp(&ev.negative_gradient(&lay, **b)))
                        .expect("non-empty");
                    let budget = spare + lay.get(star).expect("held").1;
                    let qs = dedup(vec![u2.1, star.1]);
                    let after = optimize(
                        |x| {
                            post.set(u2, Some((t, x[0])));
                            post.set(star, Some((t, x[1])));
                            ev.total(&post, &qs)
                        },
                        GridRegion::Simplex { budget },
                    );
                    report(1, t, None, None, Some(u2), &qs, after);
                }
            }
        }
        for (i, &u1) in mine.iter().enumerate() {
            let p1 = lay.get(u1).expect("held").1;
            // Type 2: withdraw power.
            let mut post = lay.clone();
            let after = optimize(
                |x| {
                    post.set(u1, Some((t, x[0])));
                    ev.total(&post, &[u1.1])
                },
                GridRegion::Interval { lo: 0.0, hi: p1 },
            );
            report(2, t, Some(u1), None, None, &[u1.1], after);

            // Type 3: move to a free unit.
            for &u2 in units.iter().filter(|&&u| lay.get(u).is_none()) {
                if !geo.visible(t, u2.0) || !ev.gate_ok(&lay, t, u2.0, u2.1, Some(u1)) {
                    continue;
                }
                let mut post = lay.clone();
                post.set(u1, None);
                let qs = dedup(vec![u1.1, u2.1]);
                let after = optimize(
                    |x| {
                        post.set(u2, Some((t, x[0])));
                        ev.total(&post, &qs)
                    },
                    GridRegion::Interval { lo: 0.0, hi: (p1 + spare).min(p_max) },
                );
                report(3, t, Some(u1), Some(t), Some(u2), &qs, after);
            }
            // Type 3: rebalance two held units.
            for &u2 in &mine[i + 1..] {
                let budget = p1 + lay.get(u2).expect("held").1 + spare;
                let mut post = lay.clone();
                let qs = dedup(vec![u1.1, u2.1]);
                let after = optimize(
                    |x| {
                        post.set(u1, Some((t, x[0])));
                        post.set(u2, Some((t, x[1])));
                        ev.total(&post, &qs)
                    },
                    GridRegion::Simplex { budget },
                );
                report(3, t, Some(u1), Some(t), Some(u2), &qs, after);
            }
        }
    }

    // Types 4 and 5: exchange units between two terminals.
    let held: Vec<(usize, Unit, f64)> =
        units.iter().filter_map(|&u| lay.get(u).map(|(t, p)| (t, u, p))).collect();
    for (a, &(m1, u1, p1)) in held.iter().enumerate() {
        for &(m2, u2, p2) in &held[a + 1..] {
            if m1 == m2 || !geo.visible(m1, u2.0) || !geo.visible(m2, u1.0) {
                continue;
            }
            if !ev.gate_ok(&lay, m1, u2.0, u2.1, Some(u1)) || !ev.gate_ok(&lay, m2, u1.0, u1.1, Some(u2)) {
                continue;
            }
            let b1 = (p1 + (p_max - lay.spent(m1)).max(0.0)).min(p_max);
            let b2 = (p2 + (p_max - lay.spent(m2)).max(0.0)).min(p_max);
            let mut post = lay.clone();
            let qs = dedup(vec![u1.1, u2.1]);
            let after = optimize(
                |x| {
                    post.set(u2, Some((m1, x[0])));
                    post.set(u1, Some((m2, x[1])));
                    ev.total(&post, &qs)
                },
                GridRegion::Box { hi: [b1, b2] },
            );
            let kind = if u1.1 == u2.1 { 5 } else { 4 };
            report(kind, m1, Some(u1), Some(m2), Some(u2), &qs, after);
        }
    }
    out
}

/// Two co-channel links whose exchange of satellites raises both links'
/// rates at unchanged powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exchange {
    pub q: usize,
    pub m1: usize,
    pub n1: usize,
    pub m2: usize,
    pub n2: usize,
    /// Rates of the links on `n1` and `n2` before and after, bits/s/Hz.
    pub before: [f64; 2],
    pub after: [f64; 2],
}

fn link_rate(links: &[KaLink], sat: usize, q: usize, geo: &KaGeometry, real: &ChannelRealization, sigma2: f64) -> f64 {
    let i = links.iter().position(|l| l.sat == sat).expect("link on satellite");
    ka_link_rate(links, i, q, geo, real, sigma2)
}

/// First same-subchannel exchange that strictly raises the rates on both
/// satellites, skipping exchanges that break visibility or the gate.
pub fn find_improving_exchange(
    phi: &BackhaulMatching,
    geo: &KaGeometry,
    real: &ChannelRealization,
    params: &RadioParams,
) -> Option<Exchange> {
    let lay = Layout::of(phi);
    let sigma2 = params.sigma2_t(phi.q_subch());
    let ev = Eval { geo, real, lambda: &[], sigma2, n_sat: phi.n_sat() };
    for q in 0..phi.q_subch() {
        let links: Vec<KaLink> = (0..phi.n_sat())
            .filter_map(|n| lay.get((n, q)).map(|(tst, power)| KaLink { tst, sat: n, power }))
            .collect();
        for a in 0..links.len() {
            for b in a + 1..links.len() {
                let (l1, l2) = (links[a], links[b]);
                if l1.tst == l2.tst || !geo.visible(l1.tst, l2.sat) || !geo.visible(l2.tst, l1.sat) {
                    continue;
                }
                if !ev.gate_ok(&lay, l1.tst, l2.sat, q, Some((l1.sat, q)))
                    || !ev.gate_ok(&lay, l2.tst, l1.sat, q, Some((l2.sat, q)))
                {
                    continue;
                }
                let mut swapped = links.clone();
                swapped[a].tst = l2.tst;
                swapped[b].tst = l1.tst;
                let before = [
                    link_rate(&links, l1.sat, q, geo, real, sigma2),
                    link_rate(&links, l2.sat, q, geo, real, sigma2),
                ];
                let after = [
                    link_rate(&swapped, l1.sat, q, geo, real, sigma2),
                    link_rate(&swapped, l2.sat, q, geo, real, sigma2),
                ];
                if after[0] > before[0] && after[1] > before[1] {
                    return Some(Exchange { q, m1: l1.tst, n1: l1.sat, m2: l2.tst, n2: l2.sat, before, after });
                }
            }
        }
    }
    None
}

/// Whether no pair exchange raises both satellites' rates, for terminals
/// sharing one location with equal link powers and `rho2 = 0`.
pub fn verify_colocated_equilibrium(
    phi: &BackhaulMatching,
    scenario: &Scenario,
    geo: &KaGeometry,
    real: &ChannelRealization,
    params: &RadioParams,
    rho2: f64,
) -> Result<bool> {
    let refuse = |why: &str| Err(Error::Contract(format!("colocated equilibrium check: {why}")));
    if rho2 != 0.0 {
        return refuse("rho2 must be zero");
    }
    let nt = scenario.n_lsc();
    if nt != phi.n_tst() {
        return refuse("scenario and matching disagree");
    }
    if (1..nt).any(|t| scenario.tst_position(t) != scenario.tst_position(0)) {
        return refuse("terminals are not colocated");
    }
    let powers: Vec<f64> = phi.links().iter().map(|l| l.power).collect();
    if powers.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-12 * w[0].abs().max(w[1].abs())) {
        return refuse("link powers differ");
    }
    Ok(find_improving_exchange(phi, geo, real, params).is_none())
}
