//! Randomized checks of the matching and power-control algorithms against
//! the brute-force references in [`crate::oracle`].

use crate::channel::{ka_link_rate, sample_realization, ChannelRealization, KaGeometry, KaLink, RadioParams};
use crate::error::Result;
use crate::leo_backhaul::load_split::{equivalent_capacity, solve_load_split};
use crate::leo_backhaul::power::{solve_pc1, solve_pc2, solve_pc3, Affine, RateObjective, Region};
use crate::leo_backhaul::smpc::{candidates, smpc, SmpcOptions};
use crate::leo_backhaul::swap::{check_feasible, evaluate_swap, prune};
use crate::leo_backhaul::{
    count_swap_space, enumerate_swap_space, gradient_entry, BackhaulMatching, GradientMatrix, LeoContext,
};
use crate::oracle::{
    grid_pc, max_accessed_users, verify_group_stability, verify_swap_stability, GridRegion,
};
use crate::scenario::{generate_scenario, CoverageMatrix, Scenario, ScenarioConfig};
use crate::terrestrial_matching::{tuasa, PreferenceParams, TuasaContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

/// Relative slack of the single-power solver against a dense grid.
pub const PC3_RTOL: f64 = 1e-6;
pub const PC3_GRID: usize = 100_000;
/// Relative slack of the split-budget solver against a square grid.
pub const PC1_RTOL: f64 = 1e-3;
pub const PC1_GRID: usize = 300;
/// Share of the grid best the same-subchannel solver must reach.
pub const PC2_RATIO: f64 = 0.99;
pub const PC2_GRID: usize = 300;
/// Gradient agreement: `|w - fd| <= max(GRAD_ATOL, GRAD_RTOL |w|)`.
pub const GRAD_ATOL: f64 = 1e-6;
pub const GRAD_RTOL: f64 = 1e-4;
/// Load-split residual bound, relative to the load or completion time.
pub const SPLIT_RTOL: f64 = 1e-9;

/// Outcome of one suite: `violations` of `cases` checked items.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub violations: usize,
    /// Up to [`MAX_EXAMPLES`] descriptions of violations.
    pub examples: Vec<String>,
    pub elapsed: Duration,
}

pub const MAX_EXAMPLES: usize = 5;

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self { name, cases: 0, violations: 0, examples: Vec::new(), elapsed: Duration::ZERO }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.violations += 1;
            if self.examples.len() < MAX_EXAMPLES {
                self.examples.push(what());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn timed(name: &'static str, f: impl FnOnce(&mut SuiteReport) -> Result<()>) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut r = SuiteReport::new(name);
    f(&mut r)?;
    r.elapsed = start.elapsed();
    Ok(r)
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Small terrestrial instance: random coverage and gains around the
/// noise floor.
pub struct AccessInstance {
    pub cov: CoverageMatrix,
    pub real: ChannelRealization,
    pub lambda: Vec<f64>,
}

pub fn access_instance(r: &mut impl Rng, max_users: usize, max_cells: usize, max_k: usize) -> AccessInstance {
    let nu = r.random_range(1..=max_users);
    let nc = r.random_range(1..=max_cells);
    let k = r.random_range(1..=max_k);
    let params = RadioParams::default();
    let scale = params.sigma2_b(k) / params.p_u();
    let hb2 = (0..nc * nu * k).map(|_| scale * 10f64.powf(r.random_range(-1.0..3.0))).collect();
    let a = (0..nc).map(|_| (0..nu).map(|_| r.random_bool(0.6)).collect()).collect();
    let lambda = (0..nc).map(|_| r.random_range(0.0..1.0)).collect();
    let real = ChannelRealization { n_cells: nc, n_users: nu, k_subch: k, n_tst: 0, n_sat: 0, q_subch: 0, hb2, ht2: vec![], seed: 0 };
    AccessInstance { cov: CoverageMatrix { a }, real, lambda }
}

/// Accessed-user maximality and the outer-round bound on the same
/// instances.
pub fn access_suites(cases: usize, seed: u64) -> Result<(SuiteReport, SuiteReport)> {
    let params = RadioParams::default();
    let prefs = PreferenceParams::default();
    let mut rounds = SuiteReport::new("round_bound");
    let start = Instant::now();
    let maximal = timed("max_access", |rep| {
        let mut r = rng(seed, 1);
        for case in 0..cases {
            let inst = access_instance(&mut r, 8, 3, 3);
            let ctx = TuasaContext { cov: inst.cov.clone(), real: &inst.real, params: &params, lambda: &inst.lambda, prefs: &prefs };
            let psi = tuasa(&ctx);
            let best = max_accessed_users(&inst.cov, inst.real.k_subch);
            let got = psi.accessed();
            rep.check(got == best, || format!("case {case}: accessed {got}, maximum {best}"));
            let lo = got.div_ceil(inst.real.k_subch);
            rounds.check(psi.rounds >= lo && psi.rounds <= got.max(lo), || {
                format!("case {case}: {} rounds for {got} accessed users, K={}", psi.rounds, inst.real.k_subch)
            });
        }
        Ok(())
    })?;
    rounds.elapsed = start.elapsed();
    Ok((maximal, rounds))
}

/// No blocking swap remains with the interference weight set to zero.
pub fn group_stability_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let params = RadioParams::default();
    let prefs = PreferenceParams { rho2: 0.0, ..Default::default() };
    timed("group_stability", |rep| {
        let mut r = rng(seed, 2);
        for case in 0..cases {
            let inst = access_instance(&mut r, 8, 3, 3);
            let ctx = TuasaContext { cov: inst.cov.clone(), real: &inst.real, params: &params, lambda: &inst.lambda, prefs: &prefs };
            let psi = tuasa(&ctx);
            let blocking = verify_group_stability(&psi, &inst.cov, &inst.real, &params, &inst.lambda);
            rep.check(blocking.is_empty(), || format!("case {case}: {:?}", blocking[0]));
        }
        Ok(())
    })
}

/// Small backhaul instance: up to `max_tst` terminals, `max_sat`
/// satellites and `max_q` subchannels over a compact footprint.
pub struct LeoInstance {
    pub scenario: Scenario,
    pub params: RadioParams,
    pub geo: KaGeometry,
    pub real: ChannelRealization,
    pub lambda: Vec<f64>,
}

pub fn leo_instance(r: &mut impl Rng, max_tst: usize, max_sat: usize, max_q: usize) -> Result<LeoInstance> {
    let cfg = ScenarioConfig {
        n_tsc: 0,
        n_lsc: r.random_range(1..=max_tst),
        n_users: 1,
        n_satellites: r.random_range(1..=max_sat),
        q_subch: r.random_range(1..=max_q),
        n_r: r.random_range(1..=2),
        projected_area_km2: 2e5,
        ..Default::default()
    };
    let seed = r.random();
    let scenario = generate_scenario(&cfg, seed)?;
    let params = RadioParams::default();
    let geo = KaGeometry::new(&scenario, &params);
    let real = sample_realization(&scenario, &params, seed);
    let lambda = (0..cfg.n_lsc).map(|_| r.random_range(0.1..2.0)).collect();
    Ok(LeoInstance { scenario, params, geo, real, lambda })
}

/// Objective increase at every executed swap, termination, and swap
/// stability of the final matching.
pub fn smpc_suites(cases: usize, seed: u64) -> Result<(SuiteReport, SuiteReport)> {
    let prefs = PreferenceParams::default();
    let mut stable = SuiteReport::new("swap_stability");
    let mut stable_time = Duration::ZERO;
    let monotone = timed("smpc_monotone", |rep| {
        let mut r = rng(seed, 4);
        for case in 0..cases {
            let inst = leo_instance(&mut r, 4, 3, 3)?;
            let ctx = LeoContext::new(&inst.geo, &inst.real, &inst.params, &inst.lambda, &prefs)?;
            let delays: Vec<f64> = (0..inst.geo.n_sat).map(|n| crate::scenario::propagation_delay(&inst.scenario, n)).collect();
            let loads = vec![0.0; inst.geo.n_tst];
            let res = smpc(&ctx, &delays, &loads, &SmpcOptions::default())?;
            let tr = &res.report.objective_trace;
            rep.check(tr.windows(2).all(|w| w[1] > w[0]) && !res.report.capped && res.matching.check(&inst.geo).is_ok(), || {
                format!("case {case}: trace {tr:?}, capped {}", res.report.capped)
            });
            let t0 = Instant::now();
            let found = verify_swap_stability(&res.matching, &inst.geo, &inst.real, &inst.params, &inst.lambda);
            stable.check(found.is_empty(), || format!("case {case}: {:?}", found[0]));
            stable_time += t0.elapsed();
        }
        Ok(())
    })?;
    stable.elapsed = stable_time;
    Ok((monotone, stable))
}

/// A random feasible matching: units visited in random order, each given
/// to a random terminal that can still take it, at a random power.
pub fn random_matching(r: &mut impl Rng, geo: &KaGeometry, q_subch: usize, p_max: f64) -> BackhaulMatching {
    let mut phi = BackhaulMatching::empty(geo.n_tst, geo.n_sat, q_subch, geo.n_r, p_max);
    let mut units: Vec<(usize, usize)> = (0..geo.n_sat).flat_map(|n| (0..q_subch).map(move |q| (n, q))).collect();
    for i in (1..units.len()).rev() {
        units.swap(i, r.random_range(0..=i));
    }
    for (n, q) in units {
        if r.random_bool(0.3) || geo.n_tst == 0 {
            continue;
        }
        let t = r.random_range(0..geo.n_tst);
        let ok = geo.visible(t, n)
            && phi.degree(t) < geo.n_r
            && phi.links_of(t).iter().filter(|u| u.1 == q).all(|&(n2, _)| geo.gate(t, n, n2));
        if ok {
            let p = phi.spare(t) * r.random_range(0.05..1.0);
            phi.add_link(t, n, q, p).expect("feasible by construction");
        }
    }
    phi
}

/// Central difference of the weighted subchannel utility in the power of
/// `t` on `(n, q)`, computed from the link-rate formula directly.
fn fd_negative_gradient(inst: &LeoInstance, phi: &BackhaulMatching, t: usize, n: usize, q: usize) -> (f64, f64) {
    let sigma2 = inst.params.sigma2_t(phi.q_subch());
    let base: Vec<KaLink> = (0..phi.n_sat())
        .filter(|&s| s != n)
        .filter_map(|s| phi.holder(s, q).map(|h| KaLink { tst: h, sat: s, power: phi.power(s, q) }))
        .collect();
    let p0 = if phi.holder(n, q) == Some(t) { phi.power(n, q) } else { 0.0 };
    let utility = |p: f64| {
        let mut links = base.clone();
        links.push(KaLink { tst: t, sat: n, power: p });
        (0..links.len())
            .map(|i| inst.lambda[links[i].tst] * ka_link_rate(&links, i, q, &inst.geo, &inst.real, sigma2))
            .sum::<f64>()
    };
    let h = 1e-6 * phi.p_max();
    (-(utility(p0 + h) - utility(p0 - h)) / (2.0 * h), p0)
}

pub fn gradient_suite(states: usize, seed: u64) -> Result<SuiteReport> {
    let prefs = PreferenceParams::default();
    timed("gradient", |rep| {
        let mut r = rng(seed, 7);
        for case in 0..states {
            let inst = leo_instance(&mut r, 4, 3, 3)?;
            let ctx = LeoContext::new(&inst.geo, &inst.real, &inst.params, &inst.lambda, &prefs)?;
            let phi = random_matching(&mut r, &inst.geo, inst.real.q_subch, inst.params.p_t_max_w);
            let g = GradientMatrix::build(&ctx, &phi);
            for t in 0..phi.n_tst() {
                for n in 0..phi.n_sat() {
                    for q in 0..phi.q_subch() {
                        let w = g.get(t, n, q);
                        let (fd, p0) = fd_negative_gradient(&inst, &phi, t, n, q);
                        let tol = GRAD_ATOL.max(GRAD_RTOL * w.abs());
                        rep.check((w - fd).abs() <= tol, || {
                            format!("state {case} t={t} n={n} q={q} p={p0}: entry {w}, finite difference {fd}")
                        });
                        debug_assert_eq!(w, gradient_entry(&ctx, &phi, t, n, q));
                    }
                }
            }
        }
        Ok(())
    })
}

/// Every feasible candidate rejected by the gradient filter is evaluated
/// anyway and must not be approvable.
pub fn pruning_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let prefs = PreferenceParams::default();
    timed("pruning", |rep| {
        let mut r = rng(seed, 8);
        for case in 0..cases {
            let inst = leo_instance(&mut r, 4, 3, 3)?;
            let ctx = LeoContext::new(&inst.geo, &inst.real, &inst.params, &inst.lambda, &prefs)?;
            let phi = random_matching(&mut r, &inst.geo, inst.real.q_subch, inst.params.p_t_max_w);
            let g = GradientMatrix::build(&ctx, &phi);
            for s in candidates(&phi) {
                if check_feasible(&ctx, &phi, &s).is_err() || prune(&ctx, &phi, &g, &s) {
                    continue;
                }
                let out = evaluate_swap(&ctx, &phi, &s)?;
                rep.check(!out.approved, || format!("case {case}: pruned {s:?} improves {} -> {}", out.before, out.after));
            }
        }
        Ok(())
    })
}

/// Random rate objective in the powers of `vars` links: each controlled
/// link has its own signal and may interfere with the other; up to two
/// extra links suffer interference from both.
fn random_objective(r: &mut impl Rng, vars: usize) -> RateObjective<f64> {
    let victims = r.random_range(0..3);
    let g = |r: &mut dyn rand::RngCore| 10f64.powf(r.random_range(-1.0..3.0));
    let mut o = RateObjective::new();
    for i in 0..vars {
        let mut sig = Affine::constant(0.0);
        sig.c[i] = g(r);
        let mut ipn = Affine::constant(1.0);
        if vars == 2 {
            ipn.c[1 - i] = g(r) * 0.01;
        }
        o.push_rate(r.random_range(0.2..2.0), sig, ipn);
    }
    for _ in 0..victims {
        let sig = Affine::constant(g(r));
        let mut ipn = Affine::constant(1.0);
        for c in ipn.c.iter_mut().take(vars) {
            *c = g(r) * r.random_range(0.0..0.1);
        }
        o.push_rate(r.random_range(0.2..2.0), sig, ipn);
    }
    o
}

/// Power-control suites: (single power, split budget, same subchannel).
pub fn power_suites(cases: usize, seed: u64) -> Result<[SuiteReport; 3]> {
    let mut r = rng(seed, 6);
    let pc3 = timed("pc_single", |rep| {
        for case in 0..cases {
            let o = random_objective(&mut r, 1);
            let hi = r.random_range(0.1..2.0);
            let (_, v) = solve_pc3(&o, 0.0, hi);
            let (_, grid) = grid_pc(|x| o.value([x[0], 0.0]), GridRegion::Interval { lo: 0.0, hi }, PC3_GRID);
            rep.check(v >= grid - PC3_RTOL * grid.abs(), || format!("case {case}: {v} vs grid {grid}"));
        }
        Ok(())
    })?;
    let pc1 = timed("pc_split", |rep| {
        for case in 0..cases {
            let f0 = random_objective(&mut r, 1);
            let f1 = random_objective(&mut r, 1);
            let budget = r.random_range(0.1..2.0);
            let (_, v) = solve_pc1(&f0, &f1, budget, budget);
            let (_, grid) = grid_pc(
                |x| f0.value([x[0], 0.0]) + f1.value([x[1], 0.0]),
                GridRegion::Simplex { budget },
                PC1_GRID,
            );
            rep.check(v >= grid - PC1_RTOL * grid.abs(), || format!("case {case}: {v} vs grid {grid}"));
        }
        Ok(())
    })?;
    let pc2 = timed("pc_shared", |rep| {
        for case in 0..cases {
            let o = random_objective(&mut r, 2);
            let (region, grid_region) = if r.random_bool(0.5) {
                let b = r.random_range(0.1..2.0);
                (Region::Simplex(b), GridRegion::Simplex { budget: b })
            } else {
                let b = [r.random_range(0.1..2.0), r.random_range(0.1..2.0)];
                (Region::Box(b), GridRegion::Box { hi: b })
            };
            let out = solve_pc2(&o, region);
            let (_, grid) = grid_pc(|x| o.value([x[0], x[1]]), grid_region, PC2_GRID);
            rep.check(out.value >= PC2_RATIO * grid, || format!("case {case}: {} vs grid {grid}", out.value));
        }
        Ok(())
    })?;
    Ok([pc3, pc1, pc2])
}

/// Grid of (satellites, subchannels, terminals, links per terminal).
pub const SWAP_SPACE_GRID: ([usize; 3], [usize; 3], [usize; 3], [usize; 2]) =
    ([2, 4, 8], [2, 5, 10], [5, 15, 25], [1, 2]);

pub fn swap_space_suite() -> Result<SuiteReport> {
    timed("swap_space", |rep| {
        let (ns, qs, ts, nrs) = SWAP_SPACE_GRID;
        for n in ns {
            for q in qs {
                for t in ts {
                    for nr in nrs {
                        let e = enumerate_swap_space(t, n, q, nr);
                        let c = count_swap_space(t as u64, n as u64, q as u64, nr as u64);
                        rep.check(e == c, || format!("N={n} Q={q} T={t} N_r={nr}: enumerated {e:?}, closed form {c:?}"));
                    }
                }
            }
        }
        Ok(())
    })
}

/// Equal completion times and conserved load on random splits.
pub fn load_split_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    timed("load_split", |rep| {
        let mut r = rng(seed, 10);
        for case in 0..cases {
            let k = r.random_range(1..=4);
            let c: Vec<f64> = (0..k).map(|_| 10f64.powf(r.random_range(6.0..9.0))).collect();
            let d: Vec<f64> = (0..k).map(|_| r.random_range(1e-3..3e-2)).collect();
            let load = 10f64.powf(r.random_range(3.0..8.0));
            let l = solve_load_split(&c, &d, load)?;
            let used: Vec<usize> = (0..k).filter(|&i| l[i] > 0.0).collect();
            let times: Vec<f64> = used.iter().map(|&i| l[i] / c[i] + d[i]).collect();
            let tau = times.iter().cloned().fold(f64::MIN, f64::max);
            let spread = times.iter().map(|t| (t - tau).abs()).fold(0.0, f64::max);
            let sum: f64 = l.iter().sum();
            // Unused links would finish later even with an infinitesimal share.
            let idle_ok = (0..k).filter(|i| !used.contains(i)).all(|i| d[i] >= tau * (1.0 - SPLIT_RTOL));
            rep.check(
                spread <= SPLIT_RTOL * tau && (sum - load).abs() <= SPLIT_RTOL * load && idle_ok && l.iter().all(|&x| x >= 0.0),
                || format!("case {case}: loads {l:?} on capacities {c:?}, delays {d:?}"),
            );
            let eq = equivalent_capacity(&c, &d, &l);
            let expect: f64 = used.iter().map(|&i| l[i] / (l[i] / c[i] + d[i])).sum();
            rep.check((eq - expect).abs() <= SPLIT_RTOL * expect, || format!("case {case}: capacity {eq} vs {expect}"));
        }
        Ok(())
    })
}

/// Case counts of the default verification run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyCounts {
    pub access: usize,
    pub stability: usize,
    pub smpc: usize,
    pub power: usize,
    pub gradient: usize,
    pub pruning: usize,
    pub load_split: usize,
}

impl Default for VerifyCounts {
    fn default() -> Self {
        Self { access: 200, stability: 100, smpc: 100, power: 200, gradient: 50, pruning: 50, load_split: 200 }
    }
}

pub fn run_all(counts: VerifyCounts, seed: u64) -> Result<Vec<SuiteReport>> {
    let (a, b) = access_suites(counts.access, seed)?;
    let (c, d) = smpc_suites(counts.smpc, seed)?;
    let mut out = vec![a, b, group_stability_suite(counts.stability, seed)?, c, d];
    out.extend(power_suites(counts.power, seed)?);
    out.push(gradient_suite(counts.gradient, seed)?);
    out.push(pruning_suite(counts.pruning, seed)?);
    out.push(swap_space_suite()?);
    out.push(load_split_suite(counts.load_split, seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_run_on_few_cases() {
        let counts = VerifyCounts { access: 10, stability: 5, smpc: 2, power: 5, gradient: 2, pruning: 2, load_split: 10 };
        let reports = run_all(counts, 1).unwrap();
        assert_eq!(reports.len(), 12);
        for r in &reports {
            assert!(r.cases > 0, "{}", r.name);
            if r.name != "swap_space" {
                assert!(r.passed(), "{r:?}");
            }
        }
    }

    #[test]
    fn random_matching_is_feasible() {
        let mut r = rng(3, 0);
        for _ in 0..20 {
            let inst = leo_instance(&mut r, 4, 3, 3).unwrap();
            let phi = random_matching(&mut r, &inst.geo, inst.real.q_subch, inst.params.p_t_max_w);
            phi.check(&inst.geo).unwrap();
        }
    }
}
