//! Dual coordination of terrestrial association and LEO backhaul, capacity
//! repair, objective accounting and the comparison schemes.

use crate::channel::{cell_rate, cell_spectral_efficiency, sample_realization, terrestrial_rate, ChannelRealization, KaGeometry, RadioParams};
use crate::error::{Error, Result};
use crate::leo_backhaul::smpc::{smpc_initialize, SmpcOptions};
use crate::leo_backhaul::{
    backhaul_capacity, smpc, split_completion_time, BackhaulCapacity, BackhaulMatching, LeoContext,
};
use crate::scenario::{coverage_matrix, propagation_delay, CellKind, Scenario};
use crate::terrestrial_matching::{tuasa, PreferenceParams, TerrestrialMatching, TuasaContext};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const CAPACITY_STREAM: u64 = 0x6268_6175;
const RANDOM_BACKHAUL_STREAM: u64 = 0x726e_6462;

/// Step schedule and stopping rule of the multiplier update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualParams {
    pub lambda_init: f64,
    pub delta0: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for DualParams {
    fn default() -> Self {
        Self { lambda_init: 0.5, delta0: 0.1, gamma: 0.9, epsilon: 1e-7, max_iterations: 500 }
    }
}

impl DualParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_init >= 0.0
            && self.delta0 > 0.0
            && self.gamma > 0.0
            && self.gamma < 1.0
            && self.epsilon > 0.0
            && self.max_iterations > 0
            && [self.lambda_init, self.delta0, self.gamma, self.epsilon].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid dual parameters {self:?}")))
        }
    }

    pub fn delta(&self, t: usize) -> f64 {
        self.delta0 * self.gamma.powi(t as i32)
    }

    /// Whether the step change `|delta(t+1) - delta(t)|` is below epsilon.
    pub fn converged_at(&self, t: usize) -> bool {
        (self.delta(t + 1) - self.delta(t)).abs() < self.epsilon
    }

    /// Outer iterations the schedule allows: the first `t` at which the
    /// step change drops below epsilon, capped.
    pub fn scheduled_iterations(&self) -> usize {
        (0..self.max_iterations).find(|&t| self.converged_at(t)).unwrap_or(self.max_iterations)
    }
}

/// Fixed backhaul of the terrestrially backhauled cells and the traffic
/// accounting window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackhaulParams {
    pub macro_capacity_mbps: f64,
    pub small_capacity_min_mbps: f64,
    pub small_capacity_max_mbps: f64,
    /// Converts rates and data generation into a per-cell load in bits.
    pub accounting_window_s: f64,
}

impl Default for BackhaulParams {
    fn default() -> Self {
        Self {
            macro_capacity_mbps: 150.0,
            small_capacity_min_mbps: 20.0,
            small_capacity_max_mbps: 30.0,
            accounting_window_s: 1.0,
        }
    }
}

impl BackhaulParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.macro_capacity_mbps >= 0.0
            && self.small_capacity_min_mbps >= 0.0
            && self.small_capacity_min_mbps <= self.small_capacity_max_mbps
            && self.small_capacity_max_mbps.is_finite()
            && self.macro_capacity_mbps.is_finite()
            && self.accounting_window_s > 0.0
            && self.accounting_window_s.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid backhaul parameters {self:?}")))
        }
    }
}

/// How the LEO-backhauled cells obtain their links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackhaulSolver {
    #[default]
    Smpc,
    /// Each terminal takes up to `N_r` random feasible units.
    Random,
    /// Each terminal, in order, takes its strongest feasible units.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LitsParams {
    pub dual: DualParams,
    pub backhaul: BackhaulParams,
    pub prefs: PreferenceParams,
    pub solver: BackhaulSolver,
    /// Start each backhaul solve from the previous iteration's matching.
    pub warm_start: bool,
    /// Unpruned stability pass at the end of every backhaul solve.
    pub exhaustive_final_pass: bool,
}

impl Default for LitsParams {
    fn default() -> Self {
        Self {
            dual: DualParams::default(),
            backhaul: BackhaulParams::default(),
            prefs: PreferenceParams::default(),
            solver: BackhaulSolver::Smpc,
            warm_start: true,
            exhaustive_final_pass: true,
        }
    }
}

impl LitsParams {
    pub fn validate(&self) -> Result<()> {
        self.dual.validate()?;
        self.backhaul.validate()?;
        self.prefs.validate()
    }
}

/// A scenario with its channel draw and fixed backhaul capacities.
#[derive(Debug, Clone)]
pub struct Instance {
    pub scenario: Scenario,
    pub radio: RadioParams,
    pub real: ChannelRealization,
    pub geo: KaGeometry,
    /// Traditional backhaul per cell, bits/s: the macro value for cell 0
    /// and one draw per small cell (used by LEO cells only when they are
    /// run with traditional backhaul).
    pub traditional_capacity: Vec<f64>,
    /// Round-trip delay per satellite, seconds.
    pub sat_delay: Vec<f64>,
    pub seed: u64,
}

impl Instance {
    pub fn new(scenario: Scenario, radio: RadioParams, backhaul: &BackhaulParams, seed: u64) -> Result<Self> {
        radio.validate()?;
        backhaul.validate()?;
        let real = sample_realization(&scenario, &radio, seed);
        let geo = KaGeometry::new(&scenario, &radio);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(CAPACITY_STREAM);
        let (lo, hi) = (backhaul.small_capacity_min_mbps, backhaul.small_capacity_max_mbps);
        let traditional_capacity = scenario
            .cells
            .iter()
            .map(|c| match c.kind {
                CellKind::Macro => backhaul.macro_capacity_mbps * 1e6,
                _ => {
                    let u: f64 = rng.random();
                    (lo + (hi - lo) * u) * 1e6
                }
            })
            .collect();
        let sat_delay = (0..scenario.n_satellites()).map(|n| propagation_delay(&scenario, n)).collect();
        Ok(Self { scenario, radio, real, geo, traditional_capacity, sat_delay, seed })
    }
}

/// Backhaul of one cell in a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellBackhaul {
    /// Cell not part of the network.
    Off,
    /// Fixed capacity, bits/s.
    Fixed(f64),
    /// Served by LEO terminal `t`.
    Leo(usize),
    Unlimited,
}

/// Multipliers and step of the dual loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: Vec<f64>,
    pub delta: f64,
    pub t: usize,
}

impl DualState {
    pub fn new(n_cells: usize, p: &DualParams) -> Self {
        Self { lambda: vec![p.lambda_init; n_cells], delta: p.delta0, t: 0 }
    }
}

/// `lambda_m <- max(0, lambda_m - delta (C_m - R_m))` with both in Mbps;
/// unlimited capacities (`None`) drive the multiplier to zero. Then
/// `delta <- delta0 gamma^(t+1)`.
pub fn lagrangian_update(state: &DualState, rates_mbps: &[f64], caps_mbps: &[Option<f64>], p: &DualParams) -> DualState {
    let lambda = state
        .lambda
        .iter()
        .zip(rates_mbps)
        .zip(caps_mbps)
        .map(|((&l, &r), c)| match c {
            Some(c) => (l - state.delta * (c - r)).max(0.0),
            None => 0.0,
        })
        .collect();
    DualState { lambda, delta: p.delta(state.t + 1), t: state.t + 1 }
}

/// One row of the outer-loop history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub delta: f64,
    pub objective: f64,
    pub sum_rate_mbps: f64,
    pub accessed_users: usize,
    /// Largest `R_m - C_m` before repair, Mbps (0 if none).
    pub max_violation_mbps: f64,
}

pub const HISTORY_HEADER: [&str; 6] =
    ["t", "delta", "objective", "sum_rate_mbps", "accessed_users", "max_violation_mbps"];

pub fn write_history_csv<W: std::io::Write>(history: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(HISTORY_HEADER).map_err(io)?;
    for r in history {
        w.write_record([
            r.t.to_string(),
            r.delta.to_string(),
            r.objective.to_string(),
            r.sum_rate_mbps.to_string(),
            r.accessed_users.to_string(),
            r.max_violation_mbps.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one network (a scheme may combine several).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkOutcome {
    pub backhaul: Vec<CellBackhaul>,
    pub psi: TerrestrialMatching,
    pub phi: Option<BackhaulMatching>,
    /// Uplink rate per cell, bits/s.
    pub rate_bps: Vec<f64>,
    /// Backhaul capacity per cell, bits/s; `None` is unlimited.
    pub capacity_bps: Vec<Option<f64>>,
    /// Traffic per cell, bits.
    pub load_bits: Vec<f64>,
    /// Backhaul delay per cell, seconds; `None` is infinite.
    pub delay_s: Vec<Option<f64>>,
    /// Delay-free LEO capacity per terminal, bits/s.
    pub leo_raw_bps: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
}

/// Offloading objective: sum of cell spectral efficiencies plus `mu`
/// per accessed user (bits/s/Hz), recomputed from scratch.
pub fn audit_objective(psi: &TerrestrialMatching, real: &ChannelRealization, params: &RadioParams, mu: f64) -> Result<f64> {
    let mut total = 0.0;
    for (j, m, k) in psi.pairs() {
        total += terrestrial_rate(m, j, k, psi.unit_users(), real, params)?;
    }
    let v = total + mu * psi.accessed() as f64;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("objective {v}")))
    }
}

fn objective(psi: &TerrestrialMatching, real: &ChannelRealization, params: &RadioParams, mu: f64) -> Result<f64> {
    let v: f64 = (0..psi.n_cells()).map(|m| cell_spectral_efficiency(m, psi.unit_users(), real, params)).sum::<f64>()
        + mu * psi.accessed() as f64;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("objective {v}")))
    }
}

/// Traffic of cell `m` in bits: `min(R_m, sum of its users' data
/// generation)` over the accounting window.
pub fn cell_load(inst: &Instance, psi: &TerrestrialMatching, m: usize, rate_bps: f64, p: &BackhaulParams) -> f64 {
    let demand: f64 = psi.users_of_cell(m).map(|(j, _)| inst.scenario.users[j].data_generation * 8.0).sum();
    rate_bps.min(demand) * p.accounting_window_s
}

fn leo_context<'a>(inst: &'a Instance, lambda_tst: &'a [f64], prefs: &'a PreferenceParams) -> Result<LeoContext<'a>> {
    LeoContext::new(&inst.geo, &inst.real, &inst.radio, lambda_tst, prefs)
}

/// Backhaul matching for the given terminal multipliers.
struct BackhaulSolverState {
    cache: HashMap<Vec<u64>, BackhaulMatching>,
    last: Option<BackhaulMatching>,
    rng: ChaCha8Rng,
}

impl BackhaulSolverState {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(RANDOM_BACKHAUL_STREAM);
        Self { cache: HashMap::new(), last: None, rng }
    }

    fn solve(&mut self, inst: &Instance, lambda_tst: &[f64], p: &LitsParams) -> Result<BackhaulMatching> {
        let ctx = leo_context(inst, lambda_tst, &p.prefs)?;
        let phi = match p.solver {
            BackhaulSolver::Smpc => {
                let key: Vec<u64> = lambda_tst.iter().map(|l| l.to_bits()).collect();
                if let Some(phi) = self.cache.get(&key) {
                    phi.clone()
                } else {
                    let opts = SmpcOptions {
                        warm_start: if p.warm_start { self.last.clone() } else { None },
                        exhaustive_final_pass: p.exhaustive_final_pass,
                        ..Default::default()
                    };
                    let zero_loads = vec![0.0; inst.geo.n_tst];
                    let res = smpc(&ctx, &inst.sat_delay, &zero_loads, &opts)?;
                    self.cache.insert(key, res.matching.clone());
                    res.matching
                }
            }
            BackhaulSolver::Greedy => greedy_backhaul(&ctx, &inst.radio),
            BackhaulSolver::Random => random_backhaul(&ctx, &inst.radio, &mut self.rng),
        };
        self.last = Some(phi.clone());
        Ok(phi)
    }
}

fn fits(ctx: &LeoContext, phi: &BackhaulMatching, t: usize, n: usize, q: usize) -> bool {
    phi.holder(n, q).is_none()
        && ctx.geo.visible(t, n)
        && phi.links_of(t).iter().all(|&(n2, q2)| q2 != q || ctx.geo.gate(t, n, n2))
}

/// Each terminal in index order takes its `N_r` strongest feasible units at
/// `P_T / N_r` each.
pub fn greedy_backhaul(ctx: &LeoContext, radio: &RadioParams) -> BackhaulMatching {
    let (nt, ns, qq, nr) = (ctx.geo.n_tst, ctx.geo.n_sat, ctx.real.q_subch, ctx.geo.n_r);
    let mut phi = BackhaulMatching::empty(nt, ns, qq, nr, radio.p_t_max_w);
    if nr == 0 {
        return phi;
    }
    let p0 = radio.p_t_max_w / nr as f64;
    for t in 0..nt {
        while phi.degree(t) < nr {
            let mut best: Option<(f64, usize, usize)> = None;
            for n in 0..ns {
                for q in 0..qq {
                    if fits(ctx, &phi, t, n, q) {
                        let g = ctx.real.ht(t, n, q);
                        if best.is_none_or(|(b, _, _)| g > b) {
                            best = Some((g, n, q));
                        }
                    }
                }
            }
            match best {
                Some((_, n, q)) => phi.add_link(t, n, q, p0).expect("free unit"),
                None => break,
            }
        }
    }
    phi
}

/// Each terminal in index order takes up to `N_r` uniformly random
/// feasible units at `P_T / N_r` each.
pub fn random_backhaul<R: Rng>(ctx: &LeoContext, radio: &RadioParams, rng: &mut R) -> BackhaulMatching {
    let (nt, ns, qq, nr) = (ctx.geo.n_tst, ctx.geo.n_sat, ctx.real.q_subch, ctx.geo.n_r);
    let mut phi = BackhaulMatching::empty(nt, ns, qq, nr, radio.p_t_max_w);
    if nr == 0 {
        return phi;
    }
    let p0 = radio.p_t_max_w / nr as f64;
    let mut units: Vec<(usize, usize)> = (0..ns).flat_map(|n| (0..qq).map(move |q| (n, q))).collect();
    for t in 0..nt {
        units.shuffle(rng);
        for &(n, q) in &units {
            if phi.degree(t) >= nr {
                break;
            }
            if fits(ctx, &phi, t, n, q) {
                phi.add_link(t, n, q, p0).expect("free unit");
            }
        }
    }
    phi
}

/// Per-cell capacity given the backhaul assignment and current loads.
fn capacities(
    inst: &Instance,
    backhaul: &[CellBackhaul],
    leo: Option<&BackhaulCapacity>,
) -> Vec<Option<f64>> {
    backhaul
        .iter()
        .map(|b| match *b {
            CellBackhaul::Off => Some(0.0),
            CellBackhaul::Fixed(c) => Some(c),
            CellBackhaul::Leo(t) => Some(leo.map_or(0.0, |l| l.equivalent[t])),
            CellBackhaul::Unlimited => None,
        })
        .collect::<Vec<_>>()
        .into_iter()
        .take(inst.scenario.n_cells())
        .collect()
}

struct Evaluation {
    rates: Vec<f64>,
    loads: Vec<f64>,
    caps: Vec<Option<f64>>,
    leo: Option<BackhaulCapacity>,
}

fn evaluate(
    inst: &Instance,
    psi: &TerrestrialMatching,
    phi: Option<&BackhaulMatching>,
    backhaul: &[CellBackhaul],
    lambda_tst: &[f64],
    p: &LitsParams,
) -> Result<Evaluation> {
    let nc = inst.scenario.n_cells();
    let rates: Vec<f64> = (0..nc).map(|m| cell_rate(m, psi.unit_users(), &inst.real, &inst.radio)).collect();
    let loads: Vec<f64> = (0..nc).map(|m| cell_load(inst, psi, m, rates[m], &p.backhaul)).collect();
    let leo = match phi {
        Some(phi) => {
            let ctx = leo_context(inst, lambda_tst, &p.prefs)?;
            let tst_loads: Vec<f64> = (0..inst.geo.n_tst)
                .map(|t| {
                    let m = inst.scenario.lsc_cell(t);
                    if matches!(backhaul[m], CellBackhaul::Leo(_)) {
                        loads[m]
                    } else {
                        0.0
                    }
                })
                .collect();
            Some(backhaul_capacity(&ctx, phi, &inst.sat_delay, &tst_loads)?)
        }
        None => None,
    };
    let caps = capacities(inst, backhaul, leo.as_ref());
    Ok(Evaluation { rates, loads, caps, leo })
}

fn violation(rate: f64, cap: Option<f64>) -> f64 {
    cap.map_or(0.0, |c| rate - c)
}

/// Detaches users from cells whose uplink rate exceeds their backhaul, in
/// increasing per-link rate order, one at a time and re-evaluating rates,
/// loads and LEO capacities after each removal, until no cell violates.
pub fn repair_backhaul(
    inst: &Instance,
    psi: &mut TerrestrialMatching,
    phi: Option<&BackhaulMatching>,
    backhaul: &[CellBackhaul],
    lambda_tst: &[f64],
    p: &LitsParams,
) -> Result<usize> {
    let mut removed = 0;
    loop {
        let ev = evaluate(inst, psi, phi, backhaul, lambda_tst, p)?;
        let worst = (0..ev.rates.len()).find(|&m| violation(ev.rates[m], ev.caps[m]) > 0.0);
        let Some(m) = worst else { return Ok(removed) };
        let mut victim: Option<(f64, usize)> = None;
        for (j, k) in psi.users_of_cell(m) {
            let r = terrestrial_rate(m, j, k, psi.unit_users(), &inst.real, &inst.radio)?;
            if victim.is_none_or(|(b, _)| r < b) {
                victim = Some((r, j));
            }
        }
        let (_, j) = victim.expect("a violating cell carries users");
        psi.release(j);
        removed += 1;
    }
}

fn delays(inst: &Instance, ev: &Evaluation, backhaul: &[CellBackhaul]) -> Vec<Option<f64>> {
    (0..ev.rates.len())
        .map(|m| {
            let l = ev.loads[m];
            match backhaul[m] {
                CellBackhaul::Leo(t) => {
                    let leo = ev.leo.as_ref().expect("LEO cells come with capacities");
                    backhaul_delay_leo(&leo.link[t], &inst.sat_delay, &leo.split[t], l)
                }
                _ => backhaul_delay_fixed(l, ev.caps[m]),
            }
        })
        .collect()
}

/// `L / C` for a fixed backhaul; `None` (infinite) if positive load meets
/// zero capacity.
pub fn backhaul_delay_fixed(load_bits: f64, cap_bps: Option<f64>) -> Option<f64> {
    if load_bits <= 0.0 {
        return Some(0.0);
    }
    match cap_bps {
        None => Some(0.0),
        Some(c) if c > 0.0 => Some(load_bits / c),
        Some(_) => None,
    }
}

/// Common completion time of the load split; `None` if the load cannot be
/// carried.
pub fn backhaul_delay_leo(link_bps: &[f64], sat_delay: &[f64], split: &[f64], load_bits: f64) -> Option<f64> {
    if load_bits <= 0.0 {
        return Some(0.0);
    }
    if !link_bps.iter().any(|&c| c > 0.0) {
        return None;
    }
    Some(split_completion_time(link_bps, sat_delay, split))
}

/// Runs the dual loop on one network.
pub fn run_network(inst: &Instance, backhaul: &[CellBackhaul], p: &LitsParams) -> Result<NetworkOutcome> {
    p.validate()?;
    let s = &inst.scenario;
    let nc = s.n_cells();
    if backhaul.len() != nc {
        return Err(Error::Contract("backhaul description does not match the cells".into()));
    }
    let leo_cells: Vec<usize> = (0..nc).filter(|&m| matches!(backhaul[m], CellBackhaul::Leo(_))).collect();
    for &m in &leo_cells {
        if backhaul[m] != CellBackhaul::Leo(s.tst_of_cell(m).ok_or_else(|| Error::Contract(format!("cell {m} has no terminal")))?) {
            return Err(Error::Contract(format!("cell {m} bound to the wrong terminal")));
        }
    }
    let mut cov = coverage_matrix(s);
    for m in 0..nc {
        if backhaul[m] == CellBackhaul::Off {
            cov.a[m].iter_mut().for_each(|a| *a = false);
        }
    }
    let unlimited = backhaul.iter().all(|b| matches!(b, CellBackhaul::Unlimited | CellBackhaul::Off));
    let mut state = DualState::new(nc, &p.dual);
    if unlimited {
        state.lambda.iter_mut().for_each(|l| *l = 0.0);
    }
    let iterations = if unlimited { 1 } else { p.dual.scheduled_iterations() };
    let mut solver = BackhaulSolverState::new(inst.seed);
    let mut history = Vec::with_capacity(iterations);
    let mut last: Option<(TerrestrialMatching, Option<BackhaulMatching>, Vec<f64>)> = None;

    for _ in 0..iterations {
        let lambda_tst: Vec<f64> = (0..inst.geo.n_tst).map(|t| state.lambda[s.lsc_cell(t)]).collect();
        let ctx = TuasaContext { cov: cov.clone(), real: &inst.real, params: &inst.radio, lambda: &state.lambda, prefs: &p.prefs };
        let mut psi = tuasa(&ctx);
        let phi = if leo_cells.is_empty() { None } else { Some(solver.solve(inst, &lambda_tst, p)?) };

        let pre = evaluate(inst, &psi, phi.as_ref(), backhaul, &lambda_tst, p)?;
        let max_violation = (0..nc).map(|m| violation(pre.rates[m], pre.caps[m])).fold(0.0, f64::max);
        repair_backhaul(inst, &mut psi, phi.as_ref(), backhaul, &lambda_tst, p)?;
        let post = evaluate(inst, &psi, phi.as_ref(), backhaul, &lambda_tst, p)?;

        let obj = objective(&psi, &inst.real, &inst.radio, p.prefs.mu)?;
        history.push(IterationRecord {
            t: state.t,
            delta: state.delta,
            objective: obj,
            sum_rate_mbps: post.rates.iter().sum::<f64>() / 1e6,
            accessed_users: psi.accessed(),
            max_violation_mbps: max_violation / 1e6,
        });
        // Subgradient of the relaxed problem: rates before repair.
        let rates_mbps: Vec<f64> = pre.rates.iter().map(|r| r / 1e6).collect();
        let caps_mbps: Vec<Option<f64>> = pre.caps.iter().map(|c| c.map(|c| c / 1e6)).collect();
        state = lagrangian_update(&state, &rates_mbps, &caps_mbps, &p.dual);
        last = Some((psi, phi, lambda_tst));
    }

    let (psi, phi, lambda_tst) = last.expect("at least one iteration");
    let ev = evaluate(inst, &psi, phi.as_ref(), backhaul, &lambda_tst, p)?;
    let delay_s = delays(inst, &ev, backhaul);
    let leo_raw_bps = ev.leo.as_ref().map(|l| l.raw.clone()).unwrap_or_default();
    let objective = objective(&psi, &inst.real, &inst.radio, p.prefs.mu)?;
    Ok(NetworkOutcome {
        backhaul: backhaul.to_vec(),
        psi,
        phi,
        rate_bps: ev.rates,
        capacity_bps: ev.caps,
        load_bits: ev.loads,
        delay_s,
        leo_raw_bps,
        objective,
        iterations,
        history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Lits,
    Ideal,
    Tth,
    Nits,
    Random,
    Greedy,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::Lits, Scheme::Ideal, Scheme::Tth, Scheme::Nits, Scheme::Random, Scheme::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Lits => "lits",
            Scheme::Ideal => "ideal",
            Scheme::Tth => "tth",
            Scheme::Nits => "nits",
            Scheme::Random => "random",
            Scheme::Greedy => "greedy",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme '{s}' (expected lits, ideal, tth, nits, random or greedy)")))
    }
}

/// Summary metrics of a scheme on one instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sum_rate_mbps: f64,
    pub accessed_users: usize,
    pub lsc_users: usize,
    /// Sum of delay-free LEO capacities over terminals serving a LEO cell.
    pub total_backhaul_mbps: f64,
    /// `None` when no cell of the kind carries traffic with finite delay.
    pub mean_tsc_delay_ms: Option<f64>,
    pub mean_lsc_delay_ms: Option<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl Metrics {
    pub fn lsc_user_fraction(&self) -> f64 {
        if self.accessed_users == 0 {
            0.0
        } else {
            self.lsc_users as f64 / self.accessed_users as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scheme: Scheme,
    pub seed: u64,
    pub networks: Vec<NetworkOutcome>,
    pub metrics: Metrics,
}

/// Mean of finite delays over cells of `kind` that carry traffic, ms.
fn mean_delay_ms(inst: &Instance, nets: &[NetworkOutcome], kind: CellKind) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for net in nets {
        for (m, cell) in inst.scenario.cells.iter().enumerate() {
            if cell.kind != kind || net.backhaul[m] == CellBackhaul::Off || net.load_bits[m] <= 0.0 {
                continue;
            }
            if let Some(d) = net.delay_s[m] {
                sum += d;
                count += 1;
            }
        }
    }
    (count > 0).then(|| 1e3 * sum / count as f64)
}

fn metrics(inst: &Instance, nets: &[NetworkOutcome]) -> Metrics {
    let mut m = Metrics::default();
    for net in nets {
        m.sum_rate_mbps += net.rate_bps.iter().sum::<f64>() / 1e6;
        m.accessed_users += net.psi.accessed();
        m.lsc_users += (0..inst.scenario.n_cells())
            .filter(|&c| inst.scenario.cells[c].kind == CellKind::Lsc)
            .map(|c| net.psi.users_of_cell(c).count())
            .sum::<usize>();
        for (t, raw) in net.leo_raw_bps.iter().enumerate() {
            if matches!(net.backhaul[inst.scenario.lsc_cell(t)], CellBackhaul::Leo(_)) {
                m.total_backhaul_mbps += raw / 1e6;
            }
        }
        m.objective += net.objective;
        m.iterations = m.iterations.max(net.iterations);
    }
    m.mean_tsc_delay_ms = mean_delay_ms(inst, nets, CellKind::Tsc);
    m.mean_lsc_delay_ms = mean_delay_ms(inst, nets, CellKind::Lsc);
    m
}

/// Backhaul layout of a scheme: which cells take part and how they are fed.
pub fn scheme_networks(inst: &Instance, scheme: Scheme) -> Vec<Vec<CellBackhaul>> {
    let s = &inst.scenario;
    let integrated: Vec<CellBackhaul> = (0..s.n_cells())
        .map(|m| match (s.cells[m].kind, s.tst_of_cell(m)) {
            (CellKind::Lsc, Some(t)) => CellBackhaul::Leo(t),
            _ => CellBackhaul::Fixed(inst.traditional_capacity[m]),
        })
        .collect();
    match scheme {
        Scheme::Lits | Scheme::Random | Scheme::Greedy => vec![integrated],
        Scheme::Ideal => vec![vec![CellBackhaul::Unlimited; s.n_cells()]],
        Scheme::Tth => vec![(0..s.n_cells()).map(|m| CellBackhaul::Fixed(inst.traditional_capacity[m])).collect()],
        Scheme::Nits => {
            let only = |kind: CellKind| -> Vec<CellBackhaul> {
                (0..s.n_cells())
                    .map(|m| if s.cells[m].kind == kind { integrated[m] } else { CellBackhaul::Off })
                    .collect()
            };
            vec![only(CellKind::Tsc), only(CellKind::Lsc)]
        }
    }
}

pub fn run_scheme(inst: &Instance, scheme: Scheme, p: &LitsParams) -> Result<RunResult> {
    let mut p = p.clone();
    p.solver = match scheme {
        Scheme::Random => BackhaulSolver::Random,
        Scheme::Greedy => BackhaulSolver::Greedy,
        _ => BackhaulSolver::Smpc,
    };
    let networks = scheme_networks(inst, scheme)
        .iter()
        .map(|b| run_network(inst, b, &p))
        .collect::<Result<Vec<_>>>()?;
    let metrics = metrics(inst, &networks);
    Ok(RunResult { scheme, seed: inst.seed, networks, metrics })
}

pub fn run_lits(inst: &Instance, p: &LitsParams) -> Result<RunResult> {
    run_scheme(inst, Scheme::Lits, p)
}

pub fn run_baseline(inst: &Instance, kind: &str, p: &LitsParams) -> Result<RunResult> {
    let scheme: Scheme = kind.parse()?;
    if scheme == Scheme::Lits {
        return Err(Error::Config("'lits' is not a baseline".into()));
    }
    run_scheme(inst, scheme, p)
}

/// Seeding-only backhaul for diagnostics: the one-to-one start of SMPC.
pub fn seeded_backhaul(inst: &Instance, lambda_tst: &[f64], prefs: &PreferenceParams) -> Result<BackhaulMatching> {
    let ctx = leo_context(inst, lambda_tst, prefs)?;
    let mut phi = BackhaulMatching::for_scenario(&inst.scenario, &inst.radio);
    smpc_initialize(&ctx, &mut phi);
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, ScenarioConfig};

    fn desk(seed: u64) -> Instance {
        let cfg = ScenarioConfig { n_tsc: 2, n_lsc: 2, n_users: 10, n_satellites: 3, k_subch: 4, q_subch: 4, ..Default::default() };
        let s = generate_scenario(&cfg, seed).unwrap();
        Instance::new(s, RadioParams::default(), &BackhaulParams::default(), seed).unwrap()
    }

    #[test]
    fn multiplier_update_examples() {
        let p = DualParams::default();
        let st = DualState { lambda: vec![0.5, 0.5, 0.05], delta: 0.01, t: 0 };
        let next = lagrangian_update(&st, &[40.0, 30.0, 0.0], &[Some(30.0), Some(30.0), Some(10.0)], &p);
        assert!((next.lambda[0] - 0.6).abs() < 1e-12);
        assert_eq!(next.lambda[1], 0.5);
        assert_eq!(next.lambda[2], 0.0);
        assert!(next.delta < st.delta.max(p.delta0));
        assert_eq!(next.t, 1);
    }

    #[test]
    fn schedule_length_closed_form() {
        let p = DualParams::default();
        // smallest t with delta0 gamma^t (1 - gamma) < eps
        let expected = ((p.epsilon / (p.delta0 * (1.0 - p.gamma))).ln() / p.gamma.ln()).floor() as usize + 1;
        assert_eq!(p.scheduled_iterations(), expected);
        assert_eq!(expected, 110);
        for t in 0..200 {
            assert!(p.delta(t + 1) < p.delta(t));
        }
    }

    #[test]
    fn delay_examples() {
        assert!((backhaul_delay_fixed(1e6, Some(25e6)).unwrap() - 0.04).abs() < 1e-15);
        assert_eq!(backhaul_delay_fixed(0.0, Some(0.0)), Some(0.0));
        assert_eq!(backhaul_delay_fixed(1.0, Some(0.0)), None);
        let d = backhaul_delay_leo(&[100e6, 50e6], &[4e-3, 8e-3], &[0.8e6, 0.2e6], 1e6).unwrap();
        assert!((d - 12e-3).abs() < 1e-12);
        assert_eq!(backhaul_delay_leo(&[0.0], &[4e-3], &[0.0], 1.0), None);
    }

    #[test]
    fn scheme_names_parse() {
        for k in Scheme::ALL {
            assert_eq!(k.name().parse::<Scheme>().unwrap(), k);
        }
        assert!(matches!("bogus".parse::<Scheme>(), Err(Error::Config(_))));
        let inst = desk(1);
        assert!(run_baseline(&inst, "bogus", &LitsParams::default()).is_err());
    }

    #[test]
    fn zero_capacity_cell_loses_all_users() {
        let inst = desk(2);
        let p = LitsParams::default();
        let n = inst.scenario.n_cells();
        let lambda = vec![0.0; n];
        let ctx = TuasaContext::new(&inst.scenario, &inst.real, &inst.radio, &lambda, &p.prefs).unwrap();
        let mut psi = tuasa(&ctx);
        let m = (1..n).find(|&m| psi.users_of_cell(m).count() > 0).expect("some small cell has users");
        let mut bh: Vec<CellBackhaul> = (0..n).map(|_| CellBackhaul::Unlimited).collect();
        bh[m] = CellBackhaul::Fixed(0.0);
        let before: Vec<usize> = (0..n).map(|c| psi.users_of_cell(c).count()).collect();
        repair_backhaul(&inst, &mut psi, None, &bh, &[], &p).unwrap();
        assert_eq!(psi.users_of_cell(m).count(), 0);
        for c in (0..n).filter(|&c| c != m) {
            assert_eq!(psi.users_of_cell(c).count(), before[c]);
        }
    }

    #[test]
    fn repair_without_violation_is_identity() {
        let inst = desk(3);
        let p = LitsParams::default();
        let n = inst.scenario.n_cells();
        let lambda = vec![0.0; n];
        let ctx = TuasaContext::new(&inst.scenario, &inst.real, &inst.radio, &lambda, &p.prefs).unwrap();
        let mut psi = tuasa(&ctx);
        let copy = psi.clone();
        let bh = vec![CellBackhaul::Unlimited; n];
        assert_eq!(repair_backhaul(&inst, &mut psi, None, &bh, &[], &p).unwrap(), 0);
        assert_eq!(psi, copy);
    }

    #[test]
    fn lits_run_satisfies_backhaul_and_audits() {
        let inst = desk(4);
        let r = run_lits(&inst, &LitsParams::default()).unwrap();
        let net = &r.networks[0];
        for m in 0..inst.scenario.n_cells() {
            if let Some(c) = net.capacity_bps[m] {
                assert!(net.rate_bps[m] <= c, "cell {m}: {} > {c}", net.rate_bps[m]);
            }
        }
        net.phi.as_ref().unwrap().check(&inst.geo).unwrap();
        let audit = audit_objective(&net.psi, &inst.real, &inst.radio, 1.0).unwrap();
        assert!((audit - net.objective).abs() <= 1e-9 * audit.abs().max(1.0));
        assert_eq!(r.metrics.iterations, 110);
        let mut buf = Vec::new();
        write_history_csv(&net.history, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 111);
        assert!(text.starts_with("t,delta,objective,sum_rate_mbps,accessed_users,max_violation_mbps\n"));
    }

    #[test]
    fn ideal_dominates_and_nits_adds_up() {
        let inst = desk(5);
        let p = LitsParams::default();
        let lits = run_lits(&inst, &p).unwrap();
        let ideal = run_scheme(&inst, Scheme::Ideal, &p).unwrap();
        assert!(ideal.metrics.objective >= lits.metrics.objective - 1e-9);
        assert_eq!(ideal.metrics.iterations, 1);
        let nits = run_scheme(&inst, Scheme::Nits, &p).unwrap();
        assert_eq!(nits.networks.len(), 2);
        let parts: f64 = nits.networks.iter().map(|n| n.rate_bps.iter().sum::<f64>() / 1e6).sum();
        assert!((nits.metrics.sum_rate_mbps - parts).abs() < 1e-9);
        let users: usize = nits.networks.iter().map(|n| n.psi.accessed()).sum();
        assert_eq!(nits.metrics.accessed_users, users);
    }

    #[test]
    fn zero_capacity_tth_leaves_small_cells_empty() {
        let inst = desk(6);
        let n = inst.scenario.n_cells();
        let mut bh: Vec<CellBackhaul> = vec![CellBackhaul::Fixed(0.0); n];
        bh[0] = CellBackhaul::Fixed(inst.traditional_capacity[0]);
        let out = run_network(&inst, &bh, &LitsParams::default()).unwrap();
        for m in 1..n {
            assert_eq!(out.psi.users_of_cell(m).count(), 0);
        }
    }
}
