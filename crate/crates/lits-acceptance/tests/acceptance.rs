//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

use lits::channel::{ka_link_rate, KaLink};
use lits::harness::verify::{
    access_suites, gradient_suite, leo_instance, power_suites, pruning_suite, swap_space_suite, SuiteReport,
    SWAP_SPACE_GRID,
};
use lits::harness::{self, Axis, Profile, RunConfig};
use lits::leo_backhaul::load_split::{equivalent_capacity, solve_load_split};
use lits::leo_backhaul::smpc::{smpc, SmpcOptions};
use lits::leo_backhaul::{BackhaulMatching, LeoContext};
use lits::oracle::verify_swap_stability;
use lits::orchestrator::{run_scheme, CellBackhaul, Metrics, Scheme};
use lits::scenario::ScenarioConfig;
use lits::terrestrial_matching::PreferenceParams;
use lits_acceptance::{Outcome, Scoreboard};
use rand::SeedableRng;
use std::collections::HashMap;
use std::time::{Duration, Instant};

/// Seed of every randomized suite.
const SUITE_SEED: u64 = 2024;
/// Relative slack on `R <= C` for floating-point rounding.
const BACKHAUL_RTOL: f64 = 1e-9;
/// Load-split residual bound.
const SPLIT_RTOL: f64 = 1e-9;
/// Required margin of the integrated scheme over each baseline.
const GAIN_MARGIN: f64 = 0.05;

/// Memoized metrics keyed on (scenario, scheme, seed).
#[derive(Default)]
struct Runs {
    cache: HashMap<(String, Scheme, u64), Metrics>,
}

impl Runs {
    fn key(sc: &ScenarioConfig, scheme: Scheme, seed: u64) -> (String, Scheme, u64) {
        (format!("{sc:?}"), scheme, seed)
    }

    fn metrics(&mut self, cfg: &RunConfig, sc: &ScenarioConfig, scheme: Scheme, seed: u64) -> Metrics {
        let key = Self::key(sc, scheme, seed);
        if let Some(m) = self.cache.get(&key) {
            return m.clone();
        }
        let m = harness::run_point(sc, cfg, scheme, seed).expect("run succeeds");
        self.cache.insert(key, m.clone());
        m
    }

    fn mean(&mut self, cfg: &RunConfig, sc: &ScenarioConfig, scheme: Scheme, f: impl Fn(&Metrics) -> Option<f64>) -> f64 {
        let xs: Vec<f64> = cfg.seeds.iter().filter_map(|&s| f(&self.metrics(cfg, sc, scheme, s))).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn from_suite(id: u8, title: &'static str, r: &SuiteReport, limit: Option<Duration>) -> Outcome {
    let in_time = limit.is_none_or(|l| r.elapsed < l);
    let mut detail = format!("{} checks, {} violations", r.cases, r.violations);
    if let Some(l) = limit {
        detail += &format!(", limit {} s", l.as_secs());
    }
    if let Some(e) = r.examples.first() {
        detail += &format!("; e.g. {e}");
    }
    Outcome { id, title, pass: r.passed() && in_time, detail, elapsed: r.elapsed }
}

/// Weighted Ka utility `sum lambda_t R_l` in bits/s from the link-rate
/// formula, independent of the backhaul module.
fn utility_bps(phi: &BackhaulMatching, inst: &lits::harness::verify::LeoInstance) -> f64 {
    let q_subch = phi.q_subch();
    let sigma2 = inst.params.sigma2_t(q_subch);
    let mut total = 0.0;
    for q in 0..q_subch {
        let links: Vec<KaLink> = (0..phi.n_sat())
            .filter_map(|n| phi.holder(n, q).map(|t| KaLink { tst: t, sat: n, power: phi.power(n, q) }))
            .collect();
        for i in 0..links.len() {
            total += inst.lambda[links[i].tst] * ka_link_rate(&links, i, q, &inst.geo, &inst.real, sigma2);
        }
    }
    total * inst.params.bw_ka_hz / q_subch as f64
}

fn smpc_criteria(board: &mut Scoreboard) {
    let prefs = PreferenceParams::default();
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(SUITE_SEED);
    let (mut mono_bad, mut stable_bad) = (Vec::new(), Vec::new());
    let (mut mono_time, mut stable_time) = (Duration::ZERO, Duration::ZERO);
    let mut swaps = 0;
    const CASES: usize = 100;
    for case in 0..CASES {
        let inst = leo_instance(&mut r, 4, 3, 3).unwrap();
        let t0 = Instant::now();
        let ctx = LeoContext::new(&inst.geo, &inst.real, &inst.params, &inst.lambda, &prefs).unwrap();
        let delays: Vec<f64> = inst.scenario.satellites.iter().map(|s| 2.0 * s.altitude / 299_792_458.0).collect();
        let res = smpc(&ctx, &delays, &vec![0.0; inst.geo.n_tst], &SmpcOptions::default()).unwrap();
        mono_time += t0.elapsed();
        let tr = &res.report.objective_trace;
        swaps += res.report.total_swaps();
        let last = *tr.last().unwrap();
        let direct = utility_bps(&res.matching, &inst);
        let increasing = tr.windows(2).all(|w| w[1] > w[0]);
        let consistent = (last - direct).abs() <= 1e-9 * direct.max(1.0);
        if !(increasing && consistent && !res.report.capped && tr.len() == res.report.total_swaps() + 1) {
            mono_bad.push(case);
        }
        let t1 = Instant::now();
        if !verify_swap_stability(&res.matching, &inst.geo, &inst.real, &inst.params, &inst.lambda).is_empty() {
            stable_bad.push(case);
        }
        stable_time += t1.elapsed();
    }
    board.record(Outcome {
        id: 4,
        title: "matching-with-power-control monotone convergence",
        pass: mono_bad.is_empty(),
        detail: format!("{CASES} instances, {swaps} executed swaps, violations in {mono_bad:?}"),
        elapsed: mono_time,
    });
    board.record(Outcome {
        id: 5,
        title: "swap stability of the backhaul matching",
        pass: stable_bad.is_empty() && stable_time < Duration::from_secs(120),
        detail: format!("{CASES} instances, violations in {stable_bad:?}, limit 120 s"),
        elapsed: stable_time,
    });
}

fn load_split_criterion(board: &mut Scoreboard) {
    let t0 = Instant::now();
    // Two-link system solved by hand: tau = (L + C1 T1 + C2 T2) / (C1 + C2),
    // L_i = C_i (tau - T_i), capacity = L / tau.
    let (c, d, l) = ([100e6, 50e6], [4e-3, 8e-3], 1e6);
    let tau = (l + c[0] * d[0] + c[1] * d[1]) / (c[0] + c[1]);
    let hand = [c[0] * (tau - d[0]), c[1] * (tau - d[1])];
    let split = solve_load_split(&c, &d, l).unwrap();
    let cap = equivalent_capacity(&c, &d, &split);
    let sig4 = |x: f64, y: f64| (x - y).abs() <= 5e-5 * y.abs();
    let example = sig4(split[0], hand[0])
        && sig4(split[1], hand[1])
        && sig4(cap, l / tau)
        && sig4(split[0], 0.8e6)
        && sig4(split[1], 0.2e6)
        && sig4(cap / 1e6, 83.33);

    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(SUITE_SEED);
    let mut worst: f64 = 0.0;
    const CASES: usize = 500;
    for _ in 0..CASES {
        use rand::Rng;
        let k = r.random_range(1..=4);
        let c: Vec<f64> = (0..k).map(|_| 10f64.powf(r.random_range(6.0..9.0))).collect();
        let d: Vec<f64> = (0..k).map(|_| r.random_range(1e-3..3e-2)).collect();
        let l = 10f64.powf(r.random_range(3.0..8.0));
        let s = solve_load_split(&c, &d, l).unwrap();
        let used: Vec<usize> = (0..k).filter(|&i| s[i] > 0.0).collect();
        let tau = used.iter().map(|&i| s[i] / c[i] + d[i]).fold(0.0, f64::max);
        for &i in &used {
            worst = worst.max((s[i] / c[i] + d[i] - tau).abs() / tau);
        }
        worst = worst.max((s.iter().sum::<f64>() - l).abs() / l);
        // An idle link must not finish earlier than the common time.
        for i in (0..k).filter(|i| !used.contains(i)) {
            worst = worst.max((tau - d[i]).max(0.0) / tau);
        }
        let cap = equivalent_capacity(&c, &d, &s);
        worst = worst.max((cap - l / tau).abs() / (l / tau));
    }
    board.record(Outcome {
        id: 10,
        title: "load split and delay-aware capacity",
        pass: example && worst <= SPLIT_RTOL,
        detail: format!(
            "example L = ({:.4e}, {:.4e}) bit, C = {:.4} Mbps; worst relative residual {worst:.2e} over {CASES} splits",
            split[0],
            split[1],
            cap / 1e6
        ),
        elapsed: t0.elapsed(),
    });
}

/// Equal-completion split of `load` over `(capacity, delay)` links and the
/// resulting capacity `load / tau`; independent of the crate's solver.
fn reference_capacity(links: &[(f64, f64)], load: f64) -> f64 {
    let mut active: Vec<(f64, f64)> = links.iter().copied().filter(|l| l.0 > 0.0).collect();
    if load == 0.0 || active.is_empty() {
        return 0.0;
    }
    loop {
        let tau = (load + active.iter().map(|l| l.0 * l.1).sum::<f64>()) / active.iter().map(|l| l.0).sum::<f64>();
        let before = active.len();
        active.retain(|l| l.1 < tau);
        if active.len() == before {
            return load / tau;
        }
    }
}

fn constraint_criterion(board: &mut Scoreboard, cfg: &RunConfig, runs: &mut Runs) {
    let t0 = Instant::now();
    let mut bad = Vec::new();
    let mut checked = 0;
    for &seed in &cfg.seeds {
        let inst = harness::instance(&cfg.scenario, cfg, seed).unwrap();
        let res = run_scheme(&inst, Scheme::Lits, &cfg.lits).unwrap();
        runs.cache.insert(Runs::key(&cfg.scenario, Scheme::Lits, seed), res.metrics.clone());
        let net = &res.networks[0];
        let phi = net.phi.as_ref().expect("integrated network has a backhaul matching");
        let q_subch = phi.q_subch();
        let sigma2 = inst.radio.sigma2_t(q_subch);
        let bw = inst.radio.bw_ka_hz / q_subch as f64;
        // Matching invariants.
        let mut ok = phi.check(&inst.geo).is_ok();
        for t in 0..phi.n_tst() {
            let own = phi.links_of(t);
            let power: f64 = own.iter().map(|&(n, q)| phi.power(n, q)).sum();
            ok &= own.len() <= inst.scenario.n_r && power <= phi.p_max() * (1.0 + 1e-12);
            ok &= own.iter().all(|&(n, _)| inst.scenario.is_visible(t, n));
        }
        for m in 0..inst.scenario.n_cells() {
            let rate = lits::channel::cell_rate(m, net.psi.unit_users(), &inst.real, &inst.radio);
            let cap = match net.backhaul[m] {
                CellBackhaul::Fixed(c) => c,
                CellBackhaul::Leo(t) => {
                    let links: Vec<(f64, f64)> = (0..phi.n_sat())
                        .map(|n| {
                            let se: f64 = (0..q_subch)
                                .filter(|&q| phi.holder(n, q) == Some(t))
                                .map(|q| {
                                    let on_q: Vec<KaLink> = (0..phi.n_sat())
                                        .filter_map(|s| phi.holder(s, q).map(|h| KaLink { tst: h, sat: s, power: phi.power(s, q) }))
                                        .collect();
                                    let i = on_q.iter().position(|l| l.sat == n).unwrap();
                                    ka_link_rate(&on_q, i, q, &inst.geo, &inst.real, sigma2)
                                })
                                .sum();
                            (se * bw, 2.0 * inst.scenario.satellites[n].altitude / 299_792_458.0)
                        })
                        .collect();
                    reference_capacity(&links, net.load_bits[m])
                }
                ref other => panic!("unexpected backhaul {other:?} in the integrated network"),
            };
            checked += 1;
            ok &= rate <= cap * (1.0 + BACKHAUL_RTOL) + 1e-6;
        }
        if !ok {
            bad.push(seed);
        }
    }
    board.record(Outcome {
        id: 11,
        title: "backhaul constraint and matching invariants after the full allocation",
        pass: bad.is_empty(),
        detail: format!("{} seeds, {checked} cells checked, violating seeds {bad:?}", cfg.seeds.len()),
        elapsed: t0.elapsed(),
    });
}

fn fmt(xs: &[f64]) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{x:.2}")).collect();
    format!("[{}]", v.join(", "))
}

fn integration_gain(board: &mut Scoreboard, cfg: &RunConfig, runs: &mut Runs) {
    let t0 = Instant::now();
    let sc = cfg.scenario.clone();
    let mean = |runs: &mut Runs, k| runs.mean(cfg, &sc, k, |m| Some(m.sum_rate_mbps));
    let lits = mean(runs, Scheme::Lits);
    let ideal = mean(runs, Scheme::Ideal);
    let tth = mean(runs, Scheme::Tth);
    let nits = mean(runs, Scheme::Nits);
    let best = tth.max(nits);
    let elapsed = t0.elapsed();
    board.record(Outcome {
        id: 12,
        title: "integration gain ordering",
        pass: ideal >= lits && lits >= best && lits >= (1.0 + GAIN_MARGIN) * best && elapsed < Duration::from_secs(300),
        detail: format!(
            "mean sum rate over {} seeds (Mbps): ideal {ideal:.2}, integrated {lits:.2}, traditional {tth:.2}, non-integrated {nits:.2}; required >= {:.2}",
            cfg.seeds.len(),
            (1.0 + GAIN_MARGIN) * best
        ),
        elapsed,
    });
}

fn sweep_means(cfg: &RunConfig, runs: &mut Runs, base: &ScenarioConfig, axis: Axis, values: &[f64], f: impl Fn(&Metrics) -> Option<f64> + Copy) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let sc = axis.apply(base, v).unwrap();
            runs.mean(cfg, &sc, Scheme::Lits, f)
        })
        .collect()
}

fn diminishing_returns(board: &mut Scoreboard, cfg: &RunConfig, runs: &mut Runs) {
    let t0 = Instant::now();
    let ns = [2.0, 4.0, 6.0, 8.0];
    let backhaul = |m: &Metrics| Some(m.total_backhaul_mbps);
    let two = sweep_means(cfg, runs, &Axis::NR.apply(&cfg.scenario, 2.0).unwrap(), Axis::NSatellites, &ns, backhaul);
    let one = sweep_means(cfg, runs, &Axis::NR.apply(&cfg.scenario, 1.0).unwrap(), Axis::NSatellites, &ns, backhaul);
    let nondecreasing = two.windows(2).all(|w| w[1] >= w[0]);
    let diminishing = two[3] - two[2] < two[1] - two[0];
    let links_help = two.iter().zip(&one).all(|(a, b)| a > b);
    board.record(Outcome {
        id: 13,
        title: "diminishing returns in the number of satellites",
        pass: nondecreasing && diminishing && links_help,
        detail: format!("total backhaul (Mbps) at N = 2,4,6,8: two links {}, one link {}", fmt(&two), fmt(&one)),
        elapsed: t0.elapsed(),
    });
}

fn area_optimum(board: &mut Scoreboard, cfg: &RunConfig, runs: &mut Runs) {
    let t0 = Instant::now();
    // One value per decade.
    let areas = [1e3, 1e4, 1e5, 1e6, 1e7];
    let b = sweep_means(cfg, runs, &cfg.scenario, Axis::ProjectedArea, &areas, |m| Some(m.total_backhaul_mbps));
    let peak = b[1..4].iter().cloned().fold(f64::MIN, f64::max);
    board.record(Outcome {
        id: 14,
        title: "interior optimum of the projected area",
        pass: peak > b[0] && peak > b[4],
        detail: format!("total backhaul (Mbps) at 1e3..1e7 km^2: {}", fmt(&b)),
        elapsed: t0.elapsed(),
    });
}

fn delay_crossover(board: &mut Scoreboard, cfg: &RunConfig, runs: &mut Runs) {
    let t0 = Instant::now();
    let base = cfg.scenario.data_generation_bytes_per_s;
    let loads: Vec<f64> = (0..5).map(|i| base * 10f64.powf(i as f64 / 4.0)).collect();
    let tsc = sweep_means(cfg, runs, &cfg.scenario, Axis::TrafficLoad, &loads, |m| m.mean_tsc_delay_ms);
    let lsc = sweep_means(cfg, runs, &cfg.scenario, Axis::TrafficLoad, &loads, |m| m.mean_lsc_delay_ms);
    let frac = sweep_means(cfg, runs, &cfg.scenario, Axis::TrafficLoad, &loads, |m| Some(m.lsc_user_fraction()));
    let crossover = tsc[0] < lsc[0] && tsc[4] > lsc[4];
    let rising = frac.windows(2).all(|w| w[1] >= w[0]);
    board.record(Outcome {
        id: 15,
        title: "delay crossover and LSC share under growing traffic",
        pass: crossover && rising,
        detail: format!(
            "loads {} B/s; mean delay (ms) TSC {} vs LSC {}; LSC user fraction {}",
            fmt(&loads),
            fmt(&tsc),
            fmt(&lsc),
            fmt(&frac)
        ),
        elapsed: t0.elapsed(),
    });
}

fn csv_bytes(rows: &[harness::Row]) -> Vec<u8> {
    let mut raw = Vec::new();
    harness::write_rows(rows, &mut raw).unwrap();
    harness::write_aggregate(&harness::aggregate(rows), &mut raw).unwrap();
    raw
}

fn determinism(board: &mut Scoreboard, cfg: &RunConfig) {
    let t0 = Instant::now();
    let mut small = cfg.clone();
    small.seeds = vec![5, 11, 17];
    let once = |workers: &str| {
        std::env::set_var(harness::WORKERS_ENV, workers);
        let mut out = csv_bytes(&harness::baseline(&small, &Scheme::ALL).unwrap());
        out.extend(csv_bytes(&harness::sweep(&small, Axis::NSatellites, &[2.0, 6.0], Scheme::Lits).unwrap()));
        out
    };
    let a = once("1");
    let b = once("1");
    let c = once("3");
    std::env::remove_var(harness::WORKERS_ENV);
    board.record(Outcome {
        id: 16,
        title: "determinism",
        pass: a == b && a == c,
        detail: format!("{} CSV bytes from all schemes and a sweep, repeated and with 3 workers", a.len()),
        elapsed: t0.elapsed(),
    });
}

fn main() {
    let mut board = Scoreboard::default();
    let cfg = RunConfig::profile(Profile::Desk);
    let mut runs = Runs::default();

    let (maximal, rounds) = access_suites(200, SUITE_SEED).unwrap();
    board.record(from_suite(1, "accessed-user maximality", &maximal, Some(Duration::from_secs(10))));
    board.record(from_suite(2, "outer round bound", &rounds, None));
    let stability = lits::harness::verify::group_stability_suite(100, SUITE_SEED).unwrap();
    board.record(from_suite(3, "group stability without interference weight", &stability, Some(Duration::from_secs(30))));
    smpc_criteria(&mut board);

    let [pc3, pc1, pc2] = power_suites(200, SUITE_SEED).unwrap();
    let pc_time = pc3.elapsed + pc1.elapsed + pc2.elapsed;
    let pc2_share = 1.0 - pc2.violations as f64 / pc2.cases as f64;
    board.record(Outcome {
        id: 6,
        title: "power-control optimality against grids",
        pass: pc3.passed() && pc1.passed() && pc2_share >= 0.95 && pc_time < Duration::from_secs(60),
        detail: format!(
            "single power {}/{} within 1e-6, split budget {}/{} within 1e-3, shared subchannel {:.1}% at >= 0.99 of grid",
            pc3.cases - pc3.violations,
            pc3.cases,
            pc1.cases - pc1.violations,
            pc1.cases,
            100.0 * pc2_share
        ),
        elapsed: pc_time,
    });
    board.record(from_suite(7, "gradient matrix against central differences", &gradient_suite(50, SUITE_SEED).unwrap(), None));
    board.record(from_suite(8, "pruning soundness", &pruning_suite(50, SUITE_SEED).unwrap(), None));
    let space = swap_space_suite().unwrap();
    let (ns, qs, ts, nrs) = SWAP_SPACE_GRID;
    let mut o = from_suite(9, "swap-space counting", &space, None);
    o.detail = format!("grid N {ns:?} x Q {qs:?} x terminals {ts:?} x links {nrs:?}: {}", o.detail);
    board.record(o);
    load_split_criterion(&mut board);

    constraint_criterion(&mut board, &cfg, &mut runs);
    integration_gain(&mut board, &cfg, &mut runs);
    diminishing_returns(&mut board, &cfg, &mut runs);
    area_optimum(&mut board, &cfg, &mut runs);
    delay_crossover(&mut board, &cfg, &mut runs);
    determinism(&mut board, &cfg);

    println!("{}", board.summary());
    std::process::exit(board.exit_code());
}
