//! Terminal-to-satellite association, subchannel allocation and power control
//! for the LEO-backhauled small cells.
//!
//! Each terminal (TST) may hold up to `N_r` (satellite, subchannel) units
//! within a total power budget. A one-to-one seeding pass is refined by swap
//! operations with power re-optimization until no swap raises the weighted
//! utility of the subchannels it touches.

pub mod load_split;
pub mod power;
pub mod smpc;
pub mod swap;

use crate::channel::{ChannelRealization, KaGeometry, RadioParams};
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::terrestrial_matching::{PreferenceParams, GAIN_FLOOR};
use power::{Affine, RateObjective};
use serde::{Deserialize, Serialize};

pub use load_split::{equivalent_capacity, solve_load_split, split_completion_time};
pub use smpc::{count_swap_space, enumerate_swap_space, smpc, SmpcReport};
pub use swap::{classify_swap, evaluate_swap, least_affected_link, prune, Swap, SwapOutcome, SwapType};

/// One terminal-to-satellite link on a subchannel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub tst: usize,
    pub sat: usize,
    pub sub: usize,
    /// Watts.
    pub power: f64,
}

/// Many-to-one assignment of (satellite, subchannel) units to terminals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BackhaulRecord", try_from = "BackhaulRecord")]
pub struct BackhaulMatching {
    n_tst: usize,
    n_sat: usize,
    q_subch: usize,
    n_r: usize,
    p_max: f64,
    holder: Vec<Option<usize>>,
    power: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackhaulRecord {
    n_tst: usize,
    n_sat: usize,
    q_subch: usize,
    n_r: usize,
    p_max_w: f64,
    links: Vec<Link>,
}

impl From<BackhaulMatching> for BackhaulRecord {
    fn from(b: BackhaulMatching) -> Self {
        Self {
            n_tst: b.n_tst,
            n_sat: b.n_sat,
            q_subch: b.q_subch,
            n_r: b.n_r,
            p_max_w: b.p_max,
            links: b.links(),
        }
    }
}

impl TryFrom<BackhaulRecord> for BackhaulMatching {
    type Error = Error;
    fn try_from(r: BackhaulRecord) -> Result<Self> {
        let mut b = BackhaulMatching::empty(r.n_tst, r.n_sat, r.q_subch, r.n_r, r.p_max_w);
        for l in r.links {
            b.add_link(l.tst, l.sat, l.sub, l.power)?;
        }
        Ok(b)
    }
}

impl BackhaulMatching {
    pub fn empty(n_tst: usize, n_sat: usize, q_subch: usize, n_r: usize, p_max: f64) -> Self {
        Self {
            n_tst,
            n_sat,
            q_subch,
            n_r,
            p_max,
            holder: vec![None; n_sat * q_subch],
            power: vec![0.0; n_sat * q_subch],
        }
    }

    pub fn for_scenario(s: &Scenario, params: &RadioParams) -> Self {
        Self::empty(s.n_lsc(), s.n_satellites(), s.q_subch, s.n_r, params.p_t_max_w)
    }

    pub fn n_tst(&self) -> usize {
        self.n_tst
    }
    pub fn n_sat(&self) -> usize {
        self.n_sat
    }
    pub fn q_subch(&self) -> usize {
        self.q_subch
    }
    pub fn n_r(&self) -> usize {
        self.n_r
    }
    pub fn p_max(&self) -> f64 {
        self.p_max
    }

    #[inline]
    fn idx(&self, n: usize, q: usize) -> usize {
        n * self.q_subch + q
    }

    pub fn holder(&self, n: usize, q: usize) -> Option<usize> {
        self.holder[self.idx(n, q)]
    }

    pub fn power(&self, n: usize, q: usize) -> f64 {
        self.power[self.idx(n, q)]
    }

    /// Flat unit-indexed holders and powers as consumed by the rate formula.
    pub fn holders(&self) -> &[Option<usize>] {
        &self.holder
    }
    pub fn powers(&self) -> &[f64] {
        &self.power
    }

    /// Units `(n, q)` held by terminal `t`, in unit order.
    pub fn links_of(&self, t: usize) -> Vec<(usize, usize)> {
        (0..self.n_sat)
            .flat_map(|n| (0..self.q_subch).map(move |q| (n, q)))
            .filter(|&(n, q)| self.holder(n, q) == Some(t))
            .collect()
    }

    pub fn degree(&self, t: usize) -> usize {
        self.holder.iter().filter(|h| **h == Some(t)).count()
    }

    pub fn allocated(&self, t: usize) -> f64 {
        self.holder
            .iter()
            .zip(&self.power)
            .filter(|(h, _)| **h == Some(t))
            .map(|(_, p)| *p)
            .sum()
    }

    /// Unallocated power of terminal `t`.
    pub fn spare(&self, t: usize) -> f64 {
        (self.p_max - self.allocated(t)).max(0.0)
    }

    pub fn links(&self) -> Vec<Link> {
        let mut out = Vec::new();
        for n in 0..self.n_sat {
            for q in 0..self.q_subch {
                if let Some(tst) = self.holder(n, q) {
                    out.push(Link { tst, sat: n, sub: q, power: self.power(n, q) });
                }
            }
        }
        out
    }

    pub fn links_on(&self, q: usize) -> Vec<Link> {
        (0..self.n_sat)
            .filter_map(|n| {
                self.holder(n, q).map(|tst| Link { tst, sat: n, sub: q, power: self.power(n, q) })
            })
            .collect()
    }

    pub fn add_link(&mut self, t: usize, n: usize, q: usize, p: f64) -> Result<()> {
        if t >= self.n_tst || n >= self.n_sat || q >= self.q_subch {
            return Err(Error::Contract(format!("link ({t}, {n}, {q}) out of range")));
        }
        if self.holder(n, q).is_some() {
            return Err(Error::Contract(format!("unit ({n}, {q}) already held")));
        }
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::Contract(format!("invalid power {p}")));
        }
        let i = self.idx(n, q);
        self.holder[i] = Some(t);
        self.power[i] = p;
        Ok(())
    }

    pub fn remove_link(&mut self, n: usize, q: usize) -> Option<(usize, f64)> {
        let i = self.idx(n, q);
        let t = self.holder[i].take()?;
        let p = std::mem::take(&mut self.power[i]);
        Some((t, p))
    }

    pub fn set_power(&mut self, n: usize, q: usize, p: f64) -> Result<()> {
        let i = self.idx(n, q);
        if self.holder[i].is_none() {
            return Err(Error::Contract(format!("unit ({n}, {q}) is not held")));
        }
        self.power[i] = p;
        Ok(())
    }

    /// Checks unit exclusivity (structural), the per-terminal link cap, the
    /// power budget, visibility and the co-subchannel elevation gate.
    pub fn check(&self, geo: &KaGeometry) -> Result<()> {
        let tol = 1e-9 * self.p_max.max(1.0);
        for t in 0..self.n_tst {
            let links = self.links_of(t);
            if links.len() > self.n_r {
                return Err(Error::Contract(format!("terminal {t} holds {} > {} links", links.len(), self.n_r)));
            }
            let alloc = self.allocated(t);
            if alloc > self.p_max + tol {
                return Err(Error::Contract(format!("terminal {t} allocates {alloc} W > {} W", self.p_max)));
            }
            for (a, &(n1, q1)) in links.iter().enumerate() {
                if !geo.visible(t, n1) {
                    return Err(Error::Visibility { tst: t, sat: n1 });
                }
                if self.power(n1, q1) < 0.0 {
                    return Err(Error::Contract("negative power".into()));
                }
                for &(n2, q2) in &links[a + 1..] {
                    if q1 == q2 && !geo.gate(t, n1, n2) {
                        return Err(Error::Contract(format!(
                            "terminal {t}: satellites {n1} and {n2} share subchannel {q1} inside the elevation gate"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Read-only inputs shared by all backhaul routines.
#[derive(Clone, Copy)]
pub struct LeoContext<'a> {
    pub geo: &'a KaGeometry,
    pub real: &'a ChannelRealization,
    pub params: &'a RadioParams,
    /// Multiplier per terminal.
    pub lambda: &'a [f64],
    pub prefs: &'a PreferenceParams,
    pub sigma2: f64,
}

impl<'a> LeoContext<'a> {
    pub fn new(
        geo: &'a KaGeometry,
        real: &'a ChannelRealization,
        params: &'a RadioParams,
        lambda: &'a [f64],
        prefs: &'a PreferenceParams,
    ) -> Result<Self> {
        if lambda.len() != geo.n_tst {
            return Err(Error::Contract(format!(
                "lambda has {} entries for {} terminals",
                lambda.len(),
                geo.n_tst
            )));
        }
        if real.n_tst != geo.n_tst || real.n_sat != geo.n_sat {
            return Err(Error::Contract("channel realization does not match geometry".into()));
        }
        if lambda.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Contract("terminal multipliers must be finite and >= 0".into()));
        }
        Ok(Self { geo, real, params, lambda, prefs, sigma2: params.sigma2_t(real.q_subch) })
    }

    /// Hz per Ka subchannel.
    pub fn subchannel_bw(&self) -> f64 {
        self.params.bw_ka_hz / self.real.q_subch as f64
    }
}

/// Power of a link in an objective: fixed, or the `i`-th decision variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerSpec {
    Fixed(f64),
    Var(usize),
}

impl PowerSpec {
    fn affine(self, scale: f64) -> Affine<f64> {
        match self {
            PowerSpec::Fixed(p) => Affine::constant(p * scale),
            PowerSpec::Var(i) => {
                let mut c = [0.0; 2];
                c[i] = scale;
                Affine { c, k: 0.0 }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedLink {
    pub tst: usize,
    pub sat: usize,
    pub power: PowerSpec,
}

/// Weighted utility `sum_l lambda_{t_l} R_l` of one subchannel as a function
/// of the variable powers among `links`.
pub fn subchannel_objective(ctx: &LeoContext, q: usize, links: &[PlannedLink]) -> RateObjective<f64> {
    let mut obj = RateObjective::new();
    for (i, me) in links.iter().enumerate() {
        let w = ctx.lambda[me.tst];
        if w == 0.0 {
            continue;
        }
        let signal = me.power.affine(ctx.geo.g_bore * ctx.real.ht(me.tst, me.sat, q));
        let mut ipn = Affine::constant(ctx.sigma2);
        for (k, other) in links.iter().enumerate() {
            if k == i || other.sat == me.sat {
                continue;
            }
            let g = ctx.geo.gain(other.tst, me.sat, other.sat) * ctx.real.ht(other.tst, me.sat, q);
            let a = other.power.affine(g);
            ipn = Affine { c: [ipn.c[0] + a.c[0], ipn.c[1] + a.c[1]], k: ipn.k + a.k };
        }
        obj.push_rate(w, signal, ipn);
    }
    obj
}

pub fn planned_links(phi: &BackhaulMatching, q: usize) -> Vec<PlannedLink> {
    phi.links_on(q)
        .into_iter()
        .map(|l| PlannedLink { tst: l.tst, sat: l.sat, power: PowerSpec::Fixed(l.power) })
        .collect()
}

/// `R_q = sum_{links on q} lambda_t R_{t,n,q}`, bits/s/Hz.
pub fn subchannel_utility(ctx: &LeoContext, phi: &BackhaulMatching, q: usize) -> f64 {
    subchannel_objective(ctx, q, &planned_links(phi, q)).value([0.0, 0.0])
}

/// `sum_q R_q`, bits/s/Hz.
pub fn total_utility(ctx: &LeoContext, phi: &BackhaulMatching) -> f64 {
    (0..phi.q_subch).map(|q| subchannel_utility(ctx, phi, q)).sum()
}

/// `sum_m lambda_m C~_m`, bits/s.
pub fn weighted_capacity(ctx: &LeoContext, phi: &BackhaulMatching) -> f64 {
    total_utility(ctx, phi) * ctx.subchannel_bw()
}

/// `-dR_q / dp` for terminal `t` on unit `(n, q)`: at the current power if
/// `t` holds the unit, otherwise with `t` placed on it at zero power (any
/// other holder removed).
pub fn gradient_entry(ctx: &LeoContext, phi: &BackhaulMatching, t: usize, n: usize, q: usize) -> f64 {
    let mut links = planned_links(phi, q);
    let (x, pos) = match links.iter().position(|l| l.sat == n) {
        Some(i) if links[i].tst == t => {
            let p = match links[i].power {
                PowerSpec::Fixed(p) => p,
                PowerSpec::Var(_) => unreachable!(),
            };
            (p, i)
        }
        Some(i) => {
            links[i].tst = t;
            (0.0, i)
        }
        None => {
            links.push(PlannedLink { tst: t, sat: n, power: PowerSpec::Fixed(0.0) });
            (0.0, links.len() - 1)
        }
    };
    links[pos].power = PowerSpec::Var(0);
    -subchannel_objective(ctx, q, &links).grad([x, 0.0])[0]
}

/// Per-terminal `N x Q` matrices of [`gradient_entry`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientMatrix {
    pub n_sat: usize,
    pub q_subch: usize,
    /// `w[t][n * Q + q]`.
    pub w: Vec<Vec<f64>>,
}

impl GradientMatrix {
    pub fn build(ctx: &LeoContext, phi: &BackhaulMatching) -> Self {
        let (ns, qq) = (phi.n_sat, phi.q_subch);
        let w = (0..phi.n_tst)
            .map(|t| {
                (0..ns)
                    .flat_map(|n| (0..qq).map(move |q| (n, q)))
                    .map(|(n, q)| gradient_entry(ctx, phi, t, n, q))
                    .collect()
            })
            .collect();
        Self { n_sat: ns, q_subch: qq, w }
    }

    /// Recomputes the entries on subchannel `q` for every terminal.
    pub fn refresh_subchannel(&mut self, ctx: &LeoContext, phi: &BackhaulMatching, q: usize) {
        for t in 0..self.w.len() {
            for n in 0..self.n_sat {
                self.w[t][n * self.q_subch + q] = gradient_entry(ctx, phi, t, n, q);
            }
        }
    }

    pub fn get(&self, t: usize, n: usize, q: usize) -> f64 {
        self.w[t][n * self.q_subch + q]
    }
}

/// Preference of existing unit `(n, q)` for candidate `(t2, (n2, q))`:
/// `v [G_bore |h_{t2,n2,q}|^2]^rho1 / [G_{t2,n}^{t2,n2} |h_{t2,n,q}|^2]^rho2`
/// with `v` the visibility indicator of `(t2, n2)`.
pub fn tst_preference(ctx: &LeoContext, n: usize, q: usize, t2: usize, n2: usize) -> f64 {
    if !ctx.geo.visible(t2, n2) {
        return 0.0;
    }
    log_tst_preference(ctx, n, q, t2, n2).exp()
}

pub(crate) fn log_tst_preference(ctx: &LeoContext, n: usize, q: usize, t2: usize, n2: usize) -> f64 {
    let own = (ctx.geo.g_bore * ctx.real.ht(t2, n2, q)).max(GAIN_FLOOR).ln();
    let cross = (ctx.geo.gain(t2, n, n2) * ctx.real.ht(t2, n, q)).max(GAIN_FLOOR).ln();
    ctx.prefs.rho1 * own - ctx.prefs.rho2 * cross
}

/// Capacity of the `(t, n)` link summed over its subchannels, bits/s.
pub fn link_capacity(ctx: &LeoContext, phi: &BackhaulMatching, t: usize, n: usize) -> f64 {
    let se: f64 = (0..phi.q_subch)
        .filter(|&q| phi.holder(n, q) == Some(t))
        .map(|q| {
            crate::channel::ka_rate(t, n, q, phi.holders(), phi.powers(), ctx.geo, ctx.real, ctx.params)
                .expect("held link")
        })
        .sum();
    se * ctx.subchannel_bw()
}

/// Per-terminal capacities, load split and delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackhaulCapacity {
    /// `C_{t,n}` in bits/s, `[t][n]`.
    pub link: Vec<Vec<f64>>,
    /// Round-trip propagation delay per satellite, seconds.
    pub delay: Vec<f64>,
    /// Traffic offered per terminal, bits.
    pub load: Vec<f64>,
    /// Load split `L_{t,n}` in bits.
    pub split: Vec<Vec<f64>>,
    /// Delay-free capacity `sum_n C_{t,n}`, bits/s.
    pub raw: Vec<f64>,
    /// Delay-aware equivalent capacity, bits/s.
    pub equivalent: Vec<f64>,
    /// Common completion time of each terminal's split, seconds.
    pub completion: Vec<f64>,
}

pub fn backhaul_capacity(
    ctx: &LeoContext,
    phi: &BackhaulMatching,
    delays: &[f64],
    loads: &[f64],
) -> Result<BackhaulCapacity> {
    let nt = phi.n_tst;
    if loads.len() != nt || delays.len() != phi.n_sat {
        return Err(Error::Contract("load or delay vector has the wrong length".into()));
    }
    let link: Vec<Vec<f64>> = (0..nt)
        .map(|t| (0..phi.n_sat).map(|n| link_capacity(ctx, phi, t, n)).collect())
        .collect();
    let mut split = Vec::with_capacity(nt);
    let mut raw = Vec::with_capacity(nt);
    let mut equivalent = Vec::with_capacity(nt);
    let mut completion = Vec::with_capacity(nt);
    for t in 0..nt {
        let c = &link[t];
        raw.push(c.iter().sum());
        let l = if c.iter().any(|&x| x > 0.0) {
            solve_load_split(c, delays, loads[t])?
        } else {
            // Nothing to carry the load: the terminal contributes no capacity.
            vec![0.0; c.len()]
        };
        equivalent.push(equivalent_capacity(c, delays, &l));
        completion.push(split_completion_time(c, delays, &l));
        split.push(l);
    }
    Ok(BackhaulCapacity { link, delay: delays.to_vec(), load: loads.to_vec(), split, raw, equivalent, completion })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_realization;
    use crate::scenario::{generate_scenario, ScenarioConfig};

    pub(crate) fn fixture(seed: u64) -> (Scenario, RadioParams, KaGeometry, ChannelRealization) {
        let cfg = ScenarioConfig {
            n_tsc: 1,
            n_lsc: 3,
            n_users: 4,
            n_satellites: 3,
            q_subch: 3,
            projected_area_km2: 2e5,
            ..Default::default()
        };
        let s = generate_scenario(&cfg, seed).unwrap();
        let p = RadioParams::default();
        let g = KaGeometry::new(&s, &p);
        let r = sample_realization(&s, &p, seed);
        (s, p, g, r)
    }

    #[test]
    fn matching_bookkeeping() {
        let mut b = BackhaulMatching::empty(2, 2, 2, 2, 2.0);
        b.add_link(0, 0, 1, 0.5).unwrap();
        b.add_link(0, 1, 1, 0.7).unwrap();
        assert!(b.add_link(1, 0, 1, 0.1).is_err());
        assert_eq!(b.degree(0), 2);
        assert!((b.spare(0) - 0.8).abs() < 1e-12);
        assert_eq!(b.links_of(0), vec![(0, 1), (1, 1)]);
        assert_eq!(b.remove_link(0, 1), Some((0, 0.5)));
        assert_eq!(b.spare(1), 2.0);
        let text = serde_json::to_string(&b).unwrap();
        let back: BackhaulMatching = serde_json::from_str(&text).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn utility_matches_rate_formula() {
        let (_s, p, g, r) = fixture(5);
        let lambda = [0.3, 0.9, 0.6];
        let prefs = PreferenceParams::default();
        let ctx = LeoContext::new(&g, &r, &p, &lambda, &prefs).unwrap();
        let mut b = BackhaulMatching::empty(3, 3, 3, 2, 2.0);
        b.add_link(0, 0, 1, 0.4).unwrap();
        b.add_link(1, 1, 1, 1.1).unwrap();
        b.add_link(2, 2, 1, 0.2).unwrap();
        b.add_link(2, 0, 0, 0.9).unwrap();
        let direct: f64 = b
            .links_on(1)
            .iter()
            .map(|l| {
                lambda[l.tst]
                    * crate::channel::ka_rate(l.tst, l.sat, 1, b.holders(), b.powers(), &g, &r, &p).unwrap()
            })
            .sum();
        assert!((subchannel_utility(&ctx, &b, 1) - direct).abs() < 1e-12 * direct.max(1.0));
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let (_s, p, g, r) = fixture(6);
        let lambda = [1.0, 0.5, 0.7];
        let prefs = PreferenceParams::default();
        let ctx = LeoContext::new(&g, &r, &p, &lambda, &prefs).unwrap();
        let mut b = BackhaulMatching::empty(3, 3, 3, 2, 2.0);
        b.add_link(0, 0, 2, 0.4).unwrap();
        b.add_link(1, 1, 2, 1.1).unwrap();
        let w = gradient_entry(&ctx, &b, 0, 0, 2);
        let h = 1e-6 * 2.0;
        let mut up = b.clone();
        up.set_power(0, 2, 0.4 + h).unwrap();
        let mut dn = b.clone();
        dn.set_power(0, 2, 0.4 - h).unwrap();
        let fd = -(subchannel_utility(&ctx, &up, 2) - subchannel_utility(&ctx, &dn, 2)) / (2.0 * h);
        assert!((w - fd).abs() <= 1e-6_f64.max(1e-4 * w.abs()), "{w} vs {fd}");
    }

    #[test]
    fn link_capacity_unit_conversion() {
        let (_s, p, g, mut r) = fixture(7);
        let lambda = [1.0; 3];
        let prefs = PreferenceParams::default();
        let sigma2 = p.sigma2_t(3);
        // SNR 3 on a single link: 2 bits/s/Hz on 400/3 MHz.
        r.set_ht(0, 1, 0, 3.0 * sigma2 / g.g_bore);
        let ctx = LeoContext::new(&g, &r, &p, &lambda, &prefs).unwrap();
        let mut b = BackhaulMatching::empty(3, 3, 3, 2, 2.0);
        assert_eq!(link_capacity(&ctx, &b, 0, 1), 0.0);
        b.add_link(0, 1, 0, 1.0).unwrap();
        assert!((link_capacity(&ctx, &b, 0, 1) - 2.0 * 400e6 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn preference_examples() {
        let (s, p, g, r) = fixture(8);
        let lambda = [1.0; 3];
        let optimistic = PreferenceParams { rho1: 1.0, rho2: 0.0, mu: 1.0 };
        let ctx = LeoContext::new(&g, &r, &p, &lambda, &optimistic).unwrap();
        for t in 0..3 {
            for n2 in 0..3 {
                let w = tst_preference(&ctx, (n2 + 1) % 3, 0, t, n2);
                if s.is_visible(t, n2) {
                    assert!((w / (g.g_bore * r.ht(t, n2, 0)) - 1.0).abs() < 1e-12);
                } else {
                    assert_eq!(w, 0.0);
                }
            }
        }
    }
}
