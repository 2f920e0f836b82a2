//! Transmit-power control for at most two links of one terminal.
//!
//! A subchannel utility seen as a function of the controlled powers is a
//! weighted sum of `log2(num(x) / den(x))` terms whose numerator and
//! denominator are affine in `x = (x0, x1)`: a link's rate is
//! `log2((S + I + N) / (I + N))` with signal `S` and interference `I` both
//! affine in the powers. Every `log2(affine)` is concave, so the utility is a
//! difference of concave functions.

use crate::scalar::Scalar;
use std::sync::OnceLock;

/// `c[0] * x0 + c[1] * x1 + k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine<T> {
    pub c: [T; 2],
    pub k: T,
}

impl<T: Scalar> Affine<T> {
    pub fn constant(k: T) -> Self {
        Self { c: [T::zero(); 2], k }
    }

    #[inline]
    pub fn at(&self, x: [T; 2]) -> T {
        self.c[0] * x[0] + self.c[1] * x[1] + self.k
    }
}

/// `weight * log2(num(x) / den(x))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogTerm<T> {
    pub weight: T,
    pub num: Affine<T>,
    pub den: Affine<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RateObjective<T> {
    pub terms: Vec<LogTerm<T>>,
}

fn ln2<T: Scalar>() -> T {
    T::lit(std::f64::consts::LN_2)
}

impl<T: Scalar> RateObjective<T> {
    pub fn new() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn push_rate(&mut self, weight: T, signal: Affine<T>, interference_plus_noise: Affine<T>) {
        let num = Affine {
            c: [signal.c[0] + interference_plus_noise.c[0], signal.c[1] + interference_plus_noise.c[1]],
            k: signal.k + interference_plus_noise.k,
        };
        self.terms.push(LogTerm { weight, num, den: interference_plus_noise });
    }

    pub fn value(&self, x: [T; 2]) -> T {
        self.terms.iter().fold(T::zero(), |acc, t| {
            let n = t.num.at(x);
            let d = t.den.at(x);
            // ln(n/d) = ln1p((n-d)/d) keeps precision for weak links.
            acc + t.weight * ((n - d) / d).ln_1p()
        }) / ln2()
    }

    pub fn grad(&self, x: [T; 2]) -> [T; 2] {
        let mut g = [T::zero(); 2];
        for t in &self.terms {
            let n = t.num.at(x);
            let d = t.den.at(x);
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = *gi + t.weight * (t.num.c[i] / n - t.den.c[i] / d);
            }
        }
        [g[0] / ln2(), g[1] / ln2()]
    }

    /// Concave part `sum w log2 num` minus a linear term.
    fn concave_part(&self, x: [T; 2], lin: [T; 2]) -> T {
        self.terms
            .iter()
            .fold(T::zero(), |acc, t| acc + t.weight * t.num.at(x).ln())
            / ln2()
            - lin[0] * x[0]
            - lin[1] * x[1]
    }

    fn concave_grad_hess(&self, x: [T; 2], lin: [T; 2]) -> ([T; 2], [[T; 2]; 2]) {
        let mut g = [T::zero(); 2];
        let mut h = [[T::zero(); 2]; 2];
        for t in &self.terms {
            let n = t.num.at(x);
            let c = t.num.c;
            for i in 0..2 {
                g[i] = g[i] + t.weight * c[i] / n;
                for j in 0..2 {
                    h[i][j] = h[i][j] - t.weight * c[i] * c[j] / (n * n);
                }
            }
        }
        let l = ln2::<T>();
        (
            [g[0] / l - lin[0], g[1] / l - lin[1]],
            [[h[0][0] / l, h[0][1] / l], [h[1][0] / l, h[1][1] / l]],
        )
    }

    /// Gradient of the subtracted concave part `sum w log2 den`.
    fn den_grad(&self, x: [T; 2]) -> [T; 2] {
        let mut g = [T::zero(); 2];
        for t in &self.terms {
            let d = t.den.at(x);
            for (i, gi) in g.iter_mut().enumerate() {
                *gi = *gi + t.weight * t.den.c[i] / d;
            }
        }
        [g[0] / ln2(), g[1] / ln2()]
    }
}

const UNIFORM_POINTS: usize = 512;
const GEOMETRIC_POINTS: usize = 128;
const BISECTION_STEPS: usize = 64;

/// Sorted fractions of the search interval: a uniform grid plus geometric
/// points that resolve features near the lower end, where link SINRs change
/// fastest.
fn grid_fractions() -> &'static [f64] {
    static FRACTIONS: OnceLock<Vec<f64>> = OnceLock::new();
    FRACTIONS.get_or_init(|| {
        let mut f: Vec<f64> = (0..=UNIFORM_POINTS).map(|i| i as f64 / UNIFORM_POINTS as f64).collect();
        let first = 1e-12_f64;
        let ratio = (1.0 / first).powf(1.0 / GEOMETRIC_POINTS as f64);
        let mut r = first;
        for _ in 0..GEOMETRIC_POINTS {
            f.push(r);
            r *= ratio;
        }
        f.sort_by(f64::total_cmp);
        f.dedup();
        f
    })
}

/// Candidate maximizers of a smooth scalar function on `[lo, hi]`: both ends
/// and every interior point where the derivative changes sign from positive
/// to non-positive, located by bracketing on a mixed uniform/geometric grid
/// and bisection.
pub fn scalar_candidates<T: Scalar>(df: impl Fn(T) -> T, lo: T, hi: T) -> Vec<T> {
    let mut out = vec![lo];
    if hi <= lo {
        return out;
    }
    out.push(hi);
    let span = hi - lo;
    let grid: Vec<T> = grid_fractions().iter().map(|&f| lo + span * T::lit(f)).collect();

    let mut prev_x = grid[0];
    let mut prev_d = df(prev_x);
    for &x in &grid[1..] {
        let d = df(x);
        if prev_d > T::zero() && d <= T::zero() {
            let (mut a, mut b) = (prev_x, x);
            for _ in 0..BISECTION_STEPS {
                let m = (a + b) / T::lit(2.0);
                if m <= a || m >= b {
                    break;
                }
                if df(m) > T::zero() {
                    a = m;
                } else {
                    b = m;
                }
            }
            out.push((a + b) / T::lit(2.0));
        }
        prev_x = x;
        prev_d = d;
    }
    out
}

fn best_of<T: Scalar>(f: impl Fn(T) -> T, pts: &[T]) -> (T, T) {
    let mut best = (pts[0], f(pts[0]));
    for &p in &pts[1..] {
        let v = f(p);
        if v > best.1 {
            best = (p, v);
        }
    }
    best
}

/// Single-power problem: maximize `obj` over `x0 in [lo, hi]` with `x1 = 0`.
/// Returns `(argmax, value)`.
pub fn solve_pc3<T: Scalar>(obj: &RateObjective<T>, lo: T, hi: T) -> (T, T) {
    let f = |p: T| obj.value([p, T::zero()]);
    let df = |p: T| obj.grad([p, T::zero()])[0];
    best_of(f, &scalar_candidates(df, lo, hi.max(lo)))
}

/// Two powers on different subchannels: `f0(x0) + f1(x1)` with
/// `x0 + x1 <= budget`, each power also capped at `cap`.
///
/// Each part is first maximized alone on `[0, cap]`; if the two optima fit
/// the budget they are returned. Otherwise the best of the budget edge
/// `x0 = budget - x1` and of every pair of single-variable candidates that
/// fits is returned.
pub fn solve_pc1<T: Scalar>(
    f0: &RateObjective<T>,
    f1: &RateObjective<T>,
    budget: T,
    cap: T,
) -> ([T; 2], T) {
    let zero = T::zero();
    if budget <= zero {
        return ([zero, zero], f0.value([zero; 2]) + f1.value([zero; 2]));
    }
    let g0 = |p: T| f0.value([p, zero]);
    let g1 = |p: T| f1.value([p, zero]);
    let d0 = |p: T| f0.grad([p, zero])[0];
    let d1 = |p: T| f1.grad([p, zero])[0];
    let c0 = scalar_candidates(d0, zero, cap);
    let c1 = scalar_candidates(d1, zero, cap);
    let (a, va) = best_of(g0, &c0);
    let (b, vb) = best_of(g1, &c1);
    if a + b <= budget {
        return ([a, b], va + vb);
    }
    let edge = |x1: T| g0(budget - x1) + g1(x1);
    let dedge = |x1: T| d1(x1) - d0(budget - x1);
    let hi = budget.min(cap);
    let lo = (budget - cap).max(zero);
    let (x1, v) = best_of(edge, &scalar_candidates(dedge, lo, hi));
    let mut best = ([budget - x1, x1], v);
    for &p in &c0 {
        for &q in &c1 {
            if p + q <= budget {
                let v = g0(p) + g1(q);
                if v > best.1 {
                    best = ([p, q], v);
                }
            }
        }
    }
    best
}

/// Feasible region of a two-power problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region<T> {
    /// `x0 + x1 <= budget`, both non-negative.
    Simplex(T),
    /// `0 <= x0 <= b[0]`, `0 <= x1 <= b[1]`.
    Box([T; 2]),
}

impl<T: Scalar> Region<T> {
    fn corners(&self) -> Vec<[T; 2]> {
        let z = T::zero();
        match *self {
            Region::Simplex(b) => vec![[z, z], [b, z], [z, b]],
            Region::Box(b) => vec![[z, z], [b[0], z], [z, b[1]], [b[0], b[1]]],
        }
    }

    fn starts(&self) -> Vec<[T; 2]> {
        let two = T::lit(2.0);
        let z = T::zero();
        match *self {
            Region::Simplex(b) => vec![[b, z], [z, b], [b / two / two, b / two / two]],
            Region::Box(b) => vec![[b[0], z], [z, b[1]], [b[0] / two, b[1] / two]],
        }
    }

    fn contains(&self, x: [T; 2]) -> bool {
        let z = T::zero();
        let slack = T::lit(1e-12);
        match *self {
            Region::Simplex(b) => x[0] >= z && x[1] >= z && x[0] + x[1] <= b * (T::one() + slack),
            Region::Box(b) => {
                x[0] >= z && x[1] >= z && x[0] <= b[0] * (T::one() + slack) && x[1] <= b[1] * (T::one() + slack)
            }
        }
    }

    /// Boundary segments as (start, direction, length).
    fn edges(&self) -> Vec<([T; 2], [T; 2], T)> {
        let (z, o) = (T::zero(), T::one());
        match *self {
            Region::Simplex(b) => vec![
                ([z, z], [o, z], b),
                ([z, z], [z, o], b),
                ([b, z], [-o, o], b),
            ],
            Region::Box(b) => vec![
                ([z, z], [o, z], b[0]),
                ([z, z], [z, o], b[1]),
                ([b[0], z], [z, o], b[1]),
                ([z, b[1]], [o, z], b[0]),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pc2Outcome<T> {
    pub x: [T; 2],
    pub value: T,
    /// False when some start hit the iteration cap before the gain dropped
    /// below tolerance.
    pub converged: bool,
}

pub const DCA_TOL: f64 = 1e-8;
pub const DCA_MAX_ITERS: usize = 100;

/// Two powers on one subchannel, solved by difference-of-concave iteration:
/// the subtracted concave part is linearized at the current point and the
/// remaining concave problem is solved exactly over `region`. Three starts
/// (two extreme points and an interior point); the best iterate is kept.
pub fn solve_pc2<T: Scalar>(obj: &RateObjective<T>, region: Region<T>) -> Pc2Outcome<T> {
    let mut best = Pc2Outcome { x: [T::zero(); 2], value: obj.value([T::zero(); 2]), converged: true };
    for c in region.corners() {
        let v = obj.value(c);
        if v > best.value {
            best.x = c;
            best.value = v;
        }
    }
    let tol = T::lit(DCA_TOL);
    for start in region.starts() {
        let mut x = start;
        let mut fx = obj.value(x);
        let mut converged = false;
        for _ in 0..DCA_MAX_ITERS {
            let lin = obj.den_grad(x);
            let next = maximize_concave(obj, lin, region);
            let fn_ = obj.value(next);
            if fn_ > best.value {
                best.x = next;
                best.value = fn_;
            }
            let gain = fn_ - fx;
            x = next;
            fx = fn_;
            if gain <= tol * fx.abs().max(T::one()) {
                converged = true;
                break;
            }
        }
        best.converged &= converged;
    }
    best
}

/// Maximizes the concave function `sum w log2 num(x) - lin . x` over the
/// region: interior Newton point if feasible, else the best point on the
/// boundary (each edge is a 1-D concave problem).
fn maximize_concave<T: Scalar>(obj: &RateObjective<T>, lin: [T; 2], region: Region<T>) -> [T; 2] {
    let phi = |x: [T; 2]| obj.concave_part(x, lin);
    let mut best: Option<([T; 2], T)> = None;
    let mut consider = |x: [T; 2], v: T| {
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((x, v));
        }
    };

    if let Some(x) = newton_interior(obj, lin, region) {
        return x;
    }
    for (o, d, len) in region.edges() {
        let at = |s: T| [o[0] + d[0] * s, o[1] + d[1] * s];
        let dphi = |s: T| {
            let (g, _) = obj.concave_grad_hess(at(s), lin);
            g[0] * d[0] + g[1] * d[1]
        };
        let s = concave_line_max(dphi, len);
        let x = at(s);
        consider(x, phi(x));
    }
    best.expect("region has edges").0
}

/// Unconstrained maximizer by damped Newton, returned only if it converges
/// strictly inside the region.
fn newton_interior<T: Scalar>(obj: &RateObjective<T>, lin: [T; 2], region: Region<T>) -> Option<[T; 2]> {
    let centre = region.starts()[2];
    let mut x = centre;
    let phi = |x: [T; 2]| obj.concave_part(x, lin);
    let valid = |x: [T; 2]| obj.terms.iter().all(|t| t.num.at(x) > T::zero());
    for _ in 0..50 {
        let (g, h) = obj.concave_grad_hess(x, lin);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        // Singular Hessian (e.g. a variable absent from every numerator):
        // no isolated interior maximum.
        if !(det > T::zero() && h[0][0] < T::zero()) {
            return None;
        }
        let step = [
            -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
            -(-h[1][0] * g[0] + h[0][0] * g[1]) / det,
        ];
        let f0 = phi(x);
        let mut t = T::one();
        let mut moved = false;
        for _ in 0..40 {
            let y = [x[0] + t * step[0], x[1] + t * step[1]];
            if valid(y) && phi(y) >= f0 {
                x = y;
                moved = true;
                break;
            }
            t = t / T::lit(2.0);
        }
        if !moved {
            break;
        }
        let scale = x[0].abs() + x[1].abs() + T::lit(1e-300);
        if (step[0].abs() + step[1].abs()) * t <= T::lit(1e-13) * scale {
            break;
        }
    }
    let (g, _) = obj.concave_grad_hess(x, lin);
    let gnorm = g[0].abs() + g[1].abs();
    let gscale = lin[0].abs() + lin[1].abs() + T::lit(1e-12);
    let strictly_inside = region.contains(x) && x[0] > T::zero() && x[1] > T::zero() && match region {
        Region::Simplex(b) => x[0] + x[1] < b,
        Region::Box(b) => x[0] < b[0] && x[1] < b[1],
    };
    (strictly_inside && gnorm <= T::lit(1e-7) * gscale.max(T::one())).then_some(x)
}

/// Maximizer on `[0, len]` of a concave function given its derivative.
fn concave_line_max<T: Scalar>(d: impl Fn(T) -> T, len: T) -> T {
    if len <= T::zero() || d(T::zero()) <= T::zero() {
        return T::zero();
    }
    if d(len) >= T::zero() {
        return len;
    }
    let (mut a, mut b) = (T::zero(), len);
    for _ in 0..BISECTION_STEPS {
        let m = (a + b) / T::lit(2.0);
        if m <= a || m >= b {
            break;
        }
        if d(m) > T::zero() {
            a = m;
        } else {
            b = m;
        }
    }
    (a + b) / T::lit(2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_link(gain: f64, noise: f64) -> RateObjective<f64> {
        let mut o = RateObjective::new();
        o.push_rate(1.0, Affine { c: [gain, 0.0], k: 0.0 }, Affine::constant(noise));
        o
    }

    #[test]
    fn value_and_gradient_of_single_link() {
        let o = single_link(3.0, 1.0);
        assert!((o.value([1.0, 0.0]) - 2.0).abs() < 1e-15);
        let h = 1e-6;
        let fd = (o.value([1.0 + h, 0.0]) - o.value([1.0 - h, 0.0])) / (2.0 * h);
        assert!((o.grad([1.0, 0.0])[0] - fd).abs() < 1e-8);
    }

    #[test]
    fn pc3_monotone_objective_hits_upper_bound() {
        let o = single_link(5.0, 1.0);
        let (p, _) = solve_pc3(&o, 0.0, 2.0);
        assert_eq!(p, 2.0);
    }

    #[test]
    fn pc3_pure_harm_goes_to_zero() {
        // Own gain 0, but the power interferes with another link.
        let mut o = RateObjective::new();
        o.push_rate(1.0, Affine::constant(0.0), Affine::constant(1.0));
        o.push_rate(1.0, Affine::constant(4.0), Affine { c: [2.0, 0.0], k: 1.0 });
        let (p, _) = solve_pc3(&o, 0.0, 2.0);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn pc3_works_in_f32() {
        let mut o = RateObjective::<f32>::new();
        o.push_rate(1.0, Affine { c: [3.0, 0.0], k: 0.0 }, Affine::constant(1.0));
        let (p, v) = solve_pc3(&o, 0.0, 1.0);
        assert_eq!(p, 1.0);
        assert!((v - 2.0).abs() < 1e-6);
    }

    #[test]
    fn pc3_interior_optimum() {
        // own link gains from power, victim link loses; weights chosen so that
        // the optimum is interior. Compare with a dense scan.
        let mut o = RateObjective::new();
        o.push_rate(1.0, Affine { c: [10.0, 0.0], k: 0.0 }, Affine::constant(1.0));
        o.push_rate(3.0, Affine::constant(50.0), Affine { c: [20.0, 0.0], k: 1.0 });
        let (p, v) = solve_pc3(&o, 0.0, 2.0);
        let scan = (0..=200_000)
            .map(|i| 2.0 * i as f64 / 200_000.0)
            .map(|x| o.value([x, 0.0]))
            .fold(f64::MIN, f64::max);
        assert!(v >= scan - 1e-9 * scan.abs(), "{v} vs {scan} at {p}");
    }

    #[test]
    fn pc1_inactive_budget_and_zero_budget() {
        let a = single_link(1.0, 1.0);
        let b = single_link(2.0, 1.0);
        let (x, _) = solve_pc1(&a, &b, 10.0, 2.0);
        assert_eq!(x, [2.0, 2.0]);
        let (x, v) = solve_pc1(&a, &b, 0.0, 2.0);
        assert_eq!(x, [0.0, 0.0]);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn pc1_binding_budget_matches_waterfilling() {
        // Two independent links with unit noise: optimum splits the budget
        // so that 1/(1/g0 + x0) = 1/(1/g1 + x1).
        let a = single_link(1.0, 1.0);
        let b = single_link(4.0, 1.0);
        let (x, _) = solve_pc1(&a, &b, 1.0, 2.0);
        // water level w: x0 = w - 1, x1 = w - 0.25, sum 1 -> w = 1.125
        assert!((x[0] - 0.125).abs() < 1e-9);
        assert!((x[1] - 0.875).abs() < 1e-9);
    }

    #[test]
    fn pc2_zero_cross_gain_is_waterfilling() {
        let mut o = RateObjective::<f64>::new();
        o.push_rate(1.0, Affine { c: [1.0, 0.0], k: 0.0 }, Affine::constant(1.0));
        o.push_rate(1.0, Affine { c: [0.0, 4.0], k: 0.0 }, Affine::constant(1.0));
        let out = solve_pc2(&o, Region::Simplex(1.0));
        assert!(out.converged);
        assert!((out.x[0] - 0.125).abs() < 1e-6);
        assert!((out.x[1] - 0.875).abs() < 1e-6);
        let zero = solve_pc2(&o, Region::Simplex(0.0));
        assert_eq!(zero.x, [0.0, 0.0]);
    }

    #[test]
    fn pc2_box_region_respected() {
        let mut o = RateObjective::new();
        o.push_rate(1.0, Affine { c: [1.0, 0.0], k: 0.0 }, Affine { c: [0.0, 0.5], k: 1.0 });
        o.push_rate(1.0, Affine { c: [0.0, 2.0], k: 0.0 }, Affine { c: [0.3, 0.0], k: 1.0 });
        let out = solve_pc2(&o, Region::Box([0.5, 0.25]));
        assert!(out.x[0] <= 0.5 + 1e-12 && out.x[1] <= 0.25 + 1e-12);
        let mut grid_best = f64::MIN;
        for i in 0..=300 {
            for j in 0..=300 {
                grid_best = grid_best.max(o.value([0.5 * i as f64 / 300.0, 0.25 * j as f64 / 300.0]));
            }
        }
        assert!(out.value >= grid_best - 1e-9);
    }
}
