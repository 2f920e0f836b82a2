//! Brute-force references for the matching and power-control algorithms.
//!
//! Nothing here calls into the matching code; only the rate formulas of
//! [`crate::channel`] are shared.

mod backhaul;
mod terrestrial;

pub use backhaul::{
    find_improving_exchange, verify_colocated_equilibrium, verify_swap_stability, Exchange, OracleSwap,
    ORACLE_ATOL, ORACLE_RTOL,
};
pub use terrestrial::{
    exhaustive_tto, max_accessed_users, verify_group_stability, BlockingSwap, TtoOptimum, MAX_CELLS, MAX_K,
    MAX_USERS,
};

/// Feasible set searched by [`grid_pc`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridRegion {
    /// One power in `[lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// Two powers, `0 <= x_i <= hi[i]`.
    Box { hi: [f64; 2] },
    /// Two powers, `x_i >= 0`, `x_0 + x_1 <= budget`.
    Simplex { budget: f64 },
}

impl GridRegion {
    pub fn dim(&self) -> usize {
        match self {
            GridRegion::Interval { .. } => 1,
            _ => 2,
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match *self {
            GridRegion::Interval { lo, hi } => (vec![lo], vec![hi.max(lo)]),
            GridRegion::Box { hi } => (vec![0.0; 2], vec![hi[0].max(0.0), hi[1].max(0.0)]),
            GridRegion::Simplex { budget } => (vec![0.0; 2], vec![budget.max(0.0); 2]),
        }
    }

    fn budget(&self) -> Option<f64> {
        match *self {
            GridRegion::Simplex { budget } => Some(budget.max(0.0)),
            _ => None,
        }
    }
}

/// Best grid point of `f` over `region` with `resolution` steps per axis
/// (`resolution + 1` points; 1 means corners only). On a simplex the points
/// of the slanted edge are evaluated as well.
pub fn grid_pc<F: FnMut(&[f64]) -> f64>(f: F, region: GridRegion, resolution: usize) -> (Vec<f64>, f64) {
    let (lo, hi) = region.bounds();
    let mut f = f;
    search(&mut f, &lo, &hi, region.budget(), resolution.max(1))
}

/// [`grid_pc`] followed by `levels` zoomed grids around the incumbent.
pub fn refined_grid_pc<F: FnMut(&[f64]) -> f64>(
    f: F,
    region: GridRegion,
    resolution: usize,
    zoom_resolution: usize,
    levels: usize,
) -> (Vec<f64>, f64) {
    let (lo0, hi0) = region.bounds();
    let budget = region.budget();
    let mut f = f;
    let res = resolution.max(1);
    let (mut best_x, mut best) = search(&mut f, &lo0, &hi0, budget, res);
    let mut half: Vec<f64> = lo0.iter().zip(&hi0).map(|(l, h)| 2.0 * (h - l) / res as f64).collect();
    for _ in 0..levels {
        let lo: Vec<f64> = best_x.iter().zip(&half).zip(&lo0).map(|((x, w), l)| (x - w).max(*l)).collect();
        let hi: Vec<f64> = best_x.iter().zip(&half).zip(&hi0).map(|((x, w), h)| (x + w).min(*h)).collect();
        let (x, v) = search(&mut f, &lo, &hi, budget, zoom_resolution.max(1));
        if v > best {
            best = v;
            best_x = x;
        }
        half.iter_mut().for_each(|w| *w *= 4.0 / zoom_resolution.max(1) as f64);
    }
    (best_x, best)
}

fn search<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    lo: &[f64],
    hi: &[f64],
    budget: Option<f64>,
    res: usize,
) -> (Vec<f64>, f64) {
    let at = |d: usize, i: usize| lo[d] + (hi[d] - lo[d]) * i as f64 / res as f64;
    let mut best_x = lo.to_vec();
    let mut best = f64::NEG_INFINITY;
    let mut consider = |x: Vec<f64>, f: &mut F| {
        let v = f(&x);
        if v > best {
            best = v;
            best_x = x;
        }
    };
    if lo.len() == 1 {
        for i in 0..=res {
            consider(vec![at(0, i)], f);
        }
        return (best_x, best);
    }
    for i in 0..=res {
        let x0 = at(0, i);
        for j in 0..=res {
            let x1 = at(1, j);
            if budget.is_none_or(|b| x0 + x1 <= b) {
                consider(vec![x0, x1], f);
            }
        }
        if let Some(b) = budget {
            let x1 = b - x0;
            if x1 >= lo[1] && x1 <= hi[1] {
                consider(vec![x0, x1], f);
            }
        }
    }
    (best_x, best)
}
