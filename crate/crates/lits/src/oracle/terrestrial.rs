use crate::channel::{terrestrial_rate, ChannelRealization, RadioParams};
use crate::error::{Error, Result};
use crate::scenario::CoverageMatrix;
use crate::terrestrial_matching::TerrestrialMatching;

pub const MAX_USERS: usize = 8;
/// Cells including the macro.
pub const MAX_CELLS: usize = 4;
pub const MAX_K: usize = 3;

/// Exhaustive optimum of the weighted offloading objective.
#[derive(Debug, Clone, PartialEq)]
pub struct TtoOptimum {
    /// `sum_m (1 - lambda_m) R_m + mu * accessed`, bits/s/Hz.
    pub objective: f64,
    /// `(cell, subchannel)` per user in an optimal assignment.
    pub assignment: Vec<Option<(usize, usize)>>,
    /// Largest number of users any feasible assignment serves.
    pub max_accessed: usize,
}

fn check_bounds(n_cells: usize, n_users: usize, k: usize) -> Result<()> {
    if n_users > MAX_USERS || n_cells > MAX_CELLS || k > MAX_K {
        return Err(Error::OracleBounds(format!(
            "{n_users} users, {n_cells} cells, {k} subchannels exceed {MAX_USERS}/{MAX_CELLS}/{MAX_K}"
        )));
    }
    Ok(())
}

/// Maximum number of users that can hold a distinct covering unit
/// (augmenting-path bipartite matching of users to `(cell, subchannel)`).
pub fn max_accessed_users(cov: &CoverageMatrix, k_subch: usize) -> usize {
    let n_cells = cov.a.len();
    let n_users = cov.a.first().map_or(0, Vec::len);
    let mut unit_owner: Vec<Option<usize>> = vec![None; n_cells * k_subch];

    fn augment(
        j: usize,
        cov: &CoverageMatrix,
        k_subch: usize,
        owner: &mut [Option<usize>],
        seen: &mut [bool],
    ) -> bool {
        for u in 0..owner.len() {
            if !cov.a[u / k_subch][j] || seen[u] {
                continue;
            }
            seen[u] = true;
            if owner[u].is_none_or(|j2| augment(j2, cov, k_subch, owner, seen)) {
                owner[u] = Some(j);
                return true;
            }
        }
        false
    }

    (0..n_users)
        .filter(|&j| {
            let mut seen = vec![false; unit_owner.len()];
            augment(j, cov, k_subch, &mut unit_owner, &mut seen)
        })
        .count()
}

struct Search<'a> {
    cov: &'a CoverageMatrix,
    real: &'a ChannelRealization,
    params: &'a RadioParams,
    lambda: &'a [f64],
    mu: f64,
    k: usize,
    unit_user: Vec<Option<usize>>,
    assign: Vec<Option<(usize, usize)>>,
    /// Best possible contribution of each user on its own, for bounding.
    solo_bound: Vec<f64>,
    prune: bool,
    best: f64,
    best_assign: Vec<Option<(usize, usize)>>,
}

impl Search<'_> {
    fn value(&self) -> f64 {
        let mut v = 0.0;
        for (j, a) in self.assign.iter().enumerate() {
            if let Some((m, k)) = *a {
                let r = terrestrial_rate(m, j, k, &self.unit_user, self.real, self.params).expect("assigned");
                v += (1.0 - self.lambda[m]) * r + self.mu;
            }
        }
        v
    }

    fn dfs(&mut self, j: usize) {
        let current = self.value();
        if j == self.assign.len() {
            if current > self.best {
                self.best = current;
                self.best_assign = self.assign.clone();
            }
            return;
        }
        // Adding users only adds interference, so the current partial value
        // plus each remaining user's interference-free best bounds any
        // completion when every weight is non-negative.
        if self.prune {
            let rest: f64 = self.solo_bound[j..].iter().sum();
            if current + rest <= self.best {
                return;
            }
        }
        let n_cells = self.cov.a.len();
        for m in 0..n_cells {
            if !self.cov.a[m][j] {
                continue;
            }
            for k in 0..self.k {
                if self.unit_user[m * self.k + k].is_some() {
                    continue;
                }
                self.unit_user[m * self.k + k] = Some(j);
                self.assign[j] = Some((m, k));
                self.dfs(j + 1);
                self.assign[j] = None;
                self.unit_user[m * self.k + k] = None;
            }
        }
        self.dfs(j + 1);
    }
}

/// Enumerates every assignment satisfying coverage, one unit per user and
/// one user per unit, and returns the optimum of the weighted objective.
pub fn exhaustive_tto(
    cov: &CoverageMatrix,
    real: &ChannelRealization,
    params: &RadioParams,
    lambda: &[f64],
    mu: f64,
) -> Result<TtoOptimum> {
    let (n_cells, n_users, k) = (real.n_cells, real.n_users, real.k_subch);
    check_bounds(n_cells, n_users, k)?;
    if cov.a.len() != n_cells || cov.a.iter().any(|r| r.len() != n_users) || lambda.len() != n_cells {
        return Err(Error::Contract("oracle inputs disagree in size".into()));
    }
    let prune = lambda.iter().all(|&l| l <= 1.0) && mu >= 0.0;
    let mut solo_bound = vec![0.0; n_users];
    for (j, b) in solo_bound.iter_mut().enumerate() {
        let mut lone = vec![None; n_cells * k];
        for m in (0..n_cells).filter(|&m| cov.a[m][j]) {
            for kk in 0..k {
                lone[m * k + kk] = Some(j);
                let r = terrestrial_rate(m, j, kk, &lone, real, params).expect("assigned");
                lone[m * k + kk] = None;
                *b = f64::max(*b, (1.0 - lambda[m]) * r + mu);
            }
        }
    }
    let mut s = Search {
        cov,
        real,
        params,
        lambda,
        mu,
        k,
        unit_user: vec![None; n_cells * k],
        assign: vec![None; n_users],
        solo_bound,
        prune,
        best: f64::NEG_INFINITY,
        best_assign: vec![None; n_users],
    };
    s.dfs(0);
    Ok(TtoOptimum { objective: s.best, assignment: s.best_assign, max_accessed: max_accessed_users(cov, k) })
}

/// Two matched users whose exchange of units would raise every existing
/// link on the two subchannels and both exchanged links.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockingSwap {
    pub j1: usize,
    pub unit1: (usize, usize),
    pub j2: usize,
    pub unit2: (usize, usize),
}

/// Lists every pair exchange that forms individual-rational blocking pairs:
/// all other links on the two subchannels strictly gain, and each exchanged
/// unit serves its new user at a strictly higher weighted rate than before.
/// Exchanges that break coverage are not considered.
pub fn verify_group_stability(
    psi: &TerrestrialMatching,
    cov: &CoverageMatrix,
    real: &ChannelRealization,
    params: &RadioParams,
    lambda: &[f64],
) -> Vec<BlockingSwap> {
    let k = psi.k_subch();
    let before = psi.unit_users().to_vec();
    let matched: Vec<(usize, (usize, usize))> =
        (0..psi.n_users()).filter_map(|j| psi.unit_of(j).map(|u| (j, u))).collect();
    let utility = |units: &[Option<usize>], m: usize, j: usize, kk: usize| {
        (1.0 - lambda[m]) * terrestrial_rate(m, j, kk, units, real, params).expect("held unit")
    };
    let mut out = Vec::new();
    for (a, &(j1, (m1, k1))) in matched.iter().enumerate() {
        for &(j2, (m2, k2)) in &matched[a + 1..] {
            if !cov.a[m2][j1] || !cov.a[m1][j2] {
                continue;
            }
            let mut after = before.clone();
            after[m1 * k + k1] = Some(j2);
            after[m2 * k + k2] = Some(j1);
            let cond_ii = utility(&after, m1, j2, k1) > utility(&before, m1, j1, k1)
                && utility(&after, m2, j1, k2) > utility(&before, m2, j2, k2);
            if !cond_ii {
                continue;
            }
            let cond_i = (0..psi.n_cells()).all(|m| {
                [k1, k2].iter().all(|&kk| {
                    if (m, kk) == (m1, k1) || (m, kk) == (m2, k2) {
                        return true;
                    }
                    match before[m * k + kk] {
                        Some(j) => utility(&after, m, j, kk) > utility(&before, m, j, kk),
                        None => true,
                    }
                })
            });
            if cond_i {
                out.push(BlockingSwap { j1, unit1: (m1, k1), j2, unit2: (m2, k2) });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_cells: usize, n_users: usize, k: usize, seed: u64) -> (CoverageMatrix, ChannelRealization, RadioParams) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let params = RadioParams::default();
        let scale = params.sigma2_b(k) / params.p_u();
        let hb2 = (0..n_cells * n_users * k).map(|_| scale * 10f64.powf(rng.random_range(-1.0..3.0))).collect();
        let a = (0..n_cells).map(|m| (0..n_users).map(|_| m == 0 || rng.random_bool(0.6)).collect()).collect();
        let real = ChannelRealization {
            n_cells,
            n_users,
            k_subch: k,
            n_tst: 0,
            n_sat: 0,
            q_subch: 0,
            hb2,
            ht2: vec![],
            seed,
        };
        (CoverageMatrix { a }, real, params)
    }

    #[test]
    fn single_assignment_is_optimal() {
        let (cov, real, params) = toy(1, 1, 1, 1);
        let opt = exhaustive_tto(&cov, &real, &params, &[0.0], 1.0).unwrap();
        assert_eq!(opt.assignment, vec![Some((0, 0))]);
        assert_eq!(opt.max_accessed, 1);
        let lone = terrestrial_rate(0, 0, 0, &[Some(0)], &real, &params).unwrap();
        assert!((opt.objective - (lone + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn empty_coverage_scores_zero() {
        let (_, real, params) = toy(2, 3, 2, 2);
        let cov = CoverageMatrix { a: vec![vec![false; 3]; 2] };
        let opt = exhaustive_tto(&cov, &real, &params, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(opt.objective, 0.0);
        assert_eq!(opt.max_accessed, 0);
    }

    #[test]
    fn bounds_are_enforced() {
        let (cov, real, params) = toy(2, 9, 1, 3);
        assert!(matches!(exhaustive_tto(&cov, &real, &params, &[0.0; 2], 1.0), Err(Error::OracleBounds(_))));
    }

    #[test]
    fn pruned_search_equals_plain_enumeration() {
        for seed in 0..20 {
            let (cov, real, params) = toy(3, 4, 2, 100 + seed);
            let lambda = [0.2, 0.5, 0.0];
            let opt = exhaustive_tto(&cov, &real, &params, &lambda, 0.5).unwrap();
            let mut plain = Search {
                cov: &cov,
                real: &real,
                params: &params,
                lambda: &lambda,
                mu: 0.5,
                k: 2,
                unit_user: vec![None; 6],
                assign: vec![None; 4],
                solo_bound: vec![0.0; 4],
                prune: false,
                best: f64::NEG_INFINITY,
                best_assign: vec![None; 4],
            };
            plain.dfs(0);
            assert!((opt.objective - plain.best).abs() <= 1e-12 * plain.best.abs());
        }
    }

    #[test]
    fn bipartite_maximum_counts() {
        // Two users both covered only by cell 1 with one subchannel.
        let cov = CoverageMatrix { a: vec![vec![false, false, true], vec![true, true, true]] };
        assert_eq!(max_accessed_users(&cov, 1), 2);
        assert_eq!(max_accessed_users(&cov, 2), 3);
        // A greedy choice for user 2 would block user 0.
        let cov = CoverageMatrix { a: vec![vec![true, false, true], vec![false, true, true]] };
        assert_eq!(max_accessed_users(&cov, 1), 2);
    }

    #[test]
    fn inserted_blocking_pair_is_reported() {
        // Cells 0 and 1, K = 1, both users covered by both cells.
        let (mut cov, mut real, params) = toy(2, 2, 1, 4);
        cov.a = vec![vec![true; 2]; 2];
        let s = params.sigma2_b(1) / params.p_u();
        // Each user is weak at its current cell and strong at the other.
        real.set_hb(0, 0, 0, 1.0 * s);
        real.set_hb(1, 1, 0, 1.0 * s);
        real.set_hb(0, 1, 0, 1e3 * s);
        real.set_hb(1, 0, 0, 1e3 * s);
        let mut psi = TerrestrialMatching::empty(2, 2, 1);
        psi.assign(0, 0, 0).unwrap();
        psi.assign(1, 1, 0).unwrap();
        let found = verify_group_stability(&psi, &cov, &real, &params, &[0.0, 0.0]);
        assert_eq!(found, vec![BlockingSwap { j1: 0, unit1: (0, 0), j2: 1, unit2: (1, 0) }]);
        let mut swapped = TerrestrialMatching::empty(2, 2, 1);
        swapped.assign(0, 1, 0).unwrap();
        swapped.assign(1, 0, 0).unwrap();
        assert!(verify_group_stability(&swapped, &cov, &real, &params, &[0.0, 0.0]).is_empty());
    }

    #[test]
    fn single_user_has_no_pairs() {
        let (cov, real, params) = toy(2, 1, 2, 5);
        let mut psi = TerrestrialMatching::empty(2, 1, 2);
        psi.assign(0, 0, 1).unwrap();
        assert!(verify_group_stability(&psi, &cov, &real, &params, &[0.0, 0.0]).is_empty());
    }
}
