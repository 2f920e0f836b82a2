//! Splitting a terminal's traffic over its satellite links so that every
//! used link finishes at the same time, and the resulting delay-aware
//! equivalent capacity.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Loads `L_n` (bits) with `L_n / C_n + T_n` equal across used links and
/// `sum L_n = load`. Links with zero capacity carry nothing. A link whose
/// solution would be negative is dropped and the rest re-solved.
pub fn solve_load_split<T: Scalar>(capacities: &[T], delays: &[T], load: T) -> Result<Vec<T>> {
    if capacities.len() != delays.len() {
        return Err(Error::Contract("capacity and delay vectors differ in length".into()));
    }
    if !(load >= T::zero()) {
        return Err(Error::LoadSplit("negative or non-finite load".into()));
    }
    let mut out = vec![T::zero(); capacities.len()];
    if load == T::zero() {
        return Ok(out);
    }
    let mut active: Vec<usize> = (0..capacities.len()).filter(|&n| capacities[n] > T::zero()).collect();
    if active.is_empty() {
        return Err(Error::LoadSplit("positive load but no link with positive capacity".into()));
    }
    loop {
        let tau = completion_time(capacities, delays, load, &active);
        let negative: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&n| tau - delays[n] < T::zero())
            .collect();
        if negative.is_empty() {
            for &n in &active {
                out[n] = capacities[n] * (tau - delays[n]);
            }
            return Ok(out);
        }
        active.retain(|n| !negative.contains(n));
    }
}

/// Common completion time over the `active` links.
fn completion_time<T: Scalar>(c: &[T], d: &[T], load: T, active: &[usize]) -> T {
    let (mut sc, mut sct) = (T::zero(), T::zero());
    for &n in active {
        sc = sc + c[n];
        sct = sct + c[n] * d[n];
    }
    (load + sct) / sc
}

/// `sum_n 1 / (1/C_n + T_n / L_n)`; unused links contribute nothing.
pub fn equivalent_capacity<T: Scalar>(capacities: &[T], delays: &[T], loads: &[T]) -> T {
    capacities
        .iter()
        .zip(delays)
        .zip(loads)
        .filter(|((c, _), l)| **c > T::zero() && **l > T::zero())
        .fold(T::zero(), |acc, ((&c, &t), &l)| acc + T::one() / (T::one() / c + t / l))
}

/// Completion time of the split: `L_n / C_n + T_n` of any used link, zero
/// when nothing is carried.
pub fn split_completion_time<T: Scalar>(capacities: &[T], delays: &[T], loads: &[T]) -> T {
    capacities
        .iter()
        .zip(delays)
        .zip(loads)
        .filter(|((c, _), l)| **c > T::zero() && **l > T::zero())
        .map(|((&c, &t), &l)| l / c + t)
        .fold(T::zero(), |a, b| a.max(b))
}
