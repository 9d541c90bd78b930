//! Choquet integral evaluators.
//!
//! Four algebraically equivalent forms are provided: the sorted
//! difference form, the Möbius form (plus its k-additive truncation), the
//! max/min integrand form used by the trainable network, and the
//! selection network over all `n!` linear convex sums. They cross-check
//! each other in tests and serve as oracles for the network code.

use std::ops::Range;

use crate::error::{ChimpError, Result};
use crate::measure::{cardinality, full_mask, FuzzyMeasure, Mask, MobiusMeasure};
use crate::scalar::Scalar;

/// Largest tie group the averaging rule will enumerate.
pub const MAX_TIE_GROUP: usize = 6;

/// Largest `n` for which the `n!` expansion is materialized.
pub const MAX_LCS_SOURCES: usize = 8;

pub(crate) fn check_input<T: Scalar>(n: usize, h: &[T]) -> Result<()> {
    if h.len() != n {
        return Err(ChimpError::DimensionMismatch {
            expected: n,
            got: h.len(),
        });
    }
    if let Some(index) = h.iter().position(|v| !v.is_finite()) {
        return Err(ChimpError::NonFinite { index });
    }
    Ok(())
}

/// Descending sort order of an observation with its runs of equal values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortPermutation {
    /// `order[j]` is the source at rank `j` (zero-based, largest first).
    pub order: Vec<usize>,
    /// Rank ranges holding equal inputs; singletons included.
    pub tie_groups: Vec<Range<usize>>,
}

impl SortPermutation {
    /// Stable descending sort: equal inputs keep index order.
    pub fn of<T: Scalar>(h: &[T]) -> Self {
        let mut order: Vec<usize> = (0..h.len()).collect();
        order.sort_by(|&a, &b| h[b].partial_cmp(&h[a]).expect("finite inputs"));
        let mut tie_groups = Vec::new();
        let mut start = 0;
        for j in 1..=order.len() {
            if j == order.len() || h[order[j]] != h[order[start]] {
                tie_groups.push(start..j);
                start = j;
            }
        }
        Self { order, tie_groups }
    }

    pub fn has_ties(&self) -> bool {
        self.tie_groups.iter().any(|g| g.len() > 1)
    }

    /// Nested subsets `A_1 ⊂ A_2 ⊂ … ⊂ A_n = X` visited along this order.
    pub fn chain(&self) -> Vec<Mask> {
        self.order
            .iter()
            .scan(0usize, |acc, &i| {
                *acc |= 1 << i;
                Some(*acc)
            })
            .collect()
    }
}

/// Advances `perm` to the next lexicographic permutation; false after the last.
pub(crate) fn next_permutation(perm: &mut [usize]) -> bool {
    if perm.len() < 2 {
        return false;
    }
    let mut i = perm.len() - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = perm.len() - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Sorted-difference form `Σ_j h_π(j) (g(A_π(j)) − g(A_π(j−1)))`.
///
/// Tied inputs are resolved by averaging the integral over every order of
/// each tie group. Groups are independent (the prefix before a group is the
/// same for all its orders), so the average over the product of orders
/// equals the sum of per-group averages.
pub fn chi_sort<T: Scalar>(g: &FuzzyMeasure<T>, h: &[T]) -> Result<T> {
    check_input(g.n(), h)?;
    let sort = SortPermutation::of(h);
    let mut total = T::zero();
    let mut prefix: Mask = 0;
    for group in &sort.tie_groups {
        let members = &sort.order[group.clone()];
        if members.len() > MAX_TIE_GROUP {
            return Err(ChimpError::TieGroupTooLarge {
                size: members.len(),
                max: MAX_TIE_GROUP,
            });
        }
        total += if members.len() == 1 {
            h[members[0]] * (g.get(prefix | 1 << members[0]) - g.get(prefix))
        } else {
            group_average(g, h, prefix, members)
        };
        prefix = members.iter().fold(prefix, |acc, &i| acc | 1 << i);
    }
    Ok(total)
}

fn group_average<T: Scalar>(g: &FuzzyMeasure<T>, h: &[T], prefix: Mask, members: &[usize]) -> T {
    let mut perm: Vec<usize> = members.to_vec();
    perm.sort_unstable();
    let mut sum = T::zero();
    let mut count = 0usize;
    loop {
        let mut acc = prefix;
        for &i in &perm {
            let next = acc | 1 << i;
            sum += h[i] * (g.get(next) - g.get(acc));
            acc = next;
        }
        count += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    sum / T::from_usize(count).unwrap()
}

/// `min_{i ∈ A} h_i` for every nonempty `A`, built incrementally (`mins[0]` is +∞).
fn subset_minima<T: Scalar>(h: &[T]) -> Vec<T> {
    let mut mins = vec![T::infinity(); 1 << h.len()];
    for mask in 1..mins.len() {
        let low = mask.trailing_zeros() as usize;
        mins[mask] = mins[mask & (mask - 1)].min(h[low]);
    }
    mins
}

/// Möbius form `Σ_A m(A) · min_{i ∈ A} h_i`.
pub fn chi_mobius<T: Scalar>(m: &MobiusMeasure<T>, h: &[T]) -> Result<T> {
    chi_k_additive(m, m.n(), h)
}

/// Möbius form restricted to subsets with `|A| ≤ k`.
pub fn chi_k_additive<T: Scalar>(m: &MobiusMeasure<T>, k: usize, h: &[T]) -> Result<T> {
    check_input(m.n(), h)?;
    if k == 0 || k > m.n() {
        return Err(ChimpError::KOutOfRange { k, n: m.n() });
    }
    let mins = subset_minima(h);
    Ok((1..mins.len())
        .filter(|&mask| cardinality(mask) <= k)
        .map(|mask| m.get(mask) * mins[mask])
        .sum())
}

/// Elementary-operation tally for the integrand network.
///
/// A min or max over `k` inputs costs `k`, a subtraction costs 1 and the
/// clip `max(0, ·)` is a max over two values, costing 2.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount(pub u64);

impl OpCount {
    fn min<T: Scalar>(&mut self, values: impl Iterator<Item = T>) -> T {
        values.fold(T::infinity(), |acc, v| {
            self.0 += 1;
            acc.min(v)
        })
    }

    fn max<T: Scalar>(&mut self, values: impl Iterator<Item = T>) -> T {
        values.fold(T::neg_infinity(), |acc, v| {
            self.0 += 1;
            acc.max(v)
        })
    }

    fn sub<T: Scalar>(&mut self, a: T, b: T) -> T {
        self.0 += 1;
        a - b
    }

    fn clip<T: Scalar>(&mut self, d: T) -> T {
        self.max([T::zero(), d].into_iter())
    }
}

/// Integrand terms `o(A)` indexed by mask (`o[0]` is unused and zero):
/// `o(A) = max(0, min_{A} h − max_{X∖A} h)` for `A ⊂ X`, `o(X) = min h`.
pub fn integrand_terms<T: Scalar>(h: &[T], ops: &mut OpCount) -> Vec<T> {
    let mut o = vec![T::zero(); 1 << h.len()];
    integrand_terms_into(h, &mut o, ops);
    o
}

/// [`integrand_terms`] writing into a caller buffer of length `2^n`.
pub fn integrand_terms_into<T: Scalar>(h: &[T], o: &mut [T], ops: &mut OpCount) {
    let n = h.len();
    let full = full_mask(n);
    debug_assert_eq!(o.len(), full + 1);
    o[0] = T::zero();
    for mask in 1..full {
        let inside = ops.min((0..n).filter(|i| mask >> i & 1 == 1).map(|i| h[i]));
        let outside = ops.max((0..n).filter(|i| mask >> i & 1 == 0).map(|i| h[i]));
        let d = ops.sub(inside, outside);
        o[mask] = ops.clip(d);
    }
    o[full] = ops.min(h.iter().copied());
}

/// Max/min form `Σ_A g(A) o(A)`. Valid for real (including negative) inputs
/// and accepts non-monotone `g`.
pub fn chi_maxmin<T: Scalar>(g: &FuzzyMeasure<T>, h: &[T]) -> Result<T> {
    check_input(g.n(), h)?;
    let o = integrand_terms(h, &mut OpCount::default());
    Ok(o.iter().zip(g.values()).map(|(&o, &v)| o * v).sum())
}

/// The `n!` linear convex sum weight vectors of a measure, one per sort order.
#[derive(Debug, Clone, PartialEq)]
pub struct LcsWeights<T> {
    pub n: usize,
    /// Sort orders in lexicographic order; `orders[p][j]` is the source at rank `j`.
    pub orders: Vec<Vec<usize>>,
    /// `weights[p][j] = g(A_{p,j}) − g(A_{p,j−1})`.
    pub weights: Vec<Vec<T>>,
}

impl<T: Scalar> LcsWeights<T> {
    pub fn weight_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }
}

pub fn lcs_expand<T: Scalar>(g: &FuzzyMeasure<T>) -> Result<LcsWeights<T>> {
    let n = g.n();
    if n > MAX_LCS_SOURCES {
        return Err(ChimpError::FactorialGuard {
            n,
            max: MAX_LCS_SOURCES,
        });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut orders = Vec::new();
    let mut weights = Vec::new();
    loop {
        let mut acc = 0;
        let w = perm
            .iter()
            .map(|&i| {
                let next = acc | 1 << i;
                let d = g.get(next) - g.get(acc);
                acc = next;
                d
            })
            .collect();
        orders.push(perm.clone());
        weights.push(w);
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(LcsWeights { n, orders, weights })
}

/// Selection-network evaluation: each of the `n!` LCS neurons is gated by a
/// unit step on its sort order, and tied inputs average the tied branches.
///
/// The gate of order `π` is 1 when `h_π(1) ≥ … ≥ h_π(n)`; gates are
/// normalized by the number of open branches, which for two tied inputs is
/// the half-valued step.
pub fn chimp_select_forward<T: Scalar>(g: &FuzzyMeasure<T>, h: &[T]) -> Result<T> {
    check_input(g.n(), h)?;
    let lcs = lcs_expand(g)?;
    let mut sum = T::zero();
    let mut open = 0usize;
    for (order, w) in lcs.orders.iter().zip(&lcs.weights) {
        if order.windows(2).all(|p| h[p[0]] >= h[p[1]]) {
            open += 1;
            sum += order.iter().zip(w).map(|(&i, &w)| h[i] * w).sum::<T>();
        }
    }
    Ok(sum / T::from_usize(open).unwrap())
}
