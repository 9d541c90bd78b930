//! The trainable Choquet network.
//!
//! Three pieces: a measure network that turns unconstrained raw weights
//! into a monotone measure (densities through a ReLU, every larger subset as
//! the max over its children plus a ReLU'd increment), a weight-free
//! integrand network producing `o(A)`, and the dot product `Σ g(A) o(A)`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ChimpError, Result};
use crate::integral::{check_input, integrand_terms_into, OpCount};
use crate::measure::{cardinality, members, FuzzyMeasure, Mask, MAX_SOURCES};
use crate::scalar::Scalar;

/// Learnable raw weights: one per nonempty subset.
///
/// Stored by mask; singletons hold the raw densities and larger subsets the
/// raw increments `Δg(A)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChimpParams<T> {
    n: usize,
    raw: Vec<T>,
}

impl<T: Scalar> ChimpParams<T> {
    /// `raw_delta` lists the increments for subsets of cardinality ≥ 2 in ascending mask order.
    pub fn new(n: usize, raw_density: &[T], raw_delta: &[T]) -> Result<Self> {
        check_n(n)?;
        if raw_density.len() != n {
            return Err(ChimpError::LengthMismatch {
                expected: n,
                got: raw_density.len(),
            });
        }
        let deltas = delta_count(n);
        if raw_delta.len() != deltas {
            return Err(ChimpError::LengthMismatch {
                expected: deltas,
                got: raw_delta.len(),
            });
        }
        let mut raw = vec![T::zero(); 1 << n];
        for (i, &v) in raw_density.iter().enumerate() {
            raw[1 << i] = v;
        }
        for (mask, &v) in delta_masks(n).zip(raw_delta) {
            raw[mask] = v;
        }
        Self::from_raw(n, raw)
    }

    /// Raw weights indexed by mask; `raw[0]` is ignored.
    pub fn from_raw(n: usize, mut raw: Vec<T>) -> Result<Self> {
        check_n(n)?;
        if raw.len() != 1 << n {
            return Err(ChimpError::LengthMismatch {
                expected: 1 << n,
                got: raw.len(),
            });
        }
        raw[0] = T::zero();
        if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
            return Err(ChimpError::NonFinite { index });
        }
        Ok(Self { n, raw })
    }

    pub fn filled(n: usize, value: T) -> Result<Self> {
        Self::from_raw(n, vec![value; 1 << n])
    }

    /// Every raw weight drawn uniformly from `[low, high]`.
    pub fn random<R: Rng + ?Sized>(n: usize, low: f64, high: f64, rng: &mut R) -> Result<Self> {
        check_n(n)?;
        let raw = (0..1usize << n)
            .map(|_| {
                if low == high {
                    T::lit(low)
                } else {
                    T::lit(rng.random_range(low..=high))
                }
            })
            .collect();
        Self::from_raw(n, raw)
    }

    /// Parameters whose materialization reproduces `g` (for a valid capacity):
    /// densities are the singleton values and increments the gap to the
    /// largest child.
    pub fn from_measure(g: &FuzzyMeasure<T>) -> Self {
        let n = g.n();
        let mut raw = vec![T::zero(); 1 << n];
        for mask in 1..raw.len() {
            raw[mask] = if cardinality(mask) == 1 {
                g.get(mask)
            } else {
                g.get(mask) - max_child(mask, |c| g.get(c)).0
            };
        }
        Self { n, raw }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn raw(&self) -> &[T] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [T] {
        &mut self.raw
    }

    pub fn raw_density(&self) -> Vec<T> {
        (0..self.n).map(|i| self.raw[1 << i]).collect()
    }

    /// Increments in ascending mask order, paired with their masks.
    pub fn raw_delta(&self) -> Vec<(Mask, T)> {
        delta_masks(self.n).map(|m| (m, self.raw[m])).collect()
    }

    /// `2^n − 1`.
    pub fn param_count(&self) -> usize {
        (1 << self.n) - 1
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_SOURCES {
        return Err(ChimpError::SourceCount { n, max: MAX_SOURCES });
    }
    Ok(())
}

fn delta_count(n: usize) -> usize {
    (1 << n) - n - 1
}

fn delta_masks(n: usize) -> impl Iterator<Item = Mask> {
    (1..1usize << n).filter(|&m| cardinality(m) >= 2)
}

/// Largest child value of `mask` and the bitset of removed elements whose
/// child attains it.
#[inline]
fn max_child<T: Scalar>(mask: Mask, value: impl Fn(Mask) -> T) -> (T, u32) {
    let mut best = T::neg_infinity();
    let mut ties = 0u32;
    for i in members(mask) {
        let v = value(mask ^ (1 << i));
        if v > best {
            best = v;
            ties = 1 << i;
        } else if v == best {
            ties |= 1 << i;
        }
    }
    (best, ties)
}

#[derive(Serialize, Deserialize)]
struct ParamsFile<T> {
    n: usize,
    raw_density: Vec<T>,
    raw_delta: DeltaMap<T>,
}

/// Mask-keyed increments, written in ascending numeric key order.
struct DeltaMap<T>(Vec<(Mask, T)>);

impl<T: Serialize> Serialize for DeltaMap<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (mask, v) in &self.0 {
            map.serialize_entry(&mask.to_string(), v)?;
        }
        map.end()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for DeltaMap<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, T>::deserialize(d)?;
        let mut pairs = raw
            .into_iter()
            .map(|(k, v)| {
                k.parse::<Mask>()
                    .map(|m| (m, v))
                    .map_err(|_| D::Error::custom(format!("raw_delta key {k:?} is not a mask")))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        pairs.sort_by_key(|p| p.0);
        Ok(DeltaMap(pairs))
    }
}

impl<T: Scalar + Serialize> Serialize for ChimpParams<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ParamsFile {
            n: self.n,
            raw_density: self.raw_density(),
            raw_delta: DeltaMap(self.raw_delta()),
        }
        .serialize(s)
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for ChimpParams<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = ParamsFile::<T>::deserialize(d)?;
        check_n(file.n).map_err(D::Error::custom)?;
        let expected: Vec<Mask> = delta_masks(file.n).collect();
        let got: Vec<Mask> = file.raw_delta.0.iter().map(|p| p.0).collect();
        if got != expected {
            return Err(D::Error::custom(format!(
                "raw_delta must have exactly one entry per subset of cardinality >= 2 ({} expected)",
                expected.len()
            )));
        }
        let deltas: Vec<T> = file.raw_delta.0.into_iter().map(|p| p.1).collect();
        ChimpParams::new(file.n, &file.raw_density, &deltas).map_err(D::Error::custom)
    }
}

/// The measure produced by the measure network, plus the auxiliary maxima
/// needed to route gradients back through it.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedMeasure<T> {
    pub g: FuzzyMeasure<T>,
    /// `g^m(A) = max_{B ⊂ A, |B| = |A|−1} g(B)`; zero for singletons.
    pub gmax_aux: Vec<T>,
    /// Bit `i` set when child `A ∖ {i}` attains `g^m(A)`; zero for singletons.
    pub argmax: Vec<u32>,
}

impl<T: Scalar> MaterializedMeasure<T> {
    /// Children of `mask` tied at the auxiliary maximum.
    pub fn argmax_children(&self, mask: Mask) -> Vec<Mask> {
        members(self.argmax[mask] as usize)
            .map(|i| mask ^ (1 << i))
            .collect()
    }

    fn empty(n: usize) -> Self {
        Self {
            g: FuzzyMeasure::new(n, vec![T::zero(); 1 << n]).expect("n checked"),
            gmax_aux: vec![T::zero(); 1 << n],
            argmax: vec![0; 1 << n],
        }
    }
}

pub fn materialize<T: Scalar>(p: &ChimpParams<T>) -> MaterializedMeasure<T> {
    let mut out = MaterializedMeasure::empty(p.n);
    materialize_into(p, &mut out);
    out
}

/// Cardinality-ascending walk. Ascending mask order suffices: every child of
/// a mask is numerically smaller.
pub fn materialize_into<T: Scalar>(p: &ChimpParams<T>, out: &mut MaterializedMeasure<T>) {
    if out.g.n() != p.n {
        *out = MaterializedMeasure::empty(p.n);
    }
    let values = out.g.values_mut();
    for mask in 1..p.raw.len() {
        if mask & (mask - 1) == 0 {
            values[mask] = p.raw[mask].relu();
            out.gmax_aux[mask] = T::zero();
            out.argmax[mask] = 0;
        } else {
            let (best, ties) = max_child(mask, |c| values[c]);
            out.gmax_aux[mask] = best;
            out.argmax[mask] = ties;
            values[mask] = best + p.raw[mask].relu();
        }
    }
}

/// Evaluation-time clip `min(g, 1)`; monotonicity is preserved.
pub fn normalize_option<T: Scalar>(mm: &MaterializedMeasure<T>) -> FuzzyMeasure<T> {
    let values = mm.g.values().iter().map(|&v| v.min(T::one())).collect();
    FuzzyMeasure::new(mm.g.n(), values).expect("clipping keeps structure")
}

/// Output of the integrand network for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrandVector<T> {
    /// `o(A)` by mask, `o[0] = 0`.
    pub o: Vec<T>,
    /// Descending sort order of the inputs (stable for ties).
    pub order: Vec<usize>,
    /// Elementary operations spent computing `o`.
    pub ops: OpCount,
}

impl<T: Scalar> IntegrandVector<T> {
    fn empty(n: usize) -> Self {
        Self {
            o: vec![T::zero(); 1 << n],
            order: (0..n).collect(),
            ops: OpCount::default(),
        }
    }

    /// Count of nonzero `o(A)` over proper subsets.
    pub fn nonzero_proper(&self) -> usize {
        let full = self.o.len() - 1;
        self.o[1..full].iter().filter(|&&v| v != T::zero()).count()
    }
}

pub fn integrand<T: Scalar>(h: &[T]) -> Result<IntegrandVector<T>> {
    check_n(h.len())?;
    check_input(h.len(), h)?;
    let mut out = IntegrandVector::empty(h.len());
    integrand_into(h, &mut out);
    Ok(out)
}

fn integrand_into<T: Scalar>(h: &[T], out: &mut IntegrandVector<T>) {
    out.ops = OpCount::default();
    integrand_terms_into(h, &mut out.o, &mut out.ops);
    out.order.clear();
    out.order.extend(0..h.len());
    out.order
        .sort_by(|&a, &b| h[b].partial_cmp(&h[a]).expect("finite inputs"));
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache<T> {
    pub h: Vec<T>,
    pub measure: MaterializedMeasure<T>,
    pub integrand: IntegrandVector<T>,
    pub y: T,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn new(n: usize) -> Self {
        Self {
            h: vec![T::zero(); n],
            measure: MaterializedMeasure::empty(n),
            integrand: IntegrandVector::empty(n),
            y: T::zero(),
        }
    }

    /// ReLU activity of each raw weight (strictly positive).
    pub fn active(&self, p: &ChimpParams<T>, mask: Mask) -> bool {
        p.raw[mask] > T::zero()
    }
}

/// `y = Σ_A g(A) o(A)` with the cache for the backward pass.
pub fn forward<T: Scalar>(p: &ChimpParams<T>, h: &[T]) -> Result<(T, ForwardCache<T>)> {
    let mut cache = ForwardCache::new(p.n);
    let y = forward_into(p, h, &mut cache)?;
    Ok((y, cache))
}

/// [`forward`] reusing the buffers of an existing cache.
pub fn forward_into<T: Scalar>(p: &ChimpParams<T>, h: &[T], cache: &mut ForwardCache<T>) -> Result<T> {
    check_input(p.n, h)?;
    if cache.h.len() != p.n {
        *cache = ForwardCache::new(p.n);
    }
    cache.h.copy_from_slice(h);
    materialize_into(p, &mut cache.measure);
    integrand_into(h, &mut cache.integrand);
    let y = cache
        .integrand
        .o
        .iter()
        .zip(cache.measure.g.values())
        .map(|(&o, &g)| o * g)
        .sum();
    cache.y = y;
    Ok(y)
}

/// Operation counts of one forward pass for `n` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopCount {
    /// `(2^n − 2)(n + 3) + n`.
    pub o_cost: u64,
    /// Exact measure-network cost `Σ_k C(n,k)(k + 1)`.
    pub g_cost: u64,
    /// The `2^n (n + 1)` upper bound on `g_cost`.
    pub g_cost_bound: u64,
    /// `2n`: `n` multiplies and `n` adds over the nonzero terms.
    pub dot_cost: u64,
}

pub fn flop_count(n: usize) -> FlopCount {
    let n64 = n as u64;
    let subsets = 1u64 << n;
    let mut binom = 1u64;
    let mut g_cost = 0u64;
    for k in 1..=n64 {
        binom = binom * (n64 - k + 1) / k;
        g_cost += binom * (k + 1);
    }
    FlopCount {
        o_cost: (subsets - 2) * (n64 + 3) + n64,
        g_cost,
        g_cost_bound: subsets * (n64 + 1),
        dot_cost: 2 * n64,
    }
}
