//! Fuzzy measures (capacities) on `n` sources and their Möbius representation.
//!
//! Subsets of the sources are encoded as bitmasks: bit `i` is set when source
//! `i` (zero-based) belongs to the subset, and the mask doubles as the index
//! into the `2^n` value array.

use serde::{Deserialize, Serialize};

use crate::error::{ChimpError, Result};
use crate::scalar::Scalar;

/// Largest supported number of sources; `2^24` values is the storage ceiling.
pub const MAX_SOURCES: usize = 24;

/// Bitmask of a subset of sources.
pub type Mask = usize;

#[inline]
pub fn cardinality(mask: Mask) -> usize {
    mask.count_ones() as usize
}

#[inline]
pub fn full_mask(n: usize) -> Mask {
    (1usize << n) - 1
}

/// Iterator over the zero-based members of `mask`, ascending.
pub fn members(mask: Mask) -> impl Iterator<Item = usize> {
    let mut rest = mask;
    std::iter::from_fn(move || {
        if rest == 0 {
            None
        } else {
            let i = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            Some(i)
        }
    })
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 || n > MAX_SOURCES {
        return Err(ChimpError::SourceCount { n, max: MAX_SOURCES });
    }
    Ok(())
}

fn check_values<T: Scalar>(n: usize, values: &[T]) -> Result<()> {
    check_n(n)?;
    let expected = 1usize << n;
    if values.len() != expected {
        return Err(ChimpError::LengthMismatch {
            expected,
            got: values.len(),
        });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(ChimpError::NonFinite { index });
    }
    Ok(())
}

/// A set function `g: 2^X -> R` stored densely by bitmask.
///
/// Construction only checks structure (length, finiteness). Whether the
/// values form a capacity is answered by [`FuzzyMeasure::validate`], since
/// intermediate results (a zeta transform, a half-trained network) may
/// legitimately violate monotonicity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureFile<T>", into = "MeasureFile<T>")]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct FuzzyMeasure<T> {
    n: usize,
    values: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct MeasureFile<T> {
    n: usize,
    values: Vec<T>,
}

impl<T: Scalar> TryFrom<MeasureFile<T>> for FuzzyMeasure<T> {
    type Error = ChimpError;
    fn try_from(file: MeasureFile<T>) -> Result<Self> {
        FuzzyMeasure::new(file.n, file.values)
    }
}

impl<T> From<FuzzyMeasure<T>> for MeasureFile<T> {
    fn from(g: FuzzyMeasure<T>) -> Self {
        MeasureFile {
            n: g.n,
            values: g.values,
        }
    }
}

/// One way a set function fails to be a capacity.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation<T> {
    /// `g(∅) != 0`.
    Boundary { value: T },
    /// `g(subset) > g(superset)` for `superset = subset ∪ {i}`.
    Monotonicity { subset: Mask, superset: Mask, drop: T },
    /// `g(X) != 1` when normalization was requested.
    NotNormalized { value: T },
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidateOptions {
    pub require_normalized: bool,
}

/// Result of [`FuzzyMeasure::validate`]. Monotonicity drops below the
/// scalar's tolerance land in `warnings` rather than `violations`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Validation<T> {
    pub violations: Vec<Violation<T>>,
    pub warnings: Vec<Violation<T>>,
}

impl<T> Validation<T> {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl<T: Scalar> FuzzyMeasure<T> {
    pub fn new(n: usize, values: Vec<T>) -> Result<Self> {
        check_values(n, &values)?;
        Ok(Self { n, values })
    }

    /// Builds a measure from a function of the subset mask; `g(∅)` is forced to 0.
    pub fn from_fn(n: usize, mut f: impl FnMut(Mask) -> T) -> Result<Self> {
        check_n(n)?;
        let values = (0..1usize << n)
            .map(|mask| if mask == 0 { T::zero() } else { f(mask) })
            .collect();
        Self::new(n, values)
    }

    /// Builds an `n = 3` measure from the conventional row
    /// `(g1, g2, g3, g12, g13, g23, g123)`.
    pub fn from_row3(row: [T; 7]) -> Self {
        let [g1, g2, g3, g12, g13, g23, g123] = row;
        Self {
            n: 3,
            values: vec![T::zero(), g1, g2, g12, g3, g13, g23, g123],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// Raw mutable access for in-place materialization; callers keep `values[0] = 0`.
    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, mask: Mask) -> T {
        self.values[mask]
    }

    pub fn full_mask(&self) -> Mask {
        full_mask(self.n)
    }

    /// `g(X)`.
    pub fn total(&self) -> T {
        self.values[self.full_mask()]
    }

    pub fn validate(&self) -> Validation<T> {
        self.validate_with(ValidateOptions::default())
    }

    /// Checks the boundary condition and every single-element extension
    /// `A ⊂ A ∪ {i}`, which is sufficient for monotonicity.
    pub fn validate_with(&self, opts: ValidateOptions) -> Validation<T> {
        let mut violations = Vec::new();
        let mut warnings = Vec::new();
        let tol = T::monotone_tolerance();
        if self.values[0] != T::zero() {
            violations.push(Violation::Boundary {
                value: self.values[0],
            });
        }
        let full = self.full_mask();
        for subset in 0..=full {
            let below = self.values[subset];
            for i in members(full & !subset) {
                let superset = subset | (1 << i);
                let drop = below - self.values[superset];
                if drop > T::zero() {
                    let v = Violation::Monotonicity {
                        subset,
                        superset,
                        drop,
                    };
                    if drop < tol {
                        warnings.push(v);
                    } else {
                        violations.push(v);
                    }
                }
            }
        }
        if opts.require_normalized && (self.total() - T::one()).abs() > tol {
            violations.push(Violation::NotNormalized {
                value: self.total(),
            });
        }
        Validation {
            violations,
            warnings,
        }
    }

    /// Möbius transform `m(A) = Σ_{B ⊆ A} (-1)^{|A \ B|} g(B)`, computed with
    /// the `O(n 2^n)` in-place subset difference.
    pub fn mobius(&self) -> MobiusMeasure<T> {
        let mut coeffs = self.values.clone();
        for bit in (0..self.n).map(|i| 1usize << i) {
            for mask in 0..coeffs.len() {
                if mask & bit != 0 {
                    let lower = coeffs[mask ^ bit];
                    coeffs[mask] -= lower;
                }
            }
        }
        MobiusMeasure { n: self.n, coeffs }
    }

    /// `g / g(X)`; returns `None` when `g(X)` is zero.
    pub fn normalized(&self) -> Option<Self> {
        let total = self.total();
        if total == T::zero() {
            return None;
        }
        Some(Self {
            n: self.n,
            values: self.values.iter().map(|&v| v / total).collect(),
        })
    }

    /// Cardinality-symmetric measure with the same per-layer averages.
    pub fn layer_average(&self) -> Self {
        let mut sums = vec![T::zero(); self.n + 1];
        let mut counts = vec![0usize; self.n + 1];
        for (mask, &v) in self.values.iter().enumerate() {
            sums[cardinality(mask)] += v;
            counts[cardinality(mask)] += 1;
        }
        let means: Vec<T> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| s / T::from_usize(c).unwrap())
            .collect();
        Self {
            n: self.n,
            values: (0..self.values.len())
                .map(|mask| means[cardinality(mask)])
                .collect(),
        }
    }
}

/// Shape of a distinguished aggregation operator recoverable by the integral.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecialKind<T> {
    Max,
    Min,
    Mean,
    /// Ordered weights `w_1..w_n`; `g(A) = Σ_{j ≤ |A|} w_j`.
    Los(Vec<T>),
}

impl<T: Scalar> FuzzyMeasure<T> {
    pub fn special(kind: &SpecialKind<T>, n: usize) -> Result<Self> {
        check_n(n)?;
        let full = full_mask(n);
        match kind {
            SpecialKind::Max => Self::from_fn(n, |_| T::one()),
            SpecialKind::Min => Self::from_fn(n, |m| if m == full { T::one() } else { T::zero() }),
            SpecialKind::Mean => {
                let nn = T::from_usize(n).unwrap();
                Self::from_fn(n, |m| T::from_usize(cardinality(m)).unwrap() / nn)
            }
            SpecialKind::Los(weights) => {
                if weights.len() != n {
                    return Err(ChimpError::InvalidWeights(format!(
                        "expected {n} weights, got {}",
                        weights.len()
                    )));
                }
                if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < T::zero()) {
                    return Err(ChimpError::InvalidWeights(format!(
                        "weights must be finite and nonnegative, found {w}"
                    )));
                }
                let sum: T = weights.iter().copied().sum();
                if (sum - T::one()).abs() > T::lit(1e-9).max(T::epsilon() * T::lit(16.0)) {
                    return Err(ChimpError::InvalidWeights(format!(
                        "weights must sum to 1, sum is {sum}"
                    )));
                }
                let mut cumulative = vec![T::zero(); n + 1];
                for j in 0..n {
                    cumulative[j + 1] = cumulative[j] + weights[j];
                }
                Self::from_fn(n, |m| cumulative[cardinality(m)])
            }
        }
    }
}

/// Möbius coefficients `m(A)` of a set function, indexed by bitmask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MobiusFile<T>", into = "MobiusFile<T>")]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct MobiusMeasure<T> {
    n: usize,
    coeffs: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct MobiusFile<T> {
    n: usize,
    coeffs: Vec<T>,
}

impl<T: Scalar> TryFrom<MobiusFile<T>> for MobiusMeasure<T> {
    type Error = ChimpError;
    fn try_from(file: MobiusFile<T>) -> Result<Self> {
        MobiusMeasure::new(file.n, file.coeffs)
    }
}

impl<T> From<MobiusMeasure<T>> for MobiusFile<T> {
    fn from(m: MobiusMeasure<T>) -> Self {
        MobiusFile {
            n: m.n,
            coeffs: m.coeffs,
        }
    }
}

/// Output of the zeta transform: the set function plus its validation, since
/// arbitrary Möbius coefficients need not describe a monotone measure.
#[derive(Debug, Clone)]
pub struct Zeta<T> {
    pub measure: FuzzyMeasure<T>,
    pub validation: Validation<T>,
}

impl<T: Scalar> MobiusMeasure<T> {
    pub fn new(n: usize, coeffs: Vec<T>) -> Result<Self> {
        check_values(n, &coeffs)?;
        Ok(Self { n, coeffs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    #[inline]
    pub fn get(&self, mask: Mask) -> T {
        self.coeffs[mask]
    }

    /// `Σ_A m(A)`, which equals `g(X)` of the corresponding measure.
    pub fn sum(&self) -> T {
        self.coeffs.iter().copied().sum()
    }

    /// Zeta transform `g(A) = Σ_{B ⊆ A} m(B)`.
    pub fn zeta(&self) -> Zeta<T> {
        let mut values = self.coeffs.clone();
        for bit in (0..self.n).map(|i| 1usize << i) {
            for mask in 0..values.len() {
                if mask & bit != 0 {
                    let lower = values[mask ^ bit];
                    values[mask] += lower;
                }
            }
        }
        let measure = FuzzyMeasure { n: self.n, values };
        let validation = measure.validate();
        Zeta {
            measure,
            validation,
        }
    }

    /// Zeroes every coefficient on subsets larger than `k`.
    pub fn k_truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n {
            return Err(ChimpError::KOutOfRange { k, n: self.n });
        }
        Ok(Self {
            n: self.n,
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(mask, &c)| if cardinality(mask) > k { T::zero() } else { c })
                .collect(),
        })
    }
}

/// The four target measures of the synthetic recovery experiment (`n = 3`).
pub mod targets {
    use super::FuzzyMeasure;
    use crate::scalar::Scalar;

    /// Soft-max.
    pub fn fm1<T: Scalar>() -> FuzzyMeasure<T> {
        row([0.7, 0.7, 0.7, 0.9, 0.9, 0.9, 1.0])
    }

    /// Mean.
    pub fn fm2<T: Scalar>() -> FuzzyMeasure<T> {
        let third = T::one() / T::lit(3.0);
        let two_thirds = T::lit(2.0) / T::lit(3.0);
        FuzzyMeasure::from_row3([
            third, third, third, two_thirds, two_thirds, two_thirds, T::one(),
        ])
    }

    /// Soft-mean.
    pub fn fm3<T: Scalar>() -> FuzzyMeasure<T> {
        row([0.1, 0.1, 0.1, 0.3, 0.3, 0.3, 1.0])
    }

    /// Arbitrary.
    pub fn fm4<T: Scalar>() -> FuzzyMeasure<T> {
        row([0.1, 0.2, 0.3, 0.3, 0.5, 0.7, 1.0])
    }

    pub fn all<T: Scalar>() -> [(&'static str, FuzzyMeasure<T>); 4] {
        [
            ("FM1", fm1()),
            ("FM2", fm2()),
            ("FM3", fm3()),
            ("FM4", fm4()),
        ]
    }

    fn row<T: Scalar>(r: [f64; 7]) -> FuzzyMeasure<T> {
        FuzzyMeasure::from_row3(r.map(T::lit))
    }
}
