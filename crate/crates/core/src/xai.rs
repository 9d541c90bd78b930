//! Explainability indices for a learned measure and the data it was fit on.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{ChimpError, Result};
use crate::integral::{check_input, next_permutation, SortPermutation, MAX_TIE_GROUP};
use crate::measure::{cardinality, full_mask, FuzzyMeasure, Mask, SpecialKind};
use crate::scalar::Scalar;

/// Upper bound on the compatible walks enumerated for one tied observation.
pub const MAX_TIE_WALKS: usize = 40_320;

fn require_valid<T: Scalar>(g: &FuzzyMeasure<T>) -> Result<()> {
    let v = g.validate();
    if !v.is_valid() {
        return Err(ChimpError::InvalidMeasure(format!(
            "{} violation(s), first: {:?}",
            v.violations.len(),
            v.violations[0]
        )));
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Shapley values `Φ(i) = Σ_{A ⊆ X∖{i}} (n−|A|−1)! |A)! / n! · (g(A∪{i}) − g(A))`.
pub fn shapley<T: Scalar>(g: &FuzzyMeasure<T>) -> Result<Vec<T>> {
    require_valid(g)?;
    let n = g.n();
    // (n−s−1)! s! / n! = 1 / (n · C(n−1, s))
    let coef: Vec<T> = (0..n)
        .map(|s| T::lit(1.0 / (n as f64 * binomial(n - 1, s))))
        .collect();
    let full = full_mask(n);
    Ok((0..n)
        .map(|i| {
            let bit = 1 << i;
            (0..=full)
                .filter(|a| a & bit == 0)
                .map(|a| coef[cardinality(a)] * (g.get(a | bit) - g.get(a)))
                .sum()
        })
        .collect())
}

/// Pairwise interaction indices; the diagonal is `None`.
pub fn interaction<T: Scalar>(g: &FuzzyMeasure<T>) -> Result<Vec<Vec<Option<T>>>> {
    let n = g.n();
    if n < 2 {
        return Err(ChimpError::Config("interaction needs at least two sources".into()));
    }
    require_valid(g)?;
    // (n−s−2)! s! / (n−1)! = 1 / ((n−1) · C(n−2, s))
    let coef: Vec<T> = (0..n - 1)
        .map(|s| T::lit(1.0 / ((n - 1) as f64 * binomial(n - 2, s))))
        .collect();
    let full = full_mask(n);
    let mut out = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let (bi, bj) = (1 << i, 1 << j);
            let value: T = (0..=full)
                .filter(|a| a & (bi | bj) == 0)
                .map(|a| {
                    coef[cardinality(a)] * (g.get(a | bi | bj) - g.get(a | bi) - g.get(a | bj) + g.get(a))
                })
                .sum();
            out[i][j] = Some(value);
            out[j][i] = Some(value);
        }
    }
    Ok(out)
}

/// RMS distances over the interior lattice `∅ ⊂ A ⊂ X` to reference operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatorDistances<T> {
    pub max: T,
    pub min: T,
    pub mean: T,
    /// Distance to the nearest cardinality-symmetric measure (per-layer average).
    pub los: T,
}

impl<T: Scalar> OperatorDistances<T> {
    /// Reference operator with the smallest distance.
    pub fn closest(&self) -> &'static str {
        [
            ("max", self.max),
            ("min", self.min),
            ("mean", self.mean),
            ("los", self.los),
        ]
        .into_iter()
        .fold(("max", T::infinity()), |best, c| if c.1 < best.1 { c } else { best })
        .0
    }
}

fn interior_rms<T: Scalar>(g: &FuzzyMeasure<T>, t: &FuzzyMeasure<T>) -> T {
    let full = g.full_mask();
    if full < 2 {
        return T::zero();
    }
    let sum: T = (1..full)
        .map(|a| {
            let d = g.get(a) - t.get(a);
            d * d
        })
        .sum();
    (sum / T::from_usize(full - 1).unwrap()).sqrt()
}

pub fn operator_distances<T: Scalar>(g: &FuzzyMeasure<T>) -> Result<OperatorDistances<T>> {
    require_valid(g)?;
    let n = g.n();
    Ok(OperatorDistances {
        max: interior_rms(g, &FuzzyMeasure::special(&SpecialKind::Max, n)?),
        min: interior_rms(g, &FuzzyMeasure::special(&SpecialKind::Min, n)?),
        mean: interior_rms(g, &FuzzyMeasure::special(&SpecialKind::Mean, n)?),
        los: interior_rms(g, &g.layer_average()),
    })
}

/// How often each sort order (walk) and each measure value is exercised by a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkStats {
    pub n: usize,
    pub observations: usize,
    /// Observed walks (zero-based source order, largest input first) with
    /// their counts. Tied observations contribute fractional counts.
    pub observed_walks: Vec<WalkCount>,
    /// Fraction of the `n!` walks observed.
    pub walk_coverage: f64,
    /// Visit count of each nonempty subset by mask (`[0]` unused).
    pub variable_counts: Vec<f64>,
    /// Fraction of the `2^n − 1` nonempty subsets visited at least once.
    pub variable_coverage: f64,
    pub dominant_walk: Option<WalkCount>,
    pub dominant_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WalkCount {
    pub walk: Vec<usize>,
    pub count: f64,
    pub share: f64,
}

/// Every sort order compatible with `h`, each a stable refinement of its tie groups.
fn compatible_walks<T: Scalar>(h: &[T]) -> Result<Vec<Vec<usize>>> {
    let sort = SortPermutation::of(h);
    let mut total = 1usize;
    for group in &sort.tie_groups {
        if group.len() > MAX_TIE_GROUP {
            return Err(ChimpError::TieGroupTooLarge {
                size: group.len(),
                max: MAX_TIE_GROUP,
            });
        }
        total = total.saturating_mul((1..=group.len()).product());
    }
    if total > MAX_TIE_WALKS {
        return Err(ChimpError::Data(format!(
            "observation has {total} compatible walks (limit {MAX_TIE_WALKS})"
        )));
    }
    let mut walks = vec![Vec::with_capacity(h.len())];
    for group in &sort.tie_groups {
        let mut perm: Vec<usize> = sort.order[group.clone()].to_vec();
        perm.sort_unstable();
        let mut orders = Vec::new();
        loop {
            orders.push(perm.clone());
            if !next_permutation(&mut perm) {
                break;
            }
        }
        walks = walks
            .into_iter()
            .flat_map(|w| {
                orders.iter().map(move |o| {
                    let mut w = w.clone();
                    w.extend_from_slice(o);
                    w
                })
            })
            .collect();
    }
    Ok(walks)
}

fn chain(walk: &[usize]) -> impl Iterator<Item = Mask> + '_ {
    walk.iter().scan(0usize, |acc, &i| {
        *acc |= 1 << i;
        Some(*acc)
    })
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

pub fn walk_stats<T: Scalar>(rows: &[Vec<T>], dominant_threshold: f64) -> Result<WalkStats> {
    let first = rows.first().ok_or(ChimpError::Empty("walk statistics need at least one row"))?;
    let n = first.len();
    let mut walks: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut variable_counts = vec![0.0; 1 << n];
    for h in rows {
        check_input(n, h)?;
        let compatible = compatible_walks(h)?;
        let share = 1.0 / compatible.len() as f64;
        for walk in compatible {
            for a in chain(&walk) {
                variable_counts[a] += share;
            }
            *walks.entry(walk).or_default() += share;
        }
    }
    let m = rows.len() as f64;
    let observed_walks: Vec<WalkCount> = walks
        .into_iter()
        .map(|(walk, count)| WalkCount {
            walk,
            count,
            share: count / m,
        })
        .collect();
    let dominant_walk = observed_walks
        .iter()
        .fold(None::<&WalkCount>, |best, w| match best {
            Some(b) if b.count >= w.count => Some(b),
            _ => Some(w),
        })
        .filter(|w| w.share > dominant_threshold)
        .cloned();
    let visited = variable_counts[1..].iter().filter(|&&c| c > 0.0).count();
    Ok(WalkStats {
        n,
        observations: rows.len(),
        walk_coverage: observed_walks.len() as f64 / factorial(n),
        observed_walks,
        variable_coverage: visited as f64 / ((1usize << n) - 1) as f64,
        variable_counts,
        dominant_walk,
        dominant_threshold,
    })
}

/// Fraction of the `n` subsets on `h`'s walk that the training data
/// visited; tied inputs average over their compatible walks.
pub fn trust<T: Scalar>(stats: &WalkStats, h: &[T]) -> Result<f64> {
    check_input(stats.n, h)?;
    let walks = compatible_walks(h)?;
    let per_walk = walks.iter().map(|w| {
        chain(w).filter(|&a| stats.variable_counts[a] > 0.0).count() as f64 / stats.n as f64
    });
    Ok(per_walk.sum::<f64>() / walks.len() as f64)
}

/// Full introspection of a learned measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XaiReport<T> {
    pub n: usize,
    pub g_total: T,
    pub shapley: Vec<T>,
    /// Shapley values of `g / g(X)`.
    pub shapley_normalized: Option<Vec<T>>,
    pub interaction: Vec<Vec<Option<T>>>,
    pub interaction_normalized: Option<Vec<Vec<Option<T>>>>,
    pub distances: OperatorDistances<T>,
    pub distances_normalized: Option<OperatorDistances<T>>,
    pub support: Option<WalkStats>,
    pub trust: Vec<f64>,
}

impl<T: Scalar> XaiReport<T> {
    /// Indices of `g`; support statistics from `train` and trust for each
    /// `query` row when data is given.
    pub fn build(
        g: &FuzzyMeasure<T>,
        train: Option<&[Vec<T>]>,
        query: Option<&[Vec<T>]>,
        dominant_threshold: f64,
    ) -> Result<Self> {
        let n = g.n();
        let normalized = g.normalized();
        let pairwise = |g: &FuzzyMeasure<T>| -> Result<Vec<Vec<Option<T>>>> {
            if n < 2 {
                Ok(vec![vec![None]])
            } else {
                interaction(g)
            }
        };
        let support = train
            .map(|rows| walk_stats(rows, dominant_threshold))
            .transpose()?;
        let trust = match (&support, query) {
            (Some(stats), Some(rows)) => rows
                .iter()
                .map(|h| trust(stats, h))
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        Ok(Self {
            n,
            g_total: g.total(),
            shapley: shapley(g)?,
            shapley_normalized: normalized.as_ref().map(shapley).transpose()?,
            interaction: pairwise(g)?,
            interaction_normalized: normalized.as_ref().map(pairwise).transpose()?,
            distances: operator_distances(g)?,
            distances_normalized: normalized.as_ref().map(operator_distances).transpose()?,
            support,
            trust,
        })
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sources: {}   g(X) = {:.6}", self.n, self.g_total);
        let _ = writeln!(s, "\n{:<8}{:>12}{:>14}", "source", "shapley", "normalized");
        for i in 0..self.n {
            let norm = self
                .shapley_normalized
                .as_ref()
                .map(|v| format!("{:>14.6}", v[i]))
                .unwrap_or_else(|| format!("{:>14}", "-"));
            let _ = writeln!(s, "{:<8}{:>12.6}{}", i + 1, self.shapley[i], norm);
        }
        if self.n >= 2 {
            let _ = writeln!(s, "\ninteraction");
            let _ = write!(s, "{:<6}", "");
            for j in 0..self.n {
                let _ = write!(s, "{:>10}", j + 1);
            }
            let _ = writeln!(s);
            for (i, row) in self.interaction.iter().enumerate() {
                let _ = write!(s, "{:<6}", i + 1);
                for v in row {
                    match v {
                        Some(v) => {
                            let _ = write!(s, "{:>10.4}", v);
                        }
                        None => {
                            let _ = write!(s, "{:>10}", "-");
                        }
                    }
                }
                let _ = writeln!(s);
            }
        }
        let d = self.distances_normalized.unwrap_or(self.distances);
        let _ = writeln!(
            s,
            "\ndistance to  max {:.4}  min {:.4}  mean {:.4}  los {:.4}  (closest: {})",
            d.max,
            d.min,
            d.mean,
            d.los,
            d.closest()
        );
        if let Some(w) = &self.support {
            let _ = writeln!(
                s,
                "walk coverage {:.4}  variable coverage {:.4}  observations {}",
                w.walk_coverage, w.variable_coverage, w.observations
            );
            if let Some(dom) = &w.dominant_walk {
                let order: Vec<String> = dom.walk.iter().map(|i| (i + 1).to_string()).collect();
                let _ = writeln!(s, "dominant walk {} (share {:.3})", order.join(" > "), dom.share);
            }
        }
        if !self.trust.is_empty() {
            let mean = self.trust.iter().sum::<f64>() / self.trust.len() as f64;
            let low = self.trust.iter().filter(|&&t| t < 1.0).count();
            let _ = writeln!(s, "trust: mean {:.4}, {} of {} below 1", mean, low, self.trust.len());
        }
        s
    }

    /// Bar chart of the Shapley values as a standalone SVG document.
    pub fn shapley_svg(&self) -> String {
        let values: Vec<f64> = self
            .shapley_normalized
            .as_ref()
            .unwrap_or(&self.shapley)
            .iter()
            .map(|v| v.to_f64_lossy())
            .collect();
        let bar = 40.0;
        let gap = 16.0;
        let height = 200.0;
        let width = gap + values.len() as f64 * (bar + gap);
        let top = values.iter().copied().fold(1e-12, f64::max);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = width,
            h = height + 40.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="14" font-size="12">Shapley values</text>"#, gap);
        for (i, &v) in values.iter().enumerate() {
            let x = gap + i as f64 * (bar + gap);
            let bh = (v.max(0.0) / top) * (height - 30.0);
            let y = 20.0 + (height - 30.0) - bh;
            let _ = writeln!(
                s,
                r##"<rect x="{x:.1}" y="{y:.1}" width="{bar}" height="{bh:.1}" fill="#4c72b0"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{:.3}</text>"#,
                x + bar / 2.0,
                y - 3.0,
                v
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
                x + bar / 2.0,
                height + 10.0,
                i + 1
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{members, targets};

    /// Average marginal contribution over all `n!` arrival orders.
    fn shapley_by_permutations(g: &FuzzyMeasure<f64>) -> Vec<f64> {
        let n = g.n();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut phi = vec![0.0; n];
        let mut count = 0.0;
        loop {
            let mut acc = 0;
            for &i in &perm {
                phi[i] += g.get(acc | 1 << i) - g.get(acc);
                acc |= 1 << i;
            }
            count += 1.0;
            if !next_permutation(&mut perm) {
                break;
            }
        }
        phi.iter().map(|p| p / count).collect()
    }

    #[test]
    fn shapley_examples() {
        let mean = FuzzyMeasure::<f64>::special(&SpecialKind::Mean, 3).unwrap();
        for v in shapley(&mean).unwrap() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let fm4 = targets::fm4::<f64>();
        let phi = shapley(&fm4).unwrap();
        let oracle = shapley_by_permutations(&fm4);
        for (a, b) in phi.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in phi.iter().zip([0.18333, 0.33333, 0.48333]) {
            assert!((a - b).abs() < 1e-5);
        }
        assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shapley_rejects_invalid() {
        let g = FuzzyMeasure::new(2, vec![0.0, 0.5, 0.3, 0.4]).unwrap();
        assert!(matches!(shapley(&g), Err(ChimpError::InvalidMeasure(_))));
    }

    #[test]
    fn interaction_examples() {
        let additive = FuzzyMeasure::<f64>::from_fn(3, |m| members(m).map(|i| [0.2, 0.3, 0.5][i]).sum()).unwrap();
        for row in interaction(&additive).unwrap() {
            for v in row.into_iter().flatten() {
                assert!(v.abs() < 1e-15);
            }
        }
        let min = FuzzyMeasure::<f64>::special(&SpecialKind::Min, 2).unwrap();
        assert_eq!(interaction(&min).unwrap()[0][1], Some(1.0));
        let max = FuzzyMeasure::<f64>::special(&SpecialKind::Max, 2).unwrap();
        assert_eq!(interaction(&max).unwrap()[1][0], Some(-1.0));
        assert_eq!(interaction(&max).unwrap()[0][0], None);
        let one = FuzzyMeasure::<f64>::special(&SpecialKind::Max, 1).unwrap();
        assert!(interaction(&one).is_err());
    }

    #[test]
    fn distances() {
        let mean = FuzzyMeasure::<f64>::special(&SpecialKind::Mean, 4).unwrap();
        let d = operator_distances(&mean).unwrap();
        assert_eq!((d.mean, d.los), (0.0, 0.0));
        let max = FuzzyMeasure::<f64>::special(&SpecialKind::Max, 4).unwrap();
        let d = operator_distances(&max).unwrap();
        assert_eq!((d.max, d.min), (0.0, 1.0));
        assert_eq!(d.closest(), "max");
        let fm1 = targets::fm1::<f64>();
        assert!(operator_distances(&fm1).unwrap().los < 1e-15);
        let fm4 = targets::fm4::<f64>();
        assert!(operator_distances(&fm4).unwrap().los > 0.0);
    }

    #[test]
    fn walk_stats_sorted_rows() {
        let rows: Vec<Vec<f64>> = (0..10).map(|k| vec![0.9, 0.5 - k as f64 * 0.01, 0.1]).collect();
        let s = walk_stats(&rows, 0.5).unwrap();
        assert_eq!(s.observed_walks.len(), 1);
        assert!((s.walk_coverage - 1.0 / 6.0).abs() < 1e-15);
        let dom = s.dominant_walk.unwrap();
        assert_eq!(dom.walk, vec![0, 1, 2]);
        assert_eq!(dom.share, 1.0);
    }

    #[test]
    fn walk_stats_single_row() {
        let s = walk_stats(&[vec![0.2, 0.7, 0.4]], 0.5).unwrap();
        let visited: Vec<usize> = (1..8).filter(|&a| s.variable_counts[a] > 0.0).collect();
        assert_eq!(visited, vec![0b010, 0b110, 0b111]);
        assert!((s.variable_coverage - 3.0 / 7.0).abs() < 1e-15);
        assert!(matches!(
            walk_stats::<f64>(&[], 0.5),
            Err(ChimpError::Empty(_))
        ));
    }

    #[test]
    fn walk_stats_uniform_rows_have_no_dominant_walk() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..6000)
            .map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let s = walk_stats(&rows, 0.5).unwrap();
        assert_eq!(s.walk_coverage, 1.0);
        assert!(s.dominant_walk.is_none());
        let total: f64 = s.observed_walks.iter().map(|w| w.count).sum();
        assert!((total - 6000.0).abs() < 1e-9);
    }

    #[test]
    fn tied_rows_split_counts() {
        let s = walk_stats(&[vec![0.5, 0.5, 0.1]], 0.5).unwrap();
        assert_eq!(s.observed_walks.len(), 2);
        assert_eq!(s.observed_walks[0].count, 0.5);
        assert_eq!(s.variable_counts[0b001], 0.5);
        assert_eq!(s.variable_counts[0b011], 1.0);
        assert!(s.dominant_walk.is_none());
    }

    #[test]
    fn trust_examples() {
        let train = vec![vec![0.9, 0.5, 0.1]];
        let s = walk_stats(&train, 0.5).unwrap();
        assert_eq!(trust(&s, &[0.8, 0.3, 0.2]).unwrap(), 1.0);
        assert!((trust(&s, &[0.1, 0.5, 0.9]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            trust(&s, &[0.1, 0.5]),
            Err(ChimpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn report_renders() {
        let g = targets::fm4::<f64>();
        let rows = vec![vec![0.9, 0.5, 0.1], vec![0.2, 0.4, 0.3]];
        let r = XaiReport::build(&g, Some(&rows), Some(&rows), 0.5).unwrap();
        assert_eq!(r.trust, vec![1.0, 1.0]);
        let text = r.summary();
        assert!(text.contains("shapley"));
        assert!(text.contains("closest"));
        let svg = r.shapley_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 3);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["interaction"][0][0].is_null());
    }
}
