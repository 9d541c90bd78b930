//! Squared-error objective, analytic gradients, SGD and a finite-difference
//! gradient verifier for the Choquet network.
//!
//! Gradients with respect to the measure follow every argmax path from a
//! subset `B` with nonzero `o(B)` down to `A`:
//!
//! `∂E/∂g(A) = e · (o(A) + Σ_{B ⊋ A} o(B) · P(B → A))`
//!
//! where `P(B → A)` sums, over chains `B → C → … → A` of argmax children,
//! the product of normalized tie indicators. Ancestors are visited in
//! ascending mask order so that for `n = 3` the arithmetic is the same as
//! the closed-form expressions written per subset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ChimpError, Result};
use crate::ichimp::{forward, forward_into, ChimpParams, ForwardCache};
use crate::integral::SortPermutation;
use crate::measure::{cardinality, full_mask, members, Mask};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// One update per observation, in a per-fit shuffled order.
    #[default]
    PerSample,
    /// One update per epoch from the summed gradient.
    FullBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_mode: BatchMode,
    pub init_low: f64,
    pub init_high: f64,
    pub seed: u64,
    pub trials: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            epochs: 1000,
            batch_mode: BatchMode::PerSample,
            init_low: 0.1,
            init_high: 0.2,
            seed: 0,
            trials: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ChimpError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.init_low <= self.init_high) || !self.init_low.is_finite() || !self.init_high.is_finite() {
            return Err(ChimpError::Config(format!(
                "init range [{}, {}] is empty",
                self.init_low, self.init_high
            )));
        }
        Ok(())
    }
}

/// Gradients of the per-observation error `E = ½ (l − y)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<T> {
    /// `∂E/∂raw` by mask, aligned with [`ChimpParams::raw`].
    pub d_raw: Vec<T>,
    pub d_inputs: Option<Vec<T>>,
    pub loss: T,
}

impl<T: Scalar> GradientBundle<T> {
    pub fn d_raw_density(&self) -> Vec<T> {
        let n = self.d_raw.len().trailing_zeros() as usize;
        (0..n).map(|i| self.d_raw[1 << i]).collect()
    }

    pub fn d_raw_delta(&self) -> Vec<T> {
        (1..self.d_raw.len())
            .filter(|&m| cardinality(m) >= 2)
            .map(|m| self.d_raw[m])
            .collect()
    }
}

/// `E = ½ Σ_k (l_k − y_k)²`.
pub fn loss<T: Scalar>(labels: &[T], outputs: &[T]) -> Result<T> {
    if labels.len() != outputs.len() {
        return Err(ChimpError::LengthMismatch {
            expected: labels.len(),
            got: outputs.len(),
        });
    }
    let half = T::lit(0.5);
    Ok(labels
        .iter()
        .zip(outputs)
        .map(|(&l, &y)| half * (l - y) * (l - y))
        .sum())
}

/// Normalized indicators `I_i = J_i / Σ J` of the entries attaining the
/// maximum; the minimum uses the same rule on its own attaining set.
pub fn max_derivative_weights<T: Scalar>(values: &[T]) -> Result<Vec<T>> {
    let best = values
        .iter()
        .copied()
        .reduce(T::max)
        .ok_or(ChimpError::Empty("max_derivative_weights needs at least one value"))?;
    Ok(tie_weights(values, best))
}

pub fn min_derivative_weights<T: Scalar>(values: &[T]) -> Result<Vec<T>> {
    let best = values
        .iter()
        .copied()
        .reduce(T::min)
        .ok_or(ChimpError::Empty("min_derivative_weights needs at least one value"))?;
    Ok(tie_weights(values, best))
}

fn tie_weights<T: Scalar>(values: &[T], best: T) -> Vec<T> {
    let hits = values.iter().filter(|&&v| v == best).count();
    let share = T::one() / T::from_usize(hits).unwrap();
    values
        .iter()
        .map(|&v| if v == best { share } else { T::zero() })
        .collect()
}

/// Scratch buffers for the ancestor-path backward pass.
#[derive(Debug, Clone)]
pub struct Backprop<T> {
    acc: Vec<T>,
    weight: Vec<T>,
    stamp: Vec<u32>,
    epoch: u32,
    frontier: Vec<Mask>,
    next: Vec<Mask>,
    reached: Vec<Mask>,
    /// `∂E/∂g(A)` of the last call, by mask.
    pub dg: Vec<T>,
}

impl<T: Scalar> Backprop<T> {
    pub fn new(n: usize) -> Self {
        let size = 1usize << n;
        Self {
            acc: vec![T::zero(); size],
            weight: vec![T::zero(); size],
            stamp: vec![0; size],
            epoch: 0,
            frontier: Vec::new(),
            next: Vec::new(),
            reached: Vec::new(),
            dg: vec![T::zero(); size],
        }
    }

    fn resize(&mut self, n: usize) {
        if self.acc.len() != 1 << n {
            *self = Self::new(n);
        }
    }

    /// Fills `reached` with the subsets reachable from `top` through argmax
    /// children, and `weight` with the path sums `P(top → A)`.
    fn path_weights(&mut self, cache: &ForwardCache<T>, top: Mask) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.reached.clear();
        self.frontier.clear();
        self.frontier.push(top);
        self.stamp[top] = self.epoch;
        self.weight[top] = T::one();
        while !self.frontier.is_empty() {
            self.next.clear();
            for idx in 0..self.frontier.len() {
                let parent = self.frontier[idx];
                let ties = cache.measure.argmax[parent];
                if ties == 0 {
                    continue;
                }
                let share = T::one() / T::from_u32(ties.count_ones()).unwrap();
                let w = self.weight[parent];
                for i in members(ties as usize) {
                    let child = parent ^ (1 << i);
                    if self.stamp[child] != self.epoch {
                        self.stamp[child] = self.epoch;
                        self.weight[child] = T::zero();
                        self.next.push(child);
                    }
                    self.weight[child] += w * share;
                }
            }
            self.next.sort_unstable();
            self.reached.extend_from_slice(&self.next);
            std::mem::swap(&mut self.frontier, &mut self.next);
        }
    }

    /// Computes `∂E/∂g` into `self.dg` for error signal `e = y − l`.
    pub fn measure_grads(&mut self, cache: &ForwardCache<T>, e: T) {
        let n = cache.h.len();
        self.resize(n);
        let o = &cache.integrand.o;
        self.acc.copy_from_slice(o);
        for top in 1..o.len() {
            let ob = o[top];
            if ob == T::zero() || cardinality(top) == 1 {
                continue;
            }
            self.path_weights(cache, top);
            for idx in 0..self.reached.len() {
                let a = self.reached[idx];
                self.acc[a] += ob * self.weight[a];
            }
        }
        for (dg, &acc) in self.dg.iter_mut().zip(&self.acc) {
            *dg = e * acc;
        }
        self.dg[0] = T::zero();
    }

    /// Adds `scale · ∂E/∂raw` into `out`, using the `dg` of the last
    /// [`Backprop::measure_grads`] call.
    pub fn accumulate_raw(&self, p: &ChimpParams<T>, scale: T, out: &mut [T]) {
        for mask in 1..out.len() {
            if p.raw()[mask] > T::zero() {
                out[mask] += scale * self.dg[mask];
            }
        }
    }
}

fn check_cache<T: Scalar>(p: &ChimpParams<T>, h: &[T], cache: &ForwardCache<T>) -> Result<()> {
    if h.len() != p.n() || cache.h.as_slice() != h {
        return Err(ChimpError::StaleCache);
    }
    Ok(())
}

/// Gradients of `E = ½ (l − y)²` with respect to every raw weight, for a
/// cache produced by [`forward`] on the same `(p, h)`.
pub fn backward_params<T: Scalar>(
    p: &ChimpParams<T>,
    h: &[T],
    label: T,
    cache: &ForwardCache<T>,
) -> Result<GradientBundle<T>> {
    check_cache(p, h, cache)?;
    let e = cache.y - label;
    let mut bp = Backprop::new(p.n());
    bp.measure_grads(cache, e);
    let mut d_raw = vec![T::zero(); 1 << p.n()];
    bp.accumulate_raw(p, T::one(), &mut d_raw);
    Ok(GradientBundle {
        d_raw,
        d_inputs: None,
        loss: T::lit(0.5) * e * e,
    })
}

/// Subsets ordered by cardinality, then mask.
fn graded_order(n: usize) -> Vec<Mask> {
    let mut masks: Vec<Mask> = (1..1usize << n).collect();
    masks.sort_by_key(|&m| (cardinality(m), m));
    masks
}

/// `∂E/∂h_i = e Σ_A g(A) ∂o(A)/∂h_i`.
///
/// For `A ⊂ X`, `o(A) = max(0, d)` with `d = min_A h − max_{X∖A} h`; the
/// clip's normalized indicator is 1 for `d > 0`, ½ at `d = 0`, else 0, and
/// the inner min/max split ties equally.
pub fn backward_inputs<T: Scalar>(
    p: &ChimpParams<T>,
    h: &[T],
    label: T,
    cache: &ForwardCache<T>,
) -> Result<Vec<T>> {
    check_cache(p, h, cache)?;
    let n = p.n();
    let e = cache.y - label;
    let g = &cache.measure.g;
    let full = full_mask(n);
    let half = T::lit(0.5);
    let mut grad = vec![T::zero(); n];
    for a in graded_order(n) {
        let ga = g.get(a);
        if a == full {
            let weights = min_derivative_weights(h)?;
            for (gi, &w) in grad.iter_mut().zip(&weights) {
                *gi += ga * w;
            }
            continue;
        }
        let inside: Vec<T> = members(a).map(|i| h[i]).collect();
        let outside: Vec<T> = members(full & !a).map(|i| h[i]).collect();
        let lo = inside.iter().copied().fold(T::infinity(), T::min);
        let hi = outside.iter().copied().fold(T::neg_infinity(), T::max);
        let d = lo - hi;
        let clip = if d > T::zero() {
            T::one()
        } else if d == T::zero() {
            half
        } else {
            continue;
        };
        for (w, i) in min_derivative_weights(&inside)?.into_iter().zip(members(a)) {
            if w != T::zero() {
                grad[i] += ga * (clip * w);
            }
        }
        for (w, i) in max_derivative_weights(&outside)?.into_iter().zip(members(full & !a)) {
            if w != T::zero() {
                grad[i] -= ga * (clip * w);
            }
        }
    }
    Ok(grad.into_iter().map(|v| e * v).collect())
}

/// Parameter and input gradients together.
pub fn backward<T: Scalar>(p: &ChimpParams<T>, h: &[T], label: T, cache: &ForwardCache<T>) -> Result<GradientBundle<T>> {
    let mut bundle = backward_params(p, h, label, cache)?;
    bundle.d_inputs = Some(backward_inputs(p, h, label, cache)?);
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub params: ChimpParams<T>,
    /// Training MSE before the first epoch, then after each epoch.
    pub history: Vec<f64>,
}

fn mse<T: Scalar>(p: &ChimpParams<T>, rows: &[Vec<T>], labels: &[T], cache: &mut ForwardCache<T>) -> Result<f64> {
    let mut sum = 0.0;
    for (h, &l) in rows.iter().zip(labels) {
        let y = forward_into(p, h, cache)?;
        let d = (y - l).to_f64_lossy();
        sum += d * d;
    }
    Ok(sum / rows.len() as f64)
}

/// Stochastic gradient descent on the raw weights.
pub fn sgd_fit<T: Scalar>(rows: &[Vec<T>], labels: &[T], cfg: &TrainConfig) -> Result<FitResult<T>> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(ChimpError::Empty("training set has no rows"));
    }
    if rows.len() != labels.len() {
        return Err(ChimpError::LengthMismatch {
            expected: rows.len(),
            got: labels.len(),
        });
    }
    if let Some(index) = labels.iter().position(|l| !l.is_finite()) {
        return Err(ChimpError::Data(format!("label {index} is not finite")));
    }
    let n = rows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ChimpParams::<T>::random(n, cfg.init_low, cfg.init_high, &mut rng)?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut rng);

    let lr = T::lit(cfg.learning_rate);
    let mut cache = ForwardCache::new(n);
    let mut bp = Backprop::new(n);
    let mut grad = vec![T::zero(); 1 << n];
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    history.push(mse(&params, rows, labels, &mut cache)?);

    for epoch in 0..cfg.epochs {
        match cfg.batch_mode {
            BatchMode::PerSample => {
                for &k in &order {
                    let y = forward_into(&params, &rows[k], &mut cache)?;
                    let e = y - labels[k];
                    if !e.is_finite() {
                        return Err(numeric(epoch, k, format!("network output {y} is not finite")));
                    }
                    bp.measure_grads(&cache, e);
                    grad.iter_mut().for_each(|g| *g = T::zero());
                    bp.accumulate_raw(&params, T::one(), &mut grad);
                    step(&mut params, &grad, lr).map_err(|detail| numeric(epoch, k, detail))?;
                }
            }
            BatchMode::FullBatch => {
                grad.iter_mut().for_each(|g| *g = T::zero());
                for (k, (h, &l)) in rows.iter().zip(labels).enumerate() {
                    let y = forward_into(&params, h, &mut cache)?;
                    let e = y - l;
                    if !e.is_finite() {
                        return Err(numeric(epoch, k, format!("network output {y} is not finite")));
                    }
                    bp.measure_grads(&cache, e);
                    bp.accumulate_raw(&params, T::one(), &mut grad);
                }
                step(&mut params, &grad, lr).map_err(|detail| numeric(epoch, rows.len(), detail))?;
            }
        }
        let current = mse(&params, rows, labels, &mut cache)?;
        if !current.is_finite() {
            return Err(numeric(epoch, rows.len(), format!("training MSE {current} is not finite")));
        }
        history.push(current);
    }
    Ok(FitResult { params, history })
}

fn step<T: Scalar>(params: &mut ChimpParams<T>, grad: &[T], lr: T) -> std::result::Result<(), String> {
    for (mask, (w, &g)) in params.raw_mut().iter_mut().zip(grad).enumerate().skip(1) {
        *w -= lr * g;
        if !w.is_finite() {
            return Err(format!("parameter for subset {mask:#b} became {w}"));
        }
    }
    Ok(())
}

fn numeric(epoch: usize, sample: usize, detail: String) -> ChimpError {
    ChimpError::Numeric { epoch, sample, detail }
}

/// Which coordinate a finite-difference comparison refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Coordinate {
    /// Raw weight of the subset with this mask.
    Raw(Mask),
    Input(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
    pub checked: usize,
    /// Coordinates whose `±eps` neighbourhood crosses a tie or ReLU kink.
    pub skipped: Vec<Coordinate>,
}

/// Denominator floor for the relative error. Central differences with a
/// `1e-6` step carry rounding noise up to about `1e-10`, so gradients below
/// the floor (including exact zeros from inactive units) are compared by
/// absolute difference.
const REL_FLOOR: f64 = 1e-4;

/// Local piece of the piecewise-linear network: argmax sets, ReLU activity
/// and the tie structure of the sorted inputs.
fn region<T: Scalar>(p: &ChimpParams<T>, h: &[T]) -> Result<(Vec<u32>, Vec<bool>, SortPermutation)> {
    let (_, cache) = forward(p, h)?;
    let active = p.raw().iter().map(|&r| r > T::zero()).collect();
    Ok((cache.measure.argmax, active, SortPermutation::of(h)))
}

/// Central differences of `E = ½ (l − y)²` on every raw weight and input,
/// compared against [`backward`].
pub fn grad_check<T: Scalar>(p: &ChimpParams<T>, h: &[T], label: T, eps: f64) -> Result<GradCheckReport> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(ChimpError::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let (_, cache) = forward(p, h)?;
    let analytic = backward(p, h, label, &cache)?;
    let base = region(p, h)?;
    let step = T::lit(eps);
    let err = |y: T| {
        let d = (label - y).to_f64_lossy();
        0.5 * d * d
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: Vec::new(),
    };
    let mut record = |coord: Coordinate, a: f64, num: f64| {
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(REL_FLOOR);
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some(coord);
        }
    };
    let mut skipped = Vec::new();

    for mask in 1..p.raw().len() {
        let coord = Coordinate::Raw(mask);
        let mut plus = p.clone();
        plus.raw_mut()[mask] += step;
        let mut minus = p.clone();
        minus.raw_mut()[mask] -= step;
        if region(&plus, h)? != base || region(&minus, h)? != base {
            skipped.push(coord);
            continue;
        }
        let num = (err(forward(&plus, h)?.0) - err(forward(&minus, h)?.0)) / (2.0 * eps);
        record(coord, analytic.d_raw[mask].to_f64_lossy(), num);
    }
    let d_inputs = analytic.d_inputs.expect("backward fills input gradients");
    for i in 0..h.len() {
        let coord = Coordinate::Input(i);
        let mut plus = h.to_vec();
        plus[i] += step;
        let mut minus = h.to_vec();
        minus[i] -= step;
        if region(p, &plus)? != base || region(p, &minus)? != base {
            skipped.push(coord);
            continue;
        }
        let num = (err(forward(p, &plus)?.0) - err(forward(p, &minus)?.0)) / (2.0 * eps);
        record(coord, d_inputs[i].to_f64_lossy(), num);
    }
    report.skipped = skipped;
    Ok(report)
}
