//! Analytical fetch-buffer model.
//!
//! Demand `D` (instructions decode wants per cycle, support `0..=M`) and
//! supply `S` (instructions fetch delivers per cycle, support `0..=W`) are
//! treated as independent of the queue state. Their convolution gives the
//! per-cycle change in occupancy, which defines a column-stochastic
//! transition matrix over occupancies `0..=N` whose boundary rows absorb the
//! mass that would leave the range. The stationary vector `Q` of that matrix
//! gives the expected fetch bubbles `E(FB) = sum_i Q_i sum_{j>i} D_j (j - i)`.
//!
//! Everything except [`steady_state`] and [`monte_carlo`] is generic over
//! [`Probability`], so small cases can be checked exactly with rationals.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Float, Num};
use rand::distributions::{Distribution as _, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Scalar type for probabilities.
pub trait Probability: Num + Clone + PartialOrd + Debug {
    /// Allowed deviation of a distribution's sum from one.
    const SUM_TOLERANCE: f64;

    fn from_ratio(num: u64, den: u64) -> Self;

    fn as_f64(&self) -> f64;

    fn from_f64_approx(x: f64) -> Self;
}

impl Probability for f64 {
    const SUM_TOLERANCE: f64 = 1e-9;

    fn from_ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }

    fn as_f64(&self) -> f64 {
        *self
    }

    fn from_f64_approx(x: f64) -> Self {
        x
    }
}

impl Probability for f32 {
    const SUM_TOLERANCE: f64 = 1e-5;

    fn from_ratio(num: u64, den: u64) -> Self {
        (num as f64 / den as f64) as f32
    }

    fn as_f64(&self) -> f64 {
        *self as f64
    }

    fn from_f64_approx(x: f64) -> Self {
        x as f32
    }
}

impl Probability for Ratio<i64> {
    const SUM_TOLERANCE: f64 = 0.0;

    fn from_ratio(num: u64, den: u64) -> Self {
        Ratio::new(num as i64, den as i64)
    }

    fn as_f64(&self) -> f64 {
        *self.numer() as f64 / *self.denom() as f64
    }

    /// Nearest rational with a bounded denominator; exact for dyadic inputs
    /// of moderate precision.
    fn from_f64_approx(x: f64) -> Self {
        Ratio::approximate_float(x).unwrap_or_else(|| Ratio::from_integer(0))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FetchqError {
    #[error("distribution has no entries")]
    Empty,
    #[error("probability at {index} is negative")]
    Negative { index: usize },
    #[error("probabilities sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("queue capacity must be at least 1")]
    ZeroCapacity,
    #[error("{0} histogram is empty")]
    EmptyHistogram(&'static str),
    #[error("steps must be at least 1")]
    ZeroSteps,
}

/// Probability mass function over `0..probabilities.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution<P> {
    pub probabilities: Vec<P>,
}

fn check_pmf<P: Probability>(probs: &[P]) -> Result<(), FetchqError> {
    if probs.is_empty() {
        return Err(FetchqError::Empty);
    }
    if let Some(index) = probs.iter().position(|p| *p < P::zero()) {
        return Err(FetchqError::Negative { index });
    }
    let sum = probs.iter().fold(P::zero(), |a, p| a + p.clone());
    if (sum.as_f64() - 1.0).abs() > P::SUM_TOLERANCE || (P::SUM_TOLERANCE == 0.0 && !sum.is_one())
    {
        return Err(FetchqError::NotNormalized { sum: sum.as_f64() });
    }
    Ok(())
}

impl<P: Probability> Distribution<P> {
    pub fn new(probabilities: Vec<P>) -> Result<Self, FetchqError> {
        check_pmf(&probabilities)?;
        Ok(Distribution { probabilities })
    }

    /// All mass on `value`.
    pub fn point(value: usize) -> Self {
        let mut probabilities = vec![P::zero(); value + 1];
        probabilities[value] = P::one();
        Distribution { probabilities }
    }

    /// Normalized histogram.
    pub fn from_counts(counts: &[u64]) -> Result<Self, FetchqError> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(FetchqError::Empty);
        }
        Ok(Distribution {
            probabilities: counts.iter().map(|&c| P::from_ratio(c, total)).collect(),
        })
    }

    /// Largest value in the support.
    pub fn max_value(&self) -> usize {
        self.probabilities
            .iter()
            .rposition(|p| !p.is_zero())
            .unwrap_or(0)
    }

    pub fn get(&self, value: usize) -> P {
        self.probabilities.get(value).cloned().unwrap_or_else(P::zero)
    }

    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| i as f64 * p.as_f64())
            .sum()
    }

    pub fn to_f64(&self) -> Distribution<f64> {
        Distribution {
            probabilities: self.probabilities.iter().map(P::as_f64).collect(),
        }
    }

    /// L1 distance, padding the shorter support with zeros.
    pub fn l1_distance(&self, other: &Distribution<P>) -> f64 {
        let n = self.probabilities.len().max(other.probabilities.len());
        (0..n)
            .map(|i| (self.get(i).as_f64() - other.get(i).as_f64()).abs())
            .sum()
    }
}

/// Distribution of the per-cycle occupancy change `supply - demand`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeDistribution<P> {
    /// Smallest representable change (the negated maximum demand).
    pub min_change: i64,
    pub probabilities: Vec<P>,
}

impl<P: Probability> ChangeDistribution<P> {
    pub fn new(min_change: i64, probabilities: Vec<P>) -> Result<Self, FetchqError> {
        check_pmf(&probabilities)?;
        Ok(ChangeDistribution {
            min_change,
            probabilities,
        })
    }

    pub fn max_change(&self) -> i64 {
        self.min_change + self.probabilities.len() as i64 - 1
    }

    pub fn get(&self, change: i64) -> P {
        let k = change - self.min_change;
        if k < 0 {
            return P::zero();
        }
        self.probabilities
            .get(k as usize)
            .cloned()
            .unwrap_or_else(P::zero)
    }
}

/// `C_k = sum over s - d = k of S_s * D_d`, support `[-max D, +max S]`.
pub fn convolve<P: Probability>(
    demand: &Distribution<P>,
    supply: &Distribution<P>,
) -> ChangeDistribution<P> {
    let md = demand.probabilities.len() - 1;
    let ms = supply.probabilities.len() - 1;
    let mut c = vec![P::zero(); md + ms + 1];
    for (s, ps) in supply.probabilities.iter().enumerate() {
        for (d, pd) in demand.probabilities.iter().enumerate() {
            let k = s + md - d;
            c[k] = c[k].clone() + ps.clone() * pd.clone();
        }
    }
    ChangeDistribution {
        min_change: -(md as i64),
        probabilities: c,
    }
}

/// Column-stochastic matrix: `m[i][j]` is the probability of moving from
/// occupancy `j` to occupancy `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix<P> {
    pub m: Vec<Vec<P>>,
}

impl<P: Probability> TransitionMatrix<P> {
    pub fn capacity(&self) -> usize {
        self.m.len() - 1
    }

    pub fn column_sum(&self, j: usize) -> P {
        self.m
            .iter()
            .fold(P::zero(), |a, row| a + row[j].clone())
    }

    pub fn apply(&self, q: &[P]) -> Vec<P> {
        self.m
            .iter()
            .map(|row| {
                row.iter()
                    .zip(q)
                    .fold(P::zero(), |a, (p, x)| a + p.clone() * x.clone())
            })
            .collect()
    }
}

/// Builds the transition matrix over occupancies `0..=capacity`.
pub fn build_transition<P: Probability>(
    change: &ChangeDistribution<P>,
    capacity: usize,
) -> Result<TransitionMatrix<P>, FetchqError> {
    if capacity == 0 {
        return Err(FetchqError::ZeroCapacity);
    }
    let n = capacity as i64;
    let (lo, hi) = (change.min_change, change.max_change());
    let sum_range = |a: i64, b: i64| {
        (a.max(lo)..=b.min(hi)).fold(P::zero(), |acc, k| acc + change.get(k))
    };
    let mut m = vec![vec![P::zero(); capacity + 1]; capacity + 1];
    for (i, row) in m.iter_mut().enumerate() {
        let i = i as i64;
        for (j, cell) in row.iter_mut().enumerate() {
            let j = j as i64;
            *cell = if i == 0 {
                sum_range(lo, -j)
            } else if i == n {
                sum_range(n - j, hi)
            } else {
                change.get(i - j)
            };
        }
    }
    Ok(TransitionMatrix { m })
}

/// Result of [`steady_state`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyState<P> {
    pub q: Vec<P>,
    pub iterations: u64,
    /// The plain iteration did not settle and the damped chain was solved instead.
    pub damped: bool,
    /// `|| P q - q ||_1` of the returned vector under the undamped matrix.
    pub residual: f64,
}

pub const STEP_TOLERANCE: f64 = 1e-12;
pub const MAX_ITERATIONS: u64 = 1_000_000;
pub const DAMPING: f64 = 1e-6;

fn power_iterate<P: Probability + Float>(
    t: &TransitionMatrix<P>,
    damping: P,
    cap: u64,
) -> (Vec<P>, u64, bool) {
    let n = t.m.len();
    let uniform = P::one() / P::from_f64_approx(n as f64);
    let mut q = vec![uniform; n];
    for it in 1..=cap {
        let mut next = t.apply(&q);
        if damping > P::zero() {
            // Lazy step (I + P) / 2 breaks periodicity without moving the
            // stationary vector; the uniform mix handles reducible chains.
            let half = P::one() / (P::one() + P::one());
            for (x, prev) in next.iter_mut().zip(&q) {
                let lazy = half * (*x + *prev);
                *x = (P::one() - damping) * lazy + damping * uniform;
            }
        }
        let total = next.iter().fold(P::zero(), |a, &x| a + x);
        for x in next.iter_mut() {
            *x = *x / total;
        }
        let step: f64 = next
            .iter()
            .zip(&q)
            .map(|(a, b)| (*a - *b).abs().as_f64())
            .sum();
        q = next;
        if step < STEP_TOLERANCE {
            return (q, it, true);
        }
    }
    (q, cap, false)
}

/// Stationary occupancy distribution by power iteration from the uniform
/// vector. If the chain does not settle within [`MAX_ITERATIONS`] (periodic
/// chains), the damped lazy chain `(1 - eps) (I + P) / 2 + eps U` is solved
/// instead.
pub fn steady_state<P: Probability + Float>(t: &TransitionMatrix<P>) -> SteadyState<P> {
    let (mut q, mut iterations, converged) = power_iterate(t, P::zero(), MAX_ITERATIONS);
    let damped = !converged;
    if damped {
        let (dq, it, _) = power_iterate(t, P::from_f64_approx(DAMPING), MAX_ITERATIONS);
        q = dq;
        iterations += it;
    }
    let residual = t
        .apply(&q)
        .iter()
        .zip(&q)
        .map(|(a, b)| (*a - *b).abs().as_f64())
        .sum();
    SteadyState {
        q,
        iterations,
        damped,
        residual,
    }
}

/// `E(FB) = sum_i Q_i sum_{j>i} D_j (j - i)`, with `j` ranging over the
/// support of `D`.
pub fn expected_bubbles<P: Probability>(q: &[P], demand: &Distribution<P>) -> P {
    let mut total = P::zero();
    for (i, qi) in q.iter().enumerate() {
        let mut inner = P::zero();
        for (j, dj) in demand.probabilities.iter().enumerate().skip(i + 1) {
            inner = inner + dj.clone() * P::from_ratio((j - i) as u64, 1);
        }
        total = total + qi.clone() * inner;
    }
    total
}

/// Occupancy distribution and bubble rate measured by simulating the chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    /// Fraction of steps that began at each occupancy.
    pub occupancy: Distribution<f64>,
    /// Mean unmet demand per step.
    pub bubbles_per_step: f64,
}

/// Simulates the queue for `steps` cycles starting empty.
///
/// Each step draws `s ~ S` and `d ~ D` independently; the unmet demand
/// `max(0, d - q)` counts as bubbles and the occupancy moves to
/// `clamp(q + s - d, 0, N)`, the same chain the transition matrix describes.
pub fn monte_carlo<P: Probability>(
    demand: &Distribution<P>,
    supply: &Distribution<P>,
    capacity: usize,
    steps: u64,
    seed: u64,
) -> Result<MonteCarloResult, FetchqError> {
    if capacity == 0 {
        return Err(FetchqError::ZeroCapacity);
    }
    if steps == 0 {
        return Err(FetchqError::ZeroSteps);
    }
    let weights = |d: &Distribution<P>| {
        WeightedIndex::new(d.probabilities.iter().map(P::as_f64)).map_err(|_| FetchqError::Empty)
    };
    let (wd, ws) = (weights(demand)?, weights(supply)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; capacity + 1];
    let mut bubbles = 0u64;
    let mut q = 0i64;
    for _ in 0..steps {
        counts[q as usize] += 1;
        let s = ws.sample(&mut rng) as i64;
        let d = wd.sample(&mut rng) as i64;
        bubbles += (d - q).max(0) as u64;
        q = (q + s - d).clamp(0, capacity as i64);
    }
    Ok(MonteCarloResult {
        occupancy: Distribution::from_counts(&counts)?,
        bubbles_per_step: bubbles as f64 / steps as f64,
    })
}

/// One row of a capacity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub capacity: usize,
    pub expected_bubbles: f64,
    pub steady_state: Vec<f64>,
}

/// Solves the model for every capacity in `capacities`.
pub fn capacity_sweep(
    demand: &Distribution<f64>,
    supply: &Distribution<f64>,
    capacities: impl IntoIterator<Item = usize>,
) -> Result<Vec<SweepPoint>, FetchqError> {
    let change = convolve(demand, supply);
    capacities
        .into_iter()
        .map(|n| {
            let t = build_transition(&change, n)?;
            let ss = steady_state(&t);
            Ok(SweepPoint {
                capacity: n,
                expected_bubbles: expected_bubbles(&ss.q, demand),
                steady_state: ss.q,
            })
        })
        .collect()
}

/// Demand and supply distributions from per-cycle histograms recorded by the
/// engine's idealized-fetch and idealized-backend runs.
pub fn harvest_from_histograms(
    demand_counts: &[u64],
    supply_counts: &[u64],
) -> Result<(Distribution<f64>, Distribution<f64>), FetchqError> {
    let d = Distribution::from_counts(demand_counts)
        .map_err(|_| FetchqError::EmptyHistogram("demand"))?;
    let s = Distribution::from_counts(supply_counts)
        .map_err(|_| FetchqError::EmptyHistogram("supply"))?;
    Ok((d, s))
}

/// Demand from an idealized-fetch run and supply from an idealized-backend
/// run of the same workload.
pub fn harvest_distributions(
    demand_run: &crate::engine::RunStats,
    supply_run: &crate::engine::RunStats,
) -> Result<(Distribution<f64>, Distribution<f64>), FetchqError> {
    harvest_from_histograms(&demand_run.fetch.demand, &supply_run.fetch.supply)
}
