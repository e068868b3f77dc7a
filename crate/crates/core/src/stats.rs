//! Bootstrap deviation analysis for sizing annotation budgets, and rank
//! correlations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SAMPLE_SIZES: [usize; 3] = [500, 1000, 3000];
pub const DEFAULT_RESAMPLES: usize = 10_000;
/// Identifies the random stream layout so results can be reproduced.
pub const RNG_ALGORITHM: &str =
    "ChaCha8 (rand_chacha), seed_from_u64(seed), stream = resample index";

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("score list is empty")]
    EmptyScores,
    #[error("sample size and resample count must be at least 1")]
    InvalidSize,
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two observations")]
    TooFewObservations,
    #[error("correlation undefined: an input has zero rank variance")]
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub sample_size: usize,
    pub resamples: usize,
    pub rng_seed: u64,
    pub rng_algorithm: String,
    pub full_mean: f64,
    /// Nearest-rank 95th percentile of `deviations`.
    pub percentile_95: f64,
    /// `|mean(resample) - full_mean|` in resample order.
    pub deviations: Vec<f64>,
}

/// Draws `resamples` samples of `sample_size` scores with replacement and
/// records each sample mean's absolute deviation from the full mean.
///
/// Resample `r` uses its own ChaCha8 stream `r` under `seed`, so the result
/// is independent of scheduling and thread count.
pub fn bootstrap_deviation(
    scores: &[f64],
    sample_size: usize,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult, StatsError> {
    if scores.is_empty() {
        return Err(StatsError::EmptyScores);
    }
    if sample_size == 0 || resamples == 0 {
        return Err(StatsError::InvalidSize);
    }
    let constant = scores.iter().all(|&s| s == scores[0]);
    let full_mean = if constant {
        scores[0]
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    };
    let deviations: Vec<f64> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut sum = 0.0;
            for _ in 0..sample_size {
                sum += scores[rng.random_range(0..scores.len())] - full_mean;
            }
            (sum / sample_size as f64).abs()
        })
        .collect();
    let percentile_95 = nearest_rank(&deviations, 0.95);
    Ok(BootstrapResult {
        sample_size,
        resamples,
        rng_seed: seed,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        full_mean,
        percentile_95,
        deviations,
    })
}

/// Nearest-rank percentile: the `ceil(q * n)`-th smallest value.
pub fn nearest_rank(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

impl BootstrapResult {
    /// Copy with at most `max_points` deviations, taken at evenly spaced
    /// positions of the sorted distribution (always keeping both ends).
    pub fn downsampled(&self, max_points: usize) -> BootstrapResult {
        let mut out = self.clone();
        if max_points == 0 || self.deviations.len() <= max_points {
            return out;
        }
        let mut sorted = self.deviations.clone();
        sorted.sort_by(f64::total_cmp);
        let last = sorted.len() - 1;
        out.deviations = (0..max_points)
            .map(|i| {
                let pos = if max_points == 1 {
                    last
                } else {
                    i * last / (max_points - 1)
                };
                sorted[pos]
            })
            .collect();
        out
    }
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewObservations);
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Undefined);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Counts inversions of `v` while merge-sorting it.
fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Number of tied pairs within runs of equal adjacent values.
fn tied_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
pub fn kendall(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y)?;
    let n = x.len() as u64;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let ties_x = tied_pairs(idx.iter().map(|&i| x[i]));
    let ties_xy = tied_pairs(idx.iter().map(|&i| (x[i], y[i])));
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut scratch = Vec::with_capacity(ys.len());
    let swaps = merge_count(&mut ys, &mut scratch);
    let ties_y = tied_pairs(ys.iter().copied());

    let total = n * (n - 1) / 2;
    let denom_x = (total - ties_x) as f64;
    let denom_y = (total - ties_y) as f64;
    if denom_x == 0.0 || denom_y == 0.0 {
        return Err(StatsError::Undefined);
    }
    // concordant - discordant
    let numer = total as f64 - ties_x as f64 - ties_y as f64 + ties_xy as f64 - 2.0 * swaps as f64;
    Ok((numer / (denom_x.sqrt() * denom_y.sqrt())).clamp(-1.0, 1.0))
}
