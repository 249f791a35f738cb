//! Monte Carlo plumbing shared by the verification routines.
//!
//! Every path owns a ChaCha8 stream keyed by `(seed, path index)`: the seed
//! goes through `seed_from_u64` and the path index selects the stream, so a
//! path's draws do not depend on how paths are scheduled across threads.
//! Exponential variates use inversion, `-ln(1 - U) / rate`, with `U` the
//! standard 53-bit uniform from `rand`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

pub type PathRng = ChaCha8Rng;

/// Generator for path `path` of a run seeded with `seed`.
pub fn path_rng(seed: u64, path: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

/// Exponential variate with the given rate (`rate > 0`).
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -(1.0 - rng.gen::<f64>()).ln() / rate
}

/// Event times of a homogeneous Poisson process on `[0, horizon]`.
pub fn poisson_times<R: Rng + ?Sized>(rate: f64, horizon: f64, rng: &mut R) -> Vec<f64> {
    let mut times = Vec::new();
    if rate <= 0.0 {
        return times;
    }
    let mut t = exponential(rng, rate);
    while t <= horizon {
        times.push(t);
        t += exponential(rng, rate);
    }
    times
}

/// Running discounted cost along one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostAccumulator {
    discount: f64,
    total: f64,
    time: f64,
}

impl CostAccumulator {
    pub fn new(discount: f64) -> Self {
        Self { discount, total: 0.0, time: 0.0 }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn discount_factor(&self) -> f64 {
        (-self.discount * self.time).exp()
    }

    /// Adds a segment of length `duration` with constant cost rate `rate`,
    /// integrated exactly against the discount, and advances the clock.
    pub fn discounted_segment(&mut self, rate: f64, duration: f64) -> &mut Self {
        if rate != 0.0 {
            let weight = if self.discount == 0.0 {
                duration
            } else {
                -(-self.discount * duration).exp_m1() / self.discount
            };
            self.total += rate * self.discount_factor() * weight;
        }
        self.time += duration;
        self
    }

    /// Adds a lump cost incurred at the current time.
    pub fn impulse(&mut self, amount: f64) -> &mut Self {
        self.total += amount * self.discount_factor();
        self
    }

    /// Adds a cost already discounted to time zero and advances the clock.
    pub fn add_discounted(&mut self, amount: f64, duration: f64) -> &mut Self {
        self.total += amount;
        self.time += duration;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateReport {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl EstimateReport {
    /// `|mean - target| <= 3 std_error + allowance`.
    pub fn within(&self, target: f64, allowance: f64) -> bool {
        (self.mean - target).abs() <= 3.0 * self.std_error + allowance
    }

    /// The estimate is not statistically below `target`.
    pub fn not_below(&self, target: f64, allowance: f64) -> bool {
        self.mean >= target - 3.0 * self.std_error - allowance
    }
}

/// Sample mean and standard error `s / sqrt(n)`.
pub fn estimate(samples: &[f64], seed: u64) -> Result<EstimateReport> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(EstimateReport { mean, std_error: (var / n as f64).sqrt(), n_paths: n, seed })
}

/// Runs `path_cost` for `n_paths` independent paths in parallel and
/// summarises the results.
pub fn monte_carlo<F>(n_paths: usize, seed: u64, path_cost: F) -> Result<EstimateReport>
where
    F: Fn(&mut PathRng) -> f64 + Sync,
{
    let samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| path_cost(&mut path_rng(seed, p)))
        .collect();
    estimate(&samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn poisson_zero_rate_is_empty() {
        assert!(poisson_times(0.0, 100.0, &mut path_rng(1, 0)).is_empty());
    }

    #[test]
    fn poisson_mean_count_and_gap() {
        let counts: Vec<f64> = (0..10_000)
            .map(|p| poisson_times(0.1, 1000.0, &mut path_rng(3, p)).len() as f64)
            .collect();
        let rep = estimate(&counts, 3).unwrap();
        assert!(rep.within(100.0, 0.0), "{rep:?}");

        let mut rng = path_rng(4, 0);
        let gaps: Vec<f64> = (0..100_000).map(|_| exponential(&mut rng, 0.1)).collect();
        let rep = estimate(&gaps, 4).unwrap();
        assert!(rep.within(10.0, 0.0), "{rep:?}");
    }

    #[test]
    fn accumulator_closed_forms() {
        let mut acc = CostAccumulator::new(0.1);
        acc.discounted_segment(0.0, 5.0);
        assert_eq!(acc.total(), 0.0);
        assert_eq!(acc.time(), 5.0);

        let mut acc = CostAccumulator::new(0.1);
        for _ in 0..1000 {
            acc.discounted_segment(1.0, 1.0);
        }
        assert_abs_diff_eq!(acc.total(), 10.0, epsilon = 1e-12);

        let mut whole = CostAccumulator::new(0.3);
        whole.discounted_segment(2.0, 1.0);
        let mut halves = CostAccumulator::new(0.3);
        halves.discounted_segment(2.0, 0.5).discounted_segment(2.0, 0.5);
        assert_abs_diff_eq!(whole.total(), halves.total(), epsilon = 1e-14);

        let mut undiscounted = CostAccumulator::new(0.0);
        undiscounted.discounted_segment(2.0, 3.0).impulse(1.0);
        assert_eq!(undiscounted.total(), 7.0);
    }

    #[test]
    fn estimate_formulas() {
        let c = estimate(&[4.0; 10], 0).unwrap();
        assert_eq!((c.mean, c.std_error), (4.0, 0.0));
        let two = estimate(&[0.0, 2.0], 0).unwrap();
        assert_eq!((two.mean, two.std_error), (1.0, 1.0));
        assert!(matches!(estimate(&[1.0], 0), Err(Error::TooFewSamples { .. })));

        let rep = monte_carlo(100_000, 11, |rng| exponential(rng, 1.0)).unwrap();
        assert!(rep.within(1.0, 0.0), "{rep:?}");
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<f64> = (0..5).map(|_| path_rng(9, 2).gen()).collect();
        let b: Vec<f64> = (0..5).map(|_| path_rng(9, 2).gen()).collect();
        assert_eq!(a, b);
        let x: f64 = path_rng(9, 2).gen();
        let y: f64 = path_rng(9, 3).gen();
        assert_ne!(x, y);
    }
}
