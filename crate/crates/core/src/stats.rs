//! Seeding, replica parallelism and small statistical helpers shared by the
//! Monte Carlo estimators.
//!
//! Seeding scheme: a 64-bit master seed initialises a ChaCha8 key through
//! `seed_from_u64`; replica `k` draws from stream number `k` of that key.
//! The assignment depends only on `(master, k)`, never on the thread that runs
//! the replica, so results are identical for every thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

/// Deterministic per-replica generator.
pub fn substream(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Derives an independent master seed for a named sub-experiment.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `n` replicas in parallel; output order is the replica index order.
pub fn par_replicas<T, F>(n: usize, master: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> T + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = substream(master, k as u64);
            f(&mut rng, k)
        })
        .collect()
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MCEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        if xs.iter().all(|x| *x == xs[0]) {
            return Self { mean: xs[0], se: 0.0, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, se, n }
    }

    /// |mean - target| in units of SE; infinite when SE is 0 and the mean is off.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if d == 0.0 {
            0.0
        } else if self.se == 0.0 {
            f64::INFINITY
        } else {
            d / self.se
        }
    }
}

pub fn poisson_pmf(mean: f64, k: u64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    let kf = k as f64;
    (-mean + kf * mean.ln() - ln_gamma(kf + 1.0)).exp()
}

/// `P(N >= k)` for `N ~ Poisson(mean)`, accurate in the far tail.
pub fn poisson_tail(mean: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if mean == 0.0 {
        return 0.0;
    }
    if (k as f64) <= mean {
        let head: f64 = (0..k).map(|j| poisson_pmf(mean, j)).sum();
        return (1.0 - head).max(0.0);
    }
    let mut term = poisson_pmf(mean, k);
    let mut sum = 0.0;
    let mut j = k;
    loop {
        sum += term;
        j += 1;
        term *= mean / j as f64;
        // remaining terms are dominated by a geometric series with ratio mean/(j+1)
        let ratio = mean / (j as f64 + 1.0);
        if term == 0.0 || term / (1.0 - ratio) < sum * 1e-17 {
            sum += term / (1.0 - ratio);
            break;
        }
    }
    sum.min(1.0)
}

/// Smallest `n` with `P(N > n) < eps`.
pub fn poisson_cutoff(mean: f64, eps: f64) -> u64 {
    let mut n = mean.ceil() as u64;
    while poisson_tail(mean, n + 1) >= eps {
        n += 1;
    }
    // walk down in case the start overshot
    while n > 0 && poisson_tail(mean, n) < eps {
        n -= 1;
    }
    n
}
