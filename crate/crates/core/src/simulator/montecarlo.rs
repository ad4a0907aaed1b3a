//! Replication runner and summaries for Monte Carlo experiments.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::estimation::stream_rng;

/// Runs `reps` replications in parallel, replication `r` with its own stream
/// and seed `stream_seed(seed, r)`; results come back in replication order.
pub fn replicate<T, F>(reps: usize, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, u64, &mut ChaCha8Rng) -> T + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = crate::estimation::stream_seed(seed, r as u64);
            let mut rng = stream_rng(seed, r as u64);
            f(r, rep_seed, &mut rng)
        })
        .collect()
}

/// Mean, spread and Monte Carlo error of a scalar across replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// `sd / sqrt(n)`.
    pub mc_se: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                sd: f64::NAN,
                mc_se: f64::NAN,
            };
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            n,
            mean,
            sd,
            mc_se: sd / nf.sqrt(),
        }
    }

    /// `(mean − target) / mc_se`.
    pub fn z(&self, target: f64) -> f64 {
        if self.mc_se > 0.0 {
            (self.mean - target) / self.mc_se
        } else if self.mean == target {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// A rejection rate with its binomial Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub hits: usize,
    pub n: usize,
    pub rate: f64,
    pub mc_se: f64,
}

impl Rate {
    pub fn of(hits: usize, n: usize) -> Self {
        let rate = hits as f64 / n.max(1) as f64;
        Self {
            hits,
            n,
            rate,
            mc_se: (rate * (1.0 - rate) / n.max(1) as f64).sqrt(),
        }
    }
}

pub fn rmse(values: &[f64], target: f64) -> f64 {
    (values.iter().map(|v| (v - target) * (v - target)).sum::<f64>() / values.len() as f64).sqrt()
}
