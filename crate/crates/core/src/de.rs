//! Differential evolution (rand/1/bin) over a bounded box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeConfig {
    pub population: usize,
    pub max_generations: usize,
    /// Mutation scale `F`.
    pub differential_weight: f64,
    pub crossover_rate: f64,
    /// Per-coordinate `(lo, hi)` box.
    pub domain: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population: 400,
            max_generations: 300,
            differential_weight: 0.8,
            crossover_rate: 0.9,
            domain: vec![(-10.0, 10.0); 2],
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::invalid(format!("population must be at least 4, got {}", self.population)));
        }
        if self.max_generations == 0 {
            return Err(Error::invalid("max_generations must be positive"));
        }
        if !(self.differential_weight > 0.0 && self.differential_weight <= 2.0) {
            return Err(Error::invalid(format!("differential_weight must lie in (0, 2], got {}", self.differential_weight)));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::invalid(format!("crossover_rate must lie in [0, 1], got {}", self.crossover_rate)));
        }
        if self.domain.is_empty() {
            return Err(Error::invalid("domain must have at least one coordinate"));
        }
        for &(lo, hi) in &self.domain {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("domain interval [{lo}, {hi}] is not a finite, non-empty box")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Best value after initialization, then after each generation.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

fn distinct_indices<R: Rng>(rng: &mut R, n: usize, exclude: usize) -> [usize; 3] {
    let mut out = [0usize; 3];
    let mut k = 0;
    while k < 3 {
        let r = rng.random_range(0..n);
        if r != exclude && !out[..k].contains(&r) {
            out[k] = r;
            k += 1;
        }
    }
    out
}

/// Maximizes `objective` over the configured box.
///
/// Trial vectors are generated sequentially from one seeded stream and
/// evaluated in parallel; selection keeps the incumbent on ties. Coordinates
/// that leave the box are reflected to a random point between the base vector
/// and the violated bound.
pub fn maximize<F>(objective: F, config: &DeConfig) -> Result<DeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let dim = config.domain.len();
    let np = config.population;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| config.domain.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect())
        .collect();
    let mut fit: Vec<f64> = pop.par_iter().map(|x| objective(x)).collect();
    let mut evaluations = np;

    let mut best = 0;
    for i in 1..np {
        if fit[i] > fit[best] {
            best = i;
        }
    }
    let mut best_x = pop[best].clone();
    let mut best_value = fit[best];
    let mut trace = Vec::with_capacity(config.max_generations + 1);
    trace.push(best_value);

    for _ in 0..config.max_generations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let [a, b, c] = distinct_indices(&mut rng, np, i);
                let forced = rng.random_range(0..dim);
                (0..dim)
                    .map(|d| {
                        if d != forced && rng.random::<f64>() >= config.crossover_rate {
                            return pop[i][d];
                        }
                        let (lo, hi) = config.domain[d];
                        let base = pop[a][d];
                        let v = base + config.differential_weight * (pop[b][d] - pop[c][d]);
                        if v < lo {
                            lo + rng.random::<f64>() * (base - lo)
                        } else if v > hi {
                            hi - rng.random::<f64>() * (hi - base)
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fit: Vec<f64> = trials.par_iter().map(|x| objective(x)).collect();
        evaluations += np;

        for (i, (x, f)) in trials.into_iter().zip(trial_fit).enumerate() {
            if f > fit[i] {
                if f > best_value {
                    best_value = f;
                    best_x.clone_from(&x);
                }
                pop[i] = x;
                fit[i] = f;
            }
        }
        trace.push(best_value);
    }

    Ok(DeResult { best: best_x, best_value, trace, evaluations })
}
