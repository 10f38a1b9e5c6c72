use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{finite_or_err, Bounds, SearchOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeConfig {
    pub population_size: usize,
    pub crossover_rate: f64,
    pub max_iterations: usize,
    pub differential_weight: f64,
    pub seed: u64,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            crossover_rate: 0.6,
            max_iterations: 100,
            differential_weight: 0.8,
            seed: 0,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 4 {
            return Err(Error::InvalidConfig(format!(
                "DE population must be at least 4, got {}",
                self.population_size
            )));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(Error::InvalidConfig(format!(
                "DE crossover rate must lie in [0, 1], got {}",
                self.crossover_rate
            )));
        }
        if !(self.differential_weight > 0.0) {
            return Err(Error::InvalidConfig(
                "DE differential weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// DE/rand/1/bin inside `bounds`.
///
/// Member 0 of the initial population is `x0` (clipped); the rest is a Latin hypercube over
/// the box. Trial vectors are clipped before evaluation and a generation's trials are
/// evaluated in parallel. A trial replaces its target only on strict improvement.
pub fn de_search<F>(
    objective: F,
    bounds: &Bounds,
    cfg: &DeConfig,
    x0: &[f64],
) -> Result<SearchOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    bounds.validate()?;
    let dim = x0.len();
    let np = cfg.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut population = Vec::with_capacity(np);
    let mut start = x0.to_vec();
    bounds.clip_all(&mut start);
    population.push(start);
    population.extend(latin_hypercube(np - 1, dim, bounds, &mut rng));

    let mut evaluations = 0;
    let mut best_trace = Vec::with_capacity(np * (cfg.max_iterations + 1));
    let mut best_value = f64::INFINITY;
    let mut best_index = 0;

    let mut fitness = evaluate_all(&objective, &population, &mut evaluations)?;
    for (i, &f) in fitness.iter().enumerate() {
        if f < best_value {
            best_value = f;
            best_index = i;
        }
        best_trace.push(best_value);
    }

    let mut indices: Vec<usize> = (0..np).collect();
    for _ in 0..cfg.max_iterations {
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                indices.shuffle(&mut rng);
                let mut picks = indices.iter().copied().filter(|&r| r != i);
                let (r1, r2, r3) = (
                    picks.next().unwrap(),
                    picks.next().unwrap(),
                    picks.next().unwrap(),
                );
                let forced = rng.random_range(0..dim.max(1));
                (0..dim)
                    .map(|j| {
                        if j == forced || rng.random::<f64>() < cfg.crossover_rate {
                            let v = population[r1][j]
                                + cfg.differential_weight * (population[r2][j] - population[r3][j]);
                            bounds.clip(v)
                        } else {
                            population[i][j]
                        }
                    })
                    .collect()
            })
            .collect();

        let trial_fitness = evaluate_all(&objective, &trials, &mut evaluations)?;
        for (i, (trial, f)) in trials.into_iter().zip(trial_fitness).enumerate() {
            if f < fitness[i] {
                fitness[i] = f;
                population[i] = trial;
                if f < best_value {
                    best_value = f;
                    best_index = i;
                }
            }
            best_trace.push(best_value);
        }
    }

    Ok(SearchOutcome {
        best: population[best_index].clone(),
        value: best_value,
        evaluations,
        best_trace,
    })
}

fn evaluate_all<F>(objective: &F, xs: &[Vec<f64>], evaluations: &mut usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = xs.par_iter().map(|x| objective(x)).collect();
    let base = *evaluations;
    *evaluations += xs.len();
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| finite_or_err(v, base + i + 1))
        .collect()
}

fn latin_hypercube(
    count: usize,
    dim: usize,
    bounds: &Bounds,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dim]; count];
    if count == 0 {
        return points;
    }
    let mut strata: Vec<usize> = (0..count).collect();
    for j in 0..dim {
        strata.shuffle(rng);
        for (point, &s) in points.iter_mut().zip(&strata) {
            let u = (s as f64 + rng.random::<f64>()) / count as f64;
            point[j] = bounds.clip(bounds.lower + u * bounds.width());
        }
    }
    points
}
