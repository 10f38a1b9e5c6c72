use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{finite_or_err, Bounds};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsConfig {
    /// Initial mutation step size.
    pub sigma0: f64,
    /// Mutations between step-size adaptations.
    pub window: usize,
    /// Multiplicative step-size change applied after each window.
    pub adapt_factor: f64,
    /// Objective evaluations, the starting point included.
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            sigma0: 5.0,
            window: 20,
            adapt_factor: 1.5,
            max_evals: 18,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsOutcome {
    pub best: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// Best value after each evaluation.
    pub best_trace: Vec<f64>,
    /// Step size in force at each mutation.
    pub sigma_trace: Vec<f64>,
    /// Successful mutations in each completed window.
    pub window_successes: Vec<usize>,
}

/// (1+1) evolution strategy: one clipped Gaussian offspring per iteration replaces the parent
/// when strictly better; σ grows after a window with success rate above 1/5 and shrinks
/// below it.
pub fn cmaes_1p1<F>(
    mut objective: F,
    bounds: &Bounds,
    cfg: &EsConfig,
    x0: &[f64],
) -> Result<EsOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    bounds.validate()?;
    if !(cfg.sigma0 > 0.0) || cfg.window == 0 || !(cfg.adapt_factor > 1.0) || cfg.max_evals == 0 {
        return Err(Error::InvalidConfig(format!(
            "invalid (1+1)-ES settings: {cfg:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut parent = x0.to_vec();
    bounds.clip_all(&mut parent);
    let mut parent_value = finite_or_err(objective(&parent)?, 1)?;
    let mut evaluations = 1;
    let mut best_trace = vec![parent_value];
    let mut sigma_trace = Vec::new();
    let mut window_successes = Vec::new();
    let mut sigma = cfg.sigma0;
    let mut successes = 0;
    let mut in_window = 0;

    while evaluations < cfg.max_evals {
        let child: Vec<f64> = parent
            .iter()
            .map(|&p| {
                let z: f64 = StandardNormal.sample(&mut rng);
                bounds.clip(p + sigma * z)
            })
            .collect();
        sigma_trace.push(sigma);
        evaluations += 1;
        let value = finite_or_err(objective(&child)?, evaluations)?;
        if value < parent_value {
            parent = child;
            parent_value = value;
            successes += 1;
        }
        best_trace.push(parent_value);
        in_window += 1;
        if in_window == cfg.window {
            let rate = successes as f64 / cfg.window as f64;
            if rate > 0.2 {
                sigma *= cfg.adapt_factor;
            } else if rate < 0.2 {
                sigma /= cfg.adapt_factor;
            }
            window_successes.push(successes);
            successes = 0;
            in_window = 0;
        }
    }

    Ok(EsOutcome {
        best: parent,
        value: parent_value,
        evaluations,
        best_trace,
        sigma_trace,
        window_successes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> Result<f64> {
        Ok(x.iter().map(|v| (v - 0.7).powi(2)).sum())
    }

    #[test]
    fn sphere_drops_a_hundredfold_in_500_evaluations() {
        let bounds = Bounds::new(0.01, 3.0).unwrap();
        let cfg = EsConfig {
            sigma0: 0.5,
            max_evals: 500,
            seed: 4,
            ..EsConfig::default()
        };
        let x0 = [2.5; 8];
        let start = sphere(&x0).unwrap();
        let out = cmaes_1p1(sphere, &bounds, &cfg, &x0).unwrap();
        assert!(out.value * 100.0 <= start, "{} -> {}", start, out.value);
        assert_eq!(out.evaluations, 500);
    }

    #[test]
    fn step_size_follows_the_fifth_rule() {
        let bounds = Bounds::new(0.01, 3.0).unwrap();
        let cfg = EsConfig {
            sigma0: 0.05,
            window: 10,
            max_evals: 400,
            seed: 1,
            ..EsConfig::default()
        };
        let out = cmaes_1p1(sphere, &bounds, &cfg, &[2.9; 4]).unwrap();
        let w = cfg.window;
        for (i, &s) in out.window_successes.iter().enumerate() {
            let before = out.sigma_trace[i * w];
            let after = out.sigma_trace.get((i + 1) * w).copied();
            let Some(after) = after else { break };
            let rate = s as f64 / w as f64;
            if rate > 0.2 {
                assert!((after - before * 1.5).abs() < 1e-12);
            } else if rate < 0.2 {
                assert!((after - before / 1.5).abs() < 1e-12);
            } else {
                assert_eq!(after, before);
            }
        }
        assert!(out.window_successes.iter().any(|&s| s * 5 > w));
        assert!(out.window_successes.iter().any(|&s| s * 5 < w));
    }

    #[test]
    fn deterministic_and_monotone() {
        let bounds = Bounds::new(0.01, 3.0).unwrap();
        let cfg = EsConfig {
            max_evals: 60,
            ..EsConfig::default()
        };
        let a = cmaes_1p1(sphere, &bounds, &cfg, &[1.0; 3]).unwrap();
        let b = cmaes_1p1(sphere, &bounds, &cfg, &[1.0; 3]).unwrap();
        assert_eq!(a, b);
        assert!(a.best_trace.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(a.best_trace.len(), a.evaluations);
    }

    #[test]
    fn oversized_sigma_is_clipped() {
        let bounds = Bounds::new(0.01, 3.0).unwrap();
        let mut all_feasible = true;
        let f = |x: &[f64]| {
            all_feasible &= bounds.contains(x);
            sphere(x)
        };
        cmaes_1p1(f, &bounds, &EsConfig::default(), &[1.5; 5]).unwrap();
        assert!(all_feasible);
    }
}
