use serde::{Deserialize, Serialize};

use super::{de_search, finite_or_err, l2_norm, AdamConfig, AdamState, Bounds, DeConfig};
use crate::error::Result;

/// An objective that can also report its gradient.
pub trait DifferentiableObjective: Sync {
    fn value(&self, x: &[f64]) -> f64;

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>);
}

/// Adapts a value-and-gradient closure; `value` discards the gradient.
impl<F> DifferentiableObjective for F
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        self(x).0
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self(x)
    }
}

/// Projected-Adam refinement stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamSearchConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSearchConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            steps: 100,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamSearchConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutcome {
    pub best: Vec<f64>,
    pub value: f64,
    /// DE winner and its value, when the DE stage ran.
    pub de_best: Option<(Vec<f64>, f64)>,
    /// Objective value at each Adam iterate, endpoint included.
    pub adam_losses: Vec<f64>,
    /// Gradient norm at each Adam iterate, endpoint included.
    pub adam_grad_norms: Vec<f64>,
    /// Total objective invocations across both stages.
    pub evaluations: usize,
}

impl HybridOutcome {
    pub fn mean_adam_loss(&self) -> f64 {
        mean(&self.adam_losses)
    }

    pub fn mean_adam_grad_norm(&self) -> f64 {
        mean(&self.adam_grad_norms)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// DE over the box followed by projected Adam from the DE winner.
///
/// With `de == None` only the Adam stage runs, starting at `x0`. The returned point is the
/// lowest-objective point among the DE winner and every Adam iterate.
pub fn hybrid_search<O>(
    objective: &O,
    bounds: &Bounds,
    de: Option<&DeConfig>,
    adam: &AdamSearchConfig,
    x0: &[f64],
) -> Result<HybridOutcome>
where
    O: DifferentiableObjective + ?Sized,
{
    bounds.validate()?;
    let mut evaluations = 0;
    let (mut x, de_best) = match de {
        Some(cfg) => {
            let out = de_search(|x: &[f64]| objective.value(x), bounds, cfg, x0)?;
            evaluations += out.evaluations;
            (out.best.clone(), Some((out.best, out.value)))
        }
        None => {
            let mut x = x0.to_vec();
            bounds.clip_all(&mut x);
            (x, None)
        }
    };

    let (mut best, mut best_value) = match &de_best {
        Some((p, v)) => (p.clone(), *v),
        None => (x.clone(), f64::INFINITY),
    };

    let mut state = AdamState::new(x.len(), adam.adam());
    let mut adam_losses = Vec::with_capacity(adam.steps + 1);
    let mut adam_grad_norms = Vec::with_capacity(adam.steps + 1);
    for step in 0..=adam.steps {
        let (value, grad) = objective.value_and_gradient(&x);
        evaluations += 1;
        finite_or_err(value, evaluations)?;
        adam_losses.push(value);
        adam_grad_norms.push(l2_norm(&grad));
        if value < best_value {
            best_value = value;
            best.clone_from(&x);
        }
        if step < adam.steps {
            state.update(&mut x, &grad)?;
            bounds.clip_all(&mut x);
        }
    }

    Ok(HybridOutcome {
        best,
        value: best_value,
        de_best,
        adam_losses,
        adam_grad_norms,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;

    fn rosenbrock(x: &[f64]) -> (f64, Vec<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ];
        (f, g)
    }

    fn box_() -> Bounds {
        Bounds::new(0.01, 3.0).unwrap()
    }

    #[test]
    fn refinement_never_worse_than_de_on_convex_bowl() {
        let bowl = |x: &[f64]| {
            let f = x.iter().map(|v| (v - 1.2).powi(2)).sum::<f64>();
            (f, x.iter().map(|v| 2.0 * (v - 1.2)).collect())
        };
        let de = DeConfig {
            max_iterations: 10,
            ..DeConfig::default()
        };
        let out = hybrid_search(
            &bowl,
            &box_(),
            Some(&de),
            &AdamSearchConfig::default(),
            &[2.0; 6],
        )
        .unwrap();
        let (_, de_value) = out.de_best.clone().unwrap();
        assert!(out.value <= de_value);
        assert!(box_().contains(&out.best));
    }

    #[test]
    fn adam_refines_rosenbrock_in_a_box() {
        let de = DeConfig {
            max_iterations: 15,
            seed: 11,
            ..DeConfig::default()
        };
        let adam = AdamSearchConfig {
            learning_rate: 0.01,
            steps: 3000,
            ..AdamSearchConfig::default()
        };
        let out = hybrid_search(&rosenbrock, &box_(), Some(&de), &adam, &[2.5, 0.5]).unwrap();
        let (_, de_value) = out.de_best.clone().unwrap();
        assert!(
            out.value * 10.0 <= de_value,
            "DE {de_value:.3e} vs hybrid {:.3e}",
            out.value
        );
    }

    #[test]
    fn adam_only_stays_inside_the_box() {
        let seen = Mutex::new(Vec::new());
        let pull_out = |x: &[f64]| {
            seen.lock().unwrap().push(x.to_vec());
            let f = x.iter().map(|v| (v + 2.0).powi(2)).sum::<f64>();
            (f, x.iter().map(|v| 2.0 * (v + 2.0)).collect())
        };
        let adam = AdamSearchConfig {
            learning_rate: 0.1,
            steps: 200,
            ..AdamSearchConfig::default()
        };
        let out = hybrid_search(&pull_out, &box_(), None, &adam, &[5.0, 1.0]).unwrap();
        assert_eq!(out.best, vec![0.01, 0.01]);
        assert_eq!(out.evaluations, 201);
        assert_eq!(seen.lock().unwrap().len(), 201);
        assert!(seen.lock().unwrap().iter().all(|x| box_().contains(x)));
    }
}
