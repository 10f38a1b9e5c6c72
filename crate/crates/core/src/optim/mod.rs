//! Search machinery: Adam, bounded differential evolution, the DE→Adam hybrid, and a
//! (1+1) evolution strategy with the 1/5 success rule.

mod adam;
mod de;
mod es;
mod hybrid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use de::{de_search, DeConfig};
pub use es::{cmaes_1p1, EsConfig, EsOutcome};
pub use hybrid::{hybrid_search, AdamSearchConfig, DifferentiableObjective, HybridOutcome};

/// Element-wise box `[lower, upper]` applied to every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            lower: 0.01,
            upper: 3.0,
        }
    }
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower > 0.0 && self.lower < self.upper && self.upper.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "bounds must satisfy 0 < lower < upper, got [{}, {}]",
                self.lower, self.upper
            )))
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    #[inline]
    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    pub fn clip_all(&self, xs: &mut [f64]) {
        for v in xs {
            *v = self.clip(*v);
        }
    }

    pub fn contains(&self, xs: &[f64]) -> bool {
        xs.iter().all(|&v| v >= self.lower && v <= self.upper)
    }
}

/// Result of a derivative-free search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Vec<f64>,
    pub value: f64,
    /// Number of objective invocations.
    pub evaluations: usize,
    /// Best objective value seen after each evaluation.
    pub best_trace: Vec<f64>,
}

pub(crate) fn finite_or_err(value: f64, evaluation: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::ObjectiveNonFinite { value, evaluation })
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
