//! The iterative calibration loop.
//!
//! Three seed solves (all flow rates at the lower bound, upper bound and midpoint) are
//! augmented with Gaussian noise into the first training set. Each iteration then trains the
//! surrogate on everything gathered so far, searches the flow rates that make the surrogate
//! reproduce the measurements, runs the solver once at the result, scores that solve against
//! the measurements, and adds it to the training set.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::error::{check_len, Error, Result};
use crate::hall::{AdjacencyPriors, OperatingState, SensorVector, SystemInput};
use crate::knowledge::{
    CalibrationObjective, KnowledgeModel, PenaltyParams, SurrogateWeights, TrainHyper,
    TrainingSample, KAPPA,
};
use crate::optim::{hybrid_search, AdamSearchConfig, Bounds, DeConfig, DifferentiableObjective};
use crate::solver::ThermalSolver;
use crate::vanilla::{Mlp, MlpConfig, MlpObjective};

/// Noise applied by [`augment`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentNoise {
    /// Input noise sd as a fraction of each feature's own magnitude.
    pub input_relative: f64,
    /// Target noise sd, °C.
    pub target_sd: f64,
}

impl Default for AugmentNoise {
    fn default() -> Self {
        Self {
            input_relative: 0.01,
            target_sd: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Differential evolution followed by projected Adam.
    #[default]
    Hybrid,
    /// Projected Adam from the previous flow rates only.
    AdamOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    pub bounds: Bounds,
    pub max_iterations: usize,
    pub augment_batch: usize,
    pub augment_noise: AugmentNoise,
    pub train: TrainHyper,
    pub de: DeConfig,
    pub adam: AdamSearchConfig,
    pub search: SearchMode,
    pub penalty: PenaltyParams,
    /// Stop once validation MAE improves by less than `early_stop_delta` °C for three
    /// iterations in a row.
    pub early_stop: bool,
    pub early_stop_delta: f64,
    /// Starting flow rates; the bounds midpoint when absent.
    pub initial_alpha: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        Self {
            bounds: Bounds::default(),
            max_iterations: 15,
            augment_batch: 16,
            augment_noise: AugmentNoise::default(),
            train: TrainHyper::default(),
            de: DeConfig::default(),
            adam: AdamSearchConfig::default(),
            search: SearchMode::Hybrid,
            penalty: PenaltyParams::default(),
            early_stop: false,
            early_stop_delta: 0.01,
            initial_alpha: None,
            seed: 0,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.de.validate()?;
        self.penalty.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig(
                "max_iterations must be at least 1".into(),
            ));
        }
        if self.augment_batch == 0 {
            return Err(Error::InvalidConfig(
                "augment_batch must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// A trainable surrogate the loop can fit and search on.
pub trait Surrogate {
    /// Trains on `dataset` (warm-started from the current state) and returns the final
    /// training loss in °C².
    fn fit(&mut self, dataset: &[TrainingSample]) -> Result<f64>;

    fn predict(&self, x: &SystemInput) -> Result<SensorVector>;

    /// `L2` as a function of `α` at the operating state of `x`.
    fn objective<'a>(
        &'a self,
        x: &'a SystemInput,
        measured: &'a [f64],
        penalty: PenaltyParams,
    ) -> Box<dyn DifferentiableObjective + 'a>;
}

/// The knowledge-based surrogate with its training schedule.
#[derive(Debug, Clone)]
pub struct KnowledgeSurrogate {
    pub model: KnowledgeModel,
    pub hyper: TrainHyper,
}

impl KnowledgeSurrogate {
    /// Physics-initialized weights for the powers in `state`.
    pub fn new(priors: AdjacencyPriors, state: &OperatingState, hyper: TrainHyper) -> Result<Self> {
        let weights = SurrogateWeights::physics_init(&priors, KAPPA, &state.server_powers)?;
        Ok(Self {
            model: KnowledgeModel::new(weights, priors, false),
            hyper,
        })
    }
}

impl Surrogate for KnowledgeSurrogate {
    fn fit(&mut self, dataset: &[TrainingSample]) -> Result<f64> {
        self.model.fit(dataset, &self.hyper)
    }

    fn predict(&self, x: &SystemInput) -> Result<SensorVector> {
        self.model.predict(x)
    }

    fn objective<'a>(
        &'a self,
        x: &'a SystemInput,
        measured: &'a [f64],
        penalty: PenaltyParams,
    ) -> Box<dyn DifferentiableObjective + 'a> {
        Box::new(CalibrationObjective {
            weights: &self.model.weights,
            priors: &self.model.priors,
            input: x,
            measured,
            penalty,
        })
    }
}

/// The MLP baseline surrogate.
#[derive(Debug, Clone)]
pub struct VanillaSurrogate {
    pub mlp: Mlp,
}

impl VanillaSurrogate {
    pub fn new(cracs: usize, servers: usize, sensors: usize, config: MlpConfig) -> Self {
        Self {
            mlp: Mlp::new(2 * cracs + 2 * servers, sensors, config),
        }
    }
}

impl Surrogate for VanillaSurrogate {
    fn fit(&mut self, dataset: &[TrainingSample]) -> Result<f64> {
        self.mlp.fit(dataset)
    }

    fn predict(&self, x: &SystemInput) -> Result<SensorVector> {
        self.mlp.predict(x)
    }

    fn objective<'a>(
        &'a self,
        x: &'a SystemInput,
        measured: &'a [f64],
        penalty: PenaltyParams,
    ) -> Box<dyn DifferentiableObjective + 'a> {
        Box::new(MlpObjective {
            mlp: &self.mlp,
            input: x,
            measured,
            penalty,
        })
    }
}

/// Solves at α ≡ lower bound, α ≡ upper bound and α ≡ midpoint, in that order.
pub fn init_samples<S: ThermalSolver + ?Sized>(
    solver: &mut S,
    bounds: &Bounds,
    state: &OperatingState,
) -> Result<Vec<TrainingSample>> {
    bounds.validate()?;
    let m = state.server_powers.len();
    [bounds.lower, bounds.upper, bounds.midpoint()]
        .into_iter()
        .map(|a| {
            let input = SystemInput::new(state, vec![a; m]);
            let target = solver.solve(&input)?;
            Ok(TrainingSample { input, target })
        })
        .collect()
}

fn jitter(v: f64, relative: f64, rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    v + relative * v.abs() * z
}

/// Replaces every sample by `batch` noisy copies.
///
/// Inputs get zero-mean Gaussian noise with sd proportional to each value, targets get
/// absolute noise. Flow rates stay at least half their original value so they remain positive.
pub fn augment(
    samples: &[TrainingSample],
    batch: usize,
    noise: &AugmentNoise,
    seed: u64,
) -> Vec<TrainingSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rel = noise.input_relative;
    let mut out = Vec::with_capacity(samples.len() * batch);
    for s in samples {
        for _ in 0..batch {
            let x = &s.input;
            let mut noisy =
                |v: &[f64]| -> Vec<f64> { v.iter().map(|&a| jitter(a, rel, &mut rng)).collect() };
            let crac_setpoints = noisy(&x.crac_setpoints);
            let crac_fan_speeds: Vec<f64> = noisy(&x.crac_fan_speeds)
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
            let server_powers: Vec<f64> = noisy(&x.server_powers)
                .into_iter()
                .map(|v| v.max(0.0))
                .collect();
            let flow_rates = noisy(&x.flow_rates)
                .into_iter()
                .zip(&x.flow_rates)
                .map(|(v, &a)| v.max(0.5 * a))
                .collect();
            let values = s
                .target
                .values
                .iter()
                .map(|&t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    t + noise.target_sd * z
                })
                .collect();
            out.push(TrainingSample {
                input: SystemInput {
                    crac_setpoints,
                    crac_fan_speeds,
                    server_powers,
                    flow_rates,
                },
                target: SensorVector::new(values, s.target.role),
            });
        }
    }
    out
}

/// Mean absolute difference between two sensor vectors.
pub fn mae(pred: &SensorVector, meas: &SensorVector) -> Result<f64> {
    check_len("sensor vectors", pred.len(), meas.len())?;
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty sensor vectors".into()));
    }
    Ok(pred
        .values
        .iter()
        .zip(&meas.values)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / pred.len() as f64)
}

/// Per-iteration record of a calibration run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// MAE of the solve at this iteration's searched flow rates, °C.
    pub validation_mae: f64,
    /// Best MAE so far, °C.
    pub best_mae: f64,
    /// Surrogate `L2` at the returned search point.
    pub search_loss: f64,
    /// Surrogate `L2` of the evolution stage's winner, when it ran.
    pub de_loss: Option<f64>,
    /// Mean `L2` over the gradient stage's iterates.
    pub mean_l2: f64,
    /// Mean `‖∂L2/∂α‖` over the gradient stage's iterates.
    pub mean_grad_norm: f64,
    /// Surrogate training loss after this iteration's fit, °C².
    pub train_loss: f64,
    pub solver_calls: usize,
    /// Solver samples gathered, before augmentation.
    pub dataset_size: usize,
    /// Wall-clock time of the iteration, seconds.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub alpha_star: Vec<f64>,
    pub best_mae: f64,
    /// MAE of the three seed solves.
    pub seed_maes: Vec<f64>,
    pub trace: Vec<IterationRecord>,
    pub solver_calls: usize,
    /// Solver output at `alpha_star`.
    pub best_prediction: Option<SensorVector>,
}

impl CalibrationResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }
}

/// A calibration stopped by an error, with everything gathered up to that point.
#[derive(Debug, ThisError)]
#[error("calibration aborted after {} iterations: {error}", partial.trace.len())]
pub struct CalibrationAbort {
    #[source]
    pub error: Error,
    pub partial: CalibrationResult,
}

fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(iteration as u64)
}

/// Runs the calibration loop against `measured` at operating state `state`.
#[allow(clippy::result_large_err)]
pub fn calibrate<S, M>(
    solver: &mut S,
    surrogate: &mut M,
    measured: &SensorVector,
    state: &OperatingState,
    cfg: &CalibConfig,
) -> std::result::Result<CalibrationResult, CalibrationAbort>
where
    S: ThermalSolver + ?Sized,
    M: Surrogate + ?Sized,
{
    let m = state.server_powers.len();
    let mut alpha = cfg
        .initial_alpha
        .clone()
        .unwrap_or_else(|| vec![cfg.bounds.midpoint(); m]);
    cfg.bounds.clip_all(&mut alpha);
    let calls_before = solver.calls();
    let mut result = CalibrationResult {
        alpha_star: alpha.clone(),
        best_mae: f64::INFINITY,
        seed_maes: Vec::new(),
        trace: Vec::new(),
        solver_calls: 0,
        best_prediction: None,
    };

    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    result.solver_calls = solver.calls() - calls_before;
                    return Err(CalibrationAbort {
                        error,
                        partial: result,
                    });
                }
            }
        };
    }

    attempt!(cfg.validate());
    attempt!(check_len("initial flow rates", m, alpha.len()));

    let seeds = attempt!(init_samples(solver, &cfg.bounds, state));
    for s in &seeds {
        let e = attempt!(mae(&s.target, measured));
        result.seed_maes.push(e);
        if e < result.best_mae {
            result.best_mae = e;
            result.alpha_star = s.input.flow_rates.clone();
            result.best_prediction = Some(s.target.clone());
        }
    }
    let mut dataset = augment(&seeds, cfg.augment_batch, &cfg.augment_noise, cfg.seed);

    let mut stalls = 0;
    for iteration in 1..=cfg.max_iterations {
        let started = Instant::now();
        let train_loss = attempt!(surrogate.fit(&dataset));

        let current = SystemInput::new(state, alpha.clone());
        let outcome = {
            let objective = surrogate.objective(&current, &measured.values, cfg.penalty);
            let de = DeConfig {
                seed: iteration_seed(cfg.seed, iteration),
                ..cfg.de
            };
            let de = match cfg.search {
                SearchMode::Hybrid => Some(&de),
                SearchMode::AdamOnly => None,
            };
            attempt!(hybrid_search(
                objective.as_ref(),
                &cfg.bounds,
                de,
                &cfg.adam,
                &alpha
            ))
        };
        alpha.clone_from(&outcome.best);

        let input = SystemInput::new(state, alpha.clone());
        let output = attempt!(solver.solve(&input));
        let validation = attempt!(mae(&output, measured));
        let improvement = result.best_mae - validation;
        if validation < result.best_mae {
            result.best_mae = validation;
            result.alpha_star = alpha.clone();
            result.best_prediction = Some(output.clone());
        }
        dataset.push(TrainingSample {
            input,
            target: output,
        });

        result.trace.push(IterationRecord {
            iteration,
            validation_mae: validation,
            best_mae: result.best_mae,
            search_loss: outcome.value,
            de_loss: outcome.de_best.as_ref().map(|(_, v)| *v),
            mean_l2: outcome.mean_adam_loss(),
            mean_grad_norm: outcome.mean_adam_grad_norm(),
            train_loss,
            solver_calls: solver.calls() - calls_before,
            dataset_size: seeds.len() + iteration,
            wall_seconds: started.elapsed().as_secs_f64(),
        });

        if cfg.early_stop {
            stalls = if improvement < cfg.early_stop_delta {
                stalls + 1
            } else {
                0
            };
            if stalls >= 3 {
                break;
            }
        }
    }
    result.solver_calls = solver.calls() - calls_before;
    Ok(result)
}
