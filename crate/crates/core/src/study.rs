//! Training-data volume study: test error of each surrogate as the training set grows.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calib::{mae, KnowledgeSurrogate, Surrogate, VanillaSurrogate};
use crate::error::{Error, Result};
use crate::hall::{AdjacencyPriors, OperatingState, SystemInput};
use crate::knowledge::{KnowledgeModel, TrainHyper, TrainingSample};
use crate::optim::Bounds;
use crate::solver::ThermalSolver;
use crate::vanilla::MlpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    KnowledgeFixed,
    KnowledgeTrainable,
    Vanilla,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 3] = [
        SurrogateKind::KnowledgeFixed,
        SurrogateKind::KnowledgeTrainable,
        SurrogateKind::Vanilla,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SurrogateKind::KnowledgeFixed => "knowledge-fixed",
            SurrogateKind::KnowledgeTrainable => "knowledge-trainable",
            SurrogateKind::Vanilla => "vanilla",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub pool_size: usize,
    /// Share of the pool used for training; the rest is the test set.
    pub train_share: f64,
    /// Fractions of the training split to fit on.
    pub fractions: Vec<f64>,
    pub bounds: Bounds,
    pub train: TrainHyper,
    pub mlp: MlpConfig,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            pool_size: 200,
            train_share: 0.8,
            fractions: vec![0.05, 0.15, 0.30, 0.50],
            bounds: Bounds::default(),
            train: TrainHyper::default(),
            mlp: MlpConfig::default(),
            seed: 0,
        }
    }
}

impl StudyConfig {
    fn train_len(&self) -> usize {
        (self.pool_size as f64 * self.train_share).round() as usize
    }

    fn subset_len(&self, fraction: f64) -> usize {
        (self.train_len() as f64 * fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.train_share > 0.0 && self.train_share < 1.0) {
            return Err(Error::InvalidConfig(
                "train share must lie in (0, 1)".into(),
            ));
        }
        if self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidConfig("fractions must lie in (0, 1]".into()));
        }
        let test = self.pool_size - self.train_len().min(self.pool_size);
        if test == 0 {
            return Err(Error::PoolTooSmall(format!(
                "{} samples leave no test set",
                self.pool_size
            )));
        }
        for &f in &self.fractions {
            if self.subset_len(f) == 0 {
                return Err(Error::PoolTooSmall(format!(
                    "fraction {f} of {} training samples is empty",
                    self.train_len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub surrogate: SurrogateKind,
    pub fraction: f64,
    pub train_samples: usize,
    /// Mean over test samples of the per-sample MAE, °C.
    pub test_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub cells: Vec<StudyCell>,
    pub test_samples: usize,
}

impl StudyReport {
    pub fn cell(&self, surrogate: SurrogateKind, fraction: f64) -> Option<&StudyCell> {
        self.cells
            .iter()
            .find(|c| c.surrogate == surrogate && c.fraction == fraction)
    }
}

/// Solves at `size` flow-rate vectors drawn uniformly from the bounds.
pub fn sample_pool<S: ThermalSolver + ?Sized>(
    solver: &mut S,
    state: &OperatingState,
    bounds: &Bounds,
    size: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = state.server_powers.len();
    (0..size)
        .map(|_| {
            let alpha = (0..m)
                .map(|_| rng.random_range(bounds.lower..=bounds.upper))
                .collect();
            let input = SystemInput::new(state, alpha);
            let target = solver.solve(&input)?;
            Ok(TrainingSample { input, target })
        })
        .collect()
}

fn test_mae<M: Surrogate + ?Sized>(model: &M, test: &[TrainingSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in test {
        total += mae(&model.predict(&s.input)?, &s.target)?;
    }
    Ok(total / test.len() as f64)
}

fn fresh_surrogate(
    kind: SurrogateKind,
    priors: &AdjacencyPriors,
    state: &OperatingState,
    cfg: &StudyConfig,
) -> Result<Box<dyn Surrogate>> {
    Ok(match kind {
        SurrogateKind::KnowledgeFixed => {
            Box::new(KnowledgeSurrogate::new(priors.clone(), state, cfg.train)?)
        }
        SurrogateKind::KnowledgeTrainable => {
            let mut s = KnowledgeSurrogate::new(priors.clone(), state, cfg.train)?;
            s.model = KnowledgeModel::new(s.model.weights, s.model.priors, true);
            Box::new(s)
        }
        SurrogateKind::Vanilla => Box::new(VanillaSurrogate::new(
            priors.cracs(),
            priors.servers(),
            priors.sensors(),
            cfg.mlp.clone(),
        )),
    })
}

/// Shuffles `pool`, splits it into training and test sets and fits every surrogate kind
/// from scratch on the leading `fraction` of the training set.
pub fn run_study(
    pool: &[TrainingSample],
    priors: &AdjacencyPriors,
    state: &OperatingState,
    cfg: &StudyConfig,
) -> Result<StudyReport> {
    cfg.validate()?;
    if pool.len() != cfg.pool_size {
        return Err(Error::PoolTooSmall(format!(
            "expected {} samples, got {}",
            cfg.pool_size,
            pool.len()
        )));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let shuffled: Vec<TrainingSample> = order.iter().map(|&i| pool[i].clone()).collect();
    let (train, test) = shuffled.split_at(cfg.train_len());

    let mut cells = Vec::new();
    for kind in SurrogateKind::ALL {
        for &fraction in &cfg.fractions {
            let subset = &train[..cfg.subset_len(fraction)];
            let mut model = fresh_surrogate(kind, priors, state, cfg)?;
            model.fit(subset)?;
            cells.push(StudyCell {
                surrogate: kind,
                fraction,
                train_samples: subset.len(),
                test_mae: test_mae(model.as_ref(), test)?,
            });
        }
    }
    Ok(StudyReport {
        cells,
        test_samples: test.len(),
    })
}
