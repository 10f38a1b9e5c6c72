//! Helpers shared by the integration suites.
#![allow(dead_code)]

use std::sync::Mutex;

use hallcal_core::calib::{KnowledgeSurrogate, Surrogate};
use hallcal_core::hall::{build_adjacency, AdjacencyPriors, SensorRole, SensorVector, SystemInput};
use hallcal_core::knowledge::{
    grad_alpha, grad_weights, loss_l1, loss_l2, PenaltyParams, SurrogateWeights, TrainingSample,
    KAPPA,
};
use hallcal_core::optim::DifferentiableObjective;
use hallcal_core::solver::{generate_case, HallSizes, ThermalSolver, ZonalSolver};
use hallcal_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const POINTS: usize = 100;
pub const TOLERANCE: f64 = 1e-5;

pub struct Point {
    pub priors: AdjacencyPriors,
    pub weights: SurrogateWeights,
    pub batch: Vec<TrainingSample>,
    pub measured: SensorVector,
    pub penalty: PenaltyParams,
}

/// Flow rate whose rise `κ/α` keeps at least 0.5 °C from both hinge kinks.
fn alpha_off_kinks(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let a: f64 = rng.random_range(0.05..2.0);
        let rise = KAPPA / a;
        if (rise - 5.0).abs() > 0.5 && (rise - 15.0).abs() > 0.5 {
            return a;
        }
    }
}

pub fn random_point(seed: u64) -> Point {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = HallSizes {
        cracs: rng.random_range(1..5),
        servers: rng.random_range(1..20),
        sensors: rng.random_range(2..12),
    };
    let case = generate_case(seed, &sizes).unwrap();
    let priors = build_adjacency(&case.scenario.layout, 0.01).unwrap();
    let n = sizes.sensors;
    let weights = SurrogateWeights {
        a: (0..n).map(|_| rng.random_range(0.5..1.5)).collect(),
        b: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        c: (0..n).map(|_| rng.random_range(1e-4..5e-3)).collect(),
        d: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let sample = |rng: &mut ChaCha8Rng| SystemInput {
        crac_setpoints: (0..sizes.cracs)
            .map(|_| rng.random_range(16.0..24.0))
            .collect(),
        crac_fan_speeds: (0..sizes.cracs)
            .map(|_| rng.random_range(0.3..1.0))
            .collect(),
        server_powers: (0..sizes.servers)
            .map(|_| rng.random_range(50.0..500.0))
            .collect(),
        flow_rates: (0..sizes.servers).map(|_| alpha_off_kinks(rng)).collect(),
    };
    let batch: Vec<TrainingSample> = (0..rng.random_range(1..4))
        .map(|_| TrainingSample {
            input: sample(&mut rng),
            target: SensorVector::new(
                (0..n).map(|_| rng.random_range(18.0..40.0)).collect(),
                SensorRole::SolverOutput,
            ),
        })
        .collect();
    let measured = SensorVector::new(
        (0..n).map(|_| rng.random_range(18.0..40.0)).collect(),
        SensorRole::Measurement,
    );
    Point {
        priors,
        weights,
        batch,
        measured,
        penalty: PenaltyParams {
            lambda: rng.random_range(0.1..2.0),
            ..PenaltyParams::default()
        },
    }
}

/// Largest component-wise relative error, floored at 1e-6 of the gradient's largest entry.
fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (n.abs().max(a.abs()) + 1e-6 * scale + 1e-300))
        .fold(0.0, f64::max)
}

/// Central differences with step `rel · max(|x_i|, floor)`.
fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], rel: f64, floor: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = rel * x[i].abs().max(floor);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn weight_error(p: &Point) -> f64 {
    let analytic = grad_weights(&p.weights, &p.priors, &p.batch)
        .unwrap()
        .flatten();
    let numeric = central_difference(
        |flat| {
            let w = SurrogateWeights::from_flat(flat).unwrap();
            loss_l1(&w, &p.priors, &p.batch).unwrap()
        },
        &p.weights.flatten(),
        1e-3,
        1.0,
    );
    max_relative_error(&analytic, &numeric)
}

pub fn alpha_error(p: &Point) -> f64 {
    let x = &p.batch[0].input;
    let analytic = grad_alpha(&p.weights, &p.priors, x, &p.measured, &p.penalty).unwrap();
    let numeric = central_difference(
        |alpha| {
            let probe = SystemInput {
                flow_rates: alpha.to_vec(),
                ..x.clone()
            };
            loss_l2(&p.weights, &p.priors, &probe, &p.measured, &p.penalty).unwrap()
        },
        &x.flow_rates,
        1e-6,
        1e-3,
    );
    max_relative_error(&analytic, &numeric)
}

/// Records every flow-rate vector an objective is asked about.
pub struct Recording<'a> {
    inner: Box<dyn DifferentiableObjective + 'a>,
    seen: &'a Mutex<Vec<Vec<f64>>>,
}

impl DifferentiableObjective for Recording<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.seen.lock().unwrap().push(x.to_vec());
        self.inner.value(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        self.seen.lock().unwrap().push(x.to_vec());
        self.inner.value_and_gradient(x)
    }
}

/// Knowledge surrogate that records every candidate its search objective sees.
pub struct RecordingSurrogate {
    pub inner: KnowledgeSurrogate,
    pub seen: Mutex<Vec<Vec<f64>>>,
}

impl Surrogate for RecordingSurrogate {
    fn fit(&mut self, dataset: &[TrainingSample]) -> Result<f64> {
        self.inner.fit(dataset)
    }

    fn predict(&self, x: &SystemInput) -> Result<SensorVector> {
        self.inner.predict(x)
    }

    fn objective<'a>(
        &'a self,
        x: &'a SystemInput,
        measured: &'a [f64],
        penalty: PenaltyParams,
    ) -> Box<dyn DifferentiableObjective + 'a> {
        Box::new(Recording {
            inner: self.inner.objective(x, measured, penalty),
            seen: &self.seen,
        })
    }
}

/// Counts solves and records their inputs.
pub struct Counting {
    pub inner: ZonalSolver,
    pub inputs: Vec<Vec<f64>>,
}

impl ThermalSolver for Counting {
    fn solve(&mut self, x: &SystemInput) -> Result<SensorVector> {
        self.inputs.push(x.flow_rates.clone());
        self.inner.solve(x)
    }

    fn calls(&self) -> usize {
        self.inputs.len()
    }
}

impl RecordingSurrogate {
    pub fn new(inner: KnowledgeSurrogate) -> Self {
        RecordingSurrogate {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }
}

impl Counting {
    pub fn new(inner: ZonalSolver) -> Self {
        Counting {
            inner,
            inputs: Vec::new(),
        }
    }
}
