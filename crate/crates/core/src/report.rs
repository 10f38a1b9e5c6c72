//! Method dispatch for a calibration run and the report files it produces.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error as ThisError;

use crate::calib::{
    calibrate, mae, CalibConfig, CalibrationResult, KnowledgeSurrogate, VanillaSurrogate,
};
use crate::error::{check_len, Error, Result};
use crate::hall::{
    build_adjacency, HallLayout, OperatingState, SensorVector, SystemInput, DEFAULT_CUT_THRESHOLD,
};
use crate::io::{write_text, write_toml, FLOW_RATES_HEADER};
use crate::optim::{cmaes_1p1, EsConfig};
use crate::solver::ThermalSolver;
use crate::study::{StudyConfig, StudyReport};
use crate::vanilla::MlpConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Calibration loop with the knowledge surrogate.
    Kalibre,
    /// Calibration loop with the MLP surrogate.
    Vanilla,
    /// (1+1) evolution strategy directly on solver MAE.
    Heuristic,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Kalibre => "kalibre",
            Method::Vanilla => "vanilla",
            Method::Heuristic => "heuristic",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kalibre" => Ok(Method::Kalibre),
            "vanilla" => Ok(Method::Vanilla),
            "heuristic" => Ok(Method::Heuristic),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

/// Derives an independent seed for one component from the run seed.
pub fn component_seed(seed: u64, component: u64) -> u64 {
    let mut z = seed ^ component.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn default_cut() -> f64 {
    DEFAULT_CUT_THRESHOLD
}

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_cut")]
    pub adjacency_cut: f64,
    pub calibration: CalibConfig,
    pub mlp: MlpConfig,
    pub heuristic: EsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            adjacency_cut: DEFAULT_CUT_THRESHOLD,
            calibration: CalibConfig::default(),
            mlp: MlpConfig::default(),
            heuristic: EsConfig::default(),
        }
    }
}

impl RunConfig {
    /// Sets the run seed and every component seed derived from it.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.calibration.seed = component_seed(seed, 1);
        self.mlp.seed = component_seed(seed, 2);
        self.heuristic.seed = component_seed(seed, 3);
        self
    }

    /// Sets the iteration count and gives the heuristic the same solver budget.
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.calibration.max_iterations = iterations;
        self.heuristic.max_evals = 3 + iterations;
        self
    }
}

/// One solver evaluation of the heuristic baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub evaluation: usize,
    pub mae: f64,
    pub best_mae: f64,
    /// Step size that produced this candidate; absent for the starting point.
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub method: Method,
    pub config: RunConfig,
    pub result: CalibrationResult,
    /// Heuristic runs only.
    pub evaluations: Vec<EvaluationRecord>,
    pub server_ids: Vec<String>,
    pub sensor_ids: Vec<String>,
    pub measured: Vec<f64>,
}

/// A run stopped by an error, with the partial report when one exists.
#[derive(Debug, ThisError)]
#[error("{error}")]
pub struct RunAbort {
    #[source]
    pub error: Error,
    pub partial: Option<Box<RunReport>>,
}

impl From<Error> for RunAbort {
    fn from(error: Error) -> Self {
        Self {
            error,
            partial: None,
        }
    }
}

/// Runs `method` against `measured` at `state`.
pub fn run_method<S: ThermalSolver + ?Sized>(
    method: Method,
    solver: &mut S,
    layout: &HallLayout,
    state: &OperatingState,
    measured: &SensorVector,
    config: &RunConfig,
) -> std::result::Result<RunReport, RunAbort> {
    check_len("measurements", layout.sensor_count(), measured.len())?;
    check_len(
        "server powers",
        layout.server_count(),
        state.server_powers.len(),
    )?;
    check_len(
        "CRAC setpoints",
        layout.crac_count(),
        state.crac_setpoints.len(),
    )?;
    check_len(
        "CRAC fan speeds",
        layout.crac_count(),
        state.crac_fan_speeds.len(),
    )?;
    let report = |result: CalibrationResult, evaluations: Vec<EvaluationRecord>| RunReport {
        method,
        config: config.clone(),
        result,
        evaluations,
        server_ids: layout.servers.iter().map(|s| s.id.clone()).collect(),
        sensor_ids: layout.sensors.iter().map(|s| s.id.clone()).collect(),
        measured: measured.values.clone(),
    };
    let cfg = &config.calibration;
    let outcome = match method {
        Method::Kalibre => {
            let priors = build_adjacency(layout, config.adjacency_cut)?;
            let mut surrogate = KnowledgeSurrogate::new(priors, state, cfg.train)?;
            calibrate(solver, &mut surrogate, measured, state, cfg)
        }
        Method::Vanilla => {
            let mut surrogate = VanillaSurrogate::new(
                layout.crac_count(),
                layout.server_count(),
                layout.sensor_count(),
                config.mlp.clone(),
            );
            calibrate(solver, &mut surrogate, measured, state, cfg)
        }
        Method::Heuristic => {
            let (result, evaluations) = run_heuristic(solver, state, measured, config)?;
            return Ok(report(result, evaluations));
        }
    };
    outcome
        .map(|r| report(r, Vec::new()))
        .map_err(|abort| RunAbort {
            error: abort.error,
            partial: Some(Box::new(report(abort.partial, Vec::new()))),
        })
}

fn run_heuristic<S: ThermalSolver + ?Sized>(
    solver: &mut S,
    state: &OperatingState,
    measured: &SensorVector,
    config: &RunConfig,
) -> Result<(CalibrationResult, Vec<EvaluationRecord>)> {
    let bounds = &config.calibration.bounds;
    let m = state.server_powers.len();
    let x0 = config
        .calibration
        .initial_alpha
        .clone()
        .unwrap_or_else(|| vec![bounds.midpoint(); m]);
    check_len("initial flow rates", m, x0.len())?;
    let calls_before = solver.calls();
    let mut maes = Vec::new();
    let mut best: Option<(f64, SensorVector)> = None;
    let outcome = cmaes_1p1(
        |alpha| {
            let output = solver.solve(&SystemInput::new(state, alpha.to_vec()))?;
            let e = mae(&output, measured)?;
            maes.push(e);
            if best.as_ref().is_none_or(|(b, _)| e < *b) {
                best = Some((e, output));
            }
            Ok(e)
        },
        bounds,
        &config.heuristic,
        &x0,
    )?;
    let evaluations = maes
        .iter()
        .enumerate()
        .map(|(i, &e)| EvaluationRecord {
            evaluation: i + 1,
            mae: e,
            best_mae: outcome.best_trace[i],
            sigma: i.checked_sub(1).map(|k| outcome.sigma_trace[k]),
        })
        .collect();
    let result = CalibrationResult {
        alpha_star: outcome.best,
        best_mae: outcome.value,
        seed_maes: Vec::new(),
        trace: Vec::new(),
        solver_calls: solver.calls() - calls_before,
        best_prediction: best.map(|(_, v)| v),
    };
    Ok((result, evaluations))
}

#[derive(Serialize)]
struct Summary<'a> {
    method: Method,
    best_mae: f64,
    solver_calls: usize,
    iterations: usize,
    seed_maes: &'a [f64],
}

impl RunReport {
    /// Iterations for loop methods, solver evaluations for the heuristic.
    pub fn iterations(&self) -> usize {
        match self.method {
            Method::Heuristic => self.evaluations.len(),
            _ => self.result.trace.len(),
        }
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::new();
        if self.method == Method::Heuristic {
            out.push_str("evaluation,mae,best_mae,sigma\n");
            for r in &self.evaluations {
                let sigma = r.sigma.map(|s| s.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{}", r.evaluation, r.mae, r.best_mae, sigma);
            }
            return out;
        }
        out.push_str(
            "iteration,validation_mae,best_mae,search_loss,de_loss,mean_l2,mean_grad_norm,train_loss,solver_calls,dataset_size\n",
        );
        for r in &self.result.trace {
            let de = r.de_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.validation_mae,
                r.best_mae,
                r.search_loss,
                de,
                r.mean_l2,
                r.mean_grad_norm,
                r.train_loss,
                r.solver_calls,
                r.dataset_size
            );
        }
        out
    }

    /// Measured against solver output at the best flow rates, per sensor.
    pub fn predictions_csv(&self) -> String {
        let mut out = String::from("sensor_id,measured_c,predicted_c,residual_c\n");
        if let Some(pred) = &self.result.best_prediction {
            for ((id, m), p) in self.sensor_ids.iter().zip(&self.measured).zip(&pred.values) {
                let _ = writeln!(out, "{id},{m},{p},{}", p - m);
            }
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("iteration,wall_seconds\n");
        for r in &self.result.trace {
            let _ = writeln!(out, "{},{}", r.iteration, r.wall_seconds);
        }
        out
    }

    /// Writes the report into `dir`. Everything except `timing.csv` is a deterministic
    /// function of the inputs and the echoed `config.toml`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_toml(&dir.join("config.toml"), &self.config)?;
        write_toml(
            &dir.join("summary.toml"),
            &Summary {
                method: self.method,
                best_mae: self.result.best_mae,
                solver_calls: self.result.solver_calls,
                iterations: self.iterations(),
                seed_maes: &self.result.seed_maes,
            },
        )?;
        let mut alpha = format!("{FLOW_RATES_HEADER}\n");
        for (id, a) in self.server_ids.iter().zip(&self.result.alpha_star) {
            let _ = writeln!(alpha, "{id},{a}");
        }
        write_text(&dir.join("alpha.csv"), &alpha)?;
        write_text(&dir.join("trace.csv"), &self.trace_csv())?;
        write_text(&dir.join("predictions.csv"), &self.predictions_csv())?;
        write_text(&dir.join("timing.csv"), &self.timing_csv())
    }
}

pub fn study_csv(report: &StudyReport) -> String {
    let mut out = String::from("surrogate,fraction,train_samples,test_mae\n");
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            c.surrogate.name(),
            c.fraction,
            c.train_samples,
            c.test_mae
        );
    }
    out
}

/// Writes `study.toml` (configuration echo) and `study.csv` into `dir`.
pub fn write_study(dir: &Path, config: &StudyConfig, report: &StudyReport) -> Result<()> {
    write_toml(&dir.join("study.toml"), config)?;
    write_text(&dir.join("study.csv"), &study_csv(report))
}
