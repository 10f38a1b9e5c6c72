//! Knowledge-based neural surrogate.
//!
//! For sensor `k` the cooling block mixes CRAC setpoints through a softmax of
//! `z_ik = V_i·W_cs[i,k]` taken over the CRACs adjacent to `k`, then applies
//! `T_cold_k = a_k·X_cold_k + b_k`. The heating block forms
//! `X_hot_k = Σ_j (P_j/α_j)·W_ss[j,k]` and `ΔT_k = c_k·X_hot_k + d_k`. Hot-aisle sensors
//! report `T_cold_k + ΔT_k`, cold-aisle sensors `T_cold_k`.
//!
//! The trainable set is `{a, b, c, d}` (4n reals). Optionally the adjacency matrices can be
//! promoted to trainables as well, see [`KnowledgeModel`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hall::{AdjacencyPriors, SensorRole, SensorVector, SystemInput};
use crate::matrix::Matrix;
use crate::optim::{AdamConfig, AdamState, DifferentiableObjective};

/// Air density at typical hall conditions, kg/m³.
pub const AIR_DENSITY: f64 = 1.205;
/// Specific heat of air, J/(kg·K).
pub const AIR_SPECIFIC_HEAT: f64 = 1005.0;
/// One cubic foot per minute in m³/s.
pub const CFM_IN_M3_PER_S: f64 = 0.028_316_846_592 / 60.0;
/// Outlet temperature rise of a server times its flow rate, °C·(cfm/W).
///
/// A server drawing `P` watts with flow `α` cfm/W moves `α·P` cfm of air, so its rise is
/// `P / (ρ·c_p·α·P·cfm) = KAPPA / α`.
pub const KAPPA: f64 = 1.0 / (AIR_DENSITY * AIR_SPECIFIC_HEAT * CFM_IN_M3_PER_S);

/// Rise constant for arbitrary air properties.
pub fn rise_constant(density: f64, specific_heat: f64) -> f64 {
    1.0 / (density * specific_heat * CFM_IN_M3_PER_S)
}

/// Per-sensor linear-layer weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateWeights {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl SurrogateWeights {
    pub fn zeros(n: usize) -> Self {
        Self {
            a: vec![0.0; n],
            b: vec![0.0; n],
            c: vec![0.0; n],
            d: vec![0.0; n],
        }
    }

    /// `a = 1, b = 0, d = 0` and `c_k` chosen so the heating block reproduces `κ/α` for a
    /// uniform flow rate at the given powers.
    pub fn physics_init(priors: &AdjacencyPriors, kappa: f64, powers: &[f64]) -> Result<Self> {
        check_len("server powers", priors.servers(), powers.len())?;
        let n = priors.sensors();
        let c = (0..n)
            .map(|k| {
                let weighted_power: f64 = priors
                    .server_sensor
                    .column(k)
                    .zip(powers)
                    .map(|(w, p)| w * p)
                    .sum();
                if weighted_power > 0.0 {
                    kappa / weighted_power
                } else {
                    kappa
                }
            })
            .collect();
        Ok(Self {
            a: vec![1.0; n],
            b: vec![0.0; n],
            c,
            d: vec![0.0; n],
        })
    }

    pub fn sensors(&self) -> usize {
        self.a.len()
    }

    /// Number of trainable reals, `4n`.
    pub fn param_count(&self) -> usize {
        4 * self.sensors()
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    /// `[a, b, c, d]` concatenated.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.a[..], &self.b, &self.c, &self.d].concat()
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if !flat.len().is_multiple_of(4) {
            return Err(Error::InvalidInput(format!(
                "flat weight vector length {} is not a multiple of 4",
                flat.len()
            )));
        }
        let n = flat.len() / 4;
        Ok(Self {
            a: flat[..n].to_vec(),
            b: flat[n..2 * n].to_vec(),
            c: flat[2 * n..3 * n].to_vec(),
            d: flat[3 * n..].to_vec(),
        })
    }

    fn check(&self, n: usize) -> Result<()> {
        check_len("weights a", n, self.a.len())?;
        check_len("weights b", n, self.b.len())?;
        check_len("weights c", n, self.c.len())?;
        check_len("weights d", n, self.d.len())
    }

    /// Flat text snapshot: a header then one `a,b,c,d` row per sensor, round-trip exact.
    pub fn to_text(&self) -> String {
        let mut s = String::from("a,b,c,d\n");
        for k in 0..self.sensors() {
            let _ = writeln!(s, "{},{},{},{}", self.a[k], self.b[k], self.c[k], self.d[k]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut w = Self::zeros(0);
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse("<weights>", i + 1, e.to_string()))?;
            if vals.len() != 4 {
                return Err(Error::parse("<weights>", i + 1, "expected 4 fields"));
            }
            w.a.push(vals[0]);
            w.b.push(vals[1]);
            w.c.push(vals[2]);
            w.d.push(vals[3]);
        }
        Ok(w)
    }
}

/// Settings of the temperature-rise penalty in the calibration loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyParams {
    /// Lower bound on a server's temperature rise, °C.
    pub rise_low: f64,
    /// Upper bound on a server's temperature rise, °C.
    pub rise_high: f64,
    /// Regularization coefficient.
    pub lambda: f64,
    /// First-principle rise constant, °C·(cfm/W).
    pub kappa: f64,
}

impl Default for PenaltyParams {
    fn default() -> Self {
        Self {
            rise_low: 5.0,
            rise_high: 15.0,
            lambda: 1.0,
            kappa: KAPPA,
        }
    }
}

impl PenaltyParams {
    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.rise_low
            && self.rise_low < self.rise_high
            && self.lambda >= 0.0
            && self.kappa > 0.0
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "invalid penalty settings {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub input: SystemInput,
    /// Solver output at `input`.
    pub target: SensorVector,
}

/// Intermediate activations of one forward pass.
struct Pass {
    x_cold: Vec<f64>,
    /// Softmax coefficients, `l×n` row-major.
    coeff: Vec<f64>,
    x_hot: Vec<f64>,
    out: Vec<f64>,
}

fn check_forward(w: &SurrogateWeights, priors: &AdjacencyPriors, x: &SystemInput) -> Result<()> {
    w.check(priors.sensors())?;
    x.check_dims(priors.cracs(), priors.servers())?;
    x.check_flow_rates()
}

fn run_pass(
    w: &SurrogateWeights,
    priors: &AdjacencyPriors,
    setpoints: &[f64],
    fans: &[f64],
    powers: &[f64],
    alpha: &[f64],
) -> Pass {
    let (l, m, n) = (priors.cracs(), priors.servers(), priors.sensors());
    let mut coeff = vec![0.0; l * n];
    let mut x_cold = vec![0.0; n];
    for k in 0..n {
        let mut z_max = f64::NEG_INFINITY;
        for (i, &fan) in fans.iter().enumerate() {
            if priors.crac_in_support(i, k) {
                z_max = z_max.max(fan * priors.crac_sensor.get(i, k));
            }
        }
        let mut total = 0.0;
        for i in 0..l {
            if priors.crac_in_support(i, k) {
                let e = (fans[i] * priors.crac_sensor.get(i, k) - z_max).exp();
                coeff[i * n + k] = e;
                total += e;
            }
        }
        let mut mix = 0.0;
        for i in 0..l {
            let c = coeff[i * n + k] / total;
            coeff[i * n + k] = c;
            mix += setpoints[i] * c;
        }
        x_cold[k] = mix;
    }

    let mut x_hot = vec![0.0; n];
    for j in 0..m {
        let load = powers[j] / alpha[j];
        let row = priors.server_sensor.row(j);
        for (h, &wjk) in x_hot.iter_mut().zip(row) {
            *h += load * wjk;
        }
    }

    let out = (0..n)
        .map(|k| {
            let cold = w.a[k] * x_cold[k] + w.b[k];
            cold + priors.hot_mask[k] * (w.c[k] * x_hot[k] + w.d[k])
        })
        .collect();
    Pass {
        x_cold,
        coeff,
        x_hot,
        out,
    }
}

fn pass_for(w: &SurrogateWeights, priors: &AdjacencyPriors, x: &SystemInput) -> Pass {
    run_pass(
        w,
        priors,
        &x.crac_setpoints,
        &x.crac_fan_speeds,
        &x.server_powers,
        &x.flow_rates,
    )
}

/// Surrogate prediction `T̂_s`.
pub fn forward(
    w: &SurrogateWeights,
    priors: &AdjacencyPriors,
    x: &SystemInput,
) -> Result<SensorVector> {
    check_forward(w, priors, x)?;
    Ok(SensorVector::new(
        pass_for(w, priors, x).out,
        SensorRole::SurrogateOutput,
    ))
}

/// Softmax cooling coefficients `c_ik` (rows CRACs, columns sensors).
pub fn cooling_coefficients(
    w: &SurrogateWeights,
    priors: &AdjacencyPriors,
    x: &SystemInput,
) -> Result<Matrix> {
    check_forward(w, priors, x)?;
    let pass = pass_for(w, priors, x);
    let n = priors.sensors();
    let rows: Vec<Vec<f64>> = pass.coeff.chunks(n).map(<[f64]>::to_vec).collect();
    Ok(Matrix::from_rows(&rows))
}

fn check_batch(
    w: &SurrogateWeights,
    priors: &AdjacencyPriors,
    batch: &[TrainingSample],
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for s in batch {
        check_forward(w, priors, &s.input)?;
        check_len("training target", priors.sensors(), s.target.len())?;
    }
    Ok(())
}

fn mean_sq(residuals: impl Iterator<Item = f64>, n: usize) -> f64 {
    residuals.map(|r| r * r).sum::<f64>() / n as f64
}

/// Batch mean of the per-sample mean squared sensor error against solver targets.
pub fn loss_l1(
    w: &SurrogateWeights,
    priors: &AdjacencyPriors,
    batch: &[TrainingSample],
) -> Result<f64> {
    check_batch(w, priors, batch)?;
    Ok(l1_unchecked(w, priors, batch))
}

fn l1_unchecked(w: &SurrogateWeights, priors: &AdjacencyPriors, batch: &[TrainingSample]) -> f64 {
    let n = priors.sensors();
    batch
        .iter()
        .map(|s| {
            let out = pass_for(w, priors, &s.input).out;
            mean_sq(out.iter().zip(&s.target.values).map(|(o, t)| o - t), n)
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// Hinge penalty on the first-principle rise `κ/α_j`, weighted by server power.
pub fn penalty_h(alpha: &[f64], powers: &[f64], params: &PenaltyParams) -> Result<f64> {
    check_len("server powers", alpha.len(), powers.len())?;
    for (index, &value) in alpha.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveFlowRate { index, value });
        }
    }
    Ok(penalty_unchecked(alpha, powers, params))
}

fn penalty_unchecked(alpha: &[f64], powers: &[f64], params: &PenaltyParams) -> f64 {
    alpha
        .iter()
        .zip(powers)
        .map(|(&a, &p)| {
            let rise = params.kappa / a;
            ((params.rise_low - rise).max(0.0) + (rise - params.rise_high).max(0.0)) * p
        })
        .sum()
}

/// `∂h/∂α_j`, with subgradient 0 at the hinge kinks.
fn penalty_grad(alpha: &[f64], powers: &[f64], params: &PenaltyParams, out: &mut [f64]) {
    for ((g, &a), &p) in out.iter_mut().zip(alpha).zip(powers) {
        let rise = params.kappa / a;
        // d(rise)/dα = -κ/α².
        let drise = -params.kappa / (a * a);
        let slope = if rise < params.rise_low {
            -1.0
        } else if rise > params.rise_high {
            1.0
        } else {
            0.0
        };
        *g = slope * drise * p;
    }
}

/// Calibration loss: mean squared error against measurements plus `(λ/n)·h`.
pub fn loss_l2(
    w: &SurrogateWeights,
    priors: &AdjacencyPriors,
    x: &SystemInput,
    measured: &SensorVector,
    params: &PenaltyParams,
) -> Result<f64> {
    check_forward(w, priors, x)?;
    check_len("measurements", priors.sensors(), measured.len())?;
    Ok(l2_parts(w, priors, x, &x.flow_rates, &measured.values, params, false).0)
}

/// Analytic `∂L1/∂{a, b, c, d}`.
pub fn grad_weights(
    w: &SurrogateWeights,
    priors: &AdjacencyPriors,
    batch: &[TrainingSample],
) -> Result<SurrogateWeights> {
    check_batch(w, priors, batch)?;
    let mut g = SurrogateWeights::zeros(priors.sensors());
    accumulate_l1(w, priors, batch, &mut g, None);
    Ok(g)
}

/// Adjacency gradients, filled only when requested.
struct AdjacencyGrad {
    crac_sensor: Matrix,
    server_sensor: Matrix,
}

/// Adds `∂L1` into `g` (and `adj`), returns L1.
fn accumulate_l1(
    w: &SurrogateWeights,
    priors: &AdjacencyPriors,
    batch: &[TrainingSample],
    g: &mut SurrogateWeights,
    mut adj: Option<&mut AdjacencyGrad>,
) -> f64 {
    let (l, m, n) = (priors.cracs(), priors.servers(), priors.sensors());
    let scale = 2.0 / (n as f64 * batch.len() as f64);
    let mut loss = 0.0;
    for s in batch {
        let x = &s.input;
        let pass = pass_for(w, priors, x);
        for k in 0..n {
            let r = pass.out[k] - s.target.values[k];
            loss += r * r;
            let gr = scale * r;
            let e = priors.hot_mask[k];
            g.a[k] += gr * pass.x_cold[k];
            g.b[k] += gr;
            g.c[k] += gr * e * pass.x_hot[k];
            g.d[k] += gr * e;
            if let Some(adj) = adj.as_deref_mut() {
                for i in 0..l {
                    if priors.crac_in_support(i, k) {
                        let c = pass.coeff[i * n + k];
                        let dz = w.a[k] * c * (x.crac_setpoints[i] - pass.x_cold[k]);
                        let cur = adj.crac_sensor.get(i, k);
                        adj.crac_sensor
                            .set(i, k, cur + gr * dz * x.crac_fan_speeds[i]);
                    }
                }
                if e != 0.0 {
                    for j in 0..m {
                        let load = x.server_powers[j] / x.flow_rates[j];
                        let cur = adj.server_sensor.get(j, k);
                        adj.server_sensor.set(j, k, cur + gr * e * w.c[k] * load);
                    }
                }
            }
        }
    }
    loss / (n as f64 * batch.len() as f64)
}

/// L2 and optionally its gradient with respect to `alpha`.
fn l2_parts(
    w: &SurrogateWeights,
    priors: &AdjacencyPriors,
    x: &SystemInput,
    alpha: &[f64],
    measured: &[f64],
    params: &PenaltyParams,
    with_grad: bool,
) -> (f64, Vec<f64>) {
    let (m, n) = (priors.servers(), priors.sensors());
    let pass = run_pass(
        w,
        priors,
        &x.crac_setpoints,
        &x.crac_fan_speeds,
        &x.server_powers,
        alpha,
    );
    let residuals: Vec<f64> = pass.out.iter().zip(measured).map(|(o, t)| o - t).collect();
    let mse = mean_sq(residuals.iter().copied(), n);
    let h = penalty_unchecked(alpha, &x.server_powers, params);
    let loss = mse + params.lambda / n as f64 * h;
    if !with_grad {
        return (loss, Vec::new());
    }

    // ∂L2/∂X_hot_k, nonzero only at hot sensors.
    let dx_hot: Vec<f64> = (0..n)
        .map(|k| 2.0 / n as f64 * residuals[k] * priors.hot_mask[k] * w.c[k])
        .collect();
    let mut grad = vec![0.0; m];
    penalty_grad(alpha, &x.server_powers, params, &mut grad);
    for (j, g) in grad.iter_mut().enumerate() {
        *g *= params.lambda / n as f64;
        let row = priors.server_sensor.row(j);
        let through: f64 = row.iter().zip(&dx_hot).map(|(wjk, dx)| wjk * dx).sum();
        if through != 0.0 {
            let a = alpha[j];
            *g += through * (-x.server_powers[j] / (a * a));
        }
    }
    (loss, grad)
}

/// Analytic `∂L2/∂α` with the weights frozen.
pub fn grad_alpha(
    w: &SurrogateWeights,
    priors: &AdjacencyPriors,
    x: &SystemInput,
    measured: &SensorVector,
    params: &PenaltyParams,
) -> Result<Vec<f64>> {
    check_forward(w, priors, x)?;
    check_len("measurements", priors.sensors(), measured.len())?;
    Ok(l2_parts(w, priors, x, &x.flow_rates, &measured.values, params, true).1)
}

/// `L2` as a function of `α` alone, for the flow-rate search.
pub struct CalibrationObjective<'a> {
    pub weights: &'a SurrogateWeights,
    pub priors: &'a AdjacencyPriors,
    pub input: &'a SystemInput,
    pub measured: &'a [f64],
    pub penalty: PenaltyParams,
}

impl DifferentiableObjective for CalibrationObjective<'_> {
    fn value(&self, alpha: &[f64]) -> f64 {
        l2_parts(
            self.weights,
            self.priors,
            self.input,
            alpha,
            self.measured,
            &self.penalty,
            false,
        )
        .0
    }

    fn value_and_gradient(&self, alpha: &[f64]) -> (f64, Vec<f64>) {
        l2_parts(
            self.weights,
            self.priors,
            self.input,
            alpha,
            self.measured,
            &self.penalty,
            true,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 150,
            learning_rate: 0.1,
            decay: 0.8,
            decay_every: 50,
        }
    }
}

impl TrainHyper {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let stage = epoch / self.decay_every.max(1);
        self.learning_rate * self.decay.powi(stage as i32)
    }
}

/// Full-batch Adam on L1 over `{a, b, c, d}`; returns the lowest-loss weights seen.
pub fn train(
    w0: &SurrogateWeights,
    priors: &AdjacencyPriors,
    dataset: &[TrainingSample],
    hyper: &TrainHyper,
) -> Result<SurrogateWeights> {
    let mut model = KnowledgeModel::new(w0.clone(), priors.clone(), false);
    model.fit(dataset, hyper)?;
    Ok(model.weights)
}

/// The surrogate's state: weights plus adjacency, the latter optionally trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeModel {
    pub weights: SurrogateWeights,
    pub priors: AdjacencyPriors,
    pub trainable_adjacency: bool,
}

impl KnowledgeModel {
    pub fn new(
        weights: SurrogateWeights,
        priors: AdjacencyPriors,
        trainable_adjacency: bool,
    ) -> Self {
        Self {
            weights,
            priors,
            trainable_adjacency,
        }
    }

    pub fn param_count(&self) -> usize {
        let base = self.weights.param_count();
        if self.trainable_adjacency {
            let n = self.priors.sensors();
            base + (self.priors.cracs() + self.priors.servers()) * n
        } else {
            base
        }
    }

    pub fn predict(&self, x: &SystemInput) -> Result<SensorVector> {
        forward(&self.weights, &self.priors, x)
    }

    pub fn loss(&self, dataset: &[TrainingSample]) -> Result<f64> {
        loss_l1(&self.weights, &self.priors, dataset)
    }

    fn flatten(&self) -> Vec<f64> {
        let mut p = self.weights.flatten();
        if self.trainable_adjacency {
            p.extend_from_slice(self.priors.crac_sensor.as_slice());
            p.extend_from_slice(self.priors.server_sensor.as_slice());
        }
        p
    }

    fn unflatten(&mut self, p: &[f64]) {
        let n = self.priors.sensors();
        let base = 4 * n;
        self.weights = SurrogateWeights::from_flat(&p[..base]).expect("length is a multiple of 4");
        if self.trainable_adjacency {
            let cs = self.priors.cracs() * n;
            self.priors
                .crac_sensor
                .as_mut_slice()
                .copy_from_slice(&p[base..base + cs]);
            self.priors
                .server_sensor
                .as_mut_slice()
                .copy_from_slice(&p[base + cs..]);
        }
    }

    fn loss_and_grad(&self, dataset: &[TrainingSample]) -> (f64, Vec<f64>) {
        let n = self.priors.sensors();
        let mut g = SurrogateWeights::zeros(n);
        if self.trainable_adjacency {
            let mut adj = AdjacencyGrad {
                crac_sensor: Matrix::zeros(self.priors.cracs(), n),
                server_sensor: Matrix::zeros(self.priors.servers(), n),
            };
            let loss = accumulate_l1(&self.weights, &self.priors, dataset, &mut g, Some(&mut adj));
            let mut flat = g.flatten();
            flat.extend_from_slice(adj.crac_sensor.as_slice());
            flat.extend_from_slice(adj.server_sensor.as_slice());
            (loss, flat)
        } else {
            let loss = accumulate_l1(&self.weights, &self.priors, dataset, &mut g, None);
            (loss, g.flatten())
        }
    }

    /// Root-mean-square sensitivity of the sensor output to each parameter over the dataset.
    ///
    /// Adam runs in coordinates divided by these values, so a unit step moves predictions by
    /// about one degree whatever the units of the parameter.
    fn parameter_scales(&self, dataset: &[TrainingSample]) -> Vec<f64> {
        let (l, m, n) = (
            self.priors.cracs(),
            self.priors.servers(),
            self.priors.sensors(),
        );
        let w = &self.weights;
        let mut sq = vec![0.0; self.flatten().len()];
        for s in dataset {
            let x = &s.input;
            let pass = pass_for(w, &self.priors, x);
            for k in 0..n {
                let e = self.priors.hot_mask[k];
                sq[k] += pass.x_cold[k] * pass.x_cold[k];
                sq[n + k] += 1.0;
                sq[2 * n + k] += (e * pass.x_hot[k]).powi(2);
                sq[3 * n + k] += e;
                if self.trainable_adjacency {
                    for i in 0..l {
                        let c = pass.coeff[i * n + k];
                        let dz = w.a[k]
                            * c
                            * (x.crac_setpoints[i] - pass.x_cold[k])
                            * x.crac_fan_speeds[i];
                        sq[4 * n + i * n + k] += dz * dz;
                    }
                    for j in 0..m {
                        let d = e * w.c[k] * x.server_powers[j] / x.flow_rates[j];
                        sq[4 * n + l * n + j * n + k] += d * d;
                    }
                }
            }
        }
        let count = dataset.len() as f64;
        sq.into_iter()
            .map(|s| {
                let rms = (s / count).sqrt();
                if rms > 1e-12 {
                    1.0 / rms
                } else {
                    1.0
                }
            })
            .collect()
    }

    /// Full-batch Adam on L1 with the step schedule of `hyper`; keeps the lowest-loss
    /// parameters observed and returns that loss.
    pub fn fit(&mut self, dataset: &[TrainingSample], hyper: &TrainHyper) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_batch(&self.weights, &self.priors, dataset)?;
        let scales = self.parameter_scales(dataset);
        let mut theta: Vec<f64> = self
            .flatten()
            .iter()
            .zip(&scales)
            .map(|(p, s)| p / s)
            .collect();
        let mut adam = AdamState::new(
            theta.len(),
            AdamConfig::with_learning_rate(hyper.learning_rate),
        );
        let mut best_params = self.flatten();
        let mut best_loss = f64::INFINITY;
        let mut params = best_params.clone();
        for epoch in 0..=hyper.epochs {
            let (loss, grad) = self.loss_and_grad(dataset);
            if loss < best_loss {
                best_loss = loss;
                best_params.clone_from(&params);
            }
            if epoch == hyper.epochs || !loss.is_finite() {
                break;
            }
            let scaled: Vec<f64> = grad.iter().zip(&scales).map(|(g, s)| g * s).collect();
            adam.update_with_lr(&mut theta, &scaled, hyper.learning_rate_at(epoch))?;
            for ((p, t), s) in params.iter_mut().zip(&theta).zip(&scales) {
                *p = t * s;
            }
            self.unflatten(&params);
        }
        self.unflatten(&best_params);
        Ok(best_loss)
    }
}
