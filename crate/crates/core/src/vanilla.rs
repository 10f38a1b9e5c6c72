//! Fully connected baseline surrogate without physical priors.
//!
//! Input is the flattened `[T_c, V, P, α]` feature vector, output the `n` sensor
//! temperatures. Hidden layers use ReLU, the output layer is linear. Inputs are standardized
//! per feature and targets per sensor (mean) with one pooled scale, both fixed at the first fit.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hall::{SensorRole, SensorVector, SystemInput};
use crate::knowledge::{PenaltyParams, TrainingSample};
use crate::optim::DifferentiableObjective;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Full-batch Adam steps per fit.
    pub epochs: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![518, 128, 32],
            learning_rate: 1e-3,
            epochs: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    /// `out × in`.
    w: Array2<f64>,
    b: Array1<f64>,
}

#[derive(Debug, Clone)]
struct Moments {
    mw: Array2<f64>,
    vw: Array2<f64>,
    mb: Array1<f64>,
    vb: Array1<f64>,
}

#[derive(Debug, Clone)]
struct Scaling {
    in_mean: Array1<f64>,
    in_std: Array1<f64>,
    out_mean: Array1<f64>,
    out_scale: f64,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    config: MlpConfig,
    inputs: usize,
    outputs: usize,
    layers: Vec<Layer>,
    moments: Vec<Moments>,
    step: i32,
    scaling: Option<Scaling>,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Mlp {
    pub fn new(inputs: usize, outputs: usize, config: MlpConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut sizes = vec![inputs];
        sizes.extend(&config.hidden);
        sizes.push(outputs);
        let layers: Vec<Layer> = sizes
            .windows(2)
            .map(|io| {
                let (fan_in, fan_out) = (io[0], io[1]);
                let std = (2.0 / fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * std
                });
                Layer {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        let moments = layers
            .iter()
            .map(|l| Moments {
                mw: Array2::zeros(l.w.raw_dim()),
                vw: Array2::zeros(l.w.raw_dim()),
                mb: Array1::zeros(l.b.len()),
                vb: Array1::zeros(l.b.len()),
            })
            .collect();
        Self {
            config,
            inputs,
            outputs,
            layers,
            moments,
            step: 0,
            scaling: None,
        }
    }

    /// Number of trainable reals.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn fix_scaling(&mut self, dataset: &[TrainingSample]) {
        let x = features(dataset);
        let t = targets(dataset);
        let in_mean = x.mean_axis(Axis(0)).expect("nonempty");
        let in_std = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let out_mean = t.mean_axis(Axis(0)).expect("nonempty");
        let centered = &t - &out_mean;
        let pooled = (centered.mapv(|v| v * v).sum() / centered.len() as f64).sqrt();
        self.scaling = Some(Scaling {
            in_mean,
            in_std,
            out_mean,
            out_scale: if pooled > 1e-6 { pooled } else { 1.0 },
        });
    }

    fn check_dataset(&self, dataset: &[TrainingSample]) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for s in dataset {
            check_len("MLP input features", self.inputs, s.input.feature_len())?;
            check_len("MLP targets", self.outputs, s.target.len())?;
        }
        Ok(())
    }

    /// Forward pass on standardized inputs (rows are samples); returns every activation.
    fn forward_batch(&self, x: Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.w.t()) + &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Full-batch Adam on standardized mean squared error; returns the final training MSE
    /// in °C².
    pub fn fit(&mut self, dataset: &[TrainingSample]) -> Result<f64> {
        self.check_dataset(dataset)?;
        if self.scaling.is_none() {
            self.fix_scaling(dataset);
        }
        let sc = self.scaling.clone().expect("set above");
        let x = (features(dataset) - &sc.in_mean) / &sc.in_std;
        let t = (targets(dataset) - &sc.out_mean) / sc.out_scale;
        let count = (t.len()) as f64;
        let mut loss = f64::INFINITY;
        for _ in 0..self.config.epochs {
            let acts = self.forward_batch(x.clone());
            let out = acts.last().expect("output layer");
            let diff = out - &t;
            loss = diff.mapv(|v| v * v).sum() / count;
            let mut delta = diff * (2.0 / count);
            let mut grads = Vec::with_capacity(self.layers.len());
            for i in (0..self.layers.len()).rev() {
                let gw = delta.t().dot(&acts[i]);
                let gb = delta.sum_axis(Axis(0));
                if i > 0 {
                    let mut back = delta.dot(&self.layers[i].w);
                    back.zip_mut_with(&acts[i], |d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    delta = back;
                }
                grads.push((gw, gb));
            }
            grads.reverse();
            self.adam_update(&grads);
        }
        Ok(loss * sc.out_scale * sc.out_scale)
    }

    fn adam_update(&mut self, grads: &[(Array2<f64>, Array1<f64>)]) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let lr = self.config.learning_rate;
        for ((layer, mom), (gw, gb)) in self.layers.iter_mut().zip(&mut self.moments).zip(grads) {
            adam_arrays(&mut layer.w, &mut mom.mw, &mut mom.vw, gw, lr, c1, c2);
            adam_arrays(&mut layer.b, &mut mom.mb, &mut mom.vb, gb, lr, c1, c2);
        }
    }

    fn scaling(&self) -> Result<&Scaling> {
        self.scaling
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("MLP surrogate used before its first fit".into()))
    }

    pub fn predict(&self, x: &SystemInput) -> Result<SensorVector> {
        check_len("MLP input features", self.inputs, x.feature_len())?;
        x.check_flow_rates()?;
        let sc = self.scaling()?;
        let f = (Array1::from(x.features()) - &sc.in_mean) / &sc.in_std;
        let out = self.forward_one(f.view()).pop().expect("output layer");
        let y = out * sc.out_scale + &sc.out_mean;
        Ok(SensorVector::new(y.to_vec(), SensorRole::SurrogateOutput))
    }

    fn forward_one(&self, x: ArrayView1<f64>) -> Vec<Array1<f64>> {
        let mut acts = vec![x.to_owned()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.w.dot(&acts[i]) + &layer.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    /// Calibration loss against `measured` at the given flow rates, and optionally its
    /// gradient with respect to them.
    fn l2(
        &self,
        x: &SystemInput,
        alpha: &[f64],
        measured: &[f64],
        penalty: &PenaltyParams,
        with_grad: bool,
    ) -> (f64, Vec<f64>) {
        let sc = self.scaling.as_ref().expect("fitted before search");
        let mut features = x.features();
        let m = alpha.len();
        let offset = features.len() - m;
        features[offset..].copy_from_slice(alpha);
        let f = (Array1::from(features) - &sc.in_mean) / &sc.in_std;
        let acts = self.forward_one(f.view());
        let y = acts.last().expect("output layer") * sc.out_scale + &sc.out_mean;
        let n = self.outputs as f64;
        let residual: Vec<f64> = y.iter().zip(measured).map(|(p, t)| p - t).collect();
        let mse = residual.iter().map(|r| r * r).sum::<f64>() / n;
        let h: f64 = alpha
            .iter()
            .zip(&x.server_powers)
            .map(|(&a, &p)| {
                let rise = penalty.kappa / a;
                ((penalty.rise_low - rise).max(0.0) + (rise - penalty.rise_high).max(0.0)) * p
            })
            .sum();
        let loss = mse + penalty.lambda / n * h;
        if !with_grad {
            return (loss, Vec::new());
        }

        let mut delta: Array1<f64> = residual
            .iter()
            .map(|r| 2.0 / n * r * sc.out_scale)
            .collect();
        for i in (0..self.layers.len()).rev() {
            let mut back = self.layers[i].w.t().dot(&delta);
            if i > 0 {
                back.zip_mut_with(&acts[i], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = back;
        }
        let grad = (0..m)
            .map(|j| {
                let a = alpha[j];
                let rise = penalty.kappa / a;
                let slope = if rise < penalty.rise_low {
                    -1.0
                } else if rise > penalty.rise_high {
                    1.0
                } else {
                    0.0
                };
                let pen =
                    penalty.lambda / n * slope * (-penalty.kappa / (a * a)) * x.server_powers[j];
                delta[offset + j] / sc.in_std[offset + j] + pen
            })
            .collect();
        (loss, grad)
    }
}

fn adam_arrays<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    ndarray::Zip::from(p)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|p, m, v, &g| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
        });
}

fn features(dataset: &[TrainingSample]) -> Array2<f64> {
    let d = dataset[0].input.feature_len();
    let flat: Vec<f64> = dataset.iter().flat_map(|s| s.input.features()).collect();
    Array2::from_shape_vec((dataset.len(), d), flat).expect("consistent feature lengths")
}

fn targets(dataset: &[TrainingSample]) -> Array2<f64> {
    let n = dataset[0].target.len();
    let flat: Vec<f64> = dataset
        .iter()
        .flat_map(|s| s.target.values.iter().copied())
        .collect();
    Array2::from_shape_vec((dataset.len(), n), flat).expect("consistent target lengths")
}

/// `L2` of the MLP surrogate as a function of `α`.
pub struct MlpObjective<'a> {
    pub mlp: &'a Mlp,
    pub input: &'a SystemInput,
    pub measured: &'a [f64],
    pub penalty: PenaltyParams,
}

impl DifferentiableObjective for MlpObjective<'_> {
    fn value(&self, alpha: &[f64]) -> f64 {
        self.mlp
            .l2(self.input, alpha, self.measured, &self.penalty, false)
            .0
    }

    fn value_and_gradient(&self, alpha: &[f64]) -> (f64, Vec<f64>) {
        self.mlp
            .l2(self.input, alpha, self.measured, &self.penalty, true)
    }
}
