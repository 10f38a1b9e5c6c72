//! Data-hall domain types and the distance-derived adjacency priors.
//!
//! A hall holds `l` CRACs, `m` servers and `n` sensors. The priors are two
//! facility-to-sensor weight matrices (CRACs `l×n`, servers `m×n`; rows are
//! facilities, columns are sensors) plus the hot-aisle mask.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;

pub type Position = [f64; 3];

/// Default cut applied to normalized adjacency weights.
pub const DEFAULT_CUT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crac {
    pub id: String,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Server {
    pub id: String,
    pub position: Position,
    pub type_tag: String,
    /// Watts.
    pub rated_power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Aisle {
    Cold,
    Hot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    pub id: String,
    pub position: Position,
    pub aisle: Aisle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallLayout {
    #[serde(default)]
    pub containment: bool,
    pub cracs: Vec<Crac>,
    pub servers: Vec<Server>,
    pub sensors: Vec<Sensor>,
}

impl HallLayout {
    pub fn crac_count(&self) -> usize {
        self.cracs.len()
    }

    pub fn server_count(&self) -> usize {
        self.servers.len()
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn hot_sensor_count(&self) -> usize {
        self.sensors
            .iter()
            .filter(|s| s.aisle == Aisle::Hot)
            .count()
    }
}

/// Returns the layout unchanged when every structural invariant holds.
pub fn validate_layout(layout: HallLayout) -> Result<HallLayout> {
    if layout.cracs.is_empty() {
        return Err(Error::EmptyFacilityClass("CRACs"));
    }
    if layout.servers.is_empty() {
        return Err(Error::EmptyFacilityClass("servers"));
    }
    if layout.sensors.is_empty() {
        return Err(Error::EmptyFacilityClass("sensors"));
    }

    let cracs: Vec<_> = layout
        .cracs
        .iter()
        .map(|c| (c.id.as_str(), c.position))
        .collect();
    let servers: Vec<_> = layout
        .servers
        .iter()
        .map(|s| (s.id.as_str(), s.position))
        .collect();
    let sensors: Vec<_> = layout
        .sensors
        .iter()
        .map(|s| (s.id.as_str(), s.position))
        .collect();
    check_class("CRAC", &cracs)?;
    check_class("server", &servers)?;
    check_class("sensor", &sensors)?;

    for s in &layout.servers {
        if !(s.rated_power.is_finite() && s.rated_power >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "server `{}` has invalid rated power {}",
                s.id, s.rated_power
            )));
        }
    }

    let hot = layout.hot_sensor_count();
    let cold = layout.sensors.len() - hot;
    if hot == 0 || cold == 0 {
        return Err(Error::MissingAisleCoverage { cold, hot });
    }
    Ok(layout)
}

fn check_class(class: &'static str, items: &[(&str, Position)]) -> Result<()> {
    let mut ids = HashSet::new();
    for (id, pos) in items {
        if !ids.insert(*id) {
            return Err(Error::DuplicateId {
                class,
                id: id.to_string(),
            });
        }
        if pos.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePosition {
                class,
                id: id.to_string(),
            });
        }
    }
    let mut seen: Vec<(&str, [u64; 3])> = items
        .iter()
        .map(|(id, p)| (*id, p.map(|v| (v + 0.0).to_bits())))
        .collect();
    seen.sort_by_key(|a| a.1);
    for pair in seen.windows(2) {
        if pair[0].1 == pair[1].1 {
            return Err(Error::DuplicatePosition {
                class,
                first: pair[0].0.to_string(),
                second: pair[1].0.to_string(),
            });
        }
    }
    Ok(())
}

/// The operating point `x = (T_c, V, P, α)` fed to solvers and surrogates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInput {
    /// CRAC supply setpoints, °C.
    pub crac_setpoints: Vec<f64>,
    /// CRAC fan speed ratios in [0, 1].
    pub crac_fan_speeds: Vec<f64>,
    /// Server powers, W.
    pub server_powers: Vec<f64>,
    /// Server air flow rates, cfm/W.
    pub flow_rates: Vec<f64>,
}

impl SystemInput {
    pub fn new(state: &OperatingState, flow_rates: Vec<f64>) -> Self {
        Self {
            crac_setpoints: state.crac_setpoints.clone(),
            crac_fan_speeds: state.crac_fan_speeds.clone(),
            server_powers: state.server_powers.clone(),
            flow_rates,
        }
    }

    pub fn state(&self) -> OperatingState {
        OperatingState {
            crac_setpoints: self.crac_setpoints.clone(),
            crac_fan_speeds: self.crac_fan_speeds.clone(),
            server_powers: self.server_powers.clone(),
        }
    }

    pub fn check_dims(&self, cracs: usize, servers: usize) -> Result<()> {
        check_len("CRAC setpoints", cracs, self.crac_setpoints.len())?;
        check_len("CRAC fan speeds", cracs, self.crac_fan_speeds.len())?;
        check_len("server powers", servers, self.server_powers.len())?;
        check_len("flow rates", servers, self.flow_rates.len())
    }

    pub fn check_flow_rates(&self) -> Result<()> {
        for (index, &value) in self.flow_rates.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveFlowRate { index, value });
            }
        }
        Ok(())
    }

    /// Flattened feature vector `[T_c, V, P, α]` of length `2l + 2m`.
    pub fn features(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.feature_len());
        f.extend_from_slice(&self.crac_setpoints);
        f.extend_from_slice(&self.crac_fan_speeds);
        f.extend_from_slice(&self.server_powers);
        f.extend_from_slice(&self.flow_rates);
        f
    }

    pub fn feature_len(&self) -> usize {
        2 * self.crac_setpoints.len() + 2 * self.server_powers.len()
    }
}

/// The free variables of a steady hall state: everything in [`SystemInput`] except α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingState {
    pub crac_setpoints: Vec<f64>,
    pub crac_fan_speeds: Vec<f64>,
    pub server_powers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorRole {
    /// Physical measurement `T_s`.
    Measurement,
    /// Expensive-solver output `T̃_s`.
    SolverOutput,
    /// Surrogate prediction `T̂_s`.
    SurrogateOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorVector {
    pub values: Vec<f64>,
    pub role: SensorRole,
}

impl SensorVector {
    pub fn new(values: Vec<f64>, role: SensorRole) -> Self {
        Self { values, role }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check(&self, sensors: usize) -> Result<()> {
        check_len("sensor vector", sensors, self.values.len())?;
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sensor value {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Manhattan,
}

impl DistanceMetric {
    pub fn distance(self, a: &Position, b: &Position) -> f64 {
        match self {
            DistanceMetric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            DistanceMetric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// Fixed knowledge priors of the surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyPriors {
    /// `l×n` CRAC-to-sensor weights.
    pub crac_sensor: Matrix,
    /// `m×n` server-to-sensor weights.
    pub server_sensor: Matrix,
    /// `e_k = 1` for hot-aisle sensors.
    pub hot_mask: Vec<f64>,
    /// Nonzero pattern of `crac_sensor` at construction; the cooling softmax runs over it.
    pub crac_support: Vec<bool>,
}

impl AdjacencyPriors {
    /// Assembles priors from explicit matrices. The softmax support is the nonzero pattern.
    pub fn from_parts(
        crac_sensor: Matrix,
        server_sensor: Matrix,
        hot_mask: Vec<f64>,
    ) -> Result<Self> {
        let n = hot_mask.len();
        check_len("CRAC-sensor columns", n, crac_sensor.cols())?;
        check_len("server-sensor columns", n, server_sensor.cols())?;
        let crac_support = crac_sensor.as_slice().iter().map(|&w| w != 0.0).collect();
        Ok(Self {
            crac_sensor,
            server_sensor,
            hot_mask,
            crac_support,
        })
    }

    pub fn cracs(&self) -> usize {
        self.crac_sensor.rows()
    }

    pub fn servers(&self) -> usize {
        self.server_sensor.rows()
    }

    pub fn sensors(&self) -> usize {
        self.hot_mask.len()
    }

    #[inline]
    pub fn crac_in_support(&self, crac: usize, sensor: usize) -> bool {
        self.crac_support[crac * self.sensors() + sensor]
    }
}

pub fn hot_aisle_mask(layout: &HallLayout) -> Vec<f64> {
    layout
        .sensors
        .iter()
        .map(|s| if s.aisle == Aisle::Hot { 1.0 } else { 0.0 })
        .collect()
}

pub fn build_adjacency(layout: &HallLayout, cut_threshold: f64) -> Result<AdjacencyPriors> {
    build_adjacency_with(layout, cut_threshold, DistanceMetric::Euclidean)
}

/// Builds normalized reciprocal-distance weights, zeroes those whose normalized value is
/// below `cut_threshold`, then renormalizes the survivors of each sensor column.
pub fn build_adjacency_with(
    layout: &HallLayout,
    cut_threshold: f64,
    metric: DistanceMetric,
) -> Result<AdjacencyPriors> {
    if !(cut_threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "cut threshold must be non-negative, got {cut_threshold}"
        )));
    }
    let crac_sensor = reciprocal_weights(
        layout
            .cracs
            .iter()
            .map(|c| (format!("CRAC `{}`", c.id), c.position)),
        &layout.sensors,
        cut_threshold,
        metric,
    )?;
    let server_sensor = reciprocal_weights(
        layout
            .servers
            .iter()
            .map(|s| (format!("server `{}`", s.id), s.position)),
        &layout.sensors,
        cut_threshold,
        metric,
    )?;
    AdjacencyPriors::from_parts(crac_sensor, server_sensor, hot_aisle_mask(layout))
}

fn reciprocal_weights(
    facilities: impl Iterator<Item = (String, Position)>,
    sensors: &[Sensor],
    cut: f64,
    metric: DistanceMetric,
) -> Result<Matrix> {
    let facilities: Vec<_> = facilities.collect();
    let mut w = Matrix::zeros(facilities.len(), sensors.len());
    for (k, sensor) in sensors.iter().enumerate() {
        for (i, (name, pos)) in facilities.iter().enumerate() {
            let d = metric.distance(pos, &sensor.position);
            if d == 0.0 {
                return Err(Error::ZeroDistance {
                    facility: name.clone(),
                    sensor: sensor.id.clone(),
                });
            }
            w.set(i, k, 1.0 / d);
        }
        normalize_column(&mut w, k);
        for i in 0..facilities.len() {
            if w.get(i, k) < cut {
                w.set(i, k, 0.0);
            }
        }
        if w.column(k).all(|v| v == 0.0) {
            return Err(Error::AllWeightsCut {
                sensor: sensor.id.clone(),
            });
        }
        normalize_column(&mut w, k);
    }
    Ok(w)
}

fn normalize_column(w: &mut Matrix, k: usize) {
    let total: f64 = w.column(k).sum();
    for i in 0..w.rows() {
        w.set(i, k, w.get(i, k) / total);
    }
}
