use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::hall::{validate_layout, Aisle, Crac, HallLayout, OperatingState, Sensor, Server};
use crate::optim::Bounds;

fn default_rated_flow() -> f64 {
    2000.0
}

fn default_plume_weight() -> f64 {
    0.5
}

fn default_tolerance() -> f64 {
    1e-6
}

fn default_max_sweeps() -> usize {
    500
}

/// A simulated hall with hidden ground-truth flow rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub layout: HallLayout,
    /// Hidden per-server flow rates, cfm/W. Used only to synthesize measurements.
    pub alpha_true: Vec<f64>,
    /// Share of hot-zone air reaching cold zones at full fan speed, in [0, 1).
    pub recirculation: f64,
    /// CRAC flow is `rated_flow · V^fan_law_exponent`.
    pub fan_law_exponent: f64,
    /// °C; initial guess and temperature of zones without supply.
    pub ambient: f64,
    /// Measurement noise standard deviation, °C.
    pub noise_sd: f64,
    pub seed: u64,
    /// CRAC flow at full fan speed, cfm.
    #[serde(default = "default_rated_flow")]
    pub crac_rated_flow: f64,
    /// Weight of the local exhaust plume in a hot-aisle sensor reading.
    #[serde(default = "default_plume_weight")]
    pub plume_weight: f64,
    /// Fixed-point tolerance, °C.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
}

impl Scenario {
    pub fn validate(&self, bounds: &Bounds) -> Result<()> {
        validate_layout(self.layout.clone())?;
        check_len(
            "hidden flow rates",
            self.layout.server_count(),
            self.alpha_true.len(),
        )?;
        if !bounds.contains(&self.alpha_true) {
            return Err(Error::InvalidConfig(
                "hidden flow rates lie outside the bounds".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.recirculation) {
            return Err(Error::InvalidConfig(format!(
                "recirculation fraction must lie in [0, 1), got {}",
                self.recirculation
            )));
        }
        if !(0.0..=1.0).contains(&self.plume_weight) {
            return Err(Error::InvalidConfig(
                "plume weight must lie in [0, 1]".into(),
            ));
        }
        let positive = [self.fan_law_exponent, self.crac_rated_flow, self.tolerance];
        if positive.iter().any(|v| !(*v > 0.0)) || self.max_sweeps == 0 {
            return Err(Error::InvalidConfig(
                "fan-law exponent, rated flow, tolerance and sweeps must be positive".into(),
            ));
        }
        if !(self.noise_sd >= 0.0) || !self.ambient.is_finite() {
            return Err(Error::InvalidConfig(
                "invalid noise level or ambient".into(),
            ));
        }
        Ok(())
    }
}

/// A scenario together with the operating state it is measured at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCase {
    pub scenario: Scenario,
    pub state: OperatingState,
}

/// Server types with rated power, W.
const SERVER_TYPES: [(&str, f64); 4] = [
    ("1U-compute", 350.0),
    ("2U-storage", 420.0),
    ("2U-gpu", 500.0),
    ("blade", 300.0),
];

/// Facility counts for [`generate_case`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallSizes {
    pub cracs: usize,
    pub servers: usize,
    pub sensors: usize,
}

impl Default for HallSizes {
    fn default() -> Self {
        Self {
            cracs: 4,
            servers: 64,
            sensors: 24,
        }
    }
}

const ROW_LENGTH: usize = 16;
const RACK_PITCH: f64 = 0.6;

/// `count` points spread evenly over `[start, start + length]`.
fn spread(count: usize, start: f64, length: f64) -> Vec<f64> {
    let step = length / count as f64;
    (0..count)
        .map(|i| start + (i as f64 + 0.5) * step)
        .collect()
}

/// Splits `total` proportionally to `weights` by largest remainder.
fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// A generated hall with hidden flow rates and a random operating state.
///
/// Server rows of up to 16 racks run along x at y = 1, 3, 5, ... and aisles lie between
/// them at y = 0, 2, 4, ..., cold and hot in turn starting with cold. CRACs sit at the ends
/// of the hot aisles. A third of the sensors (at least one) hang in the hot aisles, the rest
/// in the cold aisles in proportion to the rows each cold aisle serves.
pub fn generate_case(seed: u64, sizes: &HallSizes) -> Result<GeneratedCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = sizes.servers.div_ceil(ROW_LENGTH).max(1);
    let per_row = sizes.servers.div_ceil(rows).max(1);
    let row_span = RACK_PITCH * per_row as f64;
    let x_west = -1.5;
    let x_east = 1.0 + RACK_PITCH * (per_row - 1) as f64 + 2.5;

    let aisles: Vec<(f64, Aisle)> = (0..=rows)
        .map(|k| {
            (
                2.0 * k as f64,
                if k % 2 == 0 { Aisle::Cold } else { Aisle::Hot },
            )
        })
        .collect();
    let hot_y: Vec<f64> = aisles
        .iter()
        .filter(|a| a.1 == Aisle::Hot)
        .map(|a| a.0)
        .collect();

    let cracs = (0..sizes.cracs)
        .map(|i| {
            let ring = i / (2 * hot_y.len());
            let slot = i % (2 * hot_y.len());
            let offset = 1.5 * ring as f64;
            let x = if slot < hot_y.len() {
                x_west - offset
            } else {
                x_east + offset
            };
            Crac {
                id: format!("CRAC-{}", i + 1),
                position: [x, hot_y[slot % hot_y.len()], 1.5],
            }
        })
        .collect();

    // Per-type flow rate, cfm/W.
    let type_alpha: Vec<f64> = (0..SERVER_TYPES.len())
        .map(|_| rng.random_range(0.13..0.30))
        .collect();
    let mut servers = Vec::with_capacity(sizes.servers);
    let mut alpha_true = Vec::with_capacity(sizes.servers);
    let mut powers = Vec::with_capacity(sizes.servers);
    for i in 0..sizes.servers {
        let (row, j) = (i / per_row, i % per_row);
        let t = rng.random_range(0..SERVER_TYPES.len());
        let (tag, rated) = SERVER_TYPES[t];
        servers.push(Server {
            id: format!("R{}-{:02}", row + 1, j + 1),
            position: [1.0 + RACK_PITCH * j as f64, 1.0 + 2.0 * row as f64, 1.0],
            type_tag: tag.to_string(),
            rated_power: rated,
        });
        let jitter = 1.0 + rng.random_range(-0.03..0.03);
        alpha_true.push(type_alpha[t] * jitter);
        powers.push(rated * rng.random_range(0.5..0.7));
    }

    let hot_count = if sizes.sensors < 2 {
        0
    } else {
        (sizes.sensors / 3).max(1)
    };
    let cold_count = sizes.sensors - hot_count;
    let cold: Vec<&(f64, Aisle)> = aisles.iter().filter(|a| a.1 == Aisle::Cold).collect();
    let cold_weights: Vec<f64> = cold
        .iter()
        .map(|a| {
            if a.0 == 0.0 || a.0 == 2.0 * rows as f64 {
                1.0
            } else {
                2.0
            }
        })
        .collect();
    let mut sensors = Vec::with_capacity(sizes.sensors);
    for (k, (aisle, count)) in cold
        .iter()
        .zip(apportion(cold_count, &cold_weights))
        .enumerate()
    {
        for (i, x) in spread(count, 0.7, row_span).into_iter().enumerate() {
            sensors.push(Sensor {
                id: format!("C{}-{}", k + 1, i + 1),
                position: [x, aisle.0, 0.5],
                aisle: Aisle::Cold,
            });
        }
    }
    let hot_counts = apportion(hot_count, &vec![1.0; hot_y.len()]);
    for (k, (y, count)) in hot_y.iter().zip(hot_counts).enumerate() {
        for (i, x) in spread(count, 0.7, row_span).into_iter().enumerate() {
            sensors.push(Sensor {
                id: format!("H{}-{}", k + 1, i + 1),
                position: [x, *y, 1.5],
                aisle: Aisle::Hot,
            });
        }
    }

    let layout = validate_layout(HallLayout {
        containment: false,
        cracs,
        servers,
        sensors,
    })?;
    let state = OperatingState {
        crac_setpoints: (0..sizes.cracs)
            .map(|_| rng.random_range(18.0..22.0))
            .collect(),
        crac_fan_speeds: (0..sizes.cracs)
            .map(|_| rng.random_range(0.6..1.0))
            .collect(),
        server_powers: powers,
    };
    Ok(GeneratedCase {
        scenario: Scenario {
            layout,
            alpha_true,
            recirculation: 0.05,
            fan_law_exponent: 1.0,
            ambient: 24.0,
            noise_sd: 0.1,
            seed,
            crac_rated_flow: default_rated_flow(),
            plume_weight: default_plume_weight(),
            tolerance: default_tolerance(),
            max_sweeps: default_max_sweeps(),
        },
        state,
    })
}

/// The default hall: 4 CRACs, 64 servers in four rows and 24 sensors (16 cold, 8 hot).
pub fn reference_scenario(seed: u64) -> GeneratedCase {
    generate_case(seed, &HallSizes::default()).expect("default sizes form a valid hall")
}

/// A small noiseless hall where every server dominates its own hot-aisle sensor.
///
/// Eight servers sit 4 m apart in one row; each hot sensor is 0.3 m behind its server.
/// Pair with an adjacency cut of about 0.2 so each hot sensor keeps only its own server.
pub fn identifiable_scenario(seed: u64) -> GeneratedCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 8;
    let cracs = vec![
        Crac {
            id: "CRAC-W".into(),
            position: [-3.0, 0.0, 1.5],
        },
        Crac {
            id: "CRAC-E".into(),
            position: [4.0 * m as f64 + 3.0, 0.0, 1.5],
        },
    ];
    let servers: Vec<Server> = (0..m)
        .map(|j| Server {
            id: format!("S-{}", j + 1),
            position: [4.0 * j as f64, 0.0, 1.0],
            type_tag: "1U-compute".into(),
            rated_power: 400.0,
        })
        .collect();
    let mut sensors: Vec<Sensor> = (0..m)
        .map(|j| Sensor {
            id: format!("H-{}", j + 1),
            position: [4.0 * j as f64, 0.3, 1.0],
            aisle: Aisle::Hot,
        })
        .collect();
    for (i, x) in [2.0, 14.0, 26.0].into_iter().enumerate() {
        sensors.push(Sensor {
            id: format!("C-{}", i + 1),
            position: [x, -1.5, 0.5],
            aisle: Aisle::Cold,
        });
    }
    let alpha_true = (0..m).map(|_| rng.random_range(0.13..0.30)).collect();
    let state = OperatingState {
        crac_setpoints: vec![rng.random_range(18.0..22.0), rng.random_range(18.0..22.0)],
        crac_fan_speeds: vec![0.9, 0.8],
        server_powers: (0..m).map(|_| 400.0 * rng.random_range(0.5..0.9)).collect(),
    };
    GeneratedCase {
        scenario: Scenario {
            layout: HallLayout {
                containment: false,
                cracs,
                servers,
                sensors,
            },
            alpha_true,
            recirculation: 0.05,
            fan_law_exponent: 1.0,
            ambient: 24.0,
            noise_sd: 0.0,
            seed,
            crac_rated_flow: default_rated_flow(),
            plume_weight: default_plume_weight(),
            tolerance: default_tolerance(),
            max_sweeps: default_max_sweeps(),
        },
        state,
    }
}
