//! Zonal mass-and-energy-balance simulator.
//!
//! Every sensor owns one well-mixed zone. Cold zones receive CRAC supply air split by inverse
//! distance and fan-law flow, and take back a share of air from the nearest hot zone; that
//! share grows as the local supply falls below its full-fan value. Each server draws from
//! its nearest cold zone and exhausts `κ/α` warmer into its nearest hot zone. Hot zones mix
//! the utilization-scaled exhaust of their servers with some cold-zone air. Hot-aisle
//! sensors additionally see the exhaust plumes of nearby servers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Scenario, ThermalSolver};
use crate::error::{check_len, Error, Result};
use crate::hall::{
    validate_layout, Aisle, DistanceMetric, OperatingState, SensorRole, SensorVector, SystemInput,
};
use crate::knowledge::KAPPA;

/// Upper limit on the share of recirculated air in a cold zone.
const MAX_RECIRCULATION: f64 = 0.9;
/// Under-relaxation of the fixed-point sweeps.
const DAMPING: f64 = 0.5;
/// Softening length² of the plume kernel, m².
const PLUME_SOFTENING: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
struct Geometry {
    cold: Vec<usize>,
    hot: Vec<usize>,
    /// `share[i][z]`: fraction of CRAC `i`'s flow delivered to cold zone `cold[z]`.
    share: Vec<Vec<f64>>,
    /// Cold zone: nearest hot zone it draws back from. Hot zone: nearest cold zone it mixes with.
    partner: Vec<usize>,
    inlet: Vec<usize>,
    /// Per zone, servers exhausting into it.
    members: Vec<Vec<usize>>,
    /// Per hot zone, plume kernel over all servers.
    plume: Vec<Vec<f64>>,
}

fn nearest(from: &[f64; 3], candidates: &[usize], positions: &[[f64; 3]]) -> usize {
    let d = |k: usize| DistanceMetric::Euclidean.distance(from, &positions[k]);
    *candidates
        .iter()
        .min_by(|&&a, &&b| d(a).total_cmp(&d(b)))
        .expect("aisle coverage checked")
}

impl Geometry {
    fn new(scenario: &Scenario) -> Result<Self> {
        let layout = validate_layout(scenario.layout.clone())?;
        let pos: Vec<[f64; 3]> = layout.sensors.iter().map(|s| s.position).collect();
        let (cold, hot): (Vec<usize>, Vec<usize>) =
            (0..pos.len()).partition(|&k| layout.sensors[k].aisle == Aisle::Cold);

        let share = layout
            .cracs
            .iter()
            .map(|c| {
                let inv: Vec<f64> = cold
                    .iter()
                    .map(|&k| {
                        1.0 / DistanceMetric::Euclidean
                            .distance(&c.position, &pos[k])
                            .max(1e-6)
                    })
                    .collect();
                let total: f64 = inv.iter().sum();
                inv.into_iter().map(|v| v / total).collect()
            })
            .collect();

        let partner = layout
            .sensors
            .iter()
            .map(|s| match s.aisle {
                Aisle::Cold => nearest(&s.position, &hot, &pos),
                Aisle::Hot => nearest(&s.position, &cold, &pos),
            })
            .collect();

        let mut members = vec![Vec::new(); pos.len()];
        let mut inlet = Vec::with_capacity(layout.servers.len());
        for (j, s) in layout.servers.iter().enumerate() {
            inlet.push(nearest(&s.position, &cold, &pos));
            members[nearest(&s.position, &hot, &pos)].push(j);
        }

        let plume = hot
            .iter()
            .map(|&k| {
                layout
                    .servers
                    .iter()
                    .map(|s| {
                        let d = DistanceMetric::Euclidean.distance(&s.position, &pos[k]);
                        1.0 / (d * d + PLUME_SOFTENING)
                    })
                    .collect()
            })
            .collect();

        Ok(Self {
            cold,
            hot,
            share,
            partner,
            inlet,
            members,
            plume,
        })
    }
}

/// The zonal simulator with a solve counter.
#[derive(Debug, Clone)]
pub struct ZonalSolver {
    scenario: Scenario,
    geometry: Geometry,
    calls: usize,
}

impl ZonalSolver {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let geometry = Geometry::new(&scenario)?;
        Ok(Self {
            scenario,
            geometry,
            calls: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn check_input(&self, x: &SystemInput) -> Result<()> {
        let layout = &self.scenario.layout;
        x.check_dims(layout.crac_count(), layout.server_count())?;
        x.check_flow_rates()?;
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&x.crac_setpoints) {
            return Err(Error::InvalidInput("non-finite CRAC setpoint".into()));
        }
        if x.crac_fan_speeds
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidInput(
                "fan speeds must be finite and non-negative".into(),
            ));
        }
        if x.server_powers
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidInput(
                "server powers must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Supply temperature and recirculated-air share of every cold zone, in `cold` order.
    fn supply(&self, x: &SystemInput) -> (Vec<f64>, Vec<f64>) {
        let sc = &self.scenario;
        let g = &self.geometry;
        let flows: Vec<f64> = x
            .crac_fan_speeds
            .iter()
            .map(|v| sc.crac_rated_flow * v.powf(sc.fan_law_exponent))
            .collect();
        let mut temps = Vec::with_capacity(g.cold.len());
        let mut shares = Vec::with_capacity(g.cold.len());
        for z in 0..g.cold.len() {
            let mut flow = 0.0;
            let mut full = 0.0;
            let mut heat = 0.0;
            for (i, share) in g.share.iter().enumerate() {
                flow += flows[i] * share[z];
                full += sc.crac_rated_flow * share[z];
                heat += flows[i] * share[z] * x.crac_setpoints[i];
            }
            if flow > 0.0 {
                temps.push(heat / flow);
                shares.push((sc.recirculation * full / flow).min(MAX_RECIRCULATION));
            } else {
                temps.push(sc.ambient);
                shares.push(MAX_RECIRCULATION);
            }
        }
        (temps, shares)
    }

    /// Share of recirculated air in each zone: cold zones depend on the fans, hot zones use
    /// the scenario fraction.
    pub fn recirculation_shares(&self, x: &SystemInput) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut out = vec![self.scenario.recirculation; self.scenario.layout.sensor_count()];
        let (_, shares) = self.supply(x);
        for (z, &k) in self.geometry.cold.iter().enumerate() {
            out[k] = shares[z];
        }
        Ok(out)
    }

    /// Converged zone temperatures, one per sensor.
    pub fn zone_temperatures(&self, x: &SystemInput) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.zones(x)?.0)
    }

    fn zones(&self, x: &SystemInput) -> Result<(Vec<f64>, Vec<f64>)> {
        let sc = &self.scenario;
        let g = &self.geometry;
        let layout = &sc.layout;
        let rise: Vec<f64> = (0..layout.server_count())
            .map(|j| {
                let utilization = x.server_powers[j] / layout.servers[j].rated_power;
                utilization * KAPPA / x.flow_rates[j]
            })
            .collect();
        let (supply, shares) = self.supply(x);
        let r = sc.recirculation;
        let mut t = vec![sc.ambient; layout.sensor_count()];
        let mut residual = f64::INFINITY;
        let mut sweeps = 0;
        while sweeps < sc.max_sweeps {
            sweeps += 1;
            residual = 0.0;
            for (z, &k) in g.cold.iter().enumerate() {
                let target = (1.0 - shares[z]) * supply[z] + shares[z] * t[g.partner[k]];
                residual = f64::max(residual, (target - t[k]).abs());
                t[k] += DAMPING * (target - t[k]);
            }
            for &k in &g.hot {
                let members = &g.members[k];
                let target = if members.is_empty() {
                    t[g.partner[k]]
                } else {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for &j in members {
                        let w = layout.servers[j].rated_power;
                        num += w * (t[g.inlet[j]] + rise[j]);
                        den += w;
                    }
                    (1.0 - r) * num / den + r * t[g.partner[k]]
                };
                residual = f64::max(residual, (target - t[k]).abs());
                t[k] += DAMPING * (target - t[k]);
            }
            if residual < sc.tolerance {
                return Ok((t, rise));
            }
        }
        Err(Error::NoConvergence { residual, sweeps })
    }

    fn readings(&self, x: &SystemInput) -> Result<Vec<f64>> {
        let (t, rise) = self.zones(x)?;
        let g = &self.geometry;
        let gamma = self.scenario.plume_weight;
        let mut out = t.clone();
        for (h, &k) in g.hot.iter().enumerate() {
            let kernel = &g.plume[h];
            let mut num = 0.0;
            let mut den = 0.0;
            for (j, &w) in kernel.iter().enumerate() {
                num += w * (t[g.inlet[j]] + rise[j]);
                den += w;
            }
            out[k] = (1.0 - gamma) * t[k] + gamma * num / den;
        }
        Ok(out)
    }

    /// Noise-free sensor readings at `x` without touching the call counter.
    pub fn evaluate(&self, x: &SystemInput) -> Result<SensorVector> {
        self.check_input(x)?;
        Ok(SensorVector::new(
            self.readings(x)?,
            SensorRole::SolverOutput,
        ))
    }
}

impl ThermalSolver for ZonalSolver {
    fn solve(&mut self, x: &SystemInput) -> Result<SensorVector> {
        self.calls += 1;
        self.evaluate(x)
    }

    fn calls(&self) -> usize {
        self.calls
    }
}

/// One-shot solve of `scenario` at `x`.
pub fn zonal_solve(scenario: &Scenario, x: &SystemInput) -> Result<SensorVector> {
    ZonalSolver::new(scenario.clone())?.evaluate(x)
}

/// Readings at the hidden flow rates plus seeded Gaussian noise of the scenario's level.
pub fn synthesize_measurements(
    scenario: &Scenario,
    state: &OperatingState,
) -> Result<SensorVector> {
    check_len(
        "server powers",
        scenario.layout.server_count(),
        state.server_powers.len(),
    )?;
    let x = SystemInput::new(state, scenario.alpha_true.clone());
    let mut values = zonal_solve(scenario, &x)?.values;
    if scenario.noise_sd > 0.0 {
        let noise = Normal::new(0.0, scenario.noise_sd)
            .map_err(|e| Error::InvalidConfig(format!("noise level: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        for v in &mut values {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(SensorVector::new(values, SensorRole::Measurement))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hall::{Crac, HallLayout, Sensor, Server};
    use crate::solver::reference_scenario;

    fn two_zone(recirculation: f64, rated: f64) -> Scenario {
        Scenario {
            layout: HallLayout {
                containment: false,
                cracs: vec![Crac {
                    id: "C".into(),
                    position: [-2.0, 0.0, 1.0],
                }],
                servers: vec![Server {
                    id: "S".into(),
                    position: [0.0, 0.0, 1.0],
                    type_tag: "t".into(),
                    rated_power: rated,
                }],
                sensors: vec![
                    Sensor {
                        id: "cold".into(),
                        position: [0.0, -1.0, 0.5],
                        aisle: Aisle::Cold,
                    },
                    Sensor {
                        id: "hot".into(),
                        position: [0.0, 1.0, 1.0],
                        aisle: Aisle::Hot,
                    },
                ],
            },
            alpha_true: vec![0.175],
            recirculation,
            fan_law_exponent: 1.0,
            ambient: 25.0,
            noise_sd: 0.0,
            seed: 0,
            crac_rated_flow: 2000.0,
            plume_weight: 0.5,
            tolerance: 1e-9,
            max_sweeps: 500,
        }
    }

    fn input(setpoint: f64, fan: f64, power: f64, alpha: f64) -> SystemInput {
        SystemInput {
            crac_setpoints: vec![setpoint],
            crac_fan_speeds: vec![fan],
            server_powers: vec![power],
            flow_rates: vec![alpha],
        }
    }

    #[test]
    fn single_server_hot_zone_reads_setpoint_plus_rise() {
        let sc = two_zone(0.0, 200.0);
        let out = zonal_solve(&sc, &input(20.0, 1.0, 200.0, 0.175)).unwrap();
        // κ/α = 1.74966/0.175 = 9.998.
        assert!((out.values[1] - 30.0).abs() < 0.01, "{:?}", out.values);
        assert!((out.values[0] - 20.0).abs() < 1e-6);
    }

    #[test]
    fn zero_power_gives_pure_crac_mix() {
        let case = reference_scenario(3);
        let mut state = case.state.clone();
        state.server_powers.iter_mut().for_each(|p| *p = 0.0);
        let x = SystemInput::new(&state, vec![0.2; 64]);
        let out = zonal_solve(&case.scenario, &x).unwrap();
        let lo = state
            .crac_setpoints
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let hi = state
            .crac_setpoints
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        for v in out.values {
            assert!(v >= lo - 1e-5 && v <= hi + 1e-5, "{v} outside [{lo}, {hi}]");
        }
        state.crac_setpoints.iter_mut().for_each(|t| *t = 19.0);
        let out = zonal_solve(&case.scenario, &SystemInput::new(&state, vec![0.2; 64])).unwrap();
        assert!(out.values.iter().all(|v| (v - 19.0).abs() < 1e-5));
    }

    #[test]
    fn doubling_fan_speed_halves_recirculated_share() {
        let r = 0.1;
        let sc = two_zone(r, 300.0);
        let solver = ZonalSolver::new(sc.clone()).unwrap();
        let slow = solver
            .recirculation_shares(&input(20.0, 0.5, 300.0, 0.2))
            .unwrap();
        let fast = solver
            .recirculation_shares(&input(20.0, 1.0, 300.0, 0.2))
            .unwrap();
        assert!((slow[0] - 2.0 * fast[0]).abs() < 1e-12);
        assert_eq!(slow[1], fast[1]);

        // Two-zone balance: T_h = T_c + (1-r)ρ, T_c = (1-f)T_s + f·T_h,
        // so the cold-zone rise is f(1-r)ρ/(1-f).
        let rho = KAPPA / 0.2;
        for (fan, f) in [(0.5, 0.2), (1.0, 0.1)] {
            let t = solver
                .zone_temperatures(&input(20.0, fan, 300.0, 0.2))
                .unwrap();
            let expected = f * (1.0 - r) * rho / (1.0 - f);
            assert!(
                (t[0] - 20.0 - expected).abs() < 1e-6,
                "{} vs {expected}",
                t[0] - 20.0
            );
        }
    }

    #[test]
    fn reference_converges_across_the_box() {
        let case = reference_scenario(0);
        for a in [0.01, 0.05, 0.2, 1.505, 3.0] {
            let x = SystemInput::new(&case.state, vec![a; 64]);
            zonal_solve(&case.scenario, &x).unwrap();
        }
        let x = SystemInput::new(&case.state, case.scenario.alpha_true.clone());
        zonal_solve(&case.scenario, &x).unwrap();
    }

    #[test]
    fn non_convergence_reported() {
        let mut sc = two_zone(0.5, 300.0);
        sc.max_sweeps = 2;
        let r = zonal_solve(&sc, &input(20.0, 1.0, 300.0, 0.2));
        assert!(matches!(r, Err(Error::NoConvergence { sweeps: 2, .. })));
    }

    #[test]
    fn invalid_inputs() {
        let sc = two_zone(0.1, 300.0);
        assert!(matches!(
            zonal_solve(&sc, &input(20.0, 1.0, 300.0, 0.0)),
            Err(Error::NonPositiveFlowRate { .. })
        ));
        assert!(matches!(
            zonal_solve(&sc, &input(20.0, -1.0, 300.0, 0.2)),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            zonal_solve(&sc, &input(20.0, 1.0, f64::NAN, 0.2)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn counter_and_determinism() {
        let case = reference_scenario(1);
        let mut solver = ZonalSolver::new(case.scenario.clone()).unwrap();
        let x = SystemInput::new(&case.state, vec![0.4; 64]);
        let a = solver.solve(&x).unwrap();
        let b = solver.solve(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(solver.calls(), 2);
        solver.evaluate(&x).unwrap();
        assert_eq!(solver.calls(), 2);
    }

    #[test]
    fn noiseless_measurements_equal_the_solve() {
        let mut case = reference_scenario(2);
        case.scenario.noise_sd = 0.0;
        let m = synthesize_measurements(&case.scenario, &case.state).unwrap();
        let x = SystemInput::new(&case.state, case.scenario.alpha_true.clone());
        assert_eq!(m.values, zonal_solve(&case.scenario, &x).unwrap().values);
        assert_eq!(m.role, SensorRole::Measurement);
    }

    #[test]
    fn measurement_noise_is_seeded_with_the_configured_spread() {
        let case = reference_scenario(4);
        let a = synthesize_measurements(&case.scenario, &case.state).unwrap();
        assert_eq!(
            a,
            synthesize_measurements(&case.scenario, &case.state).unwrap()
        );

        let mut clean = case.scenario.clone();
        clean.noise_sd = 0.0;
        let base = synthesize_measurements(&clean, &case.state).unwrap().values;
        let mut sc = case.scenario.clone();
        let mut sum_sq = 0.0;
        let mut count = 0.0;
        for seed in 0..1000 {
            sc.seed = seed;
            let m = synthesize_measurements(&sc, &case.state).unwrap();
            for (v, b) in m.values.iter().zip(&base) {
                sum_sq += (v - b).powi(2);
                count += 1.0;
            }
        }
        let sd = (sum_sq / count).sqrt();
        assert!((sd - 0.1).abs() <= 0.005, "empirical sd {sd}");
    }
}
