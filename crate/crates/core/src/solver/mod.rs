//! Expensive-model stand-ins behind one interface: the zonal simulator and a file-based
//! bridge to external solvers.

mod external;
mod scenario;
mod zonal;

use crate::error::Result;
use crate::hall::{SensorVector, SystemInput};

pub use external::{ExternalConfig, ExternalSolver};
pub use scenario::{
    generate_case, identifiable_scenario, reference_scenario, GeneratedCase, HallSizes, Scenario,
};
pub use zonal::{synthesize_measurements, zonal_solve, ZonalSolver};

/// An opaque, expensive map from system input to sensor temperatures.
pub trait ThermalSolver {
    fn solve(&mut self, x: &SystemInput) -> Result<SensorVector>;

    /// Number of `solve` invocations so far.
    fn calls(&self) -> usize;
}

impl<T: ThermalSolver + ?Sized> ThermalSolver for &mut T {
    fn solve(&mut self, x: &SystemInput) -> Result<SensorVector> {
        (**self).solve(x)
    }

    fn calls(&self) -> usize {
        (**self).calls()
    }
}

impl<T: ThermalSolver + ?Sized> ThermalSolver for Box<T> {
    fn solve(&mut self, x: &SystemInput) -> Result<SensorVector> {
        (**self).solve(x)
    }

    fn calls(&self) -> usize {
        (**self).calls()
    }
}
