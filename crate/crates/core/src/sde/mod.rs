//! Time integration of the slow-fast system and its relatives.

mod control;
mod integrator;
mod noise;
mod params;
mod trajectory;

pub use control::Control;
pub use integrator::{
    default_dt, simulate_auxiliary, simulate_controlled, simulate_frozen, simulate_slow_fast,
    step_grid, step_slow_fast, SimOptions, SlowFastRunner,
};
pub(crate) use integrator::{DeterministicRunner, FrozenRunner};
pub use noise::{stream, Bridge, Lane};
pub(crate) use params::coord_rates;
pub use params::{CouplingSpec, CouplingVariant, ModelParams, NoiseModel};
pub use trajectory::{read_snapshot, write_snapshot, EnergyBudget, Trajectory, SNAPSHOT_MAGIC};
