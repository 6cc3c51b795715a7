//! Ground-truth environments, SDE/SPDE integrators and observed datasets.

mod dataset;
mod env;
mod grid;
mod integrate;
pub mod io;

pub use dataset::{
    features_of_states, generate_split, generate_splits, generate_splits_with, trajectory_seed, Dataset, DatasetInfo,
    Split,
};
pub use env::{make_environment, EnvOverrides, EnvironmentSpec, InitialCondition, ENVIRONMENTS};
pub use grid::GridSpec;
pub use integrate::{integrate_sde, integrate_spde, Scheme, System, Trajectory, BLOW_UP, MAX_ATTEMPTS};
