use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numeric::mix_seed;
use crate::Result;

use super::env::EnvironmentSpec;
use super::grid::GridSpec;
use super::integrate::{integrate_sde, Scheme, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Optimization,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Optimization, Split::Validation, Split::Test];

    pub fn tag(self) -> u64 {
        match self {
            Split::Optimization => 1,
            Split::Validation => 2,
            Split::Test => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Optimization => "optimization",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(text: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|s| s.name() == text)
    }
}

/// Descriptive metadata shared by every trajectory of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub environment: String,
    pub split: Split,
    pub parameters: BTreeMap<String, f64>,
    pub tau: f64,
    pub dt: f64,
    pub horizon: f64,
    pub state_dim: usize,
    pub feature_names: Vec<String>,
    pub grid: Option<GridSpec>,
    pub scheme: Scheme,
    pub master_seed: u64,
}

/// A batch of observed trajectories; all share τ, K and the state dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(info: DatasetInfo, trajectories: Vec<Trajectory>) -> Self {
        let ds = Dataset { info, trajectories };
        debug_assert!(ds.is_consistent());
        ds
    }

    pub fn is_consistent(&self) -> bool {
        let Some(first) = self.trajectories.first() else { return true };
        self.trajectories.iter().all(|t| {
            t.dim == self.info.state_dim && t.len() == first.len() && t.tau == self.info.tau && t.states.len() % t.dim == 0
        })
    }

    pub fn tau(&self) -> f64 {
        self.info.tau
    }

    pub fn state_dim(&self) -> usize {
        self.info.state_dim
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.info.grid.as_ref()
    }

    pub fn feature_count(&self) -> usize {
        self.info.feature_names.len()
    }

    /// Observations per trajectory minus one.
    pub fn steps(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.len().saturating_sub(1))
    }

    /// Shape `(trajectories, K + 1, N)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.trajectories.len(), self.steps() + 1, self.state_dim())
    }

    /// A dataset holding only the trajectories at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset { info: self.info.clone(), trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect() }
    }

    /// Leaf-feature values at every observation point, one column per feature.
    ///
    /// For SDEs the features are the state variables; for SPDEs each grid
    /// point of each observed field is a row, carrying the derived features.
    pub fn feature_columns(&self) -> Vec<Vec<f64>> {
        let obs: Vec<&[f64]> = self.trajectories.iter().flat_map(|t| t.states.chunks(t.dim)).collect();
        features_of_states(&obs, self.state_dim(), self.grid())
    }
}

/// Feature columns for a list of full states (SDE rows or SPDE fields).
pub fn features_of_states(states: &[&[f64]], dim: usize, grid: Option<&GridSpec>) -> Vec<Vec<f64>> {
    match grid {
        None => {
            let mut cols = vec![Vec::with_capacity(states.len()); dim];
            for s in states {
                for (c, v) in cols.iter_mut().zip(s.iter()) {
                    c.push(*v);
                }
            }
            cols
        }
        Some(g) => {
            let n = g.len();
            let mut cols = vec![vec![0.0; states.len() * n]; g.feature_count()];
            for (r, s) in states.iter().enumerate() {
                let mut refs: Vec<&mut [f64]> = cols.iter_mut().map(|c| &mut c[r * n..(r + 1) * n]).collect();
                g.features(s, &mut refs);
            }
            cols
        }
    }
}

/// Seed of trajectory `index` within `split`, derived from the master seed.
pub fn trajectory_seed(master_seed: u64, split: Split, index: usize) -> u64 {
    mix_seed(mix_seed(master_seed, split.tag()), index as u64)
}

/// Simulates one split of `env`.
pub fn generate_split(env: &EnvironmentSpec, master_seed: u64, split: Split, scheme: Scheme) -> Result<Dataset> {
    env.validate()?;
    let trajectories = (0..env.trajectories)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(trajectory_seed(master_seed, split, j));
            integrate_sde(env, &mut rng, scheme)
        })
        .collect::<Result<Vec<_>>>()?;
    let info = DatasetInfo {
        environment: env.name.clone(),
        split,
        parameters: env.parameters.clone(),
        tau: env.tau,
        dt: env.dt,
        horizon: env.horizon,
        state_dim: env.state_dim,
        feature_names: env.feature_names.clone(),
        grid: env.grid.clone(),
        scheme,
        master_seed,
    };
    Ok(Dataset::new(info, trajectories))
}

/// Optimization, validation and test sets with disjoint seed streams.
pub fn generate_splits(env: &EnvironmentSpec, master_seed: u64) -> Result<[Dataset; 3]> {
    generate_splits_with(env, master_seed, Scheme::EulerMaruyama)
}

pub fn generate_splits_with(env: &EnvironmentSpec, master_seed: u64, scheme: Scheme) -> Result<[Dataset; 3]> {
    Ok([
        generate_split(env, master_seed, Split::Optimization, scheme)?,
        generate_split(env, master_seed, Split::Validation, scheme)?,
        generate_split(env, master_seed, Split::Test, scheme)?,
    ])
}
