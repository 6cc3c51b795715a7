//! Multi-tree genetic programming with NSGA-II selection, island
//! subpopulations and gradient-based constant refinement.

mod config;
mod engine;
mod individual;
mod optimize;
mod rank;
mod variation;

pub use config::GpConfig;
pub use engine::{
    evaluate, evolve, evolve_from, load_checkpoint, migrate, pareto_front, reproduce, save_checkpoint, start,
    EvolutionState, FrontSnapshot, Outcome,
};
pub use individual::Individual;
pub use optimize::{central_difference, optimize_constants};
pub use rank::{dominates, nsga2_rank, rank_order};
pub use variation::{
    crossover, init_population, mutate, mutate_tree_with, subtree_crossover, tournament_select,
    whole_tree_crossover_at, CrossoverMode, MutationKind, Population, RETRIES,
};
