use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expr::LeafLaw;
use crate::fitness::{penalized, Objective};
use crate::{Error, Result};

use super::config::GpConfig;
use super::individual::Individual;
use super::optimize::optimize_constants;
use super::rank::nsga2_rank;
use super::variation::{crossover, init_population, mutate, tournament_select, CrossoverMode, Population};

/// Non-dominated members of the whole population at one generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontSnapshot {
    pub generation: usize,
    pub members: Vec<Individual>,
}

/// Everything needed to continue a run: written as the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    pub population: Population,
    pub history: Vec<FrontSnapshot>,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub population: Population,
    pub history: Vec<FrontSnapshot>,
}

impl Outcome {
    /// Front of the last evaluated generation.
    pub fn final_front(&self) -> &[Individual] {
        self.history.last().map_or(&[], |s| &s.members)
    }

    /// Non-dominated set over every archived front.
    pub fn hall_of_fame(&self) -> Vec<Individual> {
        pareto_front(self.history.iter().flat_map(|s| s.members.iter()))
    }

    pub fn best(&self) -> Option<&Individual> {
        self.final_front().first()
    }
}

/// Non-dominated individuals under (fitness, complexity), sorted by fitness.
/// Individuals with identical objectives are kept once.
pub fn pareto_front<'a>(inds: impl IntoIterator<Item = &'a Individual>) -> Vec<Individual> {
    let mut all: Vec<&Individual> = inds.into_iter().collect();
    all.sort_by(|a, b| a.fitness_or_worst().total_cmp(&b.fitness_or_worst()).then(a.complexity().cmp(&b.complexity())));
    let mut out: Vec<Individual> = Vec::new();
    let mut min_complexity = usize::MAX;
    for ind in all {
        if ind.complexity() < min_complexity {
            min_complexity = ind.complexity();
            out.push(ind.clone());
        }
    }
    out
}

/// Fresh run state: initial population and rng from `seed`.
pub fn start<O: Objective + ?Sized>(cfg: &GpConfig, objective: &O, seed: u64) -> Result<EvolutionState> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let population = init_population(&mut rng, cfg, objective.feature_count(), objective.roles());
    Ok(EvolutionState { population, history: Vec::new(), rng })
}

/// Runs the full algorithm from `seed`.
pub fn evolve<O: Objective + ?Sized>(cfg: &GpConfig, objective: &O, seed: u64) -> Result<Outcome> {
    let state = start(cfg, objective, seed)?;
    evolve_from(cfg, objective, state, None)
}

pub fn save_checkpoint(path: &Path, state: &EvolutionState) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, serde_json::to_vec(state)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EvolutionState> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// Continues `state` until `cfg.generations` reproduction rounds are done.
///
/// Each round evaluates new individuals, optimizes the constants of the `p*`
/// fittest, migrates when due, archives the population front and reproduces.
/// After the last round the population is evaluated and archived once more,
/// so zero generations returns the evaluated initial population. With a
/// checkpoint path the state is saved after every reproduction.
pub fn evolve_from<O: Objective + ?Sized>(
    cfg: &GpConfig,
    objective: &O,
    mut state: EvolutionState,
    checkpoint: Option<&Path>,
) -> Result<Outcome> {
    cfg.validate()?;
    if state.population.subpopulations.len() != cfg.subpopulations
        || state.population.size() != cfg.population_size
    {
        return Err(Error::Config("checkpoint population does not match the configuration".into()));
    }
    let law = LeafLaw::new(objective.feature_count());
    loop {
        evaluate(&mut state.population, objective, cfg);
        let gen = state.population.generation;
        if gen > 0 && gen % cfg.migration_interval == 0 {
            migrate(&mut state.population, cfg.migrants);
        }
        state.history.push(FrontSnapshot { generation: gen, members: pareto_front(state.population.iter()) });
        if gen >= cfg.generations {
            break;
        }
        reproduce(&mut state.population, cfg, &law, &mut state.rng)?;
        if let Some(path) = checkpoint {
            save_checkpoint(path, &state)?;
        }
    }
    Ok(Outcome { population: state.population, history: state.history })
}

/// Scores unevaluated individuals, then optimizes the constants of the `p*`
/// fittest that have not been optimized yet.
pub fn evaluate<O: Objective + ?Sized>(pop: &mut Population, objective: &O, cfg: &GpConfig) {
    let pending: Vec<&mut Individual> = pop.iter_mut().filter(|i| i.fitness.is_none()).collect();
    pending.into_par_iter().for_each(|ind| {
        ind.fitness = Some(penalized(objective.value(&ind.trees), ind.complexity()));
    });
    if cfg.opt_subset == 0 || cfg.opt_iters == 0 {
        return;
    }
    let mut order: Vec<(f64, usize)> =
        pop.iter().enumerate().filter(|(_, i)| !i.optimized).map(|(k, i)| (i.fitness_or_worst(), k)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut chosen = vec![false; pop.size()];
    for &(_, k) in order.iter().take(cfg.opt_subset) {
        chosen[k] = true;
    }
    let targets: Vec<&mut Individual> = pop.iter_mut().enumerate().filter(|(k, _)| chosen[*k]).map(|(_, i)| i).collect();
    targets.into_par_iter().for_each(|ind| {
        *ind = optimize_constants(ind, objective, cfg.opt_iters, cfg.step_size);
    });
}

/// Ring migration: the `k` fittest of each subpopulation replace the `k`
/// least fit of the next one.
pub fn migrate(pop: &mut Population, k: usize) {
    let s = pop.subpopulations.len();
    if s < 2 || k == 0 {
        return;
    }
    let by_fitness = |sub: &[Individual]| {
        let mut idx: Vec<usize> = (0..sub.len()).collect();
        idx.sort_by(|&a, &b| sub[a].objectives().0.total_cmp(&sub[b].objectives().0).then(a.cmp(&b)));
        idx
    };
    let emigrants: Vec<Vec<Individual>> = pop
        .subpopulations
        .iter()
        .map(|sub| by_fitness(sub).into_iter().take(k).map(|i| sub[i].clone()).collect())
        .collect();
    for (from, group) in emigrants.into_iter().enumerate() {
        let dest = &mut pop.subpopulations[(from + 1) % s];
        let order = by_fitness(dest);
        for (slot, ind) in order.into_iter().rev().zip(group) {
            dest[slot] = ind;
        }
    }
}

/// Elites of one ranked subpopulation: its first front, one individual per
/// distinct (fitness, complexity), at most `cap` by crowding distance.
fn elites(sub: &[Individual], ranks: &[(usize, f64)], cap: usize) -> Vec<Individual> {
    let mut front: Vec<usize> = (0..sub.len()).filter(|&i| ranks[i].0 == 0).collect();
    front.sort_by(|&a, &b| ranks[b].1.total_cmp(&ranks[a].1).then(a.cmp(&b)));
    let mut seen: Vec<(u64, usize)> = Vec::new();
    let mut out = Vec::new();
    for i in front {
        let key = (sub[i].fitness_or_worst().to_bits(), sub[i].complexity());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        out.push(sub[i].clone());
        if out.len() == cap {
            break;
        }
    }
    out
}

/// Replaces every subpopulation by its elites plus tournament-selected
/// offspring, keeping each subpopulation's size.
pub fn reproduce<R: Rng + ?Sized>(pop: &mut Population, cfg: &GpConfig, law: &LeafLaw, rng: &mut R) -> Result<()> {
    let probs = cfg.crossover_schedule();
    let per = cfg.subpopulation_size();
    let cap = (per / 4).max(1);
    for (s, sub) in pop.subpopulations.iter_mut().enumerate() {
        let objectives: Vec<(f64, usize)> = sub.iter().map(Individual::objectives).collect();
        let ranks = nsga2_rank(&objectives);
        let mut next = elites(sub, &ranks, cap);
        let trees = sub[0].trees.len();
        while next.len() < per {
            let a = &sub[tournament_select(rng, &ranks, cfg.tournament_size)];
            let child = if rng.random_bool(probs[s]) {
                let b = &sub[tournament_select(rng, &ranks, cfg.tournament_size)];
                let mode = if trees > 1 && rng.random_bool(cfg.whole_tree_prob) {
                    CrossoverMode::WholeTree
                } else {
                    CrossoverMode::Subtree
                };
                crossover(rng, a, b, mode, probs[s], cfg.max_nodes)?
            } else {
                mutate(rng, a, cfg.max_nodes, law)
            };
            next.push(child);
        }
        *sub = next;
    }
    pop.generation += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitness::{Role, SdeNll, TransitionData};

    fn toy_data() -> TransitionData {
        let xs: Vec<f64> = (0..200).map(|k| (k as f64 * 0.05).sin()).collect();
        TransitionData::from_series(&xs, 0.05)
    }

    fn small_cfg(g: usize) -> GpConfig {
        GpConfig {
            population_size: 40,
            generations: g,
            opt_subset: 8,
            opt_iters: 5,
            subpopulations: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_generations_evaluates_initial_population() {
        let data = toy_data();
        let obj = SdeNll::new(&data, 0);
        let out = evolve(&small_cfg(0), &obj, 3).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.population.generation, 0);
        assert!(out.population.iter().all(|i| i.fitness.is_some()));
    }

    #[test]
    fn size_is_kept_and_front_minimum_never_rises() {
        let data = toy_data();
        let obj = SdeNll::new(&data, 0);
        let cfg = small_cfg(8);
        let out = evolve(&cfg, &obj, 5).unwrap();
        assert_eq!(out.population.size(), 40);
        assert_eq!(out.history.len(), 9);
        let mins: Vec<f64> = out.history.iter().map(|s| s.members[0].fitness.unwrap()).collect();
        for w in mins.windows(2) {
            assert!(w[1] <= w[0], "{mins:?}");
        }
        for ind in out.population.iter() {
            assert!(ind.trees.iter().all(|t| t.size() <= cfg.max_nodes));
            assert_eq!(ind.roles, vec![Role::Drift(0), Role::Diffusion(0)]);
        }
    }

    #[test]
    fn same_seed_same_result() {
        let data = toy_data();
        let obj = SdeNll::new(&data, 0);
        let a = evolve(&small_cfg(4), &obj, 9).unwrap();
        let b = evolve(&small_cfg(4), &obj, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = toy_data();
        let obj = SdeNll::new(&data, 0);
        let full = evolve(&small_cfg(6), &obj, 21).unwrap();
        let dir = std::env::temp_dir().join(format!("symsde-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.json");
        let state = start(&small_cfg(3), &obj, 21).unwrap();
        evolve_from(&small_cfg(3), &obj, state, Some(&path)).unwrap();
        let resumed = evolve_from(&small_cfg(6), &obj, load_checkpoint(&path).unwrap(), None).unwrap();
        // The interrupted run archived generation 3 before stopping; the checkpoint predates it.
        assert_eq!(resumed, full);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn migration_moves_best_into_next_island() {
        let mk = |f: f64| {
            let mut i = Individual::new(vec![Role::Drift(0)], vec![crate::ExprTree::constant(f)]);
            i.fitness = Some(f);
            i
        };
        let mut pop = Population {
            subpopulations: vec![vec![mk(1.0), mk(2.0), mk(3.0)], vec![mk(10.0), mk(20.0), mk(30.0)]],
            generation: 0,
        };
        migrate(&mut pop, 1);
        let fit = |s: usize| -> Vec<f64> { pop.subpopulations[s].iter().map(|i| i.fitness.unwrap()).collect() };
        assert_eq!(fit(1), vec![10.0, 20.0, 1.0]);
        assert_eq!(fit(0), vec![1.0, 2.0, 10.0]);
    }
}
