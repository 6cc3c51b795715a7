use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Genetic-programming hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Population size `p`.
    pub population_size: usize,
    /// Generations `g`.
    pub generations: usize,
    /// Maximum depth `m` of freshly sampled trees.
    pub max_depth: usize,
    /// Maximum node count `s` of any tree after reproduction.
    pub max_nodes: usize,
    /// Individuals per generation whose constants are optimized (`p*`).
    pub opt_subset: usize,
    /// Optimizer iterations per individual (`g*`).
    pub opt_iters: usize,
    /// Optimizer step size `η`.
    pub step_size: f64,
    pub subpopulations: usize,
    pub migration_interval: usize,
    pub migrants: usize,
    pub tournament_size: usize,
    /// Crossover probability per subpopulation; mutation takes the rest.
    /// Empty means linearly spaced from 0.9 down to 0.5.
    pub crossover_probs: Vec<f64>,
    /// Chance that a crossover swaps whole trees (multi-tree individuals only).
    pub whole_tree_prob: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            population_size: 500,
            generations: 50,
            max_depth: 5,
            max_nodes: 15,
            opt_subset: 100,
            opt_iters: 15,
            step_size: 0.1,
            subpopulations: 5,
            migration_interval: 5,
            migrants: 2,
            tournament_size: 5,
            crossover_probs: Vec::new(),
            whole_tree_prob: 0.5,
        }
    }
}

impl GpConfig {
    /// Table-style row `(p, g, m, s, p*, g*, η)` with the remaining defaults.
    pub fn from_row(p: usize, g: usize, m: usize, s: usize, p_star: usize, g_star: usize, eta: f64) -> Self {
        GpConfig {
            population_size: p,
            generations: g,
            max_depth: m,
            max_nodes: s,
            opt_subset: p_star,
            opt_iters: g_star,
            step_size: eta,
            ..Default::default()
        }
    }

    pub fn subpopulation_size(&self) -> usize {
        self.population_size / self.subpopulations.max(1)
    }

    /// Crossover probability of each subpopulation.
    pub fn crossover_schedule(&self) -> Vec<f64> {
        if !self.crossover_probs.is_empty() {
            return self.crossover_probs.clone();
        }
        let s = self.subpopulations;
        if s == 1 {
            return vec![0.7];
        }
        (0..s).map(|i| 0.9 - 0.4 * i as f64 / (s - 1) as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.population_size == 0 || self.subpopulations == 0 {
            return fail("population size and subpopulation count must be positive");
        }
        if self.population_size % self.subpopulations != 0 {
            return fail("subpopulation count must divide the population size");
        }
        if self.subpopulation_size() < 2 {
            return fail("each subpopulation needs at least two individuals");
        }
        if self.opt_subset > self.population_size {
            return fail("opt_subset must not exceed the population size");
        }
        if self.max_depth == 0 || self.max_nodes == 0 || self.tournament_size == 0 {
            return fail("max_depth, max_nodes and tournament_size must be positive");
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return fail("step_size must be a non-negative number");
        }
        if self.migration_interval == 0 {
            return fail("migration_interval must be positive");
        }
        if self.migrants >= self.subpopulation_size() {
            return fail("migrants must be fewer than the subpopulation size");
        }
        let probs = self.crossover_schedule();
        if probs.len() != self.subpopulations {
            return fail("one crossover probability per subpopulation is required");
        }
        if probs.iter().chain(std::iter::once(&self.whole_tree_prob)).any(|p| !(0.0..=1.0).contains(p)) {
            return fail("probabilities must lie in [0, 1]");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_spans_point_nine_to_point_five() {
        let c = GpConfig::default();
        let s = c.crossover_schedule();
        assert_eq!(s.len(), 5);
        assert!((s[0] - 0.9).abs() < 1e-12 && (s[4] - 0.5).abs() < 1e-12);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            GpConfig { opt_subset: 600, ..Default::default() },
            GpConfig { population_size: 501, ..Default::default() },
            GpConfig { crossover_probs: vec![0.5; 4], ..Default::default() },
            GpConfig { crossover_probs: vec![1.5; 5], ..Default::default() },
            GpConfig { max_depth: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }
}
