use serde::{Deserialize, Serialize};

use crate::expr::ExprTree;
use crate::fitness::Role;

/// A multi-tree candidate. `fitness` is `None` until evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub roles: Vec<Role>,
    pub trees: Vec<ExprTree>,
    pub fitness: Option<f64>,
    /// Set once constant optimization has run on the current trees.
    #[serde(default)]
    pub optimized: bool,
}

impl Individual {
    pub fn new(roles: Vec<Role>, trees: Vec<ExprTree>) -> Self {
        assert_eq!(roles.len(), trees.len(), "one role per tree");
        Individual { roles, trees, fitness: None, optimized: false }
    }

    /// Total node count across trees.
    pub fn complexity(&self) -> usize {
        self.trees.iter().map(ExprTree::size).sum()
    }

    /// Fitness for ranking; unevaluated individuals rank last.
    pub fn fitness_or_worst(&self) -> f64 {
        self.fitness.unwrap_or(f64::INFINITY)
    }

    pub fn objectives(&self) -> (f64, usize) {
        (self.fitness_or_worst(), self.complexity())
    }

    pub fn tree(&self, role: Role) -> Option<&ExprTree> {
        self.roles.iter().position(|r| *r == role).map(|i| &self.trees[i])
    }

    /// Copy with `trees` replaced; cached fitness is kept only if nothing changed.
    pub fn with_trees(&self, trees: Vec<ExprTree>) -> Individual {
        if trees == self.trees {
            return self.clone();
        }
        Individual::new(self.roles.clone(), trees)
    }

    pub fn constants(&self) -> Vec<f64> {
        self.trees.iter().flat_map(|t| t.constants()).collect()
    }

    /// Replaces all constants (concatenated tree by tree in preorder).
    pub fn with_constants(&self, values: &[f64]) -> Vec<ExprTree> {
        let mut at = 0;
        self.trees
            .iter()
            .map(|t| {
                let n = t.constant_count();
                let out = t.with_constants(&values[at..at + n]);
                at += n;
                out
            })
            .collect()
    }
}
