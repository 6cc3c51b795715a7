use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::expr::{full, grow, ExprTree, LeafLaw, Node};
use crate::fitness::Role;
use crate::{Error, Result};

use super::config::GpConfig;
use super::individual::Individual;
use super::rank::rank_order;

/// Attempts at a size-respecting variation before falling back to the parent.
pub const RETRIES: usize = 8;

/// Individuals split into islands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub subpopulations: Vec<Vec<Individual>>,
    pub generation: usize,
}

impl Population {
    pub fn size(&self) -> usize {
        self.subpopulations.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Individual> {
        self.subpopulations.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Individual> {
        self.subpopulations.iter_mut().flatten()
    }
}

/// Ramped half-and-half tree: depth cycles over `2..=m`, alternating full and
/// grow; trees larger than `max_nodes` are resampled.
fn ramped_tree<R: Rng + ?Sized>(rng: &mut R, slot: usize, cfg: &GpConfig, law: &LeafLaw) -> ExprTree {
    let lo = 2.min(cfg.max_depth);
    let span = cfg.max_depth - lo + 1;
    let depth = lo + (slot / 2) % span;
    let use_full = slot % 2 == 0 && (1usize << depth.min(62)) - 1 <= cfg.max_nodes;
    loop {
        let t = if use_full { full(rng, depth, law) } else { grow(rng, depth, law) };
        if t.size() <= cfg.max_nodes {
            return t;
        }
    }
}

/// `p` individuals with the given tree layout, evenly split into subpopulations.
pub fn init_population<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &GpConfig,
    feature_count: usize,
    roles: &[Role],
) -> Population {
    let law = LeafLaw::new(feature_count);
    let per = cfg.subpopulation_size();
    let subpopulations = (0..cfg.subpopulations)
        .map(|s| {
            (0..per)
                .map(|i| {
                    let slot = s * per + i;
                    let trees = (0..roles.len()).map(|t| ramped_tree(rng, slot + t, cfg, &law)).collect();
                    Individual::new(roles.to_vec(), trees)
                })
                .collect()
        })
        .collect();
    Population { subpopulations, generation: 0 }
}

/// Index of the tournament winner among `size` distinct contestants.
/// Better means lower front, then larger crowding; ties are broken at random.
pub fn tournament_select<R: Rng + ?Sized>(rng: &mut R, ranks: &[(usize, f64)], size: usize) -> usize {
    assert!(!ranks.is_empty(), "tournament over an empty subpopulation");
    let k = size.clamp(1, ranks.len());
    let contestants = rand::seq::index::sample(rng, ranks.len(), k);
    let mut best: Vec<usize> = Vec::with_capacity(k);
    for i in contestants.iter() {
        match best.first() {
            None => best.push(i),
            Some(&b) => match rank_order(ranks[i], ranks[b]) {
                std::cmp::Ordering::Less => {
                    best.clear();
                    best.push(i);
                }
                std::cmp::Ordering::Equal => best.push(i),
                std::cmp::Ordering::Greater => {}
            },
        }
    }
    *best.choose(rng).expect("at least one contestant")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossoverMode {
    Subtree,
    WholeTree,
}

fn check_layout(a: &Individual, b: &Individual) -> Result<()> {
    if a.roles != b.roles {
        return Err(Error::Config("crossover parents have different tree layouts".into()));
    }
    Ok(())
}

/// Inserts a random subtree of `donor` at a random node of `target`,
/// retrying on size violations and falling back to `target`.
pub fn subtree_crossover<R: Rng + ?Sized>(
    rng: &mut R,
    target: &ExprTree,
    donor: &ExprTree,
    max_nodes: usize,
) -> ExprTree {
    for _ in 0..RETRIES {
        let i = rng.random_range(0..target.size());
        let j = rng.random_range(0..donor.size());
        let child = target.replace_subtree(i, &donor.subtree(j));
        if child.size() <= max_nodes {
            return child;
        }
    }
    target.clone()
}

/// Child of `a` with the tree at `position` taken from `b`.
pub fn whole_tree_crossover_at(a: &Individual, b: &Individual, position: usize) -> Result<Individual> {
    check_layout(a, b)?;
    let mut trees = a.trees.clone();
    trees[position] = b.trees[position].clone();
    Ok(a.with_trees(trees))
}

/// Crossover of position-matched trees. In subtree mode every position is
/// crossed with probability `prob` (at least one position always is).
pub fn crossover<R: Rng + ?Sized>(
    rng: &mut R,
    a: &Individual,
    b: &Individual,
    mode: CrossoverMode,
    prob: f64,
    max_nodes: usize,
) -> Result<Individual> {
    check_layout(a, b)?;
    let n = a.trees.len();
    match mode {
        CrossoverMode::WholeTree => whole_tree_crossover_at(a, b, rng.random_range(0..n)),
        CrossoverMode::Subtree => {
            let mut chosen: Vec<bool> = (0..n).map(|_| rng.random_bool(prob)).collect();
            if !chosen.iter().any(|&c| c) {
                chosen[rng.random_range(0..n)] = true;
            }
            let trees = (0..n)
                .map(|t| {
                    if chosen[t] {
                        subtree_crossover(rng, &a.trees[t], &b.trees[t], max_nodes)
                    } else {
                        a.trees[t].clone()
                    }
                })
                .collect();
            Ok(a.with_trees(trees))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MutationKind {
    OperatorSwap,
    LeafReplace,
    Insert,
    Delete,
    SubtreeReplace,
}

impl MutationKind {
    pub const ALL: [MutationKind; 5] = [
        MutationKind::OperatorSwap,
        MutationKind::LeafReplace,
        MutationKind::Insert,
        MutationKind::Delete,
        MutationKind::SubtreeReplace,
    ];
}

/// Applies one mutation of `kind` at a random applicable node, or `None` if
/// the tree has no such node.
pub fn mutate_tree_with<R: Rng + ?Sized>(
    rng: &mut R,
    tree: &ExprTree,
    kind: MutationKind,
    law: &LeafLaw,
) -> Option<ExprTree> {
    let ops: Vec<usize> = (0..tree.size()).filter(|&i| tree.nodes()[i].is_operator()).collect();
    let any = rng.random_range(0..tree.size());
    match kind {
        MutationKind::OperatorSwap => {
            let &i = ops.choose(rng)?;
            let flipped = if matches!(tree.nodes()[i], Node::Add) { Node::Mul } else { Node::Add };
            Some(tree.with_node(i, flipped))
        }
        MutationKind::LeafReplace => {
            let leaves: Vec<usize> = (0..tree.size()).filter(|&i| !tree.nodes()[i].is_operator()).collect();
            let &i = leaves.choose(rng)?;
            Some(tree.with_node(i, law.leaf(rng)))
        }
        MutationKind::Insert => {
            let sub = tree.subtree(any);
            let leaf = ExprTree::from_nodes(vec![law.leaf(rng)]).expect("leaf");
            let (l, r) = if rng.random_bool(0.5) { (sub, leaf) } else { (leaf, sub) };
            let wrapped = if matches!(law.operator(rng), Node::Add) { ExprTree::add(l, r) } else { ExprTree::mul(l, r) };
            Some(tree.replace_subtree(any, &wrapped))
        }
        MutationKind::Delete => {
            let &i = ops.choose(rng)?;
            let (l, r) = tree.children(i).expect("operator has children");
            let keep = if rng.random_bool(0.5) { l } else { r };
            Some(tree.replace_subtree(i, &tree.subtree(keep)))
        }
        MutationKind::SubtreeReplace => Some(tree.replace_subtree(any, &grow(rng, 2, law))),
    }
}

/// Mutates each tree with probability `1/n` (at least one tree), choosing the
/// mutation kind uniformly. A tree whose mutation keeps exceeding `max_nodes`
/// is left unchanged.
pub fn mutate<R: Rng + ?Sized>(rng: &mut R, ind: &Individual, max_nodes: usize, law: &LeafLaw) -> Individual {
    let n = ind.trees.len();
    let mut chosen: Vec<bool> = (0..n).map(|_| rng.random_bool(1.0 / n as f64)).collect();
    if !chosen.iter().any(|&c| c) {
        chosen[rng.random_range(0..n)] = true;
    }
    let trees = ind
        .trees
        .iter()
        .zip(&chosen)
        .map(|(t, &c)| {
            if !c {
                return t.clone();
            }
            for _ in 0..RETRIES {
                let kind = *MutationKind::ALL.choose(rng).expect("non-empty");
                if let Some(m) = mutate_tree_with(rng, t, kind, law) {
                    if m.size() <= max_nodes {
                        return m;
                    }
                }
            }
            t.clone()
        })
        .collect();
    ind.with_trees(trees)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(p: usize, subs: usize) -> GpConfig {
        GpConfig { population_size: p, subpopulations: subs, opt_subset: 0, migrants: 0, ..Default::default() }
    }

    #[test]
    fn even_split_into_subpopulations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pop = init_population(&mut rng, &cfg(4, 2), 1, &[Role::Drift(0), Role::Diffusion(0)]);
        let sizes: Vec<usize> = pop.subpopulations.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2]);
        for ind in pop.iter() {
            assert_eq!(ind.roles, vec![Role::Drift(0), Role::Diffusion(0)]);
        }
    }

    #[test]
    fn initial_depth_and_size_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cfg(500, 5);
        let pop = init_population(&mut rng, &c, 3, &[Role::Drift(0)]);
        assert_eq!(pop.size(), 500);
        assert!(pop.iter().all(|i| i.trees[0].depth() <= 5 && i.trees[0].size() <= 15));
        assert!(pop.iter().any(|i| i.trees[0].depth() >= 4));
    }

    #[test]
    fn full_tournament_returns_front_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ranks = [(1, 0.5), (0, 1.0), (2, 3.0), (1, 9.0)];
        for _ in 0..100 {
            assert_eq!(tournament_select(&mut rng, &ranks, 4), 1);
        }
    }

    #[test]
    fn unit_tournament_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ranks = [(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)];
        let mut counts = [0usize; 4];
        for _ in 0..40_000 {
            counts[tournament_select(&mut rng, &ranks, 1)] += 1;
        }
        assert!(counts.iter().all(|&c| (c as f64 / 10_000.0 - 1.0).abs() < 0.05));
    }

    #[test]
    fn whole_tree_takes_position_from_second_parent() {
        let t = |s: &str| parse(s, &["x".to_string()]).unwrap();
        let roles = vec![Role::Drift(0), Role::Diffusion(0)];
        let a = Individual::new(roles.clone(), vec![t("x"), t("1")]);
        let b = Individual::new(roles, vec![t("x*x"), t("2")]);
        let c = whole_tree_crossover_at(&a, &b, 1).unwrap();
        assert_eq!(c.trees, vec![t("x"), t("2")]);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let a = Individual::new(vec![Role::Drift(0)], vec![ExprTree::variable(0)]);
        let b = Individual::new(vec![Role::Diffusion(0)], vec![ExprTree::variable(0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(crossover(&mut rng, &a, &b, CrossoverMode::Subtree, 1.0, 15).is_err());
    }

    #[test]
    fn self_crossover_of_leaves_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Individual::new(vec![Role::Drift(0)], vec![ExprTree::variable(0)]);
        let c = crossover(&mut rng, &a, &a, CrossoverMode::Subtree, 1.0, 15).unwrap();
        assert_eq!(c.trees, a.trees);
    }

    #[test]
    fn operator_swap_and_deletion() {
        let n = crate::expr::default_names(2);
        let law = LeafLaw::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = parse("x0 + x1", &n).unwrap();
        let s = mutate_tree_with(&mut rng, &t, MutationKind::OperatorSwap, &law).unwrap();
        assert_eq!(s, parse("x0 * x1", &n).unwrap());
        let t = ExprTree::mul(ExprTree::variable(0), ExprTree::constant(0.7));
        let mut seen = [false; 2];
        for _ in 0..50 {
            let d = mutate_tree_with(&mut rng, &t, MutationKind::Delete, &law).unwrap();
            match d.nodes() {
                [Node::Var(0)] => seen[0] = true,
                [Node::Const(c)] if *c == 0.7 => seen[1] = true,
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!(seen[0] && seen[1]);
        let leaf = ExprTree::variable(1);
        assert!(mutate_tree_with(&mut rng, &leaf, MutationKind::OperatorSwap, &law).is_none());
        assert!(mutate_tree_with(&mut rng, &leaf, MutationKind::Delete, &law).is_none());
    }
}
