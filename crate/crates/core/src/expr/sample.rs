//! Random tree generation.

use rand::Rng;

use super::{ExprTree, Node};

/// Leaf and operator sampling law shared by initialisation and mutation.
#[derive(Clone, Copy, Debug)]
pub struct LeafLaw {
    pub feature_count: usize,
    /// Probability that a leaf is a variable rather than a constant.
    pub variable_prob: f64,
    /// Constants are drawn uniformly from `[-constant_range, constant_range]`.
    pub constant_range: f64,
}

impl LeafLaw {
    pub fn new(feature_count: usize) -> Self {
        LeafLaw { feature_count, variable_prob: 0.5, constant_range: 1.0 }
    }

    pub fn leaf<R: Rng + ?Sized>(&self, rng: &mut R) -> Node {
        if self.feature_count > 0 && rng.random_bool(self.variable_prob) {
            Node::Var(rng.random_range(0..self.feature_count) as u16)
        } else {
            Node::Const(rng.random_range(-self.constant_range..=self.constant_range))
        }
    }

    pub fn operator<R: Rng + ?Sized>(&self, rng: &mut R) -> Node {
        if rng.random_bool(0.5) {
            Node::Add
        } else {
            Node::Mul
        }
    }
}

/// "Grow" sampling: every node above the depth limit is an operator with
/// probability one half. The result has depth at most `max_depth`.
pub fn sample_tree<R: Rng + ?Sized>(rng: &mut R, max_depth: usize, feature_count: usize) -> ExprTree {
    grow(rng, max_depth, &LeafLaw::new(feature_count))
}

pub fn grow<R: Rng + ?Sized>(rng: &mut R, max_depth: usize, law: &LeafLaw) -> ExprTree {
    assert!(max_depth >= 1, "max_depth must be at least 1");
    let mut nodes = Vec::new();
    grow_into(rng, 1, max_depth, law, false, &mut nodes);
    ExprTree::from_nodes(nodes).expect("generator emits valid preorder")
}

/// "Full" sampling: every branch reaches exactly `depth` levels.
pub fn full<R: Rng + ?Sized>(rng: &mut R, depth: usize, law: &LeafLaw) -> ExprTree {
    assert!(depth >= 1, "depth must be at least 1");
    let mut nodes = Vec::new();
    grow_into(rng, 1, depth, law, true, &mut nodes);
    ExprTree::from_nodes(nodes).expect("generator emits valid preorder")
}

fn grow_into<R: Rng + ?Sized>(
    rng: &mut R,
    level: usize,
    max_depth: usize,
    law: &LeafLaw,
    full: bool,
    out: &mut Vec<Node>,
) {
    let operator = level < max_depth && (full || rng.random_bool(0.5));
    if operator {
        out.push(law.operator(rng));
        grow_into(rng, level + 1, max_depth, law, full, out);
        grow_into(rng, level + 1, max_depth, law, full, out);
    } else {
        out.push(law.leaf(rng));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_one_is_always_a_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let t = sample_tree(&mut rng, 1, 3);
            assert_eq!(t.size(), 1);
        }
    }

    #[test]
    fn depth_bound_respected_and_reached() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut max_seen = 0;
        for _ in 0..10_000 {
            let t = sample_tree(&mut rng, 5, 2);
            assert!(t.depth() <= 5);
            max_seen = max_seen.max(t.depth());
        }
        assert!(max_seen >= 4, "max observed depth {max_seen}");
    }

    #[test]
    fn single_feature_never_references_x1() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5000 {
            let t = sample_tree(&mut rng, 5, 1);
            assert!(t.max_variable().is_none_or(|j| j == 0));
        }
    }

    #[test]
    fn full_trees_are_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let law = LeafLaw::new(2);
        for d in 1..=5 {
            let t = full(&mut rng, d, &law);
            assert_eq!(t.depth(), d);
            assert_eq!(t.size(), (1 << d) - 1);
        }
    }

    #[test]
    fn constants_within_initialisation_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let t = sample_tree(&mut rng, 4, 1);
            assert!(t.constants().iter().all(|c| (-1.0..=1.0).contains(c)));
        }
    }
}
