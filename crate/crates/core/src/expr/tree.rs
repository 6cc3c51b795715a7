use serde::{Deserialize, Serialize};

use super::ExprError;

/// Number of points processed per block by the column evaluators.
pub(crate) const CHUNK: usize = 256;

/// A node of an expression tree stored in preorder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Add,
    Mul,
    Var(u16),
    Const(f64),
}

impl Node {
    #[inline]
    pub fn arity(&self) -> usize {
        match self {
            Node::Add | Node::Mul => 2,
            Node::Var(_) | Node::Const(_) => 0,
        }
    }

    #[inline]
    pub fn is_operator(&self) -> bool {
        self.arity() == 2
    }
}

/// Parse tree of a scalar function, stored as a flat preorder array.
///
/// The left child of the operator at index `i` sits at `i + 1`; the right
/// child follows the end of the left subtree. Trees are immutable: every
/// structural edit returns a new tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Node>", into = "Vec<Node>")]
pub struct ExprTree {
    nodes: Vec<Node>,
}

impl TryFrom<Vec<Node>> for ExprTree {
    type Error = ExprError;

    fn try_from(nodes: Vec<Node>) -> Result<Self, Self::Error> {
        ExprTree::from_nodes(nodes)
    }
}

impl From<ExprTree> for Vec<Node> {
    fn from(t: ExprTree) -> Self {
        t.nodes
    }
}

impl ExprTree {
    pub fn constant(value: f64) -> Self {
        ExprTree { nodes: vec![Node::Const(value)] }
    }

    pub fn variable(index: usize) -> Self {
        ExprTree { nodes: vec![Node::Var(index as u16)] }
    }

    pub fn add(left: ExprTree, right: ExprTree) -> Self {
        Self::binary(Node::Add, left, right)
    }

    pub fn mul(left: ExprTree, right: ExprTree) -> Self {
        Self::binary(Node::Mul, left, right)
    }

    fn binary(op: Node, left: ExprTree, right: ExprTree) -> Self {
        debug_assert!(op.is_operator());
        let mut nodes = Vec::with_capacity(1 + left.nodes.len() + right.nodes.len());
        nodes.push(op);
        nodes.extend_from_slice(&left.nodes);
        nodes.extend_from_slice(&right.nodes);
        ExprTree { nodes }
    }

    /// Validates a preorder node list.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self, ExprError> {
        if nodes.is_empty() {
            return Err(ExprError::Structure("empty node list".into()));
        }
        // Number of subtrees still expected to start.
        let mut open = 1usize;
        for (i, n) in nodes.iter().enumerate() {
            if open == 0 {
                return Err(ExprError::Structure(format!("trailing nodes after index {}", i - 1)));
            }
            open = open - 1 + n.arity();
        }
        if open != 0 {
            return Err(ExprError::Structure("incomplete tree".into()));
        }
        Ok(ExprTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Node count.
    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// Number of levels; a single leaf has depth 1.
    pub fn depth(&self) -> usize {
        let mut max = 0;
        // Stack of remaining children per open level.
        let mut stack: Vec<usize> = Vec::with_capacity(16);
        for n in &self.nodes {
            let level = stack.len() + 1;
            max = max.max(level);
            if let Some(top) = stack.last_mut() {
                *top -= 1;
            }
            if n.is_operator() {
                stack.push(2);
            } else {
                while let Some(&0) = stack.last() {
                    stack.pop();
                }
            }
        }
        max
    }

    /// One past the last index of the subtree rooted at `start`.
    pub fn subtree_end(&self, start: usize) -> usize {
        let mut open = 1usize;
        let mut i = start;
        while open > 0 {
            open = open - 1 + self.nodes[i].arity();
            i += 1;
        }
        i
    }

    pub fn subtree(&self, start: usize) -> ExprTree {
        ExprTree { nodes: self.nodes[start..self.subtree_end(start)].to_vec() }
    }

    /// Returns a copy with the subtree at `start` replaced by `replacement`.
    pub fn replace_subtree(&self, start: usize, replacement: &ExprTree) -> ExprTree {
        let end = self.subtree_end(start);
        let mut nodes = Vec::with_capacity(self.nodes.len() - (end - start) + replacement.size());
        nodes.extend_from_slice(&self.nodes[..start]);
        nodes.extend_from_slice(&replacement.nodes);
        nodes.extend_from_slice(&self.nodes[end..]);
        ExprTree { nodes }
    }

    /// Returns a copy with a single node replaced by another of equal arity.
    pub fn with_node(&self, index: usize, node: Node) -> ExprTree {
        assert_eq!(self.nodes[index].arity(), node.arity(), "arity must be preserved");
        let mut nodes = self.nodes.clone();
        nodes[index] = node;
        ExprTree { nodes }
    }

    /// `(left, right)` child indices of the operator at `index`.
    pub fn children(&self, index: usize) -> Option<(usize, usize)> {
        if !self.nodes[index].is_operator() {
            return None;
        }
        let left = index + 1;
        Some((left, self.subtree_end(left)))
    }

    /// Largest variable index referenced, if any.
    pub fn max_variable(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Var(j) => Some(*j as usize),
                _ => None,
            })
            .max()
    }

    pub fn constants(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Const(c) => Some(*c),
                _ => None,
            })
            .collect()
    }

    pub fn constant_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Const(_))).count()
    }

    /// Replaces constants in preorder. `values` must hold exactly
    /// [`constant_count`](Self::constant_count) entries.
    pub fn with_constants(&self, values: &[f64]) -> ExprTree {
        assert_eq!(values.len(), self.constant_count());
        let mut it = values.iter();
        let nodes = self
            .nodes
            .iter()
            .map(|n| match n {
                Node::Const(_) => Node::Const(*it.next().unwrap()),
                other => *other,
            })
            .collect();
        ExprTree { nodes }
    }

    /// Evaluates the tree at a single point.
    pub fn eval(&self, features: &[f64]) -> f64 {
        let mut i = 0;
        self.eval_at(&mut i, features)
    }

    fn eval_at(&self, i: &mut usize, x: &[f64]) -> f64 {
        let node = self.nodes[*i];
        *i += 1;
        match node {
            Node::Const(c) => c,
            Node::Var(j) => x[j as usize],
            Node::Add => {
                let a = self.eval_at(i, x);
                a + self.eval_at(i, x)
            }
            Node::Mul => {
                let a = self.eval_at(i, x);
                a * self.eval_at(i, x)
            }
        }
    }

    /// Checked point evaluation.
    pub fn try_eval(&self, features: &[f64]) -> Result<f64, ExprError> {
        if let Some(j) = self.max_variable() {
            if j >= features.len() {
                return Err(ExprError::VariableOutOfRange { index: j, available: features.len() });
            }
        }
        Ok(self.eval(features))
    }

    /// Evaluates the tree on column-major data: `columns[j][k]` is feature
    /// `j` of point `k`. Writes one value per point into `out`.
    pub fn eval_columns(&self, columns: &[&[f64]], out: &mut [f64]) {
        let n = out.len();
        if let [Node::Const(c)] = self.nodes[..] {
            out.fill(c);
            return;
        }
        if let [Node::Var(j)] = self.nodes[..] {
            out.copy_from_slice(&columns[j as usize][..n]);
            return;
        }
        let mut stack = vec![[0.0f64; CHUNK]; self.stack_need()];
        let mut start = 0;
        while start < n {
            let len = CHUNK.min(n - start);
            let mut sp = 0usize;
            for node in self.nodes.iter().rev() {
                match *node {
                    Node::Var(j) => {
                        stack[sp][..len].copy_from_slice(&columns[j as usize][start..start + len]);
                        sp += 1;
                    }
                    Node::Const(c) => {
                        stack[sp][..len].fill(c);
                        sp += 1;
                    }
                    Node::Add | Node::Mul => {
                        // Reversed preorder: the top holds the left operand.
                        let (lo, hi) = stack.split_at_mut(sp - 1);
                        let left = &hi[0];
                        let right = &mut lo[sp - 2];
                        if matches!(node, Node::Add) {
                            for k in 0..len {
                                right[k] += left[k];
                            }
                        } else {
                            for k in 0..len {
                                right[k] *= left[k];
                            }
                        }
                        sp -= 1;
                    }
                }
            }
            out[start..start + len].copy_from_slice(&stack[0][..len]);
            start += len;
        }
    }

    fn stack_need(&self) -> usize {
        let mut sp = 0usize;
        let mut max = 0usize;
        for node in self.nodes.iter().rev() {
            if node.is_operator() {
                sp -= 1;
            } else {
                sp += 1;
            }
            max = max.max(sp);
        }
        max
    }

    /// Reverse-mode gradient of `Σ_k seed[k] · tree(x_k)` with respect to the
    /// tree's constants (preorder). Results are added into `grad`.
    pub fn accumulate_constant_gradient(&self, columns: &[&[f64]], seed: &[f64], grad: &mut [f64]) {
        let n_nodes = self.nodes.len();
        assert_eq!(grad.len(), self.constant_count());
        if grad.is_empty() {
            return;
        }
        let n = seed.len();
        // Child indices and the constant slot of each node.
        let mut kids = vec![(0usize, 0usize); n_nodes];
        let mut slot = vec![usize::MAX; n_nodes];
        let mut next_slot = 0;
        for i in 0..n_nodes {
            if let Some(c) = self.children(i) {
                kids[i] = c;
            }
            if matches!(self.nodes[i], Node::Const(_)) {
                slot[i] = next_slot;
                next_slot += 1;
            }
        }
        let mut vals = vec![[0.0f64; CHUNK]; n_nodes];
        let mut adj = vec![[0.0f64; CHUNK]; n_nodes];
        let mut start = 0;
        while start < n {
            let len = CHUNK.min(n - start);
            for i in (0..n_nodes).rev() {
                match self.nodes[i] {
                    Node::Var(j) => vals[i][..len].copy_from_slice(&columns[j as usize][start..start + len]),
                    Node::Const(c) => vals[i][..len].fill(c),
                    op => {
                        let (l, r) = kids[i];
                        let (head, tail) = vals.split_at_mut(i + 1);
                        let dst = &mut head[i];
                        let (lv, rv) = (&tail[l - i - 1], &tail[r - i - 1]);
                        if matches!(op, Node::Add) {
                            for k in 0..len {
                                dst[k] = lv[k] + rv[k];
                            }
                        } else {
                            for k in 0..len {
                                dst[k] = lv[k] * rv[k];
                            }
                        }
                    }
                }
            }
            adj[0][..len].copy_from_slice(&seed[start..start + len]);
            for i in 0..n_nodes {
                match self.nodes[i] {
                    Node::Const(_) => {
                        let mut s = 0.0;
                        for k in 0..len {
                            s += adj[i][k];
                        }
                        grad[slot[i]] += s;
                    }
                    Node::Var(_) => {}
                    op => {
                        let (l, r) = kids[i];
                        let (head, tail) = adj.split_at_mut(i + 1);
                        let a = &head[i];
                        let (tl, tr) = {
                            let (x, y) = tail.split_at_mut(r - i - 1);
                            (&mut x[l - i - 1], &mut y[0])
                        };
                        if matches!(op, Node::Add) {
                            tl[..len].copy_from_slice(&a[..len]);
                            tr[..len].copy_from_slice(&a[..len]);
                        } else {
                            let (lv, rv) = (&vals[l], &vals[r]);
                            for k in 0..len {
                                tl[k] = a[k] * rv[k];
                                tr[k] = a[k] * lv[k];
                            }
                        }
                    }
                }
            }
            start += len;
        }
    }
}
