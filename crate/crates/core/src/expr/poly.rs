//! Expanded polynomial form of expression trees.

use std::collections::BTreeMap;

use super::{ExprError, ExprTree, Node};

/// Maximum number of distinct monomials kept during expansion.
pub const TERM_CAP: usize = 4096;

/// Magnitude below which merged coefficients are treated as exact zeros.
const ZERO_EPS: f64 = 1e-12;

/// Monomial exponent vector: `exponents[j]` is the power of variable `j`.
pub type Monomial = Vec<u32>;

/// A fully expanded polynomial: monomial → coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    vars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(vars: usize) -> Self {
        Polynomial { vars, terms: BTreeMap::new() }
    }

    pub fn constant(vars: usize, c: f64) -> Self {
        let mut p = Self::zero(vars);
        p.add_term(vec![0; vars], c);
        p
    }

    pub fn variable(vars: usize, j: usize) -> Self {
        let mut e = vec![0; vars];
        e[j] = 1;
        let mut p = Self::zero(vars);
        p.add_term(e, 1.0);
        p
    }

    pub fn var_count(&self) -> usize {
        self.vars
    }

    pub fn terms(&self) -> &BTreeMap<Monomial, f64> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, monomial: &[u32]) -> f64 {
        self.terms.get(monomial).copied().unwrap_or(0.0)
    }

    fn add_term(&mut self, monomial: Monomial, c: f64) {
        let slot = self.terms.entry(monomial).or_insert(0.0);
        *slot += c;
    }

    fn prune_zeros(&mut self) {
        self.terms.retain(|_, c| c.abs() >= ZERO_EPS);
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        out.prune_zeros();
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial, ExprError> {
        let mut out = Polynomial::zero(self.vars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let m: Monomial = ma.iter().zip(mb).map(|(a, b)| a + b).collect();
                out.add_term(m, ca * cb);
                if out.terms.len() > TERM_CAP {
                    return Err(ExprError::TooLarge { terms: out.terms.len() });
                }
            }
        }
        out.prune_zeros();
        Ok(out)
    }

    /// Drops every term whose magnitude is below `tol`.
    pub fn pruned(&self, tol: f64) -> Polynomial {
        let mut out = self.clone();
        out.terms.retain(|_, c| c.abs() >= tol);
        out
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Set of monomials with non-zero coefficient.
    pub fn support(&self) -> Vec<Monomial> {
        self.terms.keys().cloned().collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| c * m.iter().enumerate().map(|(j, &e)| x[j].powi(e as i32)).product::<f64>())
            .sum()
    }

    /// Terms ordered for display: higher total degree first, then
    /// lexicographically descending exponents (so `x` precedes `y`).
    pub fn display_order(&self) -> Vec<(&Monomial, f64)> {
        let mut v: Vec<(&Monomial, f64)> = self.terms.iter().map(|(m, c)| (m, *c)).collect();
        v.sort_by(|(a, _), (b, _)| {
            let da: u32 = a.iter().sum();
            let db: u32 = b.iter().sum();
            db.cmp(&da).then_with(|| b.cmp(a))
        });
        v
    }

    /// Human-readable form with three-decimal coefficients, e.g.
    /// `x*z - 5.670*z + 0.188`.
    pub fn to_report_string(&self, names: &[String]) -> String {
        let terms = self.display_order();
        if terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (k, (m, c)) in terms.into_iter().enumerate() {
            let neg = c < 0.0;
            let mag = c.abs();
            if k == 0 {
                if neg {
                    out.push('-');
                }
            } else {
                out.push_str(if neg { " - " } else { " + " });
            }
            let factors = monomial_factors(m, names);
            let coef = format!("{mag:.3}");
            if factors.is_empty() {
                out.push_str(&coef);
            } else if coef == "1.000" {
                out.push_str(&factors);
            } else {
                out.push_str(&coef);
                out.push('*');
                out.push_str(&factors);
            }
        }
        out
    }
}

fn monomial_factors(m: &[u32], names: &[String]) -> String {
    let mut parts = Vec::new();
    for (j, &e) in m.iter().enumerate() {
        if e == 0 {
            continue;
        }
        let name = names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
        if e == 1 {
            parts.push(name);
        } else {
            parts.push(format!("{name}^{e}"));
        }
    }
    parts.join("*")
}

/// Expands `tree` over `vars` variables into canonical polynomial form.
/// Coefficients are merged and exact cancellations dropped.
pub fn canonical_polynomial(tree: &ExprTree, vars: usize) -> Result<Polynomial, ExprError> {
    if let Some(j) = tree.max_variable() {
        if j >= vars {
            return Err(ExprError::VariableOutOfRange { index: j, available: vars });
        }
    }
    let mut i = 0;
    expand(tree.nodes(), &mut i, vars)
}

fn expand(nodes: &[Node], i: &mut usize, vars: usize) -> Result<Polynomial, ExprError> {
    let node = nodes[*i];
    *i += 1;
    match node {
        Node::Const(c) => {
            let mut p = Polynomial::constant(vars, c);
            p.prune_zeros();
            Ok(p)
        }
        Node::Var(j) => Ok(Polynomial::variable(vars, j as usize)),
        Node::Add => {
            let a = expand(nodes, i, vars)?;
            let b = expand(nodes, i, vars)?;
            let s = a.add(&b);
            if s.len() > TERM_CAP {
                return Err(ExprError::TooLarge { terms: s.len() });
            }
            Ok(s)
        }
        Node::Mul => {
            let a = expand(nodes, i, vars)?;
            let b = expand(nodes, i, vars)?;
            a.mul(&b)
        }
    }
}

/// Builds a tree `Σ c·monomial` from a polynomial (used to turn regression
/// models into expression trees).
pub fn polynomial_to_tree(poly: &Polynomial) -> ExprTree {
    let mut acc: Option<ExprTree> = None;
    for (m, c) in poly.display_order() {
        let mut term = ExprTree::constant(c);
        for (j, &e) in m.iter().enumerate() {
            for _ in 0..e {
                term = ExprTree::mul(term, ExprTree::variable(j));
            }
        }
        acc = Some(match acc {
            None => term,
            Some(a) => ExprTree::add(a, term),
        });
    }
    acc.unwrap_or_else(|| ExprTree::constant(0.0))
}

/// Report form of a tree: expanded polynomial with three-decimal constants,
/// or the raw infix text when expansion exceeds the term cap.
pub fn to_report_string(tree: &ExprTree, names: &[String]) -> String {
    match canonical_polynomial(tree, names.len().max(tree.max_variable().map_or(0, |j| j + 1))) {
        Ok(p) => p.to_report_string(names),
        Err(_) => super::to_infix(tree, names),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn double_well_drift_expands() {
        let n = names(&["x"]);
        let p = canonical_polynomial(&parse("x - x^3", &n).unwrap(), 1).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.coefficient(&[1]), 1.0);
        assert_eq!(p.coefficient(&[3]), -1.0);
    }

    #[test]
    fn difference_of_squares() {
        let n = names(&["x"]);
        let p = canonical_polynomial(&parse("(x+1)*(x-1)", &n).unwrap(), 1).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.coefficient(&[2]), 1.0);
        assert_eq!(p.coefficient(&[0]), -1.0);
    }

    #[test]
    fn term_cap_signals_too_large() {
        // (x0 + ... + x5)^8 has C(13,5) = 1287 terms; ^10 has 3003; ^12 has 6188.
        let n = parse::default_names(6);
        let base = "(x0 + x1 + x2 + x3 + x4 + x5)";
        let text = vec![base; 12].join("*");
        let t = parse(&text, &n).unwrap();
        assert!(matches!(canonical_polynomial(&t, 6), Err(ExprError::TooLarge { .. })));
    }

    #[test]
    fn report_string_matches_table_style() {
        let n = names(&["x", "y", "z"]);
        let t = parse("0.188 + z*(x - 5.67)", &n).unwrap();
        assert_eq!(to_report_string(&t, &n), "x*z - 5.670*z + 0.188");
        let t = parse("-1*x + -0.981*y", &n).unwrap();
        assert_eq!(to_report_string(&t, &n), "-x - 0.981*y");
        let t = parse("x*x*x*2 - x", &n).unwrap();
        assert_eq!(to_report_string(&t, &n), "2.000*x^3 - x");
        assert_eq!(to_report_string(&parse("x - x", &n).unwrap(), &n), "0");
    }

    #[test]
    fn polynomial_to_tree_round_trip() {
        let n = names(&["x", "y"]);
        let t = parse("(x + 2*y)*(x - y) + 0.5", &n).unwrap();
        let p = canonical_polynomial(&t, 2).unwrap();
        let back = polynomial_to_tree(&p);
        for &(a, b) in &[(0.3, -1.2), (2.0, 0.5), (-1.0, -1.0)] {
            assert!((back.eval(&[a, b]) - t.eval(&[a, b])).abs() < 1e-12);
        }
    }
}
