//! Objectives scored on observed transitions `x(t_{k-1}) → x(t_k)`.
//!
//! * [`SdeNll`]: Gaussian Euler transition negative log-likelihood of one
//!   drift/diffusion pair.
//! * [`OdeMse`]: squared one-step prediction error of one drift.
//! * [`SdeNllMultistep`], [`OdeMseMultistep`]: whole-system variants that
//!   sub-step the drift `L` times between observations.
//!
//! Objective values are raw sums and may be non-finite; [`penalized`] maps an
//! invalid value to the penalty used for ranking.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::expr::ExprTree;
use crate::numeric::pairwise_sum;
use crate::simulate::{features_of_states, Dataset, GridSpec};

/// Lower bound applied to `σ²` before the log and the quotient.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Fitness assigned to invalid individuals, before adding their complexity.
pub const PENALTY: f64 = 1e12;

/// Ranking fitness: `raw` when finite, otherwise the penalty plus complexity.
pub fn penalized(raw: f64, complexity: usize) -> f64 {
    if raw.is_finite() && raw < PENALTY {
        raw
    } else {
        PENALTY + complexity as f64
    }
}

/// Role of a tree within an individual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Drift(usize),
    Diffusion(usize),
}

impl Role {
    pub fn equation(self) -> usize {
        match self {
            Role::Drift(i) | Role::Diffusion(i) => i,
        }
    }

    pub fn is_drift(self) -> bool {
        matches!(self, Role::Drift(_))
    }
}

/// Column-major transitions of a dataset.
///
/// Row `r` holds the leaf features at `t_{k-1}` and the next value of every
/// equation's left-hand side at `t_k`. Equation `i` reads its previous value
/// from feature column `i`. SPDE rows come in blocks of one field each.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionData {
    pub tau: f64,
    pub features: Vec<Vec<f64>>,
    pub next: Vec<Vec<f64>>,
    pub grid: Option<GridSpec>,
    /// Transition count contributed by each trajectory, in order.
    pub rows_per_trajectory: Vec<usize>,
}

impl TransitionData {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let grid = ds.grid().cloned();
        let dim = ds.state_dim();
        let prev: Vec<&[f64]> =
            ds.trajectories.iter().flat_map(|t| (1..t.len()).map(move |k| t.state(k - 1))).collect();
        let succ: Vec<&[f64]> = ds.trajectories.iter().flat_map(|t| (1..t.len()).map(move |k| t.state(k))).collect();
        let features = features_of_states(&prev, dim, grid.as_ref());
        let next = match &grid {
            None => features_of_states(&succ, dim, None),
            Some(_) => vec![succ.iter().flat_map(|s| s.iter().copied()).collect()],
        };
        let block = grid.as_ref().map_or(1, GridSpec::len);
        let rows_per_trajectory = ds.trajectories.iter().map(|t| (t.len() - 1) * block).collect();
        TransitionData { tau: ds.tau(), features, next, grid, rows_per_trajectory }
    }

    /// One scalar series observed every `tau`.
    pub fn from_series(series: &[f64], tau: f64) -> Self {
        let m = series.len().saturating_sub(1);
        TransitionData {
            tau,
            features: vec![series[..m].to_vec()],
            next: vec![series[1..].to_vec()],
            grid: None,
            rows_per_trajectory: vec![m],
        }
    }

    pub fn len(&self) -> usize {
        self.next.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn equation_count(&self) -> usize {
        self.next.len()
    }

    pub fn feature_count(&self) -> usize {
        self.features.len()
    }

    pub fn columns(&self) -> Vec<&[f64]> {
        self.features.iter().map(Vec::as_slice).collect()
    }

    pub fn previous(&self, equation: usize) -> &[f64] {
        &self.features[equation]
    }

    /// Leaf features for sub-stepped states `y` (one column per equation).
    fn features_of(&self, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match &self.grid {
            None => y.to_vec(),
            Some(g) => {
                let fields: Vec<&[f64]> = y[0].chunks(g.len()).collect();
                features_of_states(&fields, g.len(), Some(g))
            }
        }
    }
}

/// A fitness function over an individual's trees.
pub trait Objective: Sync {
    /// Tree layout expected by [`value`](Self::value).
    fn roles(&self) -> &[Role];

    fn feature_count(&self) -> usize;

    /// Raw objective (lower is better); may be non-finite.
    fn value(&self, trees: &[ExprTree]) -> f64;

    /// Value and exact gradient with respect to all constants, concatenated
    /// tree by tree in preorder. `None` when no analytic form is provided.
    fn value_and_gradient(&self, _trees: &[ExprTree]) -> Option<(f64, Vec<f64>)> {
        None
    }
}

fn eval(tree: &ExprTree, cols: &[&[f64]], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    tree.eval_columns(cols, &mut out);
    out
}

fn nll_term(x: f64, mu: f64, sigma: f64) -> f64 {
    let s2 = (sigma * sigma).max(SIGMA2_FLOOR);
    let r = x - mu;
    0.5 * (2.0 * PI * s2).ln() + r * r / (2.0 * s2)
}

fn nll_sum(next: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    let terms: Vec<f64> = next.iter().zip(mu).zip(sigma).map(|((&x, &m), &s)| nll_term(x, m, s)).collect();
    pairwise_sum(&terms)
}

fn sq_sum(next: &[f64], mu: &[f64]) -> f64 {
    let terms: Vec<f64> = next.iter().zip(mu).map(|(&x, &m)| (x - m) * (x - m)).collect();
    pairwise_sum(&terms)
}

/// One-step mean `x + τ f` for equation `i`.
fn one_step_mean(data: &TransitionData, i: usize, f: &[f64]) -> Vec<f64> {
    data.previous(i).iter().zip(f).map(|(&x, &fv)| x + data.tau * fv).collect()
}

/// Gaussian transition NLL of the pair `[drift, diffusion]` for equation `i`.
pub struct SdeNll<'a> {
    data: &'a TransitionData,
    equation: usize,
    roles: [Role; 2],
}

impl<'a> SdeNll<'a> {
    pub fn new(data: &'a TransitionData, equation: usize) -> Self {
        assert!(equation < data.equation_count());
        SdeNll { data, equation, roles: [Role::Drift(equation), Role::Diffusion(equation)] }
    }
}

impl Objective for SdeNll<'_> {
    fn roles(&self) -> &[Role] {
        &self.roles
    }

    fn feature_count(&self) -> usize {
        self.data.feature_count()
    }

    fn value(&self, trees: &[ExprTree]) -> f64 {
        let (d, n) = (self.data, self.data.len());
        let cols = d.columns();
        let mu = one_step_mean(d, self.equation, &eval(&trees[0], &cols, n));
        let st = d.tau.sqrt();
        let sigma: Vec<f64> = eval(&trees[1], &cols, n).into_iter().map(|g| st * g).collect();
        nll_sum(&d.next[self.equation], &mu, &sigma)
    }

    fn value_and_gradient(&self, trees: &[ExprTree]) -> Option<(f64, Vec<f64>)> {
        let (d, n) = (self.data, self.data.len());
        let cols = d.columns();
        let f = eval(&trees[0], &cols, n);
        let g = eval(&trees[1], &cols, n);
        let st = d.tau.sqrt();
        let mut terms = vec![0.0; n];
        let mut df = vec![0.0; n];
        let mut dg = vec![0.0; n];
        let (prev, next) = (d.previous(self.equation), &d.next[self.equation]);
        for k in 0..n {
            let sigma = st * g[k];
            let raw = sigma * sigma;
            let s2 = raw.max(SIGMA2_FLOOR);
            let r = next[k] - (prev[k] + d.tau * f[k]);
            terms[k] = 0.5 * (2.0 * PI * s2).ln() + r * r / (2.0 * s2);
            df[k] = -d.tau * r / s2;
            if raw > SIGMA2_FLOOR {
                dg[k] = sigma * st / s2 * (1.0 - r * r / s2);
            }
        }
        let mut gf = vec![0.0; trees[0].constant_count()];
        let mut gg = vec![0.0; trees[1].constant_count()];
        trees[0].accumulate_constant_gradient(&cols, &df, &mut gf);
        trees[1].accumulate_constant_gradient(&cols, &dg, &mut gg);
        gf.extend(gg);
        Some((pairwise_sum(&terms), gf))
    }
}

/// Squared one-step prediction error of a single drift for equation `i`.
pub struct OdeMse<'a> {
    data: &'a TransitionData,
    equation: usize,
    roles: [Role; 1],
}

impl<'a> OdeMse<'a> {
    pub fn new(data: &'a TransitionData, equation: usize) -> Self {
        assert!(equation < data.equation_count());
        OdeMse { data, equation, roles: [Role::Drift(equation)] }
    }
}

impl Objective for OdeMse<'_> {
    fn roles(&self) -> &[Role] {
        &self.roles
    }

    fn feature_count(&self) -> usize {
        self.data.feature_count()
    }

    fn value(&self, trees: &[ExprTree]) -> f64 {
        let (d, n) = (self.data, self.data.len());
        let mu = one_step_mean(d, self.equation, &eval(&trees[0], &d.columns(), n));
        sq_sum(&d.next[self.equation], &mu)
    }

    fn value_and_gradient(&self, trees: &[ExprTree]) -> Option<(f64, Vec<f64>)> {
        let (d, n) = (self.data, self.data.len());
        let cols = d.columns();
        let f = eval(&trees[0], &cols, n);
        let (prev, next) = (d.previous(self.equation), &d.next[self.equation]);
        let mut terms = vec![0.0; n];
        let mut df = vec![0.0; n];
        for k in 0..n {
            let r = next[k] - (prev[k] + d.tau * f[k]);
            terms[k] = r * r;
            df[k] = -2.0 * d.tau * r;
        }
        let mut grad = vec![0.0; trees[0].constant_count()];
        trees[0].accumulate_constant_gradient(&cols, &df, &mut grad);
        Some((pairwise_sum(&terms), grad))
    }
}

/// Deterministic `L`-fold sub-stepping of the drift from every transition's
/// start. Returns `μ = y(L)` and, with diffusion trees, `Σ_l ĝ(y(l))`.
fn substep(
    data: &TransitionData,
    drift: &[ExprTree],
    diffusion: &[ExprTree],
    steps: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (n_eq, n) = (data.equation_count(), data.len());
    let h = data.tau / steps as f64;
    let mut y: Vec<Vec<f64>> = (0..n_eq).map(|i| data.previous(i).to_vec()).collect();
    let mut gsum = vec![vec![0.0; n]; diffusion.len()];
    let mut buf = vec![0.0; n];
    for l in 0..steps {
        let owned;
        let cols: Vec<&[f64]> = if l == 0 {
            data.columns()
        } else {
            owned = data.features_of(&y);
            owned.iter().map(Vec::as_slice).collect()
        };
        for (acc, t) in gsum.iter_mut().zip(diffusion) {
            t.eval_columns(&cols, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
        }
        let rates: Vec<Vec<f64>> = drift.iter().map(|t| eval(t, &cols, n)).collect();
        for (yi, fi) in y.iter_mut().zip(&rates) {
            for (a, b) in yi.iter_mut().zip(fi) {
                *a += h * b;
            }
        }
    }
    (y, gsum)
}

/// Whole-system Gaussian NLL with `L` drift sub-steps per observation interval.
/// Trees are `[f_0 … f_{n-1}, g_0 … g_{n-1}]`.
pub struct SdeNllMultistep<'a> {
    data: &'a TransitionData,
    steps: usize,
    roles: Vec<Role>,
}

impl<'a> SdeNllMultistep<'a> {
    pub fn new(data: &'a TransitionData, steps: usize) -> Self {
        assert!(steps >= 1);
        let n = data.equation_count();
        let roles = (0..n).map(Role::Drift).chain((0..n).map(Role::Diffusion)).collect();
        SdeNllMultistep { data, steps, roles }
    }
}

impl Objective for SdeNllMultistep<'_> {
    fn roles(&self) -> &[Role] {
        &self.roles
    }

    fn feature_count(&self) -> usize {
        self.data.feature_count()
    }

    fn value(&self, trees: &[ExprTree]) -> f64 {
        let n_eq = self.data.equation_count();
        let (mu, gsum) = substep(self.data, &trees[..n_eq], &trees[n_eq..], self.steps);
        let scale = self.data.tau.sqrt() / self.steps as f64;
        let mut total = 0.0;
        for i in 0..n_eq {
            let sigma: Vec<f64> = gsum[i].iter().map(|g| scale * g).collect();
            total += nll_sum(&self.data.next[i], &mu[i], &sigma);
        }
        total
    }
}

/// Whole-system squared error with `L` drift sub-steps. Trees are `[f_0 … f_{n-1}]`.
pub struct OdeMseMultistep<'a> {
    data: &'a TransitionData,
    steps: usize,
    roles: Vec<Role>,
}

impl<'a> OdeMseMultistep<'a> {
    pub fn new(data: &'a TransitionData, steps: usize) -> Self {
        assert!(steps >= 1);
        let roles = (0..data.equation_count()).map(Role::Drift).collect();
        OdeMseMultistep { data, steps, roles }
    }
}

impl Objective for OdeMseMultistep<'_> {
    fn roles(&self) -> &[Role] {
        &self.roles
    }

    fn feature_count(&self) -> usize {
        self.data.feature_count()
    }

    fn value(&self, trees: &[ExprTree]) -> f64 {
        let (mu, _) = substep(self.data, trees, &[], self.steps);
        let mut total = 0.0;
        for (i, m) in mu.iter().enumerate() {
            total += sq_sum(&self.data.next[i], m);
        }
        total
    }
}

fn guard(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        PENALTY
    }
}

/// Single-step NLL of equation `i`; non-finite totals become [`PENALTY`].
pub fn nll_sde(drift: &ExprTree, diffusion: &ExprTree, data: &TransitionData, i: usize) -> f64 {
    guard(SdeNll::new(data, i).value(&[drift.clone(), diffusion.clone()]))
}

/// Multistep whole-system NLL; non-finite totals become [`PENALTY`].
pub fn nll_sde_multistep(drift: &[ExprTree], diffusion: &[ExprTree], data: &TransitionData, steps: usize) -> f64 {
    let trees: Vec<ExprTree> = drift.iter().chain(diffusion).cloned().collect();
    guard(SdeNllMultistep::new(data, steps).value(&trees))
}

/// Single-step squared error of equation `i`; non-finite totals become [`PENALTY`].
pub fn mse_ode(drift: &ExprTree, data: &TransitionData, i: usize) -> f64 {
    guard(OdeMse::new(data, i).value(std::slice::from_ref(drift)))
}

/// Multistep whole-system squared error; non-finite totals become [`PENALTY`].
pub fn mse_ode_multistep(drift: &[ExprTree], data: &TransitionData, steps: usize) -> f64 {
    guard(OdeMseMultistep::new(data, steps).value(drift))
}
