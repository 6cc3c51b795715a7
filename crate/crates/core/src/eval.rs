//! Model comparison against known ground truth, model selection from a
//! Pareto front, structure verdicts and generative sampling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evolution::Individual;
use crate::expr::{canonical_polynomial, to_report_string, ExprTree};
use crate::fitness::Role;
use crate::simulate::{EnvironmentSpec, GridSpec, Scheme, System};
use crate::{Error, Result};

/// Terms below this fraction of the largest coefficient are ignored by
/// [`structure_match`].
pub const STRUCTURE_TOLERANCE: f64 = 0.05;

/// Discovery methods compared in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "gp-ode")]
    GpOde,
    #[serde(rename = "gp-ode-ms")]
    GpOdeMs,
    #[serde(rename = "gp-sde")]
    GpSde,
    #[serde(rename = "gp-sde-ms")]
    GpSdeMs,
    #[serde(rename = "km-sr")]
    KmSr,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::GpOde, Method::GpOdeMs, Method::GpSde, Method::GpSdeMs, Method::KmSr];

    pub fn parse(text: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.key() == text.to_ascii_lowercase())
    }

    /// Identifier used in configs and file names.
    pub fn key(self) -> &'static str {
        match self {
            Method::GpOde => "gp-ode",
            Method::GpOdeMs => "gp-ode-ms",
            Method::GpSde => "gp-sde",
            Method::GpSdeMs => "gp-sde-ms",
            Method::KmSr => "km-sr",
        }
    }

    /// Label used in report tables.
    pub fn tag(self) -> &'static str {
        match self {
            Method::GpOde => "GP-ODE",
            Method::GpOdeMs => "GP-ODE-MS",
            Method::GpSde => "GP-SDE",
            Method::GpSdeMs => "GP-SDE-MS",
            Method::KmSr => "KM-SR",
        }
    }

    pub fn models_diffusion(self) -> bool {
        !matches!(self, Method::GpOde | Method::GpOdeMs)
    }

    pub fn is_multistep(self) -> bool {
        matches!(self, Method::GpOdeMs | Method::GpSdeMs)
    }
}

/// Mean squared difference between paired model and truth functions over
/// every row of `columns`, averaged over the pairs. With `absolute` both sides
/// are compared in absolute value. Any non-finite model output gives `+∞`.
pub fn component_mse(model: &[ExprTree], truth: &[ExprTree], columns: &[&[f64]], absolute: bool) -> f64 {
    assert_eq!(model.len(), truth.len());
    if model.is_empty() {
        return 0.0;
    }
    let rows = columns.first().map_or(0, |c| c.len());
    let mut reference = vec![0.0; rows];
    let mut total = 0.0;
    for (m, t) in model.iter().zip(truth) {
        t.eval_columns(columns, &mut reference);
        total += mse_to_values(m, &reference, columns, absolute);
    }
    let mse = total / model.len() as f64;
    if mse.is_finite() {
        mse
    } else {
        f64::INFINITY
    }
}

/// Single-function form of [`component_mse`] against precomputed truth
/// values, one per row of `columns`.
pub fn mse_to_values(model: &ExprTree, truth: &[f64], columns: &[&[f64]], absolute: bool) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let mut a = vec![0.0; truth.len()];
    model.eval_columns(columns, &mut a);
    let mut s = 0.0;
    for (x, y) in a.iter().zip(truth) {
        let d = if absolute { x.abs() - y.abs() } else { x - y };
        s += d * d;
    }
    let mse = s / truth.len() as f64;
    if mse.is_finite() {
        mse
    } else {
        f64::INFINITY
    }
}

/// Drift and diffusion trees of a discovered system keyed by equation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub drift: BTreeMap<usize, ExprTree>,
    pub diffusion: BTreeMap<usize, ExprTree>,
}

impl Model {
    pub fn from_individual(ind: &Individual) -> Model {
        let mut m = Model::default();
        m.absorb(ind);
        m
    }

    /// Adds the trees of `ind`, replacing earlier entries for the same roles.
    pub fn absorb(&mut self, ind: &Individual) {
        for (role, tree) in ind.roles.iter().zip(&ind.trees) {
            match *role {
                Role::Drift(i) => self.drift.insert(i, tree.clone()),
                Role::Diffusion(i) => self.diffusion.insert(i, tree.clone()),
            };
        }
    }

    pub fn complexity(&self) -> usize {
        self.drift.values().chain(self.diffusion.values()).map(ExprTree::size).sum()
    }

    /// Drift MSE averaged over the modelled equations.
    pub fn drift_mse(&self, env: &EnvironmentSpec, columns: &[&[f64]]) -> f64 {
        let (m, t) = pairs(&self.drift, &env.drift);
        component_mse(&m, &t, columns, false)
    }

    /// Diffusion MSE (absolute values) averaged over the modelled equations.
    pub fn diffusion_mse(&self, env: &EnvironmentSpec, columns: &[&[f64]]) -> f64 {
        let (m, t) = pairs(&self.diffusion, &env.diffusion);
        component_mse(&m, &t, columns, true)
    }

    /// Per-equation verdict: every modelled component of equation `i` has the
    /// truth's monomial support.
    pub fn structure_ok(&self, env: &EnvironmentSpec, i: usize, features: usize) -> bool {
        let drift_ok = self.drift.get(&i).is_none_or(|m| structure_match(m, &env.drift[i], features));
        let diff_ok = self.diffusion.get(&i).is_none_or(|m| structure_match(m, &env.diffusion[i], features));
        drift_ok && diff_ok && (self.drift.contains_key(&i) || self.diffusion.contains_key(&i))
    }

    /// Model text, one `drift <name> = <expr>` or `diffusion ...` line per tree.
    pub fn to_text(&self, equation_names: &[String], feature_names: &[String]) -> String {
        let mut out = String::new();
        for (kind, map) in [("drift", &self.drift), ("diffusion", &self.diffusion)] {
            for (i, t) in map {
                let name = equation_names.get(*i).cloned().unwrap_or_else(|| format!("x{i}"));
                let _ = writeln!(out, "{kind} {name} = {}", to_report_string(t, feature_names));
            }
        }
        out
    }

    /// Complete system for simulation: modelled equations come from `self`,
    /// the remaining ones from the ground truth. A model without diffusion
    /// trees is simulated deterministically.
    pub fn completed(&self, env: &EnvironmentSpec) -> (Vec<ExprTree>, Vec<ExprTree>) {
        let drift = (0..env.equation_count()).map(|i| self.drift.get(&i).unwrap_or(&env.drift[i]).clone()).collect();
        let diffusion = if self.diffusion.is_empty() {
            Vec::new()
        } else {
            (0..env.equation_count())
                .map(|i| self.diffusion.get(&i).unwrap_or(&env.diffusion[i]).clone())
                .collect()
        };
        (drift, diffusion)
    }
}

fn pairs(model: &BTreeMap<usize, ExprTree>, truth: &[ExprTree]) -> (Vec<ExprTree>, Vec<ExprTree>) {
    model.iter().filter(|(i, _)| **i < truth.len()).map(|(i, t)| (t.clone(), truth[*i].clone())).unzip()
}

/// How front members are scored on the validation split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Drift MSE plus diffusion MSE (when the candidate has diffusion trees).
    #[default]
    Sum,
    /// Drift MSE only.
    Drift,
}

/// Validation score of a candidate under `selection`.
pub fn selection_score(model: &Model, env: &EnvironmentSpec, columns: &[&[f64]], selection: Selection) -> f64 {
    let d = model.drift_mse(env, columns);
    if model.diffusion.is_empty() || selection == Selection::Drift {
        d
    } else {
        d + model.diffusion_mse(env, columns)
    }
}

/// Index of the front member with the lowest [`selection_score`] on the
/// validation columns. Ties go to the lower complexity, then the earlier
/// member. Returns `None` for an empty front.
pub fn select_model(
    front: &[Individual],
    env: &EnvironmentSpec,
    columns: &[&[f64]],
    selection: Selection,
) -> Option<usize> {
    let scored: Vec<(f64, usize)> = front
        .iter()
        .map(|ind| {
            let s = selection_score(&Model::from_individual(ind), env, columns, selection);
            (if s.is_nan() { f64::INFINITY } else { s }, ind.complexity())
        })
        .collect();
    (0..front.len()).min_by(|&a, &b| {
        scored[a].0.total_cmp(&scored[b].0).then(scored[a].1.cmp(&scored[b].1)).then(a.cmp(&b))
    })
}

/// Whether two expressions expand to polynomials with the same monomial
/// support, ignoring terms smaller than [`STRUCTURE_TOLERANCE`] times the
/// largest coefficient of either side. Expansion failure means no match.
pub fn structure_match(model: &ExprTree, truth: &ExprTree, features: usize) -> bool {
    let (Ok(a), Ok(b)) = (canonical_polynomial(model, features), canonical_polynomial(truth, features)) else {
        return false;
    };
    let scale = a.max_abs_coefficient().max(b.max_abs_coefficient());
    if !scale.is_finite() {
        return false;
    }
    let tol = STRUCTURE_TOLERANCE * scale;
    a.pruned(tol).support() == b.pruned(tol).support()
}

/// Pointwise statistics of simulated paths on the observation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub tau: f64,
    /// `mean[k][j]`: mean of state `j` at observation `k`.
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
    pub paths: usize,
    pub diverged: usize,
    /// More than half of the paths diverged.
    pub flagged: bool,
}

/// Integration settings for [`generative_sample`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleSettings {
    pub steps: usize,
    pub substeps: usize,
    pub dt: f64,
    pub tau: f64,
    pub scheme: Scheme,
}

impl SampleSettings {
    pub fn for_env(env: &EnvironmentSpec) -> Self {
        SampleSettings { steps: env.steps(), substeps: env.substeps(), dt: env.dt, tau: env.tau, scheme: Scheme::default() }
    }
}

/// Integrates the system `(drift, diffusion)` from `x0` along `n_paths`
/// independent noise realizations and returns pointwise mean and standard
/// deviation over the paths that stayed bounded. An empty `diffusion` means
/// a deterministic system, which is integrated exactly once.
pub fn generative_sample(
    drift: &[ExprTree],
    diffusion: &[ExprTree],
    grid: Option<&GridSpec>,
    x0: &[f64],
    settings: SampleSettings,
    n_paths: usize,
    seed: u64,
) -> Result<SampleStats> {
    let dim = x0.len();
    let sys = System { drift, diffusion, grid, dim };
    let paths = if sys.is_deterministic() { 1 } else { n_paths };
    if paths == 0 {
        return Err(Error::Config("generative sampling needs at least one path".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut surviving = Vec::new();
    let mut diverged = 0;
    for _ in 0..paths {
        match sys.integrate_path(x0, settings.steps, settings.substeps, settings.dt, settings.scheme, &mut rng) {
            Some(p) => surviving.push(p),
            None => diverged += 1,
        }
    }
    let len = settings.steps + 1;
    let mut mean = vec![vec![f64::NAN; dim]; len];
    let mut std = vec![vec![f64::NAN; dim]; len];
    if !surviving.is_empty() {
        let n = surviving.len() as f64;
        for k in 0..len {
            for j in 0..dim {
                // Shifted by the first path so identical paths give an exact zero spread.
                let base = surviving[0][k * dim + j];
                let m = base + surviving.iter().map(|p| p[k * dim + j] - base).sum::<f64>() / n;
                let v = surviving.iter().map(|p| (p[k * dim + j] - m).powi(2)).sum::<f64>() / n;
                mean[k][j] = m;
                std[k][j] = v.sqrt();
            }
        }
    }
    Ok(SampleStats { tau: settings.tau, mean, std, paths, diverged, flagged: 2 * diverged > paths })
}

/// Test-split comparison of one discovered model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub environment: String,
    pub method: Method,
    pub seed: u64,
    /// Per learned equation; `None` encodes a non-finite error.
    pub drift_mse: Vec<Option<f64>>,
    pub diffusion_mse: Vec<Option<f64>>,
    pub structure_ok: Vec<bool>,
    pub model: Vec<String>,
    pub runtime_s: f64,
    pub config_hash: String,
    pub version: String,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn mean_or_inf(values: &[Option<f64>]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| v.unwrap_or(f64::INFINITY)).sum::<f64>() / values.len() as f64
}

impl EvalReport {
    /// Scores `model` on the test columns for every target equation of `env`.
    pub fn build(model: &Model, env: &EnvironmentSpec, method: Method, seed: u64, columns: &[&[f64]]) -> EvalReport {
        let features = env.feature_names.len();
        let mut drift_mse = Vec::new();
        let mut diffusion_mse = Vec::new();
        let mut structure_ok = Vec::new();
        for &i in &env.targets {
            let single = |map: &BTreeMap<usize, ExprTree>| {
                let mut m = BTreeMap::new();
                if let Some(t) = map.get(&i) {
                    m.insert(i, t.clone());
                }
                m
            };
            let part = Model { drift: single(&model.drift), diffusion: single(&model.diffusion) };
            drift_mse.push(finite(part.drift_mse(env, columns)));
            if method.models_diffusion() {
                diffusion_mse.push(finite(part.diffusion_mse(env, columns)));
            }
            structure_ok.push(part.structure_ok(env, i, features));
        }
        let text = model.to_text(&env.equation_names(), &env.feature_names);
        EvalReport {
            environment: env.name.clone(),
            method,
            seed,
            drift_mse,
            diffusion_mse,
            structure_ok,
            model: text.lines().map(str::to_owned).collect(),
            runtime_s: 0.0,
            config_hash: String::new(),
            version: String::new(),
        }
    }

    /// Drift MSE averaged over equations (`+∞` if any is non-finite).
    pub fn mean_drift_mse(&self) -> f64 {
        mean_or_inf(&self.drift_mse)
    }

    pub fn mean_diffusion_mse(&self) -> Option<f64> {
        (!self.diffusion_mse.is_empty()).then(|| mean_or_inf(&self.diffusion_mse))
    }

    pub fn all_structure_ok(&self) -> bool {
        !self.structure_ok.is_empty() && self.structure_ok.iter().all(|&b| b)
    }

    pub const CSV_HEADER: &'static str = "environment,method,seed,drift_mse,diffusion_mse,structure_ok,runtime_s";

    /// One CSV row matching [`Self::CSV_HEADER`]; absent values are empty.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.environment,
            self.method.tag(),
            self.seed,
            fmt_num(self.mean_drift_mse()),
            self.mean_diffusion_mse().map(fmt_num).unwrap_or_default(),
            self.all_structure_ok(),
            self.runtime_s
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<EvalReport> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Shortest round-tripping decimal, `inf` for infinities.
pub fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::simulate::{make_environment, EnvOverrides};

    fn p(s: &str) -> ExprTree {
        parse(s, &["x".to_string(), "y".to_string(), "z".to_string()]).unwrap()
    }

    #[test]
    fn mse_of_truth_and_offset() {
        let x: Vec<f64> = (0..17).map(|i| i as f64 * 0.3 - 2.0).collect();
        let cols = [x.as_slice()];
        let t = p("x - x*x*x");
        assert_eq!(component_mse(&[t.clone()], &[t.clone()], &cols, false), 0.0);
        let shifted = ExprTree::add(t.clone(), ExprTree::constant(1.0));
        assert!((component_mse(&[shifted], &[t], &cols, false) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn diffusion_sign_is_ignored() {
        let x: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let cols = [x.as_slice()];
        assert_eq!(component_mse(&[p("-0.5")], &[p("0.5")], &cols, true), 0.0);
        assert_eq!(component_mse(&[p("-0.5")], &[p("0.5")], &cols, false), 1.0);
    }

    #[test]
    fn table_structure_examples() {
        assert!(structure_match(&p("-x - 0.981*y"), &p("-x - y"), 3));
        assert!(!structure_match(&p("0.064*z + 0.055"), &p("0.100*z"), 3));
        let t = p("x*(y + 2) + z*z");
        assert!(structure_match(&t, &t, 3));
        assert!(structure_match(&p("x + 0.01*y"), &p("x"), 3));
        assert!(structure_match(&p("x"), &p("x + 0.01*y"), 3));
    }

    #[test]
    fn selection_prefers_truth_then_simplicity() {
        let env = make_environment("double_well_additive", &EnvOverrides::default()).unwrap();
        let x: Vec<f64> = (0..41).map(|i| i as f64 * 0.1 - 2.0).collect();
        let cols = [x.as_slice()];
        let roles = vec![Role::Drift(0), Role::Diffusion(0)];
        let truth = Individual::new(roles.clone(), vec![env.drift[0].clone(), env.diffusion[0].clone()]);
        let wrong = Individual::new(roles.clone(), vec![p("x - 1.1*x*x*x"), env.diffusion[0].clone()]);
        assert_eq!(select_model(&[wrong.clone(), truth.clone()], &env, &cols, Selection::Sum), Some(1));
        let padded = Individual::new(
            roles,
            vec![ExprTree::add(env.drift[0].clone(), ExprTree::constant(0.0)), env.diffusion[0].clone()],
        );
        assert_eq!(select_model(&[padded, truth.clone()], &env, &cols, Selection::Sum), Some(1));
        assert_eq!(select_model(&[wrong], &env, &cols, Selection::Sum), Some(0));
        assert_eq!(select_model(&[], &env, &cols, Selection::Sum), None);
    }

    #[test]
    fn deterministic_sampling_is_single_path_with_zero_spread() {
        let settings = SampleSettings { steps: 20, substeps: 10, dt: 0.001, tau: 0.01, scheme: Scheme::default() };
        let s = generative_sample(&[p("-x")], &[], None, &[1.0], settings, 50, 3).unwrap();
        assert_eq!(s.paths, 1);
        assert_eq!(s.mean.len(), 21);
        assert!(s.std.iter().all(|r| r[0] == 0.0));
        let z = generative_sample(&[p("-x")], &[p("0")], None, &[1.0], settings, 5, 3).unwrap();
        assert_eq!(z.paths, 5);
        assert!(z.std.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn report_round_trips_and_formats() {
        let env = make_environment("double_well_additive", &EnvOverrides::default()).unwrap();
        let ind = Individual::new(vec![Role::Drift(0), Role::Diffusion(0)], vec![env.drift[0].clone(), p("0.4")]);
        let x: Vec<f64> = (0..5).map(|i| i as f64 * 0.5 - 1.0).collect();
        let r = EvalReport::build(&Model::from_individual(&ind), &env, Method::GpSde, 7, &[x.as_slice()]);
        assert_eq!(r.drift_mse, vec![Some(0.0)]);
        assert!((r.diffusion_mse[0].unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(r.structure_ok, vec![true]);
        assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        assert_eq!(r.csv_row().split(',').count(), EvalReport::CSV_HEADER.split(',').count());
    }
}
