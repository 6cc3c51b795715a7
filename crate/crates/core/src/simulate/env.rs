use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::expr::{parse, ExprTree};
use crate::{Error, Result};

use super::grid::GridSpec;

/// Names of every built-in environment.
pub const ENVIRONMENTS: [&str; 11] = [
    "double_well_additive",
    "double_well_linear",
    "double_well_nonlinear",
    "van_der_pol",
    "rossler",
    "lorenz96_5",
    "lorenz96_10",
    "lorenz96_20",
    "lotka_volterra",
    "fisher_kpp",
    "heat_2d",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitialCondition {
    /// Independent `Normal(mean, std)` per state variable.
    Normal { mean: f64, std: f64 },
    /// Independent `Uniform(low, high)` per state variable.
    Uniform { low: f64, high: f64 },
    /// A fixed initial state (used for SPDE fields and generative sampling).
    Fixed { values: Vec<f64> },
}

impl InitialCondition {
    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match self {
            InitialCondition::Normal { mean, std } => {
                let n = Normal::new(*mean, *std).expect("finite normal parameters");
                (0..dim).map(|_| n.sample(rng)).collect()
            }
            InitialCondition::Uniform { low, high } => (0..dim).map(|_| rng.random_range(*low..*high)).collect(),
            InitialCondition::Fixed { values } => values.clone(),
        }
    }
}

/// User overrides applied on top of an environment preset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvOverrides {
    pub tau: Option<f64>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub trajectories: Option<usize>,
    /// Model parameters by name (e.g. `sigma`, `F`, `D`).
    pub params: BTreeMap<String, f64>,
}

/// Ground-truth system plus the data-generation protocol.
///
/// For ordinary SDEs `drift[i]` and `diffusion[i]` are functions of the full
/// state. For SPDEs a single drift/diffusion pair is applied pointwise to the
/// field and its derived spatial features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub name: String,
    /// Length of the integrated state vector (flattened grid size for SPDEs).
    pub state_dim: usize,
    /// Leaf variable names available to expression trees.
    pub feature_names: Vec<String>,
    pub drift: Vec<ExprTree>,
    pub diffusion: Vec<ExprTree>,
    pub parameters: BTreeMap<String, f64>,
    pub initial: InitialCondition,
    pub horizon: f64,
    pub dt: f64,
    pub tau: f64,
    pub trajectories: usize,
    pub grid: Option<GridSpec>,
    /// Equations that methods are asked to learn and are scored on.
    pub targets: Vec<usize>,
}

fn ratio_is_integer(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() <= 1e-9 * n.max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}

impl EnvironmentSpec {
    /// Number of drift/diffusion equations.
    pub fn equation_count(&self) -> usize {
        self.drift.len()
    }

    pub fn is_spde(&self) -> bool {
        self.grid.is_some()
    }

    /// Observation count `K = T / τ`.
    pub fn steps(&self) -> usize {
        ratio_is_integer(self.horizon, self.tau).unwrap_or(0)
    }

    /// Integrator sub-steps per observation interval `τ / Δt`.
    pub fn substeps(&self) -> usize {
        ratio_is_integer(self.tau, self.dt).unwrap_or(0)
    }

    /// Names of the learnable equations' left-hand sides.
    pub fn equation_names(&self) -> Vec<String> {
        if self.is_spde() {
            vec![self.feature_names[0].clone()]
        } else {
            self.feature_names.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.dt > 0.0 && self.horizon > 0.0) {
            return cfg(format!("{}: horizon, tau and dt must be positive", self.name));
        }
        if ratio_is_integer(self.horizon, self.tau).is_none() {
            return cfg(format!("{}: T/tau = {} is not an integer", self.name, self.horizon / self.tau));
        }
        if ratio_is_integer(self.tau, self.dt).is_none() {
            return cfg(format!("{}: tau/dt = {} is not an integer", self.name, self.tau / self.dt));
        }
        if self.trajectories == 0 {
            return cfg(format!("{}: trajectory count must be positive", self.name));
        }
        if self.drift.len() != self.diffusion.len() || self.drift.is_empty() {
            return cfg(format!("{}: drift and diffusion must pair up", self.name));
        }
        let features = self.feature_names.len();
        for t in self.drift.iter().chain(&self.diffusion) {
            if t.max_variable().is_some_and(|j| j >= features) {
                return cfg(format!("{}: truth references an undeclared feature", self.name));
            }
        }
        match &self.grid {
            Some(g) => {
                if self.drift.len() != 1 || g.len() != self.state_dim {
                    return cfg(format!("{}: SPDE needs one equation over the whole grid", self.name));
                }
            }
            None => {
                if self.drift.len() != self.state_dim || features != self.state_dim {
                    return cfg(format!("{}: one equation per state variable expected", self.name));
                }
            }
        }
        if self.targets.iter().any(|&i| i >= self.drift.len()) || self.targets.is_empty() {
            return cfg(format!("{}: invalid target equations", self.name));
        }
        if let InitialCondition::Fixed { values } = &self.initial {
            if values.len() != self.state_dim {
                return cfg(format!("{}: fixed initial state has wrong length", self.name));
            }
        }
        Ok(())
    }

    /// A custom SDE with one equation per variable, given as infix text.
    #[allow(clippy::too_many_arguments)]
    pub fn custom_sde(
        name: &str,
        names: &[&str],
        drift: &[&str],
        diffusion: &[&str],
        initial: InitialCondition,
        horizon: f64,
        dt: f64,
        tau: f64,
        trajectories: usize,
    ) -> Result<Self> {
        let feature_names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let drift = drift.iter().map(|s| parse(s, &feature_names)).collect::<Result<Vec<_>, _>>()?;
        let diffusion = diffusion.iter().map(|s| parse(s, &feature_names)).collect::<Result<Vec<_>, _>>()?;
        let env = EnvironmentSpec {
            name: name.to_string(),
            state_dim: feature_names.len(),
            targets: (0..feature_names.len()).collect(),
            feature_names,
            drift,
            diffusion,
            parameters: BTreeMap::new(),
            initial,
            horizon,
            dt,
            tau,
            trajectories,
            grid: None,
        };
        env.validate()?;
        Ok(env)
    }
}

struct Builder {
    name: String,
    params: BTreeMap<String, f64>,
}

impl Builder {
    fn new(name: &str, defaults: &[(&str, f64)], overrides: &EnvOverrides) -> Result<Self> {
        let mut params: BTreeMap<String, f64> = defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        for (k, v) in &overrides.params {
            if !params.contains_key(k) {
                return Err(Error::Config(format!("environment `{name}` has no parameter `{k}`")));
            }
            params.insert(k.clone(), *v);
        }
        Ok(Builder { name: name.to_string(), params })
    }

    fn p(&self, key: &str) -> f64 {
        self.params[key]
    }
}

fn trees(texts: &[String], names: &[String]) -> Result<Vec<ExprTree>> {
    texts.iter().map(|s| Ok(parse(s, names)?)).collect()
}

fn fmt(v: f64) -> String {
    format!("({v:?})")
}

/// Builds one of the built-in environments with its default protocol.
pub fn make_environment(name: &str, overrides: &EnvOverrides) -> Result<EnvironmentSpec> {
    // Default protocol shared by the ordinary SDE environments.
    let mut horizon = 50.0;
    let mut tau = 0.01;
    let dt = 0.001;
    let mut trajectories = 8;
    let mut grid = None;
    let names: Vec<String>;
    let drift: Vec<String>;
    let diffusion: Vec<String>;
    let initial;
    let mut targets = None;
    let b;

    match name {
        "double_well_additive" | "double_well_linear" | "double_well_nonlinear" => {
            b = Builder::new(name, &[("sigma", 0.5)], overrides)?;
            let s = fmt(b.p("sigma"));
            names = vec!["x".into()];
            drift = vec!["x - x^3".into()];
            diffusion = vec![match name {
                "double_well_additive" => s,
                "double_well_linear" => format!("{s}*x"),
                _ => format!("{s} + {s}*x^2"),
            }];
            initial = InitialCondition::Normal { mean: 0.0, std: 0.1 };
        }
        "van_der_pol" => {
            b = Builder::new(name, &[("mu", 1.0), ("sigma", 0.2)], overrides)?;
            let (mu, s) = (fmt(b.p("mu")), b.p("sigma"));
            names = vec!["v".into(), "w".into()];
            drift = vec!["w".into(), format!("{mu}*w - {mu}*v^2*w - v")];
            diffusion = vec!["0".into(), format!("{} + {}*v^2", fmt(s), fmt(0.5 * s))];
            initial = InitialCondition::Normal { mean: 0.0, std: 1.0 };
        }
        "rossler" => {
            b = Builder::new(name, &[("a", 0.2), ("b", 0.2), ("c", 5.7), ("sigma", 0.1)], overrides)?;
            let s = fmt(b.p("sigma"));
            names = vec!["x".into(), "y".into(), "z".into()];
            drift = vec![
                "-y - z".into(),
                format!("x + {}*y", fmt(b.p("a"))),
                format!("{} + x*z - {}*z", fmt(b.p("b")), fmt(b.p("c"))),
            ];
            diffusion = vec![format!("{s}*x"), format!("{s}*y"), format!("{s}*z")];
            initial = InitialCondition::Normal { mean: 0.0, std: 1.0 };
        }
        "lorenz96_5" | "lorenz96_10" | "lorenz96_20" => {
            let n: usize = name.trim_start_matches("lorenz96_").parse().expect("static name");
            b = Builder::new(name, &[("F", 4.0), ("sigma", 0.2)], overrides)?;
            let (f, s) = (fmt(b.p("F")), fmt(b.p("sigma")));
            names = (1..=n).map(|i| format!("x{i}")).collect();
            // Cyclic indices: x_0 = x_N.
            let at = |i: isize| &names[(i.rem_euclid(n as isize)) as usize];
            drift = (0..n as isize)
                .map(|i| format!("({} - {})*{} - {} + {f}", at(i + 1), at(i - 2), at(i - 1), at(i)))
                .collect();
            diffusion = (0..n).map(|i| format!("{s}*{}", names[i])).collect();
            initial = InitialCondition::Normal { mean: 0.0, std: 0.1 };
            horizon = 25.0;
            targets = Some(vec![0]);
        }
        "lotka_volterra" => {
            b = Builder::new(
                name,
                &[("alpha", 1.1), ("beta", 0.4), ("delta", 0.1), ("gamma", 0.4), ("sigma", 0.2)],
                overrides,
            )?;
            let s = fmt(b.p("sigma"));
            names = vec!["x".into(), "y".into()];
            drift = vec![
                format!("{}*x - {}*x*y", fmt(b.p("alpha")), fmt(b.p("beta"))),
                format!("{}*x*y - {}*y", fmt(b.p("delta")), fmt(b.p("gamma"))),
            ];
            diffusion = vec![format!("{s}*x"), format!("{s}*y")];
            initial = InitialCondition::Uniform { low: 5.0, high: 10.0 };
            tau = 0.02;
        }
        "fisher_kpp" => {
            b = Builder::new(name, &[("D", 1.0), ("sigma", 0.1)], overrides)?;
            let g = GridSpec::new(vec![64], vec![20.0]);
            names = g.feature_names();
            drift = vec![format!("{}*u_xx + u - u^2", fmt(b.p("D")))];
            diffusion = vec![format!("{}*u", fmt(b.p("sigma")))];
            let values = (0..g.len()).map(|j| 1.0 + g.coordinate(j, 0).sin()).collect();
            initial = InitialCondition::Fixed { values };
            horizon = 1.0;
            tau = 0.02;
            trajectories = 4;
            grid = Some(g);
        }
        "heat_2d" => {
            b = Builder::new(name, &[("D", 0.1), ("alpha", 1.0), ("beta", 1.0)], overrides)?;
            let g = GridSpec::new(vec![16, 16], vec![4.0, 4.0]);
            names = g.feature_names();
            let d = fmt(b.p("D"));
            drift = vec![format!("{d}*u_xx + {d}*u_yy")];
            diffusion = vec![format!("{}*u_x + {}*u_y", fmt(b.p("alpha")), fmt(b.p("beta")))];
            let values = (0..g.len())
                .map(|j| 0.2 * (PI / 2.0 * g.coordinate(j, 0)).sin() * (PI / 2.0 * g.coordinate(j, 1)).cos())
                .collect();
            initial = InitialCondition::Fixed { values };
            horizon = 1.0;
            tau = 0.02;
            trajectories = 4;
            grid = Some(g);
        }
        other => return Err(Error::UnknownEnvironment(other.to_string())),
    }

    let state_dim = grid.as_ref().map_or(names.len(), GridSpec::len);
    let equations = drift.len();
    let env = EnvironmentSpec {
        name: b.name.clone(),
        state_dim,
        drift: trees(&drift, &names)?,
        diffusion: trees(&diffusion, &names)?,
        feature_names: names,
        parameters: b.params,
        initial,
        horizon: overrides.horizon.unwrap_or(horizon),
        // Fields are stepped once per observation so that the observed
        // transitions follow the Euler transition law exactly.
        dt: overrides.dt.unwrap_or(if grid.is_some() { overrides.tau.unwrap_or(tau) } else { dt }),
        tau: overrides.tau.unwrap_or(tau),
        trajectories: overrides.trajectories.unwrap_or(trajectories),
        grid,
        targets: targets.unwrap_or_else(|| (0..equations).collect()),
    };
    env.validate()?;
    Ok(env)
}
