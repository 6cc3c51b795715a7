use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::expr::ExprTree;
use crate::{Error, Result};

use super::env::EnvironmentSpec;
use super::grid::GridSpec;

/// Maximum integration attempts before a trajectory is declared divergent.
pub const MAX_ATTEMPTS: usize = 10;

/// States beyond this magnitude count as a blow-up.
pub const BLOW_UP: f64 = 1e8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Itô interpretation; matches the Euler transition density used for fitting.
    #[default]
    EulerMaruyama,
    /// Predictor-corrector for the Stratonovich interpretation.
    HeunStratonovich,
}

impl Scheme {
    pub fn parse(text: &str) -> Option<Scheme> {
        match text.replace('-', "_").as_str() {
            "euler_maruyama" | "em" => Some(Scheme::EulerMaruyama),
            "heun_stratonovich" | "heun" => Some(Scheme::HeunStratonovich),
            _ => None,
        }
    }
}

/// A drift/diagonal-diffusion system ready for time stepping.
///
/// An empty `diffusion` slice means a deterministic system. With a grid the
/// single drift/diffusion pair is applied pointwise over the derived features.
#[derive(Clone, Copy, Debug)]
pub struct System<'a> {
    pub drift: &'a [ExprTree],
    pub diffusion: &'a [ExprTree],
    pub grid: Option<&'a GridSpec>,
    pub dim: usize,
}

impl<'a> System<'a> {
    pub fn from_env(env: &'a EnvironmentSpec) -> Self {
        System { drift: &env.drift, diffusion: &env.diffusion, grid: env.grid.as_ref(), dim: env.state_dim }
    }

    pub fn is_deterministic(&self) -> bool {
        self.diffusion.is_empty()
    }

    fn rates(&self, x: &[f64], f: &mut [f64], g: &mut [f64], ws: &mut Vec<Vec<f64>>) {
        match self.grid {
            None => {
                for (fi, t) in f.iter_mut().zip(self.drift) {
                    *fi = t.eval(x);
                }
                for (gi, t) in g.iter_mut().zip(self.diffusion) {
                    *gi = t.eval(x);
                }
            }
            Some(grid) => {
                if ws.len() != grid.feature_count() {
                    *ws = vec![vec![0.0; grid.len()]; grid.feature_count()];
                }
                {
                    let mut refs: Vec<&mut [f64]> = ws.iter_mut().map(|c| c.as_mut_slice()).collect();
                    grid.features(x, &mut refs);
                }
                let cols: Vec<&[f64]> = ws.iter().map(|c| c.as_slice()).collect();
                self.drift[0].eval_columns(&cols, f);
                if let Some(t) = self.diffusion.first() {
                    t.eval_columns(&cols, g);
                }
            }
        }
    }

    /// Integrates from `x0` and records `steps + 1` states, one every
    /// `substeps` increments of size `dt`. Returns `None` on a blow-up.
    #[allow(clippy::too_many_arguments)]
    pub fn integrate_path<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        steps: usize,
        substeps: usize,
        dt: f64,
        scheme: Scheme,
        rng: &mut R,
    ) -> Option<Vec<f64>> {
        let n = self.dim;
        assert_eq!(x0.len(), n);
        let stochastic = !self.is_deterministic();
        let sqrt_dt = dt.sqrt();
        let mut out = Vec::with_capacity((steps + 1) * n);
        out.extend_from_slice(x0);
        let mut x = x0.to_vec();
        let (mut f0, mut g0) = (vec![0.0; n], vec![0.0; n]);
        let (mut f1, mut g1) = (vec![0.0; n], vec![0.0; n]);
        let mut xb = vec![0.0; n];
        let mut dw = vec![0.0; n];
        let mut ws = Vec::new();
        for _ in 0..steps {
            for _ in 0..substeps {
                self.rates(&x, &mut f0, &mut g0, &mut ws);
                if stochastic {
                    for w in dw.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *w = z * sqrt_dt;
                    }
                }
                match scheme {
                    Scheme::EulerMaruyama => {
                        for i in 0..n {
                            x[i] += f0[i] * dt + g0[i] * dw[i];
                        }
                    }
                    Scheme::HeunStratonovich => {
                        for i in 0..n {
                            xb[i] = x[i] + f0[i] * dt + g0[i] * dw[i];
                        }
                        self.rates(&xb, &mut f1, &mut g1, &mut ws);
                        for i in 0..n {
                            x[i] += 0.5 * (f0[i] + f1[i]) * dt + 0.5 * (g0[i] + g1[i]) * dw[i];
                        }
                    }
                }
            }
            if !x.iter().all(|v| v.abs() <= BLOW_UP) {
                return None;
            }
            out.extend_from_slice(&x);
        }
        Some(out)
    }
}

/// One observed path: `states` is `(K+1) × dim`, row-major, at `t_k = t0 + k·τ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub tau: f64,
    pub dim: usize,
    pub states: Vec<f64>,
    /// Seed of the attempt that produced the path.
    pub seed: u64,
}

impl Trajectory {
    /// Number of observations `K + 1`.
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.tau
    }
}

/// Integrates `env` from a sampled initial condition. Divergent attempts are
/// retried with a fresh seed drawn from `rng`, at most [`MAX_ATTEMPTS`] times.
pub fn integrate_sde<R: RngCore + ?Sized>(env: &EnvironmentSpec, rng: &mut R, scheme: Scheme) -> Result<Trajectory> {
    env.validate()?;
    let sys = System::from_env(env);
    for _ in 0..MAX_ATTEMPTS {
        let seed = rng.next_u64();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x0 = env.initial.sample(env.state_dim, &mut r);
        if let Some(states) = sys.integrate_path(&x0, env.steps(), env.substeps(), env.dt, scheme, &mut r) {
            return Ok(Trajectory { t0: 0.0, tau: env.tau, dim: env.state_dim, states, seed });
        }
    }
    Err(Error::Diverged { env: env.name.clone(), attempts: MAX_ATTEMPTS })
}

/// SPDE form of [`integrate_sde`]; the environment must carry a grid.
pub fn integrate_spde<R: RngCore + ?Sized>(env: &EnvironmentSpec, rng: &mut R, scheme: Scheme) -> Result<Trajectory> {
    if env.grid.is_none() {
        return Err(Error::Config(format!("`{}` has no spatial grid", env.name)));
    }
    integrate_sde(env, rng, scheme)
}
