use crate::expr::ExprTree;
use crate::fitness::{penalized, Objective};

use super::individual::Individual;

/// Sufficient-decrease constant of the backtracking line search.
const ARMIJO: f64 = 1e-4;
/// Step halvings tried before an iteration gives up.
const BACKTRACKS: usize = 30;

/// Objective value and gradient with respect to `theta`. Uses the analytic
/// gradient when the objective has one, central differences otherwise.
fn value_and_gradient<O: Objective + ?Sized>(objective: &O, ind: &Individual, theta: &[f64]) -> (f64, Vec<f64>) {
    let trees = ind.with_constants(theta);
    if let Some(vg) = objective.value_and_gradient(&trees) {
        return vg;
    }
    (objective.value(&trees), central_difference(objective, ind, theta))
}

/// Central finite differences with relative step `1e-6 · max(1, |c|)`.
pub fn central_difference<O: Objective + ?Sized>(objective: &O, ind: &Individual, theta: &[f64]) -> Vec<f64> {
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|j| {
            let h = 1e-6 * theta[j].abs().max(1.0);
            probe[j] = theta[j] + h;
            let up = objective.value(&ind.with_constants(&probe));
            probe[j] = theta[j] - h;
            let down = objective.value(&ind.with_constants(&probe));
            probe[j] = theta[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn finite(v: f64, g: &[f64]) -> bool {
    v.is_finite() && g.iter().all(|x| x.is_finite())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Quasi-Newton (BFGS) refinement of the individual's constants for at most
/// `iters` iterations.
///
/// Each iteration backtracks from the full quasi-Newton step until the
/// objective decreases sufficiently, so fitness never gets worse. The first
/// step moves the largest constant by `eta`. Points with a non-finite value
/// or gradient are never accepted.
pub fn optimize_constants<O: Objective + ?Sized>(ind: &Individual, objective: &O, iters: usize, eta: f64) -> Individual {
    let theta0 = ind.constants();
    let complexity = ind.complexity();
    let n = theta0.len();
    let (mut value, mut grad) =
        if n == 0 || iters == 0 { (objective.value(&ind.trees), Vec::new()) } else { value_and_gradient(objective, ind, &theta0) };
    if n == 0 || iters == 0 || !finite(value, &grad) {
        let mut out = ind.clone();
        out.fitness = Some(penalized(value, complexity));
        out.optimized = true;
        return out;
    }
    let mut theta = theta0;
    // Inverse Hessian approximation, row-major.
    let initial = |g: &[f64]| {
        let scale = eta / max_abs(g).max(f64::MIN_POSITIVE);
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = scale;
        }
        h
    };
    let mut h = initial(&grad);
    let mut updated = false;
    for _ in 0..iters {
        if max_abs(&grad) == 0.0 {
            break;
        }
        let mut dir: Vec<f64> = (0..n).map(|i| -dot(&h[i * n..(i + 1) * n], &grad)).collect();
        let mut slope = dot(&dir, &grad);
        if !(slope < 0.0) {
            h = initial(&grad);
            updated = false;
            dir = (0..n).map(|i| -h[i * n + i] * grad[i]).collect();
            slope = dot(&dir, &grad);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..BACKTRACKS {
            let trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let (tv, tg) = value_and_gradient(objective, ind, &trial);
            if finite(tv, &tg) && tv <= value + ARMIJO * step * slope {
                accepted = Some((trial, tv, tg));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, tv, tg)) = accepted else { break };
        let s: Vec<f64> = trial.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = tg.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if !updated {
                let scale = sy / dot(&y, &y);
                h = vec![0.0; n * n];
                for i in 0..n {
                    h[i * n + i] = scale;
                }
                updated = true;
            }
            // H ← (I − ρsyᵀ) H (I − ρysᵀ) + ρssᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
        let decrease = value - tv;
        theta = trial;
        value = tv;
        grad = tg;
        if decrease <= 1e-12 * value.abs().max(1.0) {
            break;
        }
    }
    let trees: Vec<ExprTree> = ind.with_constants(&theta);
    Individual { roles: ind.roles.clone(), trees, fitness: Some(penalized(value, complexity)), optimized: true }
}
