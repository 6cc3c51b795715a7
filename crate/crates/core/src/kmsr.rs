//! Kramers-Moyal binning followed by sparse polynomial regression.
//!
//! Transitions are binned on a uniform tensor grid over the observed range of
//! the starting states. Bins holding more than `β` transitions yield averaged
//! drift (`D₁`) and diffusion (`D₂`) estimates, which are regressed onto a
//! polynomial library with an L1 penalty and iterated hard thresholding.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eval::mse_to_values;
use crate::expr::{polynomial_to_tree, ExprTree, Monomial, Polynomial};
use crate::fitness::TransitionData;
use crate::simulate::Dataset;
use crate::{Error, Result};

/// Largest supported tensor grid (cells).
pub const MAX_CELLS: usize = 1 << 24;

/// Coordinate-descent stopping rule.
const CD_TOL: f64 = 1e-8;
const CD_SWEEPS: usize = 10_000;

/// One point of the hyperparameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KmConfig {
    pub bins: usize,
    pub min_count: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub degree: u32,
}

/// Candidate values searched for each hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmGrid {
    pub bins: Vec<usize>,
    pub min_counts: Vec<usize>,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub degree: u32,
}

impl KmGrid {
    /// Search grid used for a named environment.
    pub fn for_environment(name: &str) -> Result<KmGrid> {
        let common = |bins: Vec<usize>, degree| KmGrid {
            bins,
            min_counts: vec![1, 10, 20],
            alphas: vec![0.001, 0.01, 0.1],
            lambdas: vec![0.05, 0.1, 0.2],
            degree,
        };
        Ok(match name {
            "double_well_additive" | "double_well_linear" | "double_well_nonlinear" | "van_der_pol"
            | "lotka_volterra" => common(vec![5, 10, 25, 50, 100], 3),
            "rossler" => common(vec![5, 10, 25], 2),
            "lorenz96_5" => common(vec![5, 10, 15], 2),
            "lorenz96_10" => common(vec![4], 2),
            "lorenz96_20" => common(vec![2], 2),
            other => return Err(Error::Config(format!("no KM-SR grid for environment `{other}`"))),
        })
    }

    pub fn size(&self) -> usize {
        self.bins.len() * self.min_counts.len() * self.alphas.len() * self.lambdas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.bins.is_empty()
            && !self.min_counts.is_empty()
            && !self.alphas.is_empty()
            && !self.lambdas.is_empty()
            && self.bins.iter().all(|&b| b >= 1)
            && self.min_counts.iter().all(|&b| b >= 1)
            && self.alphas.iter().chain(&self.lambdas).all(|&a| a >= 0.0 && a.is_finite())
            && self.degree >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("KM-SR grid needs non-empty values with b, β, d ≥ 1 and α, λ ≥ 0".into()))
        }
    }
}

/// Per-bin averaged Kramers-Moyal coefficients of one variable.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedCoefficients {
    /// Bin centers, one row per retained bin.
    pub centers: Vec<Vec<f64>>,
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub counts: Vec<usize>,
}

impl BinnedCoefficients {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Accumulated sums for every occupied cell of a tensor grid.
#[derive(Clone, Debug)]
pub struct Binning {
    bins: usize,
    lo: Vec<f64>,
    width: Vec<f64>,
    /// `(cell, count, Σd₁, Σd₂')` for occupied cells in increasing cell order.
    cells: Vec<(usize, usize, f64, f64)>,
}

/// Bin index of `x` along one axis; the top edge belongs to the last bin.
fn axis_bin(x: f64, lo: f64, width: f64, bins: usize) -> usize {
    if width <= 0.0 {
        return 0;
    }
    let i = ((x - lo) / width).floor();
    if i < 0.0 {
        0
    } else {
        (i as usize).min(bins - 1)
    }
}

impl Binning {
    /// Bins every transition of `data` by its starting state, accumulating the
    /// increments of `variable`.
    pub fn new(data: &TransitionData, variable: usize, bins: usize) -> Result<Binning> {
        let dims = data.equation_count();
        let cells_total = (bins as u128).checked_pow(dims as u32).unwrap_or(u128::MAX);
        if bins == 0 || cells_total > MAX_CELLS as u128 {
            return Err(Error::GridTooLarge { bins, dims });
        }
        let cells_total = cells_total as usize;
        let n = data.len();
        let mut lo = Vec::with_capacity(dims);
        let mut width = Vec::with_capacity(dims);
        for d in 0..dims {
            let col = data.previous(d);
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lo.push(min);
            width.push((max - min) / bins as f64);
        }
        let mut count = vec![0usize; cells_total];
        let mut s1 = vec![0.0f64; cells_total];
        let mut s2 = vec![0.0f64; cells_total];
        let tau = data.tau;
        let (prev, next) = (data.previous(variable), &data.next[variable]);
        for k in 0..n {
            let mut cell = 0usize;
            for d in 0..dims {
                cell = cell * bins + axis_bin(data.features[d][k], lo[d], width[d], bins);
            }
            let dx = next[k] - prev[k];
            count[cell] += 1;
            s1[cell] += dx / tau;
            s2[cell] += dx * dx / tau;
        }
        let cells = (0..cells_total).filter(|&c| count[c] > 0).map(|c| (c, count[c], s1[c], s2[c])).collect();
        Ok(Binning { bins, lo, width, cells })
    }

    pub fn center(&self, cell: usize) -> Vec<f64> {
        let dims = self.lo.len();
        let mut idx = vec![0usize; dims];
        let mut c = cell;
        for d in (0..dims).rev() {
            idx[d] = c % self.bins;
            c /= self.bins;
        }
        (0..dims).map(|d| self.lo[d] + (idx[d] as f64 + 0.5) * self.width[d]).collect()
    }

    /// Total binned transitions.
    pub fn total(&self) -> usize {
        self.cells.iter().map(|c| c.1).sum()
    }

    /// Bins with more than `min_count` transitions.
    pub fn retain(&self, min_count: usize) -> Result<BinnedCoefficients> {
        let mut out =
            BinnedCoefficients { centers: Vec::new(), drift: Vec::new(), diffusion: Vec::new(), counts: Vec::new() };
        for &(cell, n, s1, s2) in &self.cells {
            if n > min_count {
                out.centers.push(self.center(cell));
                out.drift.push(s1 / n as f64);
                out.diffusion.push((s2 / n as f64).sqrt());
                out.counts.push(n);
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyBinning { bins: self.bins, min_count });
        }
        Ok(out)
    }
}

/// Kramers-Moyal estimates for `variable` on a `b`-per-axis grid, keeping
/// bins with more than `min_count` transitions.
pub fn km_estimate(data: &TransitionData, variable: usize, bins: usize, min_count: usize) -> Result<BinnedCoefficients> {
    Binning::new(data, variable, bins)?.retain(min_count)
}

/// All exponent vectors over `vars` variables with total degree ≤ `degree`.
///
/// Graded order: by total degree, then lexicographically descending exponents,
/// e.g. `1, x, y, x², xy, y²`.
pub fn monomials(vars: usize, degree: u32) -> Vec<Monomial> {
    fn fill(vars: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Monomial>) {
        if prefix.len() + 1 == vars {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            fill(vars, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for d in 0..=degree {
        if vars == 0 {
            if d == 0 {
                out.push(Vec::new());
            }
            continue;
        }
        fill(vars, d, &mut Vec::with_capacity(vars), &mut out);
    }
    out
}

fn monomial_value(m: &[u32], x: &[f64]) -> f64 {
    m.iter().zip(x).map(|(&e, &v)| v.powi(e as i32)).product()
}

/// Design matrix: one row per point, one column per monomial of
/// [`monomials`]`(vars, degree)`.
pub fn polynomial_library(points: &[Vec<f64>], vars: usize, degree: u32) -> (Vec<Monomial>, DMatrix<f64>) {
    let basis = monomials(vars, degree);
    let theta = DMatrix::from_fn(points.len(), basis.len(), |r, c| monomial_value(&basis[c], &points[r]));
    (basis, theta)
}

/// Sparse coefficients over the columns of a design matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseModel {
    /// Surviving column indices, increasing.
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
}

impl SparseModel {
    pub fn zero() -> Self {
        SparseModel { support: Vec::new(), coefficients: Vec::new() }
    }

    /// Dense coefficient vector of length `columns`.
    pub fn dense(&self, columns: usize) -> Vec<f64> {
        let mut c = vec![0.0; columns];
        for (&j, &v) in self.support.iter().zip(&self.coefficients) {
            c[j] = v;
        }
        c
    }

    pub fn polynomial(&self, basis: &[Monomial], vars: usize) -> Polynomial {
        let mut p = Polynomial::zero(vars);
        for (&j, &c) in self.support.iter().zip(&self.coefficients) {
            let mut term = Polynomial::constant(vars, c);
            for (v, &e) in basis[j].iter().enumerate() {
                for _ in 0..e {
                    term = term.mul(&Polynomial::variable(vars, v)).expect("single monomial");
                }
            }
            p = p.add(&term);
        }
        p
    }

    pub fn to_tree(&self, basis: &[Monomial], vars: usize) -> ExprTree {
        polynomial_to_tree(&self.polynomial(basis, vars))
    }
}

fn weights_or_ones(weights: Option<&[f64]>, n: usize) -> Vec<f64> {
    weights.map_or_else(|| vec![1.0; n], <[f64]>::to_vec)
}

/// Weighted root-mean-square of each column.
fn column_scales(theta: &DMatrix<f64>, w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    (0..theta.ncols())
        .map(|j| {
            let s: f64 = theta.column(j).iter().zip(w).map(|(v, wi)| wi * v * v).sum();
            (s / total).sqrt()
        })
        .collect()
}

/// Lasso objective `(1/2W) Σ w (y − Θc)² + α Σ |c_j|·s_j`, where `s_j` is the
/// weighted RMS of column `j` (the penalty acts on standardized coefficients).
pub fn lasso_objective(theta: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, alpha: f64, c: &[f64]) -> f64 {
    let w = weights_or_ones(weights, y.len());
    let total: f64 = w.iter().sum();
    let pred = theta * DVector::from_column_slice(c);
    let loss: f64 = (0..y.len()).map(|r| w[r] * (y[r] - pred[r]).powi(2)).sum::<f64>() / (2.0 * total);
    let scales = column_scales(theta, &w);
    loss + alpha * c.iter().zip(&scales).map(|(v, s)| v.abs() * s).sum::<f64>()
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Minimizes [`lasso_objective`] over the columns in `active`.
fn solve(theta: &DMatrix<f64>, y: &[f64], w: &[f64], alpha: f64, active: &[usize]) -> Vec<f64> {
    let n = y.len();
    let total: f64 = w.iter().sum();
    let scales = column_scales(theta, w);
    // Columns that vanish on every row carry no information.
    let cols: Vec<usize> = active.iter().copied().filter(|&j| scales[j] > 0.0).collect();
    let p = cols.len();
    let mut out = vec![0.0; active.len()];
    if p == 0 {
        return out;
    }
    let z = DMatrix::from_fn(n, p, |r, c| theta[(r, cols[c])] / scales[cols[c]] * w[r].sqrt());
    let yw = DVector::from_iterator(n, (0..n).map(|r| y[r] * w[r].sqrt()));
    let b: Vec<f64> = if alpha == 0.0 {
        let svd = z.clone().svd(true, true);
        let eps = 1e-12 * svd.singular_values.max().max(1.0);
        svd.solve(&yw, eps).map(|v| v.iter().copied().collect()).unwrap_or_else(|_| vec![0.0; p])
    } else {
        let gram = z.transpose() * &z / total;
        let q = z.transpose() * &yw / total;
        let mut b = vec![0.0; p];
        for _ in 0..CD_SWEEPS {
            let mut delta: f64 = 0.0;
            for j in 0..p {
                let mut rho = q[j];
                for k in 0..p {
                    if k != j {
                        rho -= gram[(j, k)] * b[k];
                    }
                }
                let new = soft(rho, alpha) / gram[(j, j)];
                delta = delta.max((new - b[j]).abs());
                b[j] = new;
            }
            if delta < CD_TOL {
                break;
            }
        }
        b
    };
    for (k, &j) in cols.iter().enumerate() {
        let pos = active.iter().position(|&a| a == j).expect("active column");
        out[pos] = b[k] / scales[j];
    }
    out
}

/// L1-regularized least squares with iterated hard thresholding: columns with
/// `|c| < λ` are removed and the rest refitted until nothing changes.
///
/// Columns are standardized to unit weighted RMS inside the solver; returned
/// coefficients are on the original scale. With `α = 0` the fit is ordinary
/// (weighted) least squares.
pub fn sparse_fit(theta: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>, alpha: f64, lambda: f64) -> SparseModel {
    assert_eq!(theta.nrows(), y.len());
    let w = weights_or_ones(weights, y.len());
    let mut active: Vec<usize> = (0..theta.ncols()).collect();
    loop {
        let c = solve(theta, y, &w, alpha, &active);
        let keep: Vec<usize> = (0..active.len()).filter(|&k| c[k] != 0.0 && c[k].abs() >= lambda).collect();
        if keep.len() == active.len() {
            return SparseModel { support: active, coefficients: c };
        }
        if keep.is_empty() {
            return SparseModel::zero();
        }
        active = keep.into_iter().map(|k| active[k]).collect();
    }
}

/// One row of the grid-search report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub bins: usize,
    pub min_count: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub retained_bins: usize,
    pub drift_mse: Option<f64>,
    pub diffusion_mse: Option<f64>,
    pub error: Option<String>,
}

/// Selected drift and diffusion for one variable.
#[derive(Clone, Debug, PartialEq)]
pub struct KmsrResult {
    pub variable: usize,
    pub basis: Vec<Monomial>,
    pub drift: SparseModel,
    pub diffusion: SparseModel,
    pub drift_config: KmConfig,
    pub diffusion_config: KmConfig,
    pub drift_mse: f64,
    pub diffusion_mse: f64,
    pub table: Vec<GridRow>,
}

impl KmsrResult {
    pub fn drift_tree(&self) -> ExprTree {
        self.drift.to_tree(&self.basis, self.basis.first().map_or(0, Vec::len))
    }

    pub fn diffusion_tree(&self) -> ExprTree {
        self.diffusion.to_tree(&self.basis, self.basis.first().map_or(0, Vec::len))
    }
}

/// Grid search for one variable. Every candidate is fitted on `optimization`
/// and scored by drift and diffusion MSE against `truth` on `validation`;
/// drift and diffusion are selected independently. Ties keep the candidate
/// that comes first in grid order.
pub fn kmsr_discover(
    optimization: &Dataset,
    validation: &Dataset,
    truth: (&ExprTree, &ExprTree),
    variable: usize,
    grid: &KmGrid,
) -> Result<KmsrResult> {
    grid.validate()?;
    if optimization.grid().is_some() {
        return Err(Error::Config("KM-SR applies to ordinary SDE datasets only".into()));
    }
    let data = TransitionData::from_dataset(optimization);
    let vars = data.equation_count();
    let val_cols_owned = validation.feature_columns();
    let val_cols: Vec<&[f64]> = val_cols_owned.iter().map(Vec::as_slice).collect();
    let basis = monomials(vars, grid.degree);
    let rows = val_cols.first().map_or(0, |c| c.len());
    let (mut true_drift, mut true_diff) = (vec![0.0; rows], vec![0.0; rows]);
    truth.0.eval_columns(&val_cols, &mut true_drift);
    truth.1.eval_columns(&val_cols, &mut true_diff);

    struct Best {
        mse: f64,
        model: SparseModel,
        cfg: KmConfig,
    }
    let mut best_drift: Option<Best> = None;
    let mut best_diff: Option<Best> = None;
    let mut table = Vec::with_capacity(grid.size());
    let mut last_error = None;

    for &bins in &grid.bins {
        let binning = Binning::new(&data, variable, bins);
        for &min_count in &grid.min_counts {
            let coeffs = match &binning {
                Ok(b) => b.retain(min_count),
                Err(Error::GridTooLarge { bins, dims }) => Err(Error::GridTooLarge { bins: *bins, dims: *dims }),
                Err(e) => Err(Error::Numerical(e.to_string())),
            };
            let prepared = coeffs.map(|c| {
                let (_, theta) = polynomial_library(&c.centers, vars, grid.degree);
                let w: Vec<f64> = c.counts.iter().map(|&n| n as f64).collect();
                (c, theta, w)
            });
            for &alpha in &grid.alphas {
                for &lambda in &grid.lambdas {
                    let cfg = KmConfig { bins, min_count, alpha, lambda, degree: grid.degree };
                    let mut row = GridRow {
                        bins,
                        min_count,
                        alpha,
                        lambda,
                        retained_bins: 0,
                        drift_mse: None,
                        diffusion_mse: None,
                        error: None,
                    };
                    match &prepared {
                        Err(e) => {
                            row.error = Some(e.to_string());
                            last_error = Some(e.to_string());
                        }
                        Ok((c, theta, w)) => {
                            row.retained_bins = c.len();
                            let drift = sparse_fit(theta, &c.drift, Some(w), alpha, lambda);
                            let diff = sparse_fit(theta, &c.diffusion, Some(w), alpha, lambda);
                            let dm = mse_to_values(&drift.to_tree(&basis, vars), &true_drift, &val_cols, false);
                            let gm = mse_to_values(&diff.to_tree(&basis, vars), &true_diff, &val_cols, true);
                            row.drift_mse = Some(dm);
                            row.diffusion_mse = Some(gm);
                            if best_drift.as_ref().is_none_or(|b| dm < b.mse) {
                                best_drift = Some(Best { mse: dm, model: drift, cfg });
                            }
                            if best_diff.as_ref().is_none_or(|b| gm < b.mse) {
                                best_diff = Some(Best { mse: gm, model: diff, cfg });
                            }
                        }
                    }
                    table.push(row);
                }
            }
        }
    }
    let (Some(d), Some(g)) = (best_drift, best_diff) else {
        return Err(Error::Numerical(format!(
            "every KM-SR candidate failed: {}",
            last_error.unwrap_or_else(|| "no candidates".into())
        )));
    };
    Ok(KmsrResult {
        variable,
        basis,
        drift: d.model,
        diffusion: g.model,
        drift_config: d.cfg,
        diffusion_config: g.cfg,
        drift_mse: d.mse,
        diffusion_mse: g.mse,
        table,
    })
}
