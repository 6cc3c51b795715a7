use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use symsde::fitness::TransitionData;
use symsde::kmsr::{
    km_estimate, kmsr_discover, lasso_objective, polynomial_library, sparse_fit, Binning, KmGrid,
};
use symsde::simulate::{generate_splits, make_environment, EnvOverrides};

/// Exact OU transitions of dx = −x dt + 0.5 dW.
fn ou_series(seed: u64, n: usize, tau: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = (-tau).exp();
    let sd = (0.25 / 2.0 * (1.0 - a * a)).sqrt();
    let mut x = vec![0.0];
    for _ in 1..n {
        let z: f64 = StandardNormal.sample(&mut rng);
        x.push(a * x.last().unwrap() + sd * z);
    }
    x
}

#[test]
fn ou_coefficients_are_recovered() {
    let data = TransitionData::from_series(&ou_series(1, 200_000, 0.01), 0.01);
    let c = km_estimate(&data, 0, 25, 10).unwrap();
    let w: Vec<f64> = c.counts.iter().map(|&n| n as f64).collect();
    let sw: f64 = w.iter().sum();
    let xm = c.centers.iter().zip(&w).map(|(x, w)| w * x[0]).sum::<f64>() / sw;
    let ym = c.drift.iter().zip(&w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxy: f64 = (0..c.len()).map(|k| w[k] * (c.centers[k][0] - xm) * (c.drift[k] - ym)).sum();
    let sxx: f64 = (0..c.len()).map(|k| w[k] * (c.centers[k][0] - xm).powi(2)).sum();
    let slope = sxy / sxx;
    assert!((slope + 1.0).abs() <= 0.1, "slope {slope}");
    let d2 = c.diffusion.iter().sum::<f64>() / c.len() as f64;
    assert!((d2 - 0.5).abs() <= 0.05, "D2 {d2}");
}

fn lv_data() -> TransitionData {
    let overrides = EnvOverrides { trajectories: Some(3), ..Default::default() };
    let env = make_environment("lotka_volterra", &overrides).unwrap();
    TransitionData::from_dataset(&generate_splits(&env, 2).unwrap()[0])
}

#[test]
fn bin_averages_match_independent_accumulation() {
    let data = lv_data();
    let (b, beta) = (7, 3);
    let dims = 2;
    let bounds: Vec<(f64, f64)> = (0..dims)
        .map(|d| {
            let col = &data.features[d];
            (col.iter().copied().fold(f64::INFINITY, f64::min), col.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        })
        .collect();
    let mut acc: std::collections::BTreeMap<Vec<usize>, (usize, f64, f64)> = Default::default();
    for k in 0..data.len() {
        let key: Vec<usize> = (0..dims)
            .map(|d| {
                let (lo, hi) = bounds[d];
                let i = ((data.features[d][k] - lo) / ((hi - lo) / b as f64)).floor() as usize;
                i.min(b - 1)
            })
            .collect();
        let dx = data.next[0][k] - data.features[0][k];
        let e = acc.entry(key).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += dx / data.tau;
        e.2 += dx * dx / data.tau;
    }
    let c = km_estimate(&data, 0, b, beta).unwrap();
    let kept: Vec<_> = acc.iter().filter(|(_, v)| v.0 > beta).collect();
    assert_eq!(c.len(), kept.len());
    for (k, (key, (n, s1, s2))) in kept.into_iter().enumerate() {
        assert_eq!(c.counts[k], *n);
        assert_eq!(c.drift[k], s1 / *n as f64);
        assert_eq!(c.diffusion[k], (s2 / *n as f64).sqrt());
        for d in 0..dims {
            let (lo, hi) = bounds[d];
            let center = lo + (key[d] as f64 + 0.5) * (hi - lo) / b as f64;
            assert!((c.centers[k][d] - center).abs() <= 1e-12 * (1.0 + center.abs()));
        }
    }
}

#[test]
fn binning_partitions_transitions() {
    let data = lv_data();
    for b in [1, 3, 10, 40] {
        let binning = Binning::new(&data, 1, b).unwrap();
        assert_eq!(binning.total(), data.len());
        for beta in [1, 5, 20] {
            if let Ok(c) = binning.retain(beta) {
                assert!(c.counts.iter().sum::<usize>() <= data.len());
                assert!(c.counts.iter().all(|&n| n > beta));
                assert!(c.diffusion.iter().all(|&d| d >= 0.0));
            }
        }
    }
}

#[test]
fn library_sizes() {
    let pts = vec![vec![2.0]];
    let (basis, theta) = polynomial_library(&pts, 1, 3);
    assert_eq!(basis.len(), 4);
    assert_eq!(theta.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0, 8.0]);
    assert_eq!(polynomial_library(&[vec![1.0; 3]], 3, 2).1.ncols(), 10);
    assert_eq!(polynomial_library(&[vec![1.0; 10]], 10, 2).1.ncols(), 66);
}

fn random_problem(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let theta = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let truth: Vec<f64> = (0..cols).map(|j| if j % 2 == 0 { rng.random_range(-3.0..3.0) } else { 0.0 }).collect();
    let y: Vec<f64> = (0..rows)
        .map(|r| (0..cols).map(|j| theta[(r, j)] * truth[j]).sum::<f64>() + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let w: Vec<f64> = (0..rows).map(|_| rng.random_range(1..20) as f64).collect();
    (theta, y, w)
}

#[test]
fn exact_linear_target_is_recovered() {
    let xs: Vec<Vec<f64>> = (0..20).map(|k| vec![-1.0 + 0.1 * k as f64]).collect();
    let (_, theta) = polynomial_library(&xs, 1, 3);
    let y: Vec<f64> = xs.iter().map(|x| 2.0 * x[0]).collect();
    for lambda in [0.01, 0.5, 1.9] {
        let m = sparse_fit(&theta, &y, None, 0.0, lambda);
        assert_eq!(m.support, vec![1]);
        assert!((m.coefficients[0] - 2.0).abs() < 1e-10);
    }
    assert!(sparse_fit(&theta, &y, None, 1e3, 0.05).support.is_empty());
}

/// Gaussian elimination with partial pivoting on the weighted normal equations.
fn normal_equations(theta: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Vec<f64> {
    let p = theta.ncols();
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            a[i][j] = (0..y.len()).map(|r| w[r] * theta[(r, i)] * theta[(r, j)]).sum();
        }
        a[i][p] = (0..y.len()).map(|r| w[r] * theta[(r, i)] * y[r]).sum();
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for row in 0..p {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..=p {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    (0..p).map(|i| a[i][p] / a[i][i]).collect()
}

#[test]
fn unpenalized_fit_is_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (theta, y, w) = random_problem(&mut rng, 40, 5);
        let m = sparse_fit(&theta, &y, Some(&w), 0.0, 0.0);
        let ols = normal_equations(&theta, &y, &w);
        let c = m.dense(5);
        for j in 0..5 {
            assert!((c[j] - ols[j]).abs() <= 1e-8 * (1.0 + ols[j].abs()), "{c:?} vs {ols:?}");
        }
    }
}

/// Accelerated proximal gradient on (1/2W) Σ w (y − Θc)² + α Σ s_j |c_j|.
fn fista(theta: &DMatrix<f64>, y: &[f64], w: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    let (n, p) = (y.len(), theta.ncols());
    let total: f64 = w.iter().sum();
    let s: Vec<f64> =
        (0..p).map(|j| ((0..n).map(|r| w[r] * theta[(r, j)].powi(2)).sum::<f64>() / total).sqrt()).collect();
    let hess = DMatrix::from_fn(p, p, |i, j| (0..n).map(|r| w[r] * theta[(r, i)] * theta[(r, j)]).sum::<f64>() / total);
    let lip = SymmetricEigen::new(hess.clone()).eigenvalues.max();
    let objective = |c: &[f64]| {
        let loss: f64 = (0..n)
            .map(|r| w[r] * (y[r] - (0..p).map(|j| theta[(r, j)] * c[j]).sum::<f64>()).powi(2))
            .sum::<f64>()
            / (2.0 * total);
        loss + alpha * (0..p).map(|j| s[j] * c[j].abs()).sum::<f64>()
    };
    let lin: Vec<f64> = (0..p).map(|j| (0..n).map(|r| w[r] * theta[(r, j)] * y[r]).sum::<f64>() / total).collect();
    let (mut c, mut z, mut t) = (vec![0.0; p], vec![0.0; p], 1.0f64);
    for _ in 0..50_000 {
        let grad: Vec<f64> = (0..p).map(|i| (0..p).map(|j| hess[(i, j)] * z[j]).sum::<f64>() - lin[i]).collect();
        let next: Vec<f64> = (0..p)
            .map(|j| {
                let v = z[j] - grad[j] / lip;
                let cut = alpha * s[j] / lip;
                v.signum() * (v.abs() - cut).max(0.0)
            })
            .collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = (0..p).map(|j| next[j] + (t - 1.0) / t_next * (next[j] - c[j])).collect();
        c = next;
        t = t_next;
    }
    let f = objective(&c);
    (c, f)
}

#[test]
fn lasso_solution_matches_proximal_gradient_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10 {
        let (theta, y, w) = random_problem(&mut rng, 30, 5);
        let alpha = 0.01;
        let m = sparse_fit(&theta, &y, Some(&w), alpha, 0.0);
        let (reference, f_ref) = fista(&theta, &y, &w, alpha);
        let f_ours = lasso_objective(&theta, &y, Some(&w), alpha, &m.dense(5));
        assert!((lasso_objective(&theta, &y, Some(&w), alpha, &reference) - f_ref).abs() <= 1e-12 * (1.0 + f_ref));
        assert!((f_ours - f_ref).abs() <= 1e-6, "{f_ours} vs {f_ref}");
    }
}

#[test]
fn pruning_reaches_a_fixpoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..100 {
        let cols = 3 + k % 6;
        let (theta, y, w) = random_problem(&mut rng, 25, cols);
        let alpha = [0.0, 0.001, 0.01, 0.1][k % 4];
        let lambda = [0.05, 0.2, 0.5][k % 3];
        let m = sparse_fit(&theta, &y, Some(&w), alpha, lambda);
        assert!(m.coefficients.iter().all(|c| c.abs() >= lambda));
        if m.support.is_empty() {
            continue;
        }
        let sub = theta.select_columns(&m.support);
        let again = sparse_fit(&sub, &y, Some(&w), alpha, lambda);
        assert_eq!(again.support, (0..m.support.len()).collect::<Vec<_>>());
        for (a, b) in again.coefficients.iter().zip(&m.coefficients) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

fn double_well() -> (symsde::simulate::EnvironmentSpec, [symsde::simulate::Dataset; 3]) {
    let env = make_environment("double_well_additive", &EnvOverrides::default()).unwrap();
    let splits = generate_splits(&env, 1).unwrap();
    (env, splits)
}

#[test]
fn single_point_grid_equals_direct_fit() {
    let (env, [opt, val, _]) = double_well();
    let grid = KmGrid { bins: vec![25], min_counts: vec![10], alphas: vec![0.01], lambdas: vec![0.1], degree: 3 };
    let r = kmsr_discover(&opt, &val, (&env.drift[0], &env.diffusion[0]), 0, &grid).unwrap();
    let c = km_estimate(&TransitionData::from_dataset(&opt), 0, 25, 10).unwrap();
    let (_, theta) = polynomial_library(&c.centers, 1, 3);
    let w: Vec<f64> = c.counts.iter().map(|&n| n as f64).collect();
    assert_eq!(r.drift, sparse_fit(&theta, &c.drift, Some(&w), 0.01, 0.1));
    assert_eq!(r.diffusion, sparse_fit(&theta, &c.diffusion, Some(&w), 0.01, 0.1));
    assert_eq!(r.table.len(), 1);
}

#[test]
fn full_grid_finds_double_well_structure_and_is_argmin_monotone() {
    let (env, [opt, val, _]) = double_well();
    let truth = (&env.drift[0], &env.diffusion[0]);
    let grid = KmGrid::for_environment("double_well_additive").unwrap();
    let r = kmsr_discover(&opt, &val, truth, 0, &grid).unwrap();
    assert_eq!(r.table.len(), 135);
    // Basis [1, x, x², x³]: support within {x, x³}.
    assert!(!r.drift.support.is_empty());
    assert!(r.drift.support.iter().all(|&j| j == 1 || j == 3), "{:?}", r.drift);
    let reduced = KmGrid { bins: grid.bins.iter().copied().filter(|&b| b != r.drift_config.bins).collect(), ..grid };
    let worse = kmsr_discover(&opt, &val, truth, 0, &reduced).unwrap();
    assert!(worse.drift_mse >= r.drift_mse);
}
