use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symsde::eval::{component_mse, generative_sample, select_model, structure_match, Model, SampleSettings, Selection};
use symsde::evolution::Individual;
use symsde::expr::{grow, parse, LeafLaw};
use symsde::fitness::Role;
use symsde::simulate::{generate_splits, make_environment, EnvOverrides, EnvironmentSpec, InitialCondition};
use symsde::ExprTree;

fn xyz() -> Vec<String> {
    ["x", "y", "z"].iter().map(|s| s.to_string()).collect()
}

fn cols(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(Vec::as_slice).collect()
}

fn small_env(name: &str) -> EnvironmentSpec {
    make_environment(name, &EnvOverrides { trajectories: Some(3), horizon: Some(5.0), ..Default::default() }).unwrap()
}

#[test]
fn mse_of_truth_and_unit_offset() {
    let env = small_env("rossler");
    let [_, _, test] = generate_splits(&env, 1).unwrap();
    let owned = test.feature_columns();
    let c = cols(&owned);
    assert_eq!(component_mse(&env.drift, &env.drift, &c, false), 0.0);
    let shifted: Vec<ExprTree> = env.drift.iter().map(|t| ExprTree::add(t.clone(), ExprTree::constant(1.0))).collect();
    assert!((component_mse(&shifted, &env.drift, &c, false) - 1.0).abs() < 1e-9);
}

#[test]
fn mse_ignores_trajectory_order_and_grouping() {
    let env = make_environment("double_well_linear", &EnvOverrides { trajectories: Some(6), ..Default::default() }).unwrap();
    let [_, _, test] = generate_splits(&env, 2).unwrap();
    let model = vec![parse("0.9*x - x*x*x", &["x".to_string()]).unwrap()];
    let score = |idx: &[usize]| {
        let owned = test.subset(idx).feature_columns();
        component_mse(&model, &env.drift, &cols(&owned), false)
    };
    let base = score(&[0, 1, 2, 3, 4, 5]);
    assert!((score(&[5, 3, 1, 0, 2, 4]) - base).abs() <= 1e-12 * base);
    let (a, b) = (score(&[0, 1, 2]), score(&[3, 4, 5]));
    assert!(((a + b) / 2.0 - base).abs() <= 1e-12 * base);
}

/// Row-by-row validation score: mean drift error plus mean |diffusion| error.
fn naive_score(ind: &Individual, env: &EnvironmentSpec, columns: &[Vec<f64>]) -> f64 {
    let rows = columns[0].len();
    let point = |r: usize| columns.iter().map(|c| c[r]).collect::<Vec<f64>>();
    let mut drift = (0.0, 0);
    let mut diffusion = (0.0, 0);
    for (role, tree) in ind.roles.iter().zip(&ind.trees) {
        let (truth, absolute, acc) = match *role {
            Role::Drift(i) => (&env.drift[i], false, &mut drift),
            Role::Diffusion(i) => (&env.diffusion[i], true, &mut diffusion),
        };
        let mut s = 0.0;
        for r in 0..rows {
            let (m, t) = (tree.eval(&point(r)), truth.eval(&point(r)));
            let d = if absolute { m.abs() - t.abs() } else { m - t };
            s += d * d;
        }
        acc.0 += s / rows as f64;
        acc.1 += 1;
    }
    let mean = |(s, n): (f64, usize)| if n == 0 { 0.0 } else { s / n as f64 };
    let total = mean(drift) + mean(diffusion);
    if total.is_finite() {
        total
    } else {
        f64::INFINITY
    }
}

fn random_front(rng: &mut ChaCha8Rng, roles: &[Role], features: usize, size: usize) -> Vec<Individual> {
    let law = LeafLaw::new(features);
    (0..size)
        .map(|_| {
            let trees = roles
                .iter()
                .map(|_| {
                    let depth = rng.random_range(1..=4);
                    grow(rng, depth, &law)
                })
                .collect();
            Individual::new(roles.to_vec(), trees)
        })
        .collect()
}

#[test]
fn selection_equals_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases: [(&str, Vec<Role>); 2] = [
        ("double_well_additive", vec![Role::Drift(0), Role::Diffusion(0)]),
        ("rossler", vec![Role::Drift(0), Role::Drift(1), Role::Drift(2)]),
    ];
    for (name, roles) in cases {
        let env = small_env(name);
        let [_, val, _] = generate_splits(&env, 4).unwrap();
        let owned = val.feature_columns();
        for _ in 0..25 {
            let front = random_front(&mut rng, &roles, env.feature_names.len(), 20);
            let chosen = select_model(&front, &env, &cols(&owned), Selection::Sum).unwrap();
            let scores: Vec<f64> = front.iter().map(|i| naive_score(i, &env, &owned)).collect();
            let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
            assert!(scores[chosen] <= best * (1.0 + 1e-12), "{scores:?} chose {chosen}");
        }
    }
}

#[test]
fn selection_of_trivial_fronts() {
    let env = small_env("double_well_additive");
    let [_, val, _] = generate_splits(&env, 5).unwrap();
    let owned = val.feature_columns();
    let roles = vec![Role::Drift(0), Role::Diffusion(0)];
    let truth = Individual::new(roles.clone(), vec![env.drift[0].clone(), env.diffusion[0].clone()]);
    let n = vec!["x".to_string()];
    let off = Individual::new(roles, vec![parse("x - 1.3*x*x*x", &n).unwrap(), env.diffusion[0].clone()]);
    for sel in [Selection::Sum, Selection::Drift] {
        assert_eq!(select_model(std::slice::from_ref(&off), &env, &cols(&owned), sel), Some(0));
        assert_eq!(select_model(&[off.clone(), truth.clone()], &env, &cols(&owned), sel), Some(1));
        assert_eq!(select_model(&[], &env, &cols(&owned), sel), None);
    }
}

#[test]
fn table_one_structure_verdicts() {
    let n = xyz();
    let p = |s: &str| parse(s, &n).unwrap();
    assert!(structure_match(&p("-x - 0.981*y"), &p("-x - y"), 3));
    assert!(!structure_match(&p("0.064*z + 0.055"), &p("0.1*z"), 3));
    assert!(!structure_match(&p("0.306"), &p("0.1*x"), 3));
    assert!(structure_match(&p("0.868*x*z - 4.849*z + 0.157"), &p("x*z - 5.7*z + 0.2"), 3));
    // A small but not negligible constant is a structural deviation.
    assert!(!structure_match(&p("0.091*z - 0.008"), &p("0.1*z"), 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn structure_match_is_reflexive_and_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let law = LeafLaw::new(3);
        let a = grow(&mut rng, 4, &law);
        let b = grow(&mut rng, 4, &law);
        prop_assert!(structure_match(&a, &a, 3));
        prop_assert_eq!(structure_match(&a, &b, 3), structure_match(&b, &a, 3));
    }
}

#[test]
fn generative_sampling_contracts() {
    let env = make_environment("double_well_additive", &EnvOverrides::default()).unwrap();
    let settings = SampleSettings::for_env(&env);
    let x0 = [1.0];
    let zero = vec![ExprTree::constant(0.0)];
    let flat = generative_sample(&env.drift, &zero, None, &x0, settings, 20, 1).unwrap();
    assert_eq!(flat.paths, 20);
    assert!(flat.std.iter().flatten().all(|&s| s == 0.0));
    let ode = generative_sample(&env.drift, &[], None, &x0, settings, 50, 1).unwrap();
    assert_eq!(ode.paths, 1);
    assert!(ode.std.iter().flatten().all(|&s| s == 0.0));

    let a = generative_sample(&env.drift, &env.diffusion, None, &x0, settings, 50, 7).unwrap();
    let b = generative_sample(&env.drift, &env.diffusion, None, &x0, settings, 50, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mean.len(), env.steps() + 1);
    assert!(a.mean.iter().chain(&a.std).all(|row| row.len() == 1));
    assert_eq!((a.diverged, a.flagged), (0, false));
    // Late-time spread: positive and within the double well's reach.
    let late: Vec<f64> = a.std[a.std.len() / 2..].iter().map(|r| r[0]).collect();
    assert!(late.iter().all(|&s| s > 0.05 && s < 2.0), "{late:?}");
}

fn model(drift: [&str; 3], diffusion: [&str; 3]) -> Model {
    let n = xyz();
    let map = |texts: [&str; 3]| -> BTreeMap<usize, ExprTree> {
        texts.iter().enumerate().map(|(i, s)| (i, parse(s, &n).unwrap())).collect()
    };
    Model { drift: map(drift), diffusion: map(diffusion) }
}

#[test]
fn table_one_gp_sde_beats_km_sr_on_fresh_data() {
    // Ground truth exactly as the table's reference row.
    let env = EnvironmentSpec::custom_sde(
        "rossler_table",
        &["x", "y", "z"],
        &["-x - y", "x + 0.2*y", "x*z - 5.7*z + 0.2"],
        &["0.1*x", "0.1*y", "0.1*z"],
        InitialCondition::Normal { mean: 0.0, std: 1.0 },
        50.0,
        0.001,
        0.01,
        8,
    )
    .unwrap();
    let [_, _, test] = generate_splits(&env, 11).unwrap();
    let owned = test.feature_columns();
    let c = cols(&owned);
    let km = model(
        ["-0.950*x - 1.486*y", "1.003*x + 0.198*y", "0.868*x*z - 4.849*z + 0.157"],
        ["0.306", "0.146*y", "0.064*z + 0.055"],
    );
    let gp = model(
        ["-x - 0.981*y", "x + 0.191*y", "x*z - 5.670*z + 0.188"],
        ["0.083*x", "0.083*y", "0.091*z - 0.008"],
    );
    assert!(gp.drift_mse(&env, &c) < km.drift_mse(&env, &c));
    assert!(gp.diffusion_mse(&env, &c) < km.diffusion_mse(&env, &c));
    for i in 0..3 {
        assert!(km.drift.get(&i).is_some_and(|m| structure_match(m, &env.drift[i], 3)));
    }
}
