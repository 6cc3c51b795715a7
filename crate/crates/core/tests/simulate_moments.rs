use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symsde::simulate::io::{decode_dataset, encode_dataset};
use symsde::simulate::{
    generate_splits, generate_splits_with, integrate_sde, make_environment, EnvOverrides, EnvironmentSpec,
    InitialCondition, Scheme,
};

fn final_states(env: &EnvironmentSpec, paths: usize, scheme: Scheme, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..paths)
        .map(|_| {
            let t = integrate_sde(env, &mut rng, scheme).unwrap();
            t.state(t.len() - 1)[0]
        })
        .collect()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn ou_reaches_stationary_variance() {
    // dX = -X dt + 0.5 dW: stationary variance 0.5²/2.
    let start = InitialCondition::Fixed { values: vec![0.0] };
    let env = EnvironmentSpec::custom_sde("ou", &["x"], &["-x"], &["0.5"], start, 5.0, 0.01, 0.1, 1).unwrap();
    let (m, v) = mean_var(&final_states(&env, 10_000, Scheme::EulerMaruyama, 1));
    assert!(m.abs() < 0.015, "mean {m}");
    assert!((v - 0.125).abs() <= 0.05 * 0.125, "variance {v}");
}

#[test]
fn heun_follows_stratonovich_mean_for_geometric_noise() {
    // dX = 0.5 X dW from 1: Itô mean stays 1, Stratonovich mean is e^{0.125} at T = 1.
    let start = InitialCondition::Fixed { values: vec![1.0] };
    let env = EnvironmentSpec::custom_sde("gbm", &["x"], &["0"], &["0.5*x"], start, 1.0, 0.001, 0.1, 1).unwrap();
    let (ito, _) = mean_var(&final_states(&env, 10_000, Scheme::EulerMaruyama, 2));
    let (strat, _) = mean_var(&final_states(&env, 10_000, Scheme::HeunStratonovich, 3));
    assert!((ito - 1.0).abs() < 0.02, "{ito}");
    assert!((strat - 0.125f64.exp()).abs() < 0.02, "{strat}");
}

#[test]
fn splits_are_reproducible_and_serialize_losslessly() {
    let overrides = EnvOverrides { trajectories: Some(3), horizon: Some(2.0), ..Default::default() };
    for name in ["double_well_nonlinear", "rossler", "lotka_volterra", "fisher_kpp"] {
        let env = make_environment(name, &overrides).unwrap();
        let a = generate_splits(&env, 21).unwrap();
        let b = generate_splits(&env, 21).unwrap();
        assert_eq!(a, b, "{name}");
        for ds in &a {
            assert_eq!(decode_dataset(&encode_dataset(ds).unwrap()).unwrap(), *ds);
            assert_eq!(ds.shape().1, env.steps() + 1);
        }
        assert_ne!(a[0], a[1]);
        assert_ne!(generate_splits_with(&env, 21, Scheme::HeunStratonovich).unwrap()[0], a[0]);
    }
}
