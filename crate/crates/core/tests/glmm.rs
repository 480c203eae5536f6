mod oracles;

use mammocolor::mrmc::{glmm_fit, GlmmConfig};

#[test]
fn recovers_condition_effect_on_a_small_design() {
    let mut sum = 0.0;
    let reps = 4;
    for seed in 0..reps {
        let outcomes = oracles::simulate_glmm(seed, 10, 100, [0.5, 0.8], 0.5, 1.0);
        let fit = glmm_fit(&outcomes, &GlmmConfig::default()).unwrap();
        assert!(fit.converged);
        sum += fit.effect("tdce-only").unwrap().estimate;
    }
    let mean = sum / reps as f64;
    assert!((mean - 0.8).abs() < 0.25, "{mean}");
}

#[test]
fn zero_variance_data_fit_like_logistic_regression() {
    let outcomes = oracles::simulate_glmm(1, 10, 100, [0.4, 0.8], 0.0, 0.0);
    let fit = glmm_fit(&outcomes, &GlmmConfig::default()).unwrap();
    let oracle = oracles::logistic(&outcomes);
    let names = ["intercept", "tdce-only"];
    for (name, o) in names.iter().zip(oracle) {
        let e = fit.effect(name).unwrap().estimate;
        assert!((e - o).abs() < 1e-2, "{name}: {e} vs {o}");
    }
}
