use fracbayes::gp::{self, GpConfig};
use fracbayes::harness::{self, ExperimentConfig};
use fracbayes::identifiability::{TruthFunction, TruthSpec};
use fracbayes::model_space::ModelIndex;
use fracbayes::numerics::rng_from_seed;
use rand::RngExt;

fn rate_config(replicates: usize) -> ExperimentConfig {
    let v = serde_json::json!({
        "schema_version": 1,
        "experiment": "rate",
        "truth": {
            "function": { "kind": "additive_sine", "amplitude": 1.0, "frequency": 1 },
            "support": [1],
            "beta": 2.0
        },
        "p": 2,
        "d0": 2,
        "n_grid": [50, 100, 200, 400],
        "replicates": replicates,
        "seed": 17,
        "noise_sd": 0.5,
        "gp": { "sigma": 0.5 },
        "test_points": 500
    });
    ExperimentConfig::from_json(&v.to_string()).unwrap()
}

#[test]
fn error_decays_at_a_nonparametric_rate_and_se_shrinks_with_replicates() {
    let small = harness::run_experiment(&rate_config(10), 0).unwrap();
    assert!(small.ok(), "{:?}", small.errors);
    let fit = small.fit_for("l2_error", 1.0).unwrap();
    assert!((-0.6..=-0.2).contains(&fit.slope), "slope {}", fit.slope);

    let large = harness::run_experiment(&rate_config(20), 0).unwrap();
    let se = |r: &harness::ExperimentResult| -> f64 {
        let rows = r.summary_for("l2_error", 1.0);
        rows.iter().map(|s| s.se).sum::<f64>() / rows.len() as f64
    };
    let ratio = se(&small) / se(&large);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() <= 0.5, "se ratio {ratio}");
}

#[test]
fn dropping_a_relevant_covariate_costs_at_least_the_gap() {
    // f* = sin 2πx₁ + sin 2πx₂ has gap δ = √0.5 for any model missing x₂
    let truth = TruthSpec::new(
        TruthFunction::AdditiveSine {
            amplitude: 1.0,
            frequency: 1,
        },
        ModelIndex::new(&[1, 2]).unwrap(),
    );
    let data = harness::generate_regression_data(&truth, 3, 300, 0.3, 5).unwrap();
    let cfg = GpConfig {
        sigma: 0.3,
        ..Default::default()
    };
    let mut rng = rng_from_seed(6);
    let m = 4000;
    let test: Vec<f64> = (0..3 * m).map(|_| rng.random::<f64>()).collect();
    let l2 = |model: &ModelIndex| {
        let pred = gp::averaged_predictive_mean(&data, model, &cfg, 1.0, &test).unwrap();
        let sq: f64 = pred
            .iter()
            .enumerate()
            .map(|(i, f)| (f - truth.eval(&test[3 * i..3 * i + 3])).powi(2))
            .sum();
        (sq / m as f64).sqrt()
    };
    let wrong = l2(&ModelIndex::new(&[1, 3]).unwrap());
    let right = l2(&ModelIndex::new(&[1, 2]).unwrap());
    assert!(wrong >= 0.5f64.sqrt() - 0.03, "{wrong}");
    assert!(right < 0.3, "{right}");
}
