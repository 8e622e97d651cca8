//! Analytic gradients against central finite differences.

use dtifl_core::learner::{
    evaluate_mse, gradient, init_model, sgd_train, ModelConfig, ModelKind, ParameterVector,
    TrainConfig,
};
use dtifl_core::Example;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;

fn config(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        embedding_dim: 4,
        hidden_dim: 6,
        n_drugs: 5,
        n_proteins: 4,
    }
}

/// Batch MSE written out directly from predictions.
fn loss(p: &ParameterVector<f64>, cfg: &ModelConfig, batch: &[Example]) -> f64 {
    evaluate_mse(p, cfg, batch).unwrap()
}

fn random_draw(cfg: &ModelConfig, draw: u64) -> (ParameterVector<f64>, Vec<Example>) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
    let mut p: ParameterVector<f64> = init_model(cfg, draw).unwrap();
    // Move biases and the norm affine off their initial constants.
    for v in p.values_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    let n = rng.random_range(1..=8);
    let batch = (0..n)
        .map(|_| Example {
            drug: rng.random_range(0..cfg.n_drugs),
            protein: rng.random_range(0..cfg.n_proteins),
            label: rng.random_range(-2.0..2.0),
        })
        .collect();
    (p, batch)
}

fn finite_difference(p: &ParameterVector<f64>, cfg: &ModelConfig, batch: &[Example]) -> Vec<f64> {
    let mut probe = p.clone();
    (0..p.len())
        .map(|i| {
            let orig = probe.values()[i];
            probe.values_mut()[i] = orig + STEP;
            let up = loss(&probe, cfg, batch);
            probe.values_mut()[i] = orig - STEP;
            let down = loss(&probe, cfg, batch);
            probe.values_mut()[i] = orig;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

/// `||a - n|| / (||a|| + ||n||)`.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn check_kind(kind: ModelKind) {
    let cfg = config(kind);
    for draw in 0..20 {
        let (p, batch) = random_draw(&cfg, draw);
        let analytic = gradient(&p, &cfg, &batch).unwrap();
        let numeric = finite_difference(&p, &cfg, &batch);
        let err = relative_error(analytic.values(), &numeric);
        assert!(err < 1e-4, "{kind:?} draw {draw}: relative error {err:e}");
    }
}

#[test]
fn linear_gradient_matches_finite_differences() {
    check_kind(ModelKind::Linear);
}

#[test]
fn mlp_gradient_matches_finite_differences() {
    check_kind(ModelKind::TwoTowerMlp);
}

#[test]
fn sgd_descends_on_noise_free_data() {
    let cfg = config(ModelKind::TwoTowerMlp);
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let teacher: ParameterVector<f64> = init_model(&cfg, 77 + seed).unwrap();
        let data: Vec<Example> = (0..200)
            .map(|_| {
                let (drug, protein) = (rng.random_range(0..5), rng.random_range(0..4));
                let label = dtifl_core::learner::predict(&teacher, &cfg, drug, protein).unwrap();
                Example {
                    drug,
                    protein,
                    label,
                }
            })
            .collect();
        let start: ParameterVector<f64> = init_model(&cfg, seed).unwrap();
        let tcfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.01,
            batch_size: 16,
            seed,
        };
        let trained = sgd_train(&start, &cfg, &tcfg, &data).unwrap();
        let before = evaluate_mse(&start, &cfg, &data).unwrap();
        let after = evaluate_mse(&trained, &cfg, &data).unwrap();
        assert!(after <= before, "seed {seed}: {after} > {before}");
    }
}

#[test]
fn constant_predictor_mse_matches_direct_sum() {
    let cfg = ModelConfig {
        kind: ModelKind::Linear,
        embedding_dim: 2,
        hidden_dim: 1,
        n_drugs: 3,
        n_proteins: 3,
    };
    let mut p = ParameterVector::<f64>::zeros(cfg.layout());
    let c = 0.37;
    p.tensor_mut("bias").unwrap()[0] = c;
    let labels = [1.5, -0.25, 3.0, 0.0, 2.75, -1.0];
    let data: Vec<Example> = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| Example {
            drug: i % 3,
            protein: (i / 3) % 3,
            label,
        })
        .collect();
    let mut direct = 0.0;
    for y in labels {
        direct += (c - y) * (c - y);
    }
    direct /= labels.len() as f64;
    let got = evaluate_mse(&p, &cfg, &data).unwrap();
    assert!((got - direct).abs() < 1e-15, "{got} vs {direct}");
}
