use dtifl_core::dataset::{generate_synthetic, split_train_test, SyntheticSpec};
use dtifl_core::ensemble::{evaluate_ensemble, train_bagging};
use dtifl_core::federation::{
    client_stream_seed, fedavg_aggregate, local_update, run_federation, run_federation_with,
};
use dtifl_core::learner::{
    evaluate_mse, init_model, sgd_train, ModelConfig, ModelKind, ParameterVector, TrainConfig,
};
use dtifl_core::partition::{partition_iid, Partition, Provenance};
use dtifl_core::SplitPair;

fn split(n_records: usize) -> SplitPair {
    let ds = generate_synthetic(&SyntheticSpec {
        n_drugs: 30,
        n_proteins: 12,
        n_records,
        latent_dim: 4,
        noise_sd: 0.1,
        seed: 5,
    })
    .unwrap();
    split_train_test(&ds, 0.2, 9).unwrap()
}

fn mcfg(split: &SplitPair, kind: ModelKind) -> ModelConfig {
    ModelConfig {
        kind,
        embedding_dim: 4,
        hidden_dim: 8,
        n_drugs: split.train.n_drugs(),
        n_proteins: split.train.n_proteins(),
    }
}

fn tcfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        learning_rate: 0.05,
        batch_size: 16,
        seed: 21,
    }
}

#[test]
fn single_client_equals_centralised_schedule() {
    let s = split(600);
    for kind in [ModelKind::Linear, ModelKind::TwoTowerMlp] {
        let m = mcfg(&s, kind);
        let t = tcfg(2);
        let p = partition_iid(&s.train, 1, 3).unwrap();
        let fed = run_federation::<f64>(&s, &p, &m, &t, 4, 77).unwrap();

        let mut central: ParameterVector<f64> = init_model(&m, 77).unwrap();
        let mut history = Vec::new();
        for round in 0..4 {
            let keyed = TrainConfig {
                seed: client_stream_seed(t.seed, round, 0),
                ..t
            };
            central = sgd_train(&central, &m, &keyed, s.train.examples()).unwrap();
            history.push(evaluate_mse(&central, &m, s.test.examples()).unwrap());
        }
        for (a, b) in fed.final_params.values().iter().zip(central.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
        for (r, h) in fed.history.iter().zip(&history) {
            assert!((r.global_mse - h).abs() <= 1e-9);
        }
    }
}

#[test]
fn local_update_boundaries() {
    let s = split(200);
    let m = mcfg(&s, ModelKind::TwoTowerMlp);
    let g: ParameterVector<f64> = init_model(&m, 1).unwrap();
    let empty = local_update(&g, &[], &m, &tcfg(1), 0, 3).unwrap();
    assert_eq!((empty.params.clone(), empty.n_samples), (g.clone(), 0));

    let frozen = TrainConfig {
        learning_rate: 0.0,
        ..tcfg(1)
    };
    let u = local_update(&g, s.train.examples(), &m, &frozen, 2, 0).unwrap();
    assert_eq!(u.params, g);

    // Full train set on one client == direct sgd_train with the keyed stream.
    let u = local_update(&g, s.train.examples(), &m, &tcfg(1), 2, 0).unwrap();
    let keyed = TrainConfig {
        seed: client_stream_seed(21, 2, 0),
        ..tcfg(1)
    };
    assert_eq!(
        u.params,
        sgd_train(&g, &m, &keyed, s.train.examples()).unwrap()
    );
    assert_eq!(u.n_samples, s.train.len());
}

#[test]
fn identical_clients_aggregate_to_any_client() {
    let s = split(300);
    let m = mcfg(&s, ModelKind::Linear);
    let g: ParameterVector<f64> = init_model(&m, 1).unwrap();
    let data = s.train.examples();
    // Same records and the same stream on every client.
    let ups: Vec<_> = (0..3)
        .map(|k| {
            let mut u = local_update(&g, data, &m, &tcfg(1), 0, 0).unwrap();
            u.client_id = k;
            u
        })
        .collect();
    assert_eq!(fedavg_aggregate(&ups).unwrap(), ups[1].params);
}

#[test]
fn zero_rounds_returns_initial_model() {
    let s = split(200);
    let m = mcfg(&s, ModelKind::Linear);
    let p = partition_iid(&s.train, 3, 1).unwrap();
    let r = run_federation::<f64>(&s, &p, &m, &tcfg(1), 0, 42).unwrap();
    assert!(r.history.is_empty());
    assert_eq!(r.final_params, init_model::<f64>(&m, 42).unwrap());
}

#[test]
fn worker_count_does_not_change_results() {
    let s = split(800);
    let m = mcfg(&s, ModelKind::TwoTowerMlp);
    let p = partition_iid(&s.train, 6, 2).unwrap();
    let a = run_federation_with::<f64>(&s, &p, &m, &tcfg(1), 3, 7, 1).unwrap();
    let b = run_federation_with::<f64>(&s, &p, &m, &tcfg(1), 3, 7, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn empty_clients_are_tolerated() {
    let s = split(200);
    let m = mcfg(&s, ModelKind::Linear);
    let n = s.train.len();
    let p = Partition::new(
        vec![(0..n).collect(), Vec::new()],
        n,
        Vec::new(),
        Provenance {
            strategy: "manual".into(),
            params: Default::default(),
            seed: 0,
        },
    )
    .unwrap();
    let r = run_federation::<f64>(&s, &p, &m, &tcfg(1), 2, 3).unwrap();
    assert_eq!(r.history.len(), 2);
    assert!(r.history.iter().all(|h| h.global_mse.is_finite()));

    let e = train_bagging::<f64>(&s, &p, &m, &tcfg(1), 2, 3).unwrap();
    assert_eq!(e.members().len(), 1);
    assert!(evaluate_ensemble(&e, s.test.examples())
        .unwrap()
        .is_finite());
}

#[test]
fn partition_must_index_the_train_split() {
    let s = split(200);
    let m = mcfg(&s, ModelKind::Linear);
    let p = partition_iid(&s.test, 2, 1).unwrap();
    assert!(run_federation::<f64>(&s, &p, &m, &tcfg(1), 1, 0).is_err());
}

#[test]
fn single_precision_federation_runs() {
    let s = split(300);
    let m = mcfg(&s, ModelKind::TwoTowerMlp);
    let p = partition_iid(&s.train, 2, 1).unwrap();
    let r = run_federation::<f32>(&s, &p, &m, &tcfg(1), 2, 3).unwrap();
    assert!(r.final_mse().unwrap().is_finite());
}
