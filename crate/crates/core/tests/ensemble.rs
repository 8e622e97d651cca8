use dtifl_core::dataset::{generate_synthetic, split_train_test, SyntheticSpec};
use dtifl_core::ensemble::{
    evaluate_ensemble, predict_ensemble, train_bagging, train_member, EnsembleModel,
};
use dtifl_core::federation::run_federation;
use dtifl_core::learner::{
    evaluate_mse, init_model, predict, ModelConfig, ModelKind, ParameterVector, TrainConfig,
};
use dtifl_core::partition::{partition_iid, Partition, Provenance};
use dtifl_core::SplitPair;

fn split() -> SplitPair {
    let ds = generate_synthetic(&SyntheticSpec {
        n_drugs: 25,
        n_proteins: 10,
        n_records: 500,
        latent_dim: 3,
        noise_sd: 0.05,
        seed: 2,
    })
    .unwrap();
    split_train_test(&ds, 0.2, 4).unwrap()
}

fn mcfg(s: &SplitPair) -> ModelConfig {
    ModelConfig {
        kind: ModelKind::TwoTowerMlp,
        embedding_dim: 3,
        hidden_dim: 6,
        n_drugs: s.train.n_drugs(),
        n_proteins: s.train.n_proteins(),
    }
}

fn tcfg() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        learning_rate: 0.05,
        batch_size: 8,
        seed: 13,
    }
}

#[test]
fn jensen_bound_on_random_ensembles() {
    let s = split();
    let m = mcfg(&s);
    for draw in 0..20u64 {
        let members: Vec<ParameterVector<f64>> = (0..(2 + draw % 4))
            .map(|k| init_model(&m, draw * 31 + k).unwrap())
            .collect();
        let mean_member: f64 = members
            .iter()
            .map(|p| evaluate_mse(p, &m, s.test.examples()).unwrap())
            .sum::<f64>()
            / members.len() as f64;
        let e = EnsembleModel::new(members, m).unwrap();
        let ens = evaluate_ensemble(&e, s.test.examples()).unwrap();
        assert!(ens <= mean_member, "draw {draw}: {ens} > {mean_member}");
    }
}

#[test]
fn prediction_is_member_mean() {
    let s = split();
    let m = mcfg(&s);
    let members: Vec<ParameterVector<f64>> = (0..3).map(|k| init_model(&m, k).unwrap()).collect();
    let e = EnsembleModel::new(members.clone(), m).unwrap();
    for (d, p) in [(0, 0), (3, 7), (10, 2)] {
        let mut preds: Vec<f64> = members
            .iter()
            .map(|w| predict(w, &m, d, p).unwrap())
            .collect();
        preds.sort_by(f64::total_cmp);
        let expect = (preds[0] + preds[1] + preds[2]) / 3.0;
        assert_eq!(predict_ensemble(&e, d, p).unwrap(), expect);
    }
}

#[test]
fn single_member_delegates() {
    let s = split();
    let m = mcfg(&s);
    let w: ParameterVector<f64> = init_model(&m, 8).unwrap();
    let e = EnsembleModel::new(vec![w.clone()], m).unwrap();
    assert_eq!(
        evaluate_ensemble(&e, s.test.examples()).unwrap(),
        evaluate_mse(&w, &m, s.test.examples()).unwrap()
    );
}

#[test]
fn single_client_bagging_matches_federation() {
    let s = split();
    let m = mcfg(&s);
    let p = partition_iid(&s.train, 1, 0).unwrap();
    let rounds = 3;
    let fed = run_federation::<f64>(&s, &p, &m, &tcfg(), rounds, 55).unwrap();
    let ens = train_bagging::<f64>(&s, &p, &m, &tcfg(), rounds * tcfg().epochs, 55).unwrap();
    assert_eq!(ens.members().len(), 1);
    assert_eq!(ens.members()[0], fed.final_params);
    assert_eq!(ens.partition(), Some(p.fingerprint().as_str()));
}

#[test]
fn duplicate_clients_give_duplicate_members() {
    let s = split();
    let m = mcfg(&s);
    let data = s.train.examples();
    let a: ParameterVector<f64> = train_member(9, &m, &tcfg(), 4, data, 0).unwrap();
    let b: ParameterVector<f64> = train_member(9, &m, &tcfg(), 4, data, 0).unwrap();
    assert_eq!(a, b);
    let e = EnsembleModel::new(vec![a.clone(), b], m).unwrap();
    assert_eq!(
        predict_ensemble(&e, 1, 1).unwrap(),
        predict(&a, &m, 1, 1).unwrap()
    );
}

#[test]
fn empty_clients_produce_no_member() {
    let s = split();
    let m = mcfg(&s);
    let n = s.train.len();
    let prov = Provenance {
        strategy: "manual".into(),
        params: Default::default(),
        seed: 0,
    };
    let p = Partition::new(
        vec![(0..n / 2).collect(), Vec::new(), (n / 2..n).collect()],
        n,
        Vec::new(),
        prov.clone(),
    )
    .unwrap();
    let e = train_bagging::<f64>(&s, &p, &m, &tcfg(), 2, 1).unwrap();
    assert_eq!(e.members().len(), 2);
    assert_eq!(e.client_ids(), &[0, 2]);

    let none = Partition::new(vec![Vec::new()], n, (0..n).collect(), prov).unwrap();
    assert!(train_bagging::<f64>(&s, &none, &m, &tcfg(), 2, 1).is_err());
}
