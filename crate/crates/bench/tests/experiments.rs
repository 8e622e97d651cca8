use dtifl_bench::experiments::{run_cell, PartitionPlan};
use dtifl_bench::report::{mean_std, Distribution};
use dtifl_bench::{
    run_addition_grid, run_comparison, run_iidness_grid, run_quantity_grid, ExperimentConfig,
    GridReport,
};
use dtifl_core::dataset::SplitPair;

/// Small synthetic setup; `overrides` is a JSON object merged on top.
fn config(overrides: &str) -> ExperimentConfig {
    let mut base = serde_json::json!({
        "dataset": {"synthetic": {"n_drugs": 30, "n_proteins": 10, "n_records": 600,
                    "latent_dim": 3, "noise_sd": 0.1, "seed": 4}},
        "model": {"kind": "two_tower_mlp", "embedding_dim": 4, "hidden_dim": 8},
        "train": {"epochs": 1, "learning_rate": 0.05, "batch_size": 16},
        "rounds": 2, "repeats": 2, "base_seed": 9
    });
    let extra: serde_json::Value = serde_json::from_str(overrides).unwrap();
    for (k, v) in extra.as_object().unwrap() {
        base[k] = v.clone();
    }
    ExperimentConfig::from_json(&base.to_string()).unwrap()
}

fn zero_cells(r: &GridReport) -> Vec<(String, String)> {
    r.cells
        .iter()
        .filter(|c| c.pct_change == 0.0)
        .map(|c| (c.row_key.clone(), c.col_key.clone()))
        .collect()
}

fn assert_means_match_log(r: &GridReport) {
    for c in &r.cells {
        let values: Vec<f64> = r
            .log
            .iter()
            .filter(|l| l.row_key == c.row_key && l.col_key == c.col_key)
            .map(|l| l.final_mse)
            .collect();
        assert_eq!(values.len(), c.repeats);
        let direct = values.iter().sum::<f64>() / values.len() as f64;
        assert!((c.mean_mse - direct).abs() <= 1e-15 * direct.abs().max(1.0));
        assert_eq!(mean_std(&values).1, c.std_mse);
    }
}

/// MSE of predicting the mean training label everywhere.
fn constant_predictor_mse(split: &SplitPair) -> f64 {
    let train = split.train.examples();
    let mean = train.iter().map(|e| e.label).sum::<f64>() / train.len() as f64;
    let test = split.test.examples();
    test.iter().map(|e| (e.label - mean).powi(2)).sum::<f64>() / test.len() as f64
}

#[test]
fn single_client_rows_coincide() {
    let cfg = config(r#"{"client_counts": [1], "repeats": 1, "strategy": "entity_protein"}"#);
    let split = cfg.load_split().unwrap();
    let (rows, _) = run_comparison(&cfg, &split, 1).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r.federated_mse, r.ensemble_mse, "{:?}", r.distribution);
        assert_eq!(r.pct_difference, 0.0);
    }
}

#[test]
fn comparison_rows_share_partitions() {
    let cfg = config(r#"{"client_counts": [2, 8]}"#);
    let split = cfg.load_split().unwrap();
    let (rows, prov) = run_comparison(&cfg, &split, 2).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.distribution == Distribution::Iid));
    for r in &rows {
        assert!(r.federated_mse.is_finite() && r.ensemble_mse.is_finite());
        let expect = 100.0 * (r.federated_mse - r.ensemble_mse) / r.ensemble_mse;
        assert_eq!(r.pct_difference, expect);
    }
    let runs = prov["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2 * cfg.repeats);
    assert!(runs
        .iter()
        .all(|r| r["partition"].as_str().unwrap().len() == 16));
}

#[test]
fn noise_free_learners_beat_constant_predictor() {
    let cfg = ExperimentConfig::from_json(
        r#"{"dataset": {"synthetic": {"n_drugs": 20, "n_proteins": 8, "n_records": 1500,
                        "latent_dim": 3, "noise_sd": 0.0, "seed": 2}},
            "model": {"kind": "two_tower_mlp", "embedding_dim": 6, "hidden_dim": 16},
            "train": {"epochs": 2, "learning_rate": 0.05, "batch_size": 16},
            "client_counts": [2], "rounds": 15, "repeats": 1}"#,
    )
    .unwrap();
    let split = cfg.load_split().unwrap();
    let baseline = constant_predictor_mse(&split);
    let (rows, _) = run_comparison(&cfg, &split, 1).unwrap();
    assert!(
        rows[0].federated_mse < baseline,
        "{} vs {baseline}",
        rows[0].federated_mse
    );
    assert!(
        rows[0].ensemble_mse < baseline,
        "{} vs {baseline}",
        rows[0].ensemble_mse
    );
}

#[test]
fn iidness_grid_shape_and_reference() {
    for strategy in ["entity_protein", "entity_drug", "combined"] {
        let cfg = config(&format!(
            r#"{{"client_counts": [4, 2], "repeats": 1, "strategy": "{strategy}"}}"#
        ));
        let split = cfg.load_split().unwrap();
        let r = run_iidness_grid(&cfg, &split, 1).unwrap();
        assert_eq!(r.cells.len(), 2 * 9);
        assert_eq!(r.reference_cell, ("2".to_string(), "0".to_string()));
        assert_eq!(zero_cells(&r), vec![r.reference_cell.clone()]);
        assert_means_match_log(&r);
        assert_eq!(r.setup, strategy);
    }
}

#[test]
fn quantity_grid_shape_and_degenerate_share() {
    let cfg = config(
        r#"{"client_counts": [2, 4], "dominant_shares": [0.5, 1.0], "strategy": "quantity"}"#,
    );
    let split = cfg.load_split().unwrap();
    let r = run_quantity_grid(&cfg, &split, 1).unwrap();
    assert_eq!(r.cells.len(), 4);
    assert_eq!(r.reference_cell, ("2".to_string(), "1".to_string()));
    assert_eq!(zero_cells(&r), vec![r.reference_cell.clone()]);
    assert_means_match_log(&r);

    // A share of 1 leaves every other client empty: the run is centralised.
    for l in r.log.iter().filter(|l| l.col_key == "1") {
        let central = run_cell(
            &cfg,
            &split,
            &PartitionPlan::Iid { clients: 1 },
            l.seed,
            false,
        )
        .unwrap();
        assert_eq!(l.final_mse, central.federated_mse);
    }
}

#[test]
fn addition_grid_sizes() {
    let cfg = config(r#"{"repeats": 1, "strategy": "addition"}"#);
    let split = cfg.load_split().unwrap();
    let n = split.train.len();
    let r = run_addition_grid(&cfg, &split, 1).unwrap();
    assert_eq!(r.cells.len(), 16 + 1);
    assert_eq!(zero_cells(&r), vec![("0".to_string(), "0".to_string())]);
    let sizes = |row: &str, col: &str| -> Vec<usize> {
        let run = r.provenance["runs"]
            .as_array()
            .unwrap()
            .iter()
            .find(|x| x["row_key"] == row && x["col_key"] == col)
            .unwrap();
        serde_json::from_value(run["client_sizes"].clone()).unwrap()
    };
    assert_eq!(sizes("0", "0"), vec![(0.6 * n as f64).floor() as usize]);
    let expect_extra = (0.4 * n as f64 + 1e-9).floor() as usize;
    assert_eq!(
        sizes("1", "0.4"),
        vec![(0.6 * n as f64).floor() as usize, expect_extra]
    );
    let four = sizes("4", "0.2");
    assert_eq!(four.len(), 5);
    assert!(four[1..].iter().max().unwrap() - four[1..].iter().min().unwrap() <= 1);
}

#[test]
fn seeds_change_values_not_shape() {
    let a_cfg =
        config(r#"{"client_counts": [2], "mixing_levels": [0, 0.5], "strategy": "entity_drug"}"#);
    let b_cfg = ExperimentConfig {
        base_seed: 10,
        ..a_cfg.clone()
    };
    let split = a_cfg.load_split().unwrap();
    let a = run_iidness_grid(&a_cfg, &split, 1).unwrap();
    let b = run_iidness_grid(&b_cfg, &split, 1).unwrap();
    let shape = |r: &GridReport| {
        r.cells
            .iter()
            .map(|c| (c.row_key.clone(), c.col_key.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(shape(&a), shape(&b));
    assert_ne!(a.log[0].seed, b.log[0].seed);
    assert_ne!(a.cells[0].mean_mse, b.cells[0].mean_mse);
    assert_eq!(a, run_iidness_grid(&a_cfg, &split, 3).unwrap());
}

#[test]
fn wrong_strategy_is_a_config_error() {
    let cfg = config(r#"{"strategy": "iid"}"#);
    let split = cfg.load_split().unwrap();
    assert_eq!(
        run_iidness_grid(&cfg, &split, 1).unwrap_err().exit_code(),
        1
    );
    let cfg = config(r#"{"strategy": "quantity"}"#);
    assert_eq!(run_comparison(&cfg, &split, 1).unwrap_err().exit_code(), 1);
}
