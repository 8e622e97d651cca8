use dtifl_core::dataset::Dataset;
use dtifl_core::ensemble::{evaluate_ensemble, train_bagging};
use dtifl_core::federation::{run_federation, Workers};
use dtifl_core::partition::{
    apply_gaussian_mixing, default_sigma, default_sigma_q, partition_addition, partition_combined,
    partition_entity, partition_iid, partition_quantity_skew,
};
use dtifl_core::{rng, AdditionPlan, EntityDim, MixingConfig, Partition, SplitPair};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Strategy};
use crate::error::{BenchError, BenchResult};
use crate::report::{aggregate, CellLog, ComparisonRow, Distribution, GridReport};

/// Per-cell seed: FNV-1a over `(base_seed, tag, row, col, repeat)`.
///
/// Fields are separated by a 0xFF byte, which never occurs in UTF-8, so
/// distinct tuples cannot produce the same byte string.
pub fn cell_seed(base_seed: u64, tag: &str, row_key: &str, col_key: &str, repeat: usize) -> u64 {
    let mut bytes = base_seed.to_le_bytes().to_vec();
    for field in [tag, row_key, col_key] {
        bytes.push(0xFF);
        bytes.extend_from_slice(field.as_bytes());
    }
    bytes.push(0xFF);
    bytes.extend_from_slice(&(repeat as u64).to_le_bytes());
    rng::fnv1a(&bytes)
}

/// Seeds one repeat consumes, all derived from its cell seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RunSeeds {
    /// Model initialisation (and the cell seed itself).
    pub init: u64,
    pub partition: u64,
    pub train: u64,
}

impl RunSeeds {
    pub fn from_cell(seed: u64) -> Self {
        RunSeeds {
            init: seed,
            partition: rng::derive(seed, &[rng::label("bench/partition")]),
            train: rng::derive(seed, &[rng::label("bench/train")]),
        }
    }
}

/// A fully specified data-to-client split, minus its seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum PartitionPlan {
    Iid {
        clients: usize,
    },
    Entity {
        clients: usize,
        dim: EntityDim,
        level: f64,
        sigma: f64,
    },
    Combined {
        clients: usize,
        level: f64,
        sigma: f64,
    },
    Quantity {
        clients: usize,
        dominant_share: f64,
        sigma_q: f64,
    },
    Addition(AdditionPlan),
}

impl PartitionPlan {
    pub fn build(&self, train: &Dataset, seed: u64) -> BenchResult<Partition> {
        let mix_seed = rng::derive(seed, &[rng::label("bench/mixing")]);
        Ok(match *self {
            PartitionPlan::Iid { clients } => partition_iid(train, clients, seed)?,
            PartitionPlan::Entity {
                clients,
                dim,
                level,
                sigma,
            } => {
                let base = partition_entity(train, clients, dim, seed)?;
                apply_gaussian_mixing(&base, &MixingConfig::new(level, sigma, mix_seed)?)?
            }
            PartitionPlan::Combined {
                clients,
                level,
                sigma,
            } => partition_combined(
                train,
                clients,
                &MixingConfig::new(level, sigma, mix_seed)?,
                seed,
            )?,
            PartitionPlan::Quantity {
                clients,
                dominant_share,
                sigma_q,
            } => partition_quantity_skew(train, clients, dominant_share, sigma_q, seed)?,
            PartitionPlan::Addition(plan) => partition_addition(train, &plan, seed)?,
        })
    }

    /// The plan behind grid cell `(row, col)` of `cfg.strategy`: `row` is the
    /// client count (extra clients for the addition grid) and `col` the
    /// mixing level, dominant share or extra share. IID ignores `col`.
    pub fn at(cfg: &ExperimentConfig, row: usize, col: f64) -> Self {
        let sigma = cfg.sigma.unwrap_or_else(|| default_sigma(row));
        match cfg.strategy {
            Strategy::Iid => PartitionPlan::Iid { clients: row },
            Strategy::EntityProtein => PartitionPlan::Entity {
                clients: row,
                dim: EntityDim::Protein,
                level: col,
                sigma,
            },
            Strategy::EntityDrug => PartitionPlan::Entity {
                clients: row,
                dim: EntityDim::Drug,
                level: col,
                sigma,
            },
            Strategy::Combined => PartitionPlan::Combined {
                clients: row,
                level: col,
                sigma,
            },
            Strategy::Quantity => PartitionPlan::Quantity {
                clients: row,
                dominant_share: col,
                sigma_q: cfg.sigma_q.unwrap_or_else(|| default_sigma_q(row)),
            },
            Strategy::Addition => PartitionPlan::Addition(AdditionPlan {
                dominant_share: cfg.addition.dominant_share,
                extra_share: col,
                n_extra_clients: row,
            }),
        }
    }
}

pub fn key(v: impl std::fmt::Display) -> String {
    v.to_string()
}

/// One federated run plus, optionally, its bagging twin on the same split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub federated_mse: f64,
    pub ensemble_mse: Option<f64>,
    pub partition: String,
    pub client_sizes: Vec<usize>,
}

pub fn run_cell(
    cfg: &ExperimentConfig,
    split: &SplitPair,
    plan: &PartitionPlan,
    seed: u64,
    with_ensemble: bool,
) -> BenchResult<RunOutcome> {
    let seeds = RunSeeds::from_cell(seed);
    let partition = plan.build(&split.train, seeds.partition)?;
    let mcfg = cfg.model_config(&split.train);
    let tcfg = cfg.train.with_seed(seeds.train);
    let fed = run_federation::<f64>(split, &partition, &mcfg, &tcfg, cfg.rounds, seeds.init)?;
    let federated_mse = fed
        .final_mse()
        .ok_or_else(|| BenchError::Runtime("federation ran no rounds".into()))?;
    let ensemble_mse = if with_ensemble {
        let ens = train_bagging::<f64>(
            split,
            &partition,
            &mcfg,
            &tcfg,
            cfg.member_epochs(),
            seeds.init,
        )?;
        if ens.partition() != Some(fed.echo.partition.as_str()) {
            return Err(BenchError::Runtime(
                "pipelines consumed different partitions".into(),
            ));
        }
        Some(evaluate_ensemble(&ens, split.test.examples())?)
    } else {
        None
    };
    Ok(RunOutcome {
        federated_mse,
        ensemble_mse,
        partition: fed.echo.partition,
        client_sizes: partition.sizes(),
    })
}

struct Job {
    row_key: String,
    col_key: String,
    repeat: usize,
    seed: u64,
    plan: PartitionPlan,
}

fn jobs_for(
    cfg: &ExperimentConfig,
    tag: &str,
    cells: &[(String, String, PartitionPlan)],
) -> Vec<Job> {
    cells
        .iter()
        .flat_map(|(row_key, col_key, plan)| {
            (0..cfg.repeats).map(move |repeat| Job {
                row_key: row_key.clone(),
                col_key: col_key.clone(),
                repeat,
                seed: cell_seed(cfg.base_seed, tag, row_key, col_key, repeat),
                plan: *plan,
            })
        })
        .collect()
}

fn execute(
    cfg: &ExperimentConfig,
    split: &SplitPair,
    jobs: &[Job],
    with_ensemble: bool,
    workers: usize,
) -> BenchResult<Vec<RunOutcome>> {
    Workers::new(workers)?
        .map(jobs, |_, job| {
            run_cell(cfg, split, &job.plan, job.seed, with_ensemble)
        })
        .into_iter()
        .collect()
}

fn run_record(job: &Job, out: &RunOutcome) -> Value {
    json!({
        "row_key": job.row_key,
        "col_key": job.col_key,
        "repeat": job.repeat,
        "seed": job.seed,
        "partition": out.partition,
        "client_sizes": out.client_sizes,
    })
}

/// Federated vs bagging rows for every client count. IID rows are always
/// produced; an entity strategy adds the matching non-IID rows.
pub fn run_comparison(
    cfg: &ExperimentConfig,
    split: &SplitPair,
    workers: usize,
) -> BenchResult<(Vec<ComparisonRow>, Value)> {
    let mut dists = vec![(Distribution::Iid, Strategy::Iid)];
    match cfg.strategy {
        Strategy::Iid => {}
        s @ (Strategy::EntityProtein | Strategy::EntityDrug) => {
            dists.push((Distribution::Noniid, s))
        }
        other => {
            return Err(BenchError::Config(format!(
                "compare needs strategy iid, entity_protein or entity_drug, got {}",
                other.tag()
            )))
        }
    }
    let mut cells = Vec::new();
    for &(dist, strategy) in &dists {
        let scfg = ExperimentConfig {
            strategy,
            ..cfg.clone()
        };
        for &k in &cfg.client_counts {
            cells.push((
                dist.as_str().to_string(),
                key(k),
                PartitionPlan::at(&scfg, k, 0.0),
            ));
        }
    }
    let jobs = jobs_for(cfg, "compare", &cells);
    let outcomes = execute(cfg, split, &jobs, true, workers)?;

    let mut rows = Vec::new();
    let mut groups = outcomes.chunks(cfg.repeats);
    for &(dist, _) in &dists {
        for &k in &cfg.client_counts {
            let group = groups.next().expect("one outcome group per cell");
            let mean = |f: &dyn Fn(&RunOutcome) -> f64| {
                group.iter().map(f).sum::<f64>() / group.len() as f64
            };
            let fed = mean(&|o| o.federated_mse);
            let ens = mean(&|o| o.ensemble_mse.unwrap_or(f64::NAN));
            rows.push(ComparisonRow::new(dist, k, ens, fed)?);
        }
    }
    let provenance = json!({
        "config": cfg,
        "noniid_strategy": dists.get(1).map(|d| d.1.tag()),
        "member_epochs": cfg.member_epochs(),
        "runs": jobs.iter().zip(&outcomes).map(|(j, o)| run_record(j, o)).collect::<Vec<_>>(),
    });
    Ok((rows, provenance))
}

fn run_grid_cells(
    cfg: &ExperimentConfig,
    split: &SplitPair,
    setup: &str,
    cells: Vec<(String, String, PartitionPlan)>,
    reference: (String, String),
    workers: usize,
) -> BenchResult<GridReport> {
    let jobs = jobs_for(cfg, setup, &cells);
    let outcomes = execute(cfg, split, &jobs, false, workers)?;
    let log = jobs
        .iter()
        .zip(&outcomes)
        .map(|(j, o)| CellLog {
            row_key: j.row_key.clone(),
            col_key: j.col_key.clone(),
            repeat: j.repeat,
            seed: j.seed,
            final_mse: o.federated_mse,
        })
        .collect();
    let provenance = json!({
        "config": cfg,
        "plans": cells.iter().map(|(r, c, p)| json!({"row_key": r, "col_key": c, "plan": p})).collect::<Vec<_>>(),
        "runs": jobs.iter().zip(&outcomes).map(|(j, o)| run_record(j, o)).collect::<Vec<_>>(),
    });
    aggregate(setup, log, reference, provenance)
}

fn min_by<T: Copy>(xs: &[T], less: impl Fn(&T, &T) -> bool) -> T {
    let mut best = xs[0];
    for x in &xs[1..] {
        if less(x, &best) {
            best = *x;
        }
    }
    best
}

/// Client count x mixing level; reference is (smallest count, lowest level).
pub fn run_iidness_grid(
    cfg: &ExperimentConfig,
    split: &SplitPair,
    workers: usize,
) -> BenchResult<GridReport> {
    if !matches!(
        cfg.strategy,
        Strategy::EntityProtein | Strategy::EntityDrug | Strategy::Combined
    ) {
        return Err(BenchError::Config(format!(
            "IID-ness grid needs an entity or combined strategy, got {}",
            cfg.strategy.tag()
        )));
    }
    let mut cells = Vec::new();
    for &k in &cfg.client_counts {
        for &level in &cfg.mixing_levels {
            cells.push((key(k), key(level), PartitionPlan::at(cfg, k, level)));
        }
    }
    let reference = (
        key(min_by(&cfg.client_counts, |a, b| a < b)),
        key(min_by(&cfg.mixing_levels, |a, b| a < b)),
    );
    run_grid_cells(cfg, split, cfg.strategy.tag(), cells, reference, workers)
}

/// Client count x dominant share; reference is (smallest count, largest share).
pub fn run_quantity_grid(
    cfg: &ExperimentConfig,
    split: &SplitPair,
    workers: usize,
) -> BenchResult<GridReport> {
    if cfg.strategy != Strategy::Quantity {
        return Err(BenchError::Config(
            "quantity grid needs strategy quantity".into(),
        ));
    }
    let mut cells = Vec::new();
    for &k in &cfg.client_counts {
        for &share in &cfg.dominant_shares {
            cells.push((key(k), key(share), PartitionPlan::at(cfg, k, share)));
        }
    }
    let reference = (
        key(min_by(&cfg.client_counts, |a, b| a < b)),
        key(min_by(&cfg.dominant_shares, |a, b| a > b)),
    );
    run_grid_cells(cfg, split, "quantity", cells, reference, workers)
}

/// Extra clients x extra share, plus the dominant-client-only reference run
/// logged as cell `("0", "0")`.
pub fn run_addition_grid(
    cfg: &ExperimentConfig,
    split: &SplitPair,
    workers: usize,
) -> BenchResult<GridReport> {
    if cfg.strategy != Strategy::Addition {
        return Err(BenchError::Config(
            "addition grid needs strategy addition".into(),
        ));
    }
    let reference_plan = PartitionPlan::Addition(AdditionPlan {
        dominant_share: cfg.addition.dominant_share,
        extra_share: 0.0,
        n_extra_clients: 0,
    });
    let mut cells = vec![(key(0), key(0), reference_plan)];
    for &extra_clients in &cfg.addition.extra_clients {
        for &extra in &cfg.addition.extra_shares {
            cells.push((
                key(extra_clients),
                key(extra),
                PartitionPlan::at(cfg, extra_clients, extra),
            ));
        }
    }
    run_grid_cells(cfg, split, "addition", cells, (key(0), key(0)), workers)
}

/// The grid matching `cfg.strategy`.
pub fn run_grid(
    cfg: &ExperimentConfig,
    split: &SplitPair,
    workers: usize,
) -> BenchResult<GridReport> {
    match cfg.strategy {
        Strategy::Quantity => run_quantity_grid(cfg, split, workers),
        Strategy::Addition => run_addition_grid(cfg, split, workers),
        Strategy::Iid => Err(BenchError::Config(
            "grid needs strategy entity_protein, entity_drug, combined, quantity or addition"
                .into(),
        )),
        _ => run_iidness_grid(cfg, split, workers),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_seed_separates_fields() {
        let a = cell_seed(1, "t", "2", "0.5", 0);
        assert_eq!(a, cell_seed(1, "t", "2", "0.5", 0));
        assert_ne!(a, cell_seed(2, "t", "2", "0.5", 0));
        assert_ne!(a, cell_seed(1, "t", "20", ".5", 0));
        assert_ne!(a, cell_seed(1, "t", "2", "0.5", 1));
        assert_ne!(a, cell_seed(1, "u", "2", "0.5", 0));
    }

    #[test]
    fn cell_seed_is_fnv_of_documented_bytes() {
        let mut bytes = 7u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"\xFFq\xFF4\xFF0.9\xFF");
        bytes.extend_from_slice(&3u64.to_le_bytes());
        // FNV-1a written out independently of the rng module.
        let mut h: u64 = 14695981039346656037;
        for b in bytes {
            h = (h ^ b as u64).wrapping_mul(1099511628211);
        }
        assert_eq!(cell_seed(7, "q", "4", "0.9", 3), h);
    }

    #[test]
    fn keys_are_plain_decimal() {
        assert_eq!(key(0.0), "0");
        assert_eq!(key(0.125), "0.125");
        assert_eq!(key(32), "32");
    }
}
