//! Synchronous FedAvg over an in-process federation.
//!
//! Every round each client starts from the global parameters, runs local SGD
//! on its own records with a stream keyed by `(seed, round, client)`, and the
//! server replaces the global model with the sample-weighted mean of the
//! results. Aggregation always walks clients in ascending id, so the outcome
//! does not depend on how many worker threads ran the local updates.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Example, SplitPair};
use crate::error::{Error, Result};
use crate::learner::{
    evaluate_mse, init_model, sgd_train, ModelConfig, ParameterVector, TrainConfig,
};
use crate::partition::Partition;
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate<T> {
    pub params: ParameterVector<T>,
    pub n_samples: usize,
    pub client_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub global_mse: f64,
}

/// Settings a federated run was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub mcfg: ModelConfig,
    pub tcfg: TrainConfig,
    pub rounds: usize,
    pub seed: u64,
    pub partition: String,
    pub client_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedResult<T> {
    pub final_params: ParameterVector<T>,
    pub history: Vec<RoundRecord>,
    pub echo: RunEcho,
}

impl<T> FedResult<T> {
    /// Test MSE after the last round, if any round ran.
    pub fn final_mse(&self) -> Option<f64> {
        self.history.last().map(|r| r.global_mse)
    }
}

/// Shuffle seed for `client` in `round`.
pub fn client_stream_seed(seed: u64, round: usize, client: usize) -> u64 {
    rng::derive(
        seed,
        &[rng::label("federation/client"), round as u64, client as u64],
    )
}

/// Local SGD from a copy of `global`. An empty client sends `global` back
/// with zero samples.
pub fn local_update<T: Scalar>(
    global: &ParameterVector<T>,
    client_data: &[Example],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    round: usize,
    client_id: usize,
) -> Result<ClientUpdate<T>> {
    if client_data.is_empty() {
        return Ok(ClientUpdate {
            params: global.clone(),
            n_samples: 0,
            client_id,
        });
    }
    let keyed = TrainConfig {
        seed: client_stream_seed(tcfg.seed, round, client_id),
        ..*tcfg
    };
    Ok(ClientUpdate {
        params: sgd_train(global, mcfg, &keyed, client_data)?,
        n_samples: client_data.len(),
        client_id,
    })
}

fn contributing<T>(updates: &[ClientUpdate<T>]) -> Result<Vec<&ClientUpdate<T>>> {
    let mut live: Vec<&ClientUpdate<T>> = updates.iter().filter(|u| u.n_samples > 0).collect();
    if live.is_empty() {
        return Err(Error::invalid("no client update carries samples"));
    }
    live.sort_by_key(|u| u.client_id);
    Ok(live)
}

/// `(client_id, n_k / n)` for every update with samples, ascending id.
pub fn fedavg_weights<T>(updates: &[ClientUpdate<T>]) -> Result<Vec<(usize, f64)>> {
    let live = contributing(updates)?;
    let total: usize = live.iter().map(|u| u.n_samples).sum();
    Ok(live
        .iter()
        .map(|u| (u.client_id, u.n_samples as f64 / total as f64))
        .collect())
}

/// Sample-weighted mean `sum_k n_k w_k / sum_k n_k`; zero-sample updates are
/// skipped.
///
/// Each coordinate is clamped to the range spanned by the contributors, which
/// the exact mean always satisfies; this keeps identical inputs (a single
/// client, or clients that did not move) bit-for-bit unchanged.
pub fn fedavg_aggregate<T: Scalar>(updates: &[ClientUpdate<T>]) -> Result<ParameterVector<T>> {
    let live = contributing(updates)?;
    let first = &live[0].params;
    if let Some(bad) = live.iter().find(|u| u.params.layout() != first.layout()) {
        return Err(Error::LayoutMismatch(format!(
            "client {} layout differs from client {}",
            bad.client_id, live[0].client_id
        )));
    }
    let total = T::from_count(live.iter().map(|u| u.n_samples).sum());
    let mut out = first.zeros_like();
    for (i, slot) in out.values_mut().iter_mut().enumerate() {
        let mut acc = T::zero();
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for u in &live {
            let v = u.params.values()[i];
            acc = acc + T::from_count(u.n_samples) * v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        *slot = (acc / total).max(lo).min(hi);
    }
    Ok(out)
}

/// Per-client training examples drawn from `split.train`.
pub fn client_examples(split: &SplitPair, partition: &Partition) -> Result<Vec<Vec<Example>>> {
    if partition.n_records() != split.train.len() {
        return Err(Error::invalid(format!(
            "partition covers {} records but the train split has {}",
            partition.n_records(),
            split.train.len()
        )));
    }
    let train = split.train.examples();
    Ok(partition
        .assignments()
        .iter()
        .map(|list| list.iter().map(|&i| train[i]).collect())
        .collect())
}

/// Executes independent per-client jobs either inline or on a private pool.
/// Results always come back in input order.
pub struct Workers {
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    pub fn new(workers: usize) -> Result<Self> {
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::invalid(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Workers { pool })
    }

    pub fn map<I, R, F>(&self, items: &[I], f: F) -> Vec<R>
    where
        I: Sync,
        R: Send,
        F: Fn(usize, &I) -> R + Sync + Send,
    {
        match &self.pool {
            None => items.iter().enumerate().map(|(k, x)| f(k, x)).collect(),
            Some(pool) => {
                pool.install(|| items.par_iter().enumerate().map(|(k, x)| f(k, x)).collect())
            }
        }
    }
}

/// FedAvg with full participation, evaluating on `split.test` after every
/// round. Equivalent to [`run_federation_with`] on one worker.
pub fn run_federation<T: Scalar>(
    split: &SplitPair,
    partition: &Partition,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    rounds: usize,
    seed: u64,
) -> Result<FedResult<T>> {
    run_federation_with(split, partition, mcfg, tcfg, rounds, seed, 1)
}

pub fn run_federation_with<T: Scalar>(
    split: &SplitPair,
    partition: &Partition,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    rounds: usize,
    seed: u64,
    workers: usize,
) -> Result<FedResult<T>> {
    if split.train.is_empty() {
        return Err(Error::Empty("train split"));
    }
    tcfg.validate()?;
    let clients = client_examples(split, partition)?;
    let mut global: ParameterVector<T> = init_model(mcfg, seed)?;
    let pool = Workers::new(workers)?;
    let mut history = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let updates = pool
            .map(&clients, |k, data| {
                local_update(&global, data, mcfg, tcfg, round, k)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        global = fedavg_aggregate(&updates)?;
        history.push(RoundRecord {
            round: round + 1,
            global_mse: evaluate_mse(&global, mcfg, split.test.examples())?,
        });
    }
    Ok(FedResult {
        final_params: global,
        history,
        echo: RunEcho {
            mcfg: *mcfg,
            tcfg: *tcfg,
            rounds,
            seed,
            partition: partition.fingerprint(),
            client_sizes: partition.sizes(),
        },
    })
}

/// `round,global_mse` rows.
pub fn write_history<W: Write>(history: &[RoundRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "round,global_mse")?;
    for r in history {
        writeln!(out, "{},{}", r.round, r.global_mse)?;
    }
    out.flush()
}
