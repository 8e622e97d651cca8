//! Bagging baseline: one independently trained model per non-empty client,
//! combined by the mean of their predictions.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Example, SplitPair};
use crate::error::{Error, Result};
use crate::federation::{client_examples, client_stream_seed, Workers};
use crate::learner::checkpoint::{read_params, write_params};
use crate::learner::{
    init_model, predict_all, sgd_train, ModelConfig, ParameterVector, TrainConfig,
};
use crate::partition::Partition;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel<T> {
    members: Vec<ParameterVector<T>>,
    client_ids: Vec<usize>,
    mcfg: ModelConfig,
    partition: Option<String>,
}

impl<T: Scalar> EnsembleModel<T> {
    pub fn new(members: Vec<ParameterVector<T>>, mcfg: ModelConfig) -> Result<Self> {
        let ids = (0..members.len()).collect();
        Self::with_clients(members, ids, mcfg, None)
    }

    fn with_clients(
        members: Vec<ParameterVector<T>>,
        client_ids: Vec<usize>,
        mcfg: ModelConfig,
        partition: Option<String>,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("ensemble"));
        }
        let layout = mcfg.layout();
        if members.iter().any(|m| m.layout() != layout.as_slice()) {
            return Err(Error::LayoutMismatch(
                "ensemble member does not match the model configuration".into(),
            ));
        }
        Ok(EnsembleModel {
            members,
            client_ids,
            mcfg,
            partition,
        })
    }

    pub fn members(&self) -> &[ParameterVector<T>] {
        &self.members
    }

    /// Client that trained each member.
    pub fn client_ids(&self) -> &[usize] {
        &self.client_ids
    }

    pub fn mcfg(&self) -> &ModelConfig {
        &self.mcfg
    }

    /// Fingerprint of the partition the members were trained on.
    pub fn partition(&self) -> Option<&str> {
        self.partition.as_deref()
    }

    /// Writes `ensemble.params` (member checkpoints back to back) and
    /// `ensemble.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let params = dir.join("ensemble.params");
        let file = File::create(&params).map_err(|e| Error::io(&params, e))?;
        let mut out = BufWriter::new(file);
        for m in &self.members {
            write_params(m, &mut out)?;
        }
        let manifest = Manifest {
            mcfg: self.mcfg,
            members: self.client_ids.clone(),
            partition: self.partition.clone(),
            params_file: "ensemble.params".into(),
        };
        let json = dir.join("ensemble.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let json = dir.join("ensemble.json");
        let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let params = dir.join(&manifest.params_file);
        let file = File::open(&params).map_err(|e| Error::io(&params, e))?;
        let mut input = BufReader::new(file);
        let members = manifest
            .members
            .iter()
            .map(|_| read_params(&mut input))
            .collect::<Result<Vec<_>>>()?;
        Self::with_clients(members, manifest.members, manifest.mcfg, manifest.partition)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    mcfg: ModelConfig,
    /// Client id of each member, in file order.
    members: Vec<usize>,
    partition: Option<String>,
    params_file: String,
}

/// Initialisation seed of the member trained by client `k`; client 0 keeps
/// the run seed itself.
pub fn member_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains one member for `total_epochs`, in segments of `tcfg.epochs` whose
/// shuffle streams match those `client_id` would use in successive
/// federated rounds.
pub fn train_member<T: Scalar>(
    init_seed: u64,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    total_epochs: usize,
    data: &[Example],
    client_id: usize,
) -> Result<ParameterVector<T>> {
    tcfg.validate()?;
    let mut params = init_model(mcfg, init_seed)?;
    let mut done = 0;
    let mut segment = 0;
    while done < total_epochs {
        let epochs = tcfg.epochs.min(total_epochs - done);
        let keyed = TrainConfig {
            epochs,
            seed: client_stream_seed(tcfg.seed, segment, client_id),
            ..*tcfg
        };
        params = sgd_train(&params, mcfg, &keyed, data)?;
        done += epochs;
        segment += 1;
    }
    Ok(params)
}

/// One member per non-empty client of `partition`, which must index
/// `split.train`.
pub fn train_bagging<T: Scalar>(
    split: &SplitPair,
    partition: &Partition,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    total_epochs: usize,
    seed: u64,
) -> Result<EnsembleModel<T>> {
    train_bagging_with(split, partition, mcfg, tcfg, total_epochs, seed, 1)
}

pub fn train_bagging_with<T: Scalar>(
    split: &SplitPair,
    partition: &Partition,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    total_epochs: usize,
    seed: u64,
    workers: usize,
) -> Result<EnsembleModel<T>> {
    if total_epochs == 0 {
        return Err(Error::invalid("total_epochs must be positive"));
    }
    let clients: Vec<(usize, Vec<Example>)> = client_examples(split, partition)?
        .into_iter()
        .enumerate()
        .filter(|(_, data)| !data.is_empty())
        .collect();
    if clients.is_empty() {
        return Err(Error::Empty("every client"));
    }
    let members = Workers::new(workers)?
        .map(&clients, |_, (k, data)| {
            train_member(member_seed(seed, *k), mcfg, tcfg, total_epochs, data, *k)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let ids = clients.iter().map(|(k, _)| *k).collect();
    EnsembleModel::with_clients(members, ids, *mcfg, Some(partition.fingerprint()))
}

/// Mean of member predictions. Predictions are summed in ascending order of
/// value, so the result does not depend on member order.
fn mean_sorted<T: Scalar>(preds: &mut [T]) -> T {
    preds.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    preds.iter().copied().sum::<T>() / T::from_count(preds.len())
}

pub fn predict_ensemble<T: Scalar>(e: &EnsembleModel<T>, drug: usize, protein: usize) -> Result<T> {
    let probe = [Example {
        drug,
        protein,
        label: 0.0,
    }];
    let mut preds = e
        .members
        .iter()
        .map(|m| predict_all(m, &e.mcfg, &probe).map(|p| p[0]))
        .collect::<Result<Vec<T>>>()?;
    Ok(mean_sorted(&mut preds))
}

/// MSE of the mean prediction.
pub fn evaluate_ensemble<T: Scalar>(e: &EnsembleModel<T>, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation data"));
    }
    let per_member = e
        .members
        .iter()
        .map(|m| predict_all(m, &e.mcfg, data))
        .collect::<Result<Vec<_>>>()?;
    let mut column = vec![T::zero(); per_member.len()];
    let mut sse = 0.0;
    for (i, ex) in data.iter().enumerate() {
        for (slot, preds) in column.iter_mut().zip(&per_member) {
            *slot = preds[i];
        }
        let r = mean_sorted(&mut column).to_f64_lossless() - ex.label;
        sse += r * r;
    }
    Ok(sse / data.len() as f64)
}
