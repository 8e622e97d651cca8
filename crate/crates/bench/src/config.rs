use std::path::{Path, PathBuf};

use dtifl_core::dataset::{generate_synthetic, split_train_test, Dataset, SyntheticSpec};
use dtifl_core::learner::{ModelConfig, ModelKind, TrainConfig};
use dtifl_core::partition::mixing_levels;
use dtifl_core::SplitPair;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, BenchResult};

/// Where records come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// `drug_id,protein_id,label` file; relative paths resolve against the
    /// config file's directory.
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Iid,
    EntityProtein,
    EntityDrug,
    Combined,
    Quantity,
    Addition,
}

impl Strategy {
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Iid => "iid",
            Strategy::EntityProtein => "entity_protein",
            Strategy::EntityDrug => "entity_drug",
            Strategy::Combined => "combined",
            Strategy::Quantity => "quantity",
            Strategy::Addition => "addition",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            kind: ModelKind::TwoTowerMlp,
            embedding_dim: 16,
            hidden_dim: 32,
        }
    }
}

/// Local-training settings. The shuffle seed is derived per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 1,
            learning_rate: 0.05,
            batch_size: 32,
        }
    }
}

impl TrainSpec {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdditionGrid {
    pub dominant_share: f64,
    pub extra_shares: Vec<f64>,
    pub extra_clients: Vec<usize>,
}

impl Default for AdditionGrid {
    fn default() -> Self {
        AdditionGrid {
            dominant_share: 0.6,
            extra_shares: vec![0.1, 0.2, 0.3, 0.4],
            extra_clients: vec![1, 2, 3, 4],
        }
    }
}

fn default_test_fraction() -> f64 {
    0.2
}
fn default_client_counts() -> Vec<usize> {
    vec![2, 4, 8, 16, 32]
}
fn default_dominant_shares() -> Vec<f64> {
    vec![0.9, 0.75, 0.6, 0.45, 0.3]
}
fn default_rounds() -> usize {
    10
}
fn default_repeats() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DataSource,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Seed of the train/test split; defaults to `base_seed`. The split is
    /// shared by every cell of a run.
    #[serde(default)]
    pub split_seed: Option<u64>,
    #[serde(default = "default_client_counts")]
    pub client_counts: Vec<usize>,
    #[serde(default = "strategy_default")]
    pub strategy: Strategy,
    #[serde(default = "mixing_levels")]
    pub mixing_levels: Vec<f64>,
    /// Ring kernel width; `K/4` when absent.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Quantity-skew profile width; `(K-1)/4` when absent.
    #[serde(default)]
    pub sigma_q: Option<f64>,
    #[serde(default = "default_dominant_shares")]
    pub dominant_shares: Vec<f64>,
    #[serde(default)]
    pub addition: AdditionGrid,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Epochs per ensemble member; `rounds * train.epochs` when absent.
    #[serde(default)]
    pub member_epochs: Option<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn strategy_default() -> Strategy {
    Strategy::Iid
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> BenchResult<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; a relative CSV path is rebased onto the
    /// config's directory.
    pub fn load(path: &Path) -> BenchResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        if let DataSource::Csv(p) = &mut cfg.dataset {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> BenchResult<()> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            ));
        }
        if self.client_counts.is_empty() || self.client_counts.contains(&0) {
            return bad("client_counts must be non-empty and positive".into());
        }
        if self.mixing_levels.is_empty()
            || self.mixing_levels.iter().any(|l| !(0.0..=1.0).contains(l))
        {
            return bad("mixing_levels must be non-empty and within [0, 1]".into());
        }
        for (name, v) in [("sigma", self.sigma), ("sigma_q", self.sigma_q)] {
            if let Some(s) = v {
                if !(s.is_finite() && s > 0.0) {
                    return bad(format!("{name} {s} must be > 0"));
                }
            }
        }
        if self.dominant_shares.is_empty()
            || self
                .dominant_shares
                .iter()
                .any(|s| !(*s > 0.0 && *s <= 1.0))
        {
            return bad("dominant_shares must be non-empty and within (0, 1]".into());
        }
        let a = &self.addition;
        if a.extra_shares.is_empty() || a.extra_clients.is_empty() || a.extra_clients.contains(&0) {
            return bad("addition grid needs extra_shares and positive extra_clients".into());
        }
        for &extra in &a.extra_shares {
            let plan = dtifl_core::AdditionPlan {
                dominant_share: a.dominant_share,
                extra_share: extra,
                n_extra_clients: 1,
            };
            plan.validate()
                .map_err(|e| BenchError::Config(e.to_string()))?;
        }
        if self.model.embedding_dim == 0 || self.model.hidden_dim == 0 {
            return bad("model dimensions must be positive".into());
        }
        self.train
            .with_seed(0)
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        if self.rounds == 0 || self.member_epochs == Some(0) {
            return bad("rounds and member_epochs must be positive".into());
        }
        match self.strategy {
            Strategy::Combined if self.client_counts.iter().any(|k| k % 2 != 0) => {
                bad("combined strategy needs even client counts".into())
            }
            Strategy::Quantity if self.client_counts.contains(&1) => {
                bad("quantity strategy needs client counts >= 2".into())
            }
            _ => Ok(()),
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.base_seed)
    }

    pub fn member_epochs(&self) -> usize {
        self.member_epochs
            .unwrap_or(self.rounds * self.train.epochs)
    }

    pub fn load_dataset(&self) -> BenchResult<Dataset> {
        Ok(match &self.dataset {
            DataSource::Csv(path) => Dataset::load_csv(path)?,
            DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        })
    }

    pub fn load_split(&self) -> BenchResult<SplitPair> {
        let ds = self.load_dataset()?;
        let split = split_train_test(&ds, self.test_fraction, self.split_seed())?;
        if split.train.is_empty() || split.test.is_empty() {
            return Err(BenchError::Config(format!(
                "{} records leave an empty train or test side at test_fraction {}",
                ds.len(),
                self.test_fraction
            )));
        }
        Ok(split)
    }

    /// Model shape for a dataset's entity index.
    pub fn model_config(&self, ds: &Dataset) -> ModelConfig {
        ModelConfig {
            kind: self.model.kind,
            embedding_dim: self.model.embedding_dim,
            hidden_dim: self.model.hidden_dim,
            n_drugs: ds.n_drugs(),
            n_proteins: ds.n_proteins(),
        }
    }
}
