//! Record-to-client assignments.
//!
//! Every strategy returns a [`Partition`] whose client lists are disjoint,
//! ascending, and together cover the dataset (minus any records an addition
//! plan withholds). All randomness is keyed by the caller's seed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;

/// The nine mixing levels `{0, 1/8, ..., 1}`.
pub fn mixing_levels() -> Vec<f64> {
    (0..=8).map(|i| f64::from(i) / 8.0).collect()
}

/// Ring kernel width used when none is configured.
pub fn default_sigma(n_clients: usize) -> f64 {
    n_clients as f64 / 4.0
}

/// Quantity-skew kernel width used when none is configured.
pub fn default_sigma_q(n_clients: usize) -> f64 {
    (n_clients as f64 - 1.0) / 4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityDim {
    Protein,
    Drug,
}

impl EntityDim {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityDim::Protein => "protein",
            EntityDim::Drug => "drug",
        }
    }
}

/// How a partition was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: String,
    pub params: BTreeMap<String, Value>,
    pub seed: u64,
}

impl Provenance {
    fn new(strategy: &str, seed: u64) -> Self {
        Provenance {
            strategy: strategy.to_owned(),
            params: BTreeMap::new(),
            seed,
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.params.insert(key.to_owned(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    assignments: Vec<Vec<usize>>,
    n_records: usize,
    withheld: Vec<usize>,
    provenance: Provenance,
}

impl Partition {
    /// Validates disjointness and coverage of `0..n_records`; client lists
    /// are sorted on the way in.
    pub fn new(
        mut assignments: Vec<Vec<usize>>,
        n_records: usize,
        mut withheld: Vec<usize>,
        provenance: Provenance,
    ) -> Result<Self> {
        if assignments.is_empty() {
            return Err(Error::invalid("partition needs at least one client"));
        }
        let mut seen = vec![false; n_records];
        for idx in assignments.iter().flatten().chain(&withheld) {
            match seen.get_mut(*idx) {
                None => {
                    return Err(Error::OutOfRange {
                        what: "record",
                        index: *idx,
                        limit: n_records,
                    })
                }
                Some(true) => return Err(Error::invalid(format!("record {idx} assigned twice"))),
                Some(s) => *s = true,
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid(format!("record {missing} not assigned")));
        }
        for list in &mut assignments {
            list.sort_unstable();
        }
        withheld.sort_unstable();
        Ok(Partition {
            assignments,
            n_records,
            withheld,
            provenance,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn client(&self, k: usize) -> &[usize] {
        &self.assignments[k]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Size of the dataset this partition indexes.
    pub fn n_records(&self) -> usize {
        self.n_records
    }

    /// Records deliberately left out (addition plans only).
    pub fn withheld(&self) -> &[usize] {
        &self.withheld
    }

    /// Records assigned to some client, ascending.
    pub fn used(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.assignments.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Owner of each record; `None` for withheld records.
    pub fn owners(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.n_records];
        for (k, list) in self.assignments.iter().enumerate() {
            for &i in list {
                owner[i] = Some(k);
            }
        }
        owner
    }

    /// FNV-1a hash over provenance and assignments, as 16 hex digits.
    pub fn fingerprint(&self) -> String {
        let mut bytes = serde_json::to_vec(&self.provenance).unwrap_or_default();
        bytes.extend((self.n_records as u64).to_le_bytes());
        for list in &self.assignments {
            bytes.extend((list.len() as u64).to_le_bytes());
            for &i in list {
                bytes.extend((i as u64).to_le_bytes());
            }
        }
        for &i in &self.withheld {
            bytes.extend((i as u64).to_le_bytes());
        }
        format!("{:016x}", rng::fnv1a(&bytes))
    }

    fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// `record_index,client_id` rows in record order.
    pub fn write_manifest<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["record_index", "client_id"])?;
        for (i, owner) in self.owners().into_iter().enumerate() {
            if let Some(k) = owner {
                w.write_record([i.to_string(), k.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            provenance: self.provenance.clone(),
            n_clients: self.n_clients(),
            n_records: self.n_records,
            withheld: self.withheld.clone(),
            fingerprint: self.fingerprint(),
        }
    }

    /// Writes `<stem>.csv` and `<stem>.json` side by side.
    pub fn save(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        let file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_manifest(BufWriter::new(file))?;
        let json_path = json_path.as_ref();
        let mut text = serde_json::to_string_pretty(&self.sidecar())?;
        text.push('\n');
        std::fs::write(json_path, text).map_err(|e| Error::io(json_path, e))?;
        Ok(())
    }

    pub fn load(csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<Self> {
        let json_path = json_path.as_ref();
        let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let csv_path = csv_path.as_ref();
        let file = File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let header = rdr.headers()?.clone();
        if header.iter().ne(["record_index", "client_id"]) {
            return Err(Error::invalid(format!(
                "{}: expected header `record_index,client_id`",
                csv_path.display()
            )));
        }
        let mut assignments = vec![Vec::new(); sidecar.n_clients];
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = || Error::Row {
                path: csv_path.to_path_buf(),
                line,
                reason: "expected two non-negative integers".into(),
            };
            let idx: usize = row.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let k: usize = row.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            assignments
                .get_mut(k)
                .ok_or(Error::OutOfRange {
                    what: "client",
                    index: k,
                    limit: sidecar.n_clients,
                })?
                .push(idx);
        }
        let p = Partition::new(
            assignments,
            sidecar.n_records,
            sidecar.withheld,
            sidecar.provenance,
        )?;
        if p.fingerprint() != sidecar.fingerprint {
            return Err(Error::invalid(format!(
                "{}: fingerprint mismatch with sidecar",
                csv_path.display()
            )));
        }
        Ok(p)
    }
}

/// JSON sidecar of a partition manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub provenance: Provenance,
    pub n_clients: usize,
    pub n_records: usize,
    pub withheld: Vec<usize>,
    pub fingerprint: String,
}

/// Continuum coordinate and ring kernel of the Gaussian exchange.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingConfig {
    /// Probability that a record leaves its owner.
    pub level: f64,
    /// Kernel width in ring-distance units.
    pub sigma: f64,
    pub seed: u64,
}

impl MixingConfig {
    pub fn new(level: f64, sigma: f64, seed: u64) -> Result<Self> {
        let cfg = MixingConfig { level, sigma, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.level) {
            return Err(Error::invalid(format!(
                "mixing level {} outside [0, 1]",
                self.level
            )));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid(format!(
                "mixing sigma {} must be > 0",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Dominant client plus evenly split extra clients; the rest is withheld.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdditionPlan {
    pub dominant_share: f64,
    pub extra_share: f64,
    pub n_extra_clients: usize,
}

impl AdditionPlan {
    pub fn validate(&self) -> Result<()> {
        let AdditionPlan {
            dominant_share: dom,
            extra_share: extra,
            n_extra_clients,
        } = *self;
        if !(dom > 0.0 && dom <= 1.0) {
            return Err(Error::invalid(format!(
                "dominant_share {dom} outside (0, 1]"
            )));
        }
        if !(extra >= 0.0 && dom + extra <= 1.0 + SHARE_EPS) {
            return Err(Error::invalid(format!(
                "shares {dom} + {extra} exceed 1 or are negative"
            )));
        }
        if extra > 0.0 && n_extra_clients == 0 {
            return Err(Error::invalid(
                "extra_share > 0 needs at least one extra client",
            ));
        }
        Ok(())
    }
}

const SHARE_EPS: f64 = 1e-9;

/// `floor(share * n)`, snapping values within 1e-9 below an integer up so that
/// decimal shares such as 0.29 of 100 give 29.
pub fn share_count(share: f64, n: usize) -> usize {
    ((share * n as f64 + SHARE_EPS).floor() as usize).min(n)
}

/// Integer counts summing to `total`, proportional to `weights`. Leftover
/// units go to the largest fractional parts, ties to the lower index.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn shuffled(n: usize, seed: u64, name: &str) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, name, &[]));
    order
}

/// Random shuffle dealt round-robin; client sizes differ by at most one.
pub fn partition_iid(ds: &Dataset, n_clients: usize, seed: u64) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients must be >= 1"));
    }
    let mut assignments = vec![Vec::new(); n_clients];
    for (pos, idx) in shuffled(ds.len(), seed, "partition/iid")
        .into_iter()
        .enumerate()
    {
        assignments[pos % n_clients].push(idx);
    }
    let prov = Provenance::new("iid", seed).with("n_clients", json!(n_clients));
    Partition::new(assignments, ds.len(), Vec::new(), prov)
}

/// Greedy load-balanced assignment of whole entities among `records`.
fn assign_entities(
    ds: &Dataset,
    records: &[usize],
    dim: EntityDim,
    n_clients: usize,
) -> Result<Vec<Vec<usize>>> {
    let (span, entity_of): (usize, Box<dyn Fn(usize) -> usize>) = match dim {
        EntityDim::Protein => (ds.n_proteins(), Box::new(|i| ds.examples()[i].protein)),
        EntityDim::Drug => (ds.n_drugs(), Box::new(|i| ds.examples()[i].drug)),
    };
    let id_of = |e: usize| match dim {
        EntityDim::Protein => ds.protein_id(e).unwrap_or_default(),
        EntityDim::Drug => ds.drug_id(e).unwrap_or_default(),
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); span];
    for &i in records {
        members[entity_of(i)].push(i);
    }
    let mut entities: Vec<usize> = (0..span).filter(|&e| !members[e].is_empty()).collect();
    if entities.len() < n_clients {
        return Err(Error::invalid(format!(
            "{} distinct {}s cannot cover {n_clients} clients",
            entities.len(),
            dim.as_str()
        )));
    }
    entities.sort_by(|&a, &b| {
        members[b]
            .len()
            .cmp(&members[a].len())
            .then_with(|| id_of(a).cmp(id_of(b)))
    });
    let mut assignments = vec![Vec::new(); n_clients];
    let mut loads = vec![0usize; n_clients];
    for e in entities {
        // min_by_key returns the first minimum, i.e. the lowest client id.
        let k = (0..n_clients).min_by_key(|&k| loads[k]).unwrap_or(0);
        loads[k] += members[e].len();
        assignments[k].append(&mut members[e]);
    }
    Ok(assignments)
}

/// Entity-exclusive split: every protein (or drug) lives on one client.
///
/// Entities are taken by descending record count (ties by id) and each goes
/// to the currently least-loaded client. Deterministic; `seed` is only
/// recorded in provenance.
pub fn partition_entity(
    ds: &Dataset,
    n_clients: usize,
    dim: EntityDim,
    seed: u64,
) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients must be >= 1"));
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let assignments = assign_entities(ds, &all, dim, n_clients)?;
    let strategy = match dim {
        EntityDim::Protein => "entity_protein",
        EntityDim::Drug => "entity_drug",
    };
    let prov = Provenance::new(strategy, seed).with("n_clients", json!(n_clients));
    Partition::new(assignments, ds.len(), Vec::new(), prov)
}

/// Ring-Gaussian exchange: each record leaves its owner with probability
/// `level`, landing on another client with probability proportional to
/// `exp(-d^2 / (2 sigma^2))` in ring distance `d`.
pub fn apply_gaussian_mixing(p: &Partition, cfg: &MixingConfig) -> Result<Partition> {
    cfg.validate()?;
    let k = p.n_clients();
    if k == 1 && cfg.level > 0.0 {
        return Err(Error::invalid(
            "mixing needs at least two clients when level > 0",
        ));
    }
    let mut prov = p.provenance.clone();
    prov.params.insert(
        "mixing".into(),
        json!({ "level": cfg.level, "sigma": cfg.sigma, "seed": cfg.seed, "topology": "ring" }),
    );
    if cfg.level == 0.0 {
        return Ok(p.clone().with_provenance(prov));
    }

    // Cumulative kernel over the other clients, ascending id.
    let kernels: Vec<Vec<(usize, f64)>> = (0..k)
        .map(|i| {
            let mut acc = 0.0;
            (0..k)
                .filter(|&j| j != i)
                .map(|j| {
                    let diff = i.abs_diff(j);
                    let d = diff.min(k - diff) as f64;
                    acc += (-d * d / (2.0 * cfg.sigma * cfg.sigma)).exp();
                    (j, acc)
                })
                .collect()
        })
        .collect();

    let mut out = vec![Vec::new(); k];
    for (owner, list) in p.assignments.iter().enumerate() {
        for &idx in list {
            let mut r = rng::stream(cfg.seed, "partition/mix", &[idx as u64]);
            let stay: f64 = r.random();
            let dest = if stay < cfg.level {
                let kernel = &kernels[owner];
                let total = kernel.last().map_or(0.0, |&(_, c)| c);
                let v = r.random::<f64>() * total;
                kernel
                    .iter()
                    .find(|&&(_, c)| v < c)
                    .or(kernel.last())
                    .map_or(owner, |&(j, _)| j)
            } else {
                owner
            };
            out[dest].push(idx);
        }
    }
    Partition::new(out, p.n_records, p.withheld.clone(), prov)
}

/// Protein-exclusive clients on the first half of the ring, drug-exclusive on
/// the second half, then one Gaussian exchange over the whole ring.
pub fn partition_combined(
    ds: &Dataset,
    n_clients: usize,
    cfg: &MixingConfig,
    seed: u64,
) -> Result<Partition> {
    if n_clients < 2 || !n_clients.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "combined split needs an even client count >= 2, got {n_clients}"
        )));
    }
    cfg.validate()?;
    let order = shuffled(ds.len(), seed, "partition/combined");
    let n_a = ds.len().div_ceil(2);
    let (half_a, half_b) = order.split_at(n_a);
    let half = n_clients / 2;
    let mut assignments = assign_entities(ds, half_a, EntityDim::Protein, half)?;
    assignments.extend(assign_entities(ds, half_b, EntityDim::Drug, half)?);
    let prov = Provenance::new("combined", seed)
        .with("n_clients", json!(n_clients))
        .with("half_a", json!(half_a.len()))
        .with("half_b", json!(half_b.len()))
        .with("mixing_scope", json!("full_ring"));
    let base = Partition::new(assignments, ds.len(), Vec::new(), prov)?;
    apply_gaussian_mixing(&base, cfg)
}

/// Client 0 takes `floor(dominant_share * N)` random records; the rest is
/// spread over clients `1..K` by a one-sided Gaussian profile peaking at
/// client 1.
pub fn partition_quantity_skew(
    ds: &Dataset,
    n_clients: usize,
    dominant_share: f64,
    sigma_q: f64,
    seed: u64,
) -> Result<Partition> {
    if n_clients < 2 {
        return Err(Error::invalid("quantity skew needs at least two clients"));
    }
    if !(dominant_share > 0.0 && dominant_share <= 1.0) {
        return Err(Error::invalid(format!(
            "dominant_share {dominant_share} outside (0, 1]"
        )));
    }
    if !(sigma_q.is_finite() && sigma_q > 0.0) {
        return Err(Error::invalid(format!("sigma_q {sigma_q} must be > 0")));
    }
    let n = ds.len();
    let counts = quantity_counts(n, n_clients, dominant_share, sigma_q);
    let order = shuffled(n, seed, "partition/quantity");
    let mut assignments = Vec::with_capacity(n_clients);
    let mut rest = order.as_slice();
    for c in counts {
        let (take, tail) = rest.split_at(c);
        assignments.push(take.to_vec());
        rest = tail;
    }
    let prov = Provenance::new("quantity", seed)
        .with("n_clients", json!(n_clients))
        .with("dominant_share", json!(dominant_share))
        .with("sigma_q", json!(sigma_q));
    Partition::new(assignments, n, Vec::new(), prov)
}

/// Client sizes produced by [`partition_quantity_skew`].
pub fn quantity_counts(
    n: usize,
    n_clients: usize,
    dominant_share: f64,
    sigma_q: f64,
) -> Vec<usize> {
    let dominant = share_count(dominant_share, n);
    let weights: Vec<f64> = (1..n_clients)
        .map(|j| {
            let x = (j - 1) as f64;
            (-x * x / (2.0 * sigma_q * sigma_q)).exp()
        })
        .collect();
    let mut counts = vec![dominant];
    counts.extend(largest_remainder(n - dominant, &weights));
    counts
}

/// Dominant client plus `n_extra_clients` equal shares of the extra data;
/// whatever is left is withheld from training.
pub fn partition_addition(ds: &Dataset, plan: &AdditionPlan, seed: u64) -> Result<Partition> {
    plan.validate()?;
    let n = ds.len();
    let dominant = share_count(plan.dominant_share, n);
    let extra = share_count(plan.extra_share, n).min(n - dominant);
    let order = shuffled(n, seed, "partition/addition");
    let mut assignments = vec![order[..dominant].to_vec()];
    let mut rest = &order[dominant..];
    for c in largest_remainder(extra, &vec![1.0; plan.n_extra_clients]) {
        let (take, tail) = rest.split_at(c);
        assignments.push(take.to_vec());
        rest = tail;
    }
    let withheld = rest.to_vec();
    let prov = Provenance::new("addition", seed)
        .with("dominant_share", json!(plan.dominant_share))
        .with("extra_share", json!(plan.extra_share))
        .with("n_extra_clients", json!(plan.n_extra_clients))
        .with("withheld", json!(withheld.len()));
    Partition::new(assignments, n, withheld, prov)
}
