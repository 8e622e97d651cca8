//! Interaction records, the canonical CSV format, synthetic data with known
//! ground truth, and the single train/test split shared by every experiment.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexSet;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

pub const CSV_HEADER: [&str; 3] = ["drug_id", "protein_id", "label"];

/// Record, compound and target counts of the original KIBA assay release.
pub const ORIGINAL_KIBA: DatasetMeta = DatasetMeta {
    n_records: 246_088,
    n_drugs: 52_498,
    n_proteins: 467,
};

/// One `(drug, protein, affinity)` observation.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub drug_id: String,
    pub protein_id: String,
    pub label: f64,
}

/// An [`InteractionRecord`] with its entity ids resolved to dense indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub drug: usize,
    pub protein: usize,
    pub label: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetMeta {
    pub n_records: usize,
    pub n_drugs: usize,
    pub n_proteins: usize,
}

/// Latent vectors behind a synthetic dataset, aligned with its dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub latent_dim: usize,
    pub noise_sd: f64,
    pub drug_latents: Vec<Vec<f64>>,
    pub protein_latents: Vec<Vec<f64>>,
}

impl SyntheticTruth {
    /// Noise-free label for a pair of dense indices.
    pub fn signal(&self, drug: usize, protein: usize) -> f64 {
        dot(&self.drug_latents[drug], &self.protein_latents[protein])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Immutable, ordered collection of interaction records.
///
/// Subsets produced by [`Dataset::subset`] share their parent's entity
/// indices, so a model sized for the parent can score any subset.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<InteractionRecord>,
    examples: Vec<Example>,
    drugs: Arc<IndexSet<String>>,
    proteins: Arc<IndexSet<String>>,
    truth: Option<Arc<SyntheticTruth>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.records == other.records
            && self.drugs == other.drugs
            && self.proteins == other.proteins
            && self.truth == other.truth
    }
}

impl Dataset {
    /// Builds a dataset, assigning dense indices in order of first appearance.
    pub fn from_records(records: Vec<InteractionRecord>) -> Result<Self> {
        let mut drugs = IndexSet::new();
        let mut proteins = IndexSet::new();
        let mut examples = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.drug_id.is_empty() || r.protein_id.is_empty() {
                return Err(Error::invalid(format!("record {i}: empty entity id")));
            }
            if !r.label.is_finite() {
                return Err(Error::invalid(format!("record {i}: non-finite label")));
            }
            let (drug, _) = drugs.insert_full(r.drug_id.clone());
            let (protein, _) = proteins.insert_full(r.protein_id.clone());
            examples.push(Example {
                drug,
                protein,
                label: r.label,
            });
        }
        Ok(Dataset {
            records,
            examples,
            drugs: Arc::new(drugs),
            proteins: Arc::new(proteins),
            truth: None,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    /// Size of the drug index space (shared with the parent for subsets).
    pub fn n_drugs(&self) -> usize {
        self.drugs.len()
    }

    pub fn n_proteins(&self) -> usize {
        self.proteins.len()
    }

    pub fn drug_index(&self, id: &str) -> Option<usize> {
        self.drugs.get_index_of(id)
    }

    pub fn protein_index(&self, id: &str) -> Option<usize> {
        self.proteins.get_index_of(id)
    }

    pub fn drug_id(&self, idx: usize) -> Option<&str> {
        self.drugs.get_index(idx).map(String::as_str)
    }

    pub fn protein_id(&self, idx: usize) -> Option<&str> {
        self.proteins.get_index(idx).map(String::as_str)
    }

    pub fn truth(&self) -> Option<&SyntheticTruth> {
        self.truth.as_deref()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            n_records: self.len(),
            n_drugs: self.n_drugs(),
            n_proteins: self.n_proteins(),
        }
    }

    /// Whether the counts match the original KIBA release. Processed KIBA
    /// variants legitimately differ, so callers treat a mismatch as a warning.
    pub fn matches_original_kiba(&self) -> bool {
        self.meta() == ORIGINAL_KIBA
    }

    /// Records at `indices`, in the given order, sharing this dataset's
    /// entity indexing.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut records = Vec::with_capacity(indices.len());
        let mut examples = Vec::with_capacity(indices.len());
        for &i in indices {
            let limit = self.len();
            let r = self.records.get(i).ok_or(Error::OutOfRange {
                what: "record",
                index: i,
                limit,
            })?;
            records.push(r.clone());
            examples.push(self.examples[i]);
        }
        Ok(Dataset {
            records,
            examples,
            drugs: Arc::clone(&self.drugs),
            proteins: Arc::clone(&self.proteins),
            truth: self.truth.clone(),
        })
    }

    /// Number of records per dense drug index.
    pub fn drug_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_drugs()];
        for e in &self.examples {
            counts[e.drug] += 1;
        }
        counts
    }

    pub fn protein_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_proteins()];
        for e in &self.examples {
            counts[e.protein] += 1;
        }
        counts
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_csv(file, path)
    }

    /// Canonical CSV; labels carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.records {
            let label = format!("{:.16e}", r.label);
            w.write_record([r.drug_id.as_str(), r.protein_id.as_str(), label.as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(io::BufWriter::new(file))
    }
}

/// Parses canonical CSV from any reader; `origin` is only used in errors.
pub fn read_csv<R: io::Read>(input: R, origin: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Header {
            path: origin.to_path_buf(),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let fail = |reason: String| Error::Row {
            path: origin.to_path_buf(),
            line,
            reason,
        };
        if row.len() != 3 {
            return Err(fail(format!("expected 3 fields, found {}", row.len())));
        }
        let (drug_id, protein_id, raw) = (&row[0], &row[1], &row[2]);
        if drug_id.is_empty() || protein_id.is_empty() {
            return Err(fail("empty entity id".into()));
        }
        let label: f64 = raw
            .trim()
            .parse()
            .map_err(|_| fail(format!("label `{raw}` is not a number")))?;
        if !label.is_finite() {
            return Err(fail(format!("label `{raw}` is not finite")));
        }
        records.push(InteractionRecord {
            drug_id: drug_id.to_owned(),
            protein_id: protein_id.to_owned(),
            label,
        });
    }
    Dataset::from_records(records)
}

/// Parameters of a synthetic factorisation dataset.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_drugs: usize,
    pub n_proteins: usize,
    pub n_records: usize,
    pub latent_dim: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Synthetic records with `label = <u_d, v_p> + noise`.
///
/// Latent entries are standard normal scaled by `1/sqrt(latent_dim)`, pairs
/// are drawn uniformly and noise is `Normal(0, noise_sd^2)`. The latents are
/// kept on the dataset (see [`Dataset::truth`]).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec {
        n_drugs,
        n_proteins,
        n_records,
        latent_dim,
        noise_sd,
        seed,
    } = *spec;
    if n_records > 0 && (n_drugs == 0 || n_proteins == 0) {
        return Err(Error::invalid(
            "records requested with zero drugs or proteins",
        ));
    }
    if latent_dim == 0 {
        return Err(Error::invalid("latent_dim must be positive"));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::invalid(format!(
            "noise_sd {noise_sd} must be finite and >= 0"
        )));
    }

    let scale = 1.0 / (latent_dim as f64).sqrt();
    let latents = |name: &str, n: usize| -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, name, &[]);
        (0..n)
            .map(|_| {
                (0..latent_dim)
                    .map(|_| r.sample::<f64, _>(StandardNormal) * scale)
                    .collect()
            })
            .collect()
    };
    let drug_latents = latents("synthetic/drug-latent", n_drugs);
    let protein_latents = latents("synthetic/protein-latent", n_proteins);

    let drug_width = n_drugs.to_string().len();
    let protein_width = n_proteins.to_string().len();
    let mut pairs = rng::stream(seed, "synthetic/pairs", &[]);
    let mut noise = rng::stream(seed, "synthetic/noise", &[]);
    let mut drawn = Vec::with_capacity(n_records);
    let records = (0..n_records)
        .map(|_| {
            let d = pairs.random_range(0..n_drugs);
            let p = pairs.random_range(0..n_proteins);
            let eps: f64 = noise.sample(StandardNormal);
            drawn.push((d, p));
            InteractionRecord {
                drug_id: format!("D{d:0drug_width$}"),
                protein_id: format!("P{p:0protein_width$}"),
                label: dot(&drug_latents[d], &protein_latents[p]) + noise_sd * eps,
            }
        })
        .collect();

    let mut ds = Dataset::from_records(records)?;
    // Re-align latents with the dense (first-appearance) indices.
    let mut drug_aligned = vec![Vec::new(); ds.n_drugs()];
    let mut protein_aligned = vec![Vec::new(); ds.n_proteins()];
    for (e, &(d, p)) in ds.examples.iter().zip(&drawn) {
        if drug_aligned[e.drug].is_empty() {
            drug_aligned[e.drug] = drug_latents[d].clone();
        }
        if protein_aligned[e.protein].is_empty() {
            protein_aligned[e.protein] = protein_latents[p].clone();
        }
    }
    ds.truth = Some(Arc::new(SyntheticTruth {
        latent_dim,
        noise_sd,
        drug_latents: drug_aligned,
        protein_latents: protein_aligned,
    }));
    Ok(ds)
}

/// Train/test split of a source dataset.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: Dataset,
    pub test: Dataset,
    /// Source indices of `train`, ascending.
    pub train_indices: Vec<usize>,
    /// Source indices of `test`, ascending.
    pub test_indices: Vec<usize>,
    pub seed: u64,
    pub test_fraction: f64,
}

/// Uniform random split with `round(test_fraction * N)` test records. Both
/// sides keep source order and the source's entity indexing.
pub fn split_train_test(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(Error::invalid(format!(
            "test_fraction {test_fraction} outside [0, 1]"
        )));
    }
    let n = ds.len();
    let n_test = ((test_fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split", &[]));
    let mut test_indices = order[..n_test].to_vec();
    let mut train_indices = order[n_test..].to_vec();
    test_indices.sort_unstable();
    train_indices.sort_unstable();
    Ok(SplitPair {
        train: ds.subset(&train_indices)?,
        test: ds.subset(&test_indices)?,
        train_indices,
        test_indices,
        seed,
        test_fraction,
    })
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;

    fn parse(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes(), &PathBuf::from("mem.csv"))
    }

    fn spec(n_records: usize, noise_sd: f64) -> SyntheticSpec {
        SyntheticSpec {
            n_drugs: 12,
            n_proteins: 5,
            n_records,
            latent_dim: 3,
            noise_sd,
            seed: 42,
        }
    }

    #[test]
    fn loads_three_rows() {
        let ds = parse("drug_id,protein_id,label\nd1,p1,0.5\nd2,p1,1.5\nd1,p2,-2\n").unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.n_drugs() <= 3);
        assert_eq!(ds.meta().n_records, 3);
        assert_eq!(ds.examples()[2].drug, 0);
        assert_eq!(ds.examples()[2].protein, 1);
    }

    #[test]
    fn header_only_is_empty() {
        let ds = parse("drug_id,protein_id,label\n").unwrap();
        assert!(ds.is_empty());
        assert!(parse("drug_id,protein_id,label").unwrap().is_empty());
    }

    #[test]
    fn accepts_missing_trailing_newline() {
        let ds = parse("drug_id,protein_id,label\na,b,1").unwrap();
        assert_eq!(ds.records()[0].label, 1.0);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(matches!(
            parse("drug_id,protein_id\na,b\n"),
            Err(Error::Header { .. })
        ));
        assert!(matches!(
            parse("drug_id,protein_id,label,extra\na,b,1,2\n"),
            Err(Error::Header { .. })
        ));
    }

    #[test]
    fn label_errors_name_the_line() {
        let err = parse("drug_id,protein_id,label\na,b,1\na,c,oops\n").unwrap_err();
        match err {
            Error::Row { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let err = parse("drug_id,protein_id,label\na,b,NaN\n").unwrap_err();
        assert!(matches!(err, Error::Row { line: 2, .. }), "{err}");
        let err = parse("drug_id,protein_id,label\na,b,inf\n").unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            Dataset::load_csv("/nonexistent/kiba.csv"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn synthetic_empty() {
        let ds = generate_synthetic(&spec(0, 0.1)).unwrap();
        assert!(ds.is_empty());
        let none = SyntheticSpec {
            n_drugs: 0,
            ..spec(0, 0.0)
        };
        assert!(generate_synthetic(&none).unwrap().is_empty());
        let bad = SyntheticSpec {
            n_drugs: 0,
            ..spec(3, 0.0)
        };
        assert!(generate_synthetic(&bad).is_err());
    }

    #[test]
    fn noise_free_labels_are_latent_dot_products() {
        let ds = generate_synthetic(&spec(500, 0.0)).unwrap();
        let truth = ds.truth().unwrap();
        for e in ds.examples() {
            let u = &truth.drug_latents[e.drug];
            let v = &truth.protein_latents[e.protein];
            let mut expect = 0.0;
            for k in 0..truth.latent_dim {
                expect += u[k] * v[k];
            }
            assert_eq!(e.label, expect);
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_synthetic(&spec(300, 0.2))
            .unwrap()
            .write_csv(&mut a)
            .unwrap();
        generate_synthetic(&spec(300, 0.2))
            .unwrap()
            .write_csv(&mut b)
            .unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        generate_synthetic(&SyntheticSpec {
            seed: 43,
            ..spec(300, 0.2)
        })
        .unwrap()
        .write_csv(&mut c)
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_boundaries() {
        let ds = generate_synthetic(&spec(10, 0.1)).unwrap();
        let s = split_train_test(&ds, 0.0, 1).unwrap();
        assert!(s.test.is_empty());
        assert_eq!(s.train, ds);

        let s = split_train_test(&ds, 0.2, 1).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
        assert!(s.train_indices.iter().all(|i| !s.test_indices.contains(i)));

        let again = split_train_test(&ds, 0.2, 1).unwrap();
        assert_eq!(s.test_indices, again.test_indices);

        assert!(split_train_test(&ds, 1.5, 1).is_err());
        assert!(split_train_test(&ds, f64::NAN, 1).is_err());
        assert_eq!(split_train_test(&ds, 1.0, 1).unwrap().test.len(), 10);
    }

    #[test]
    fn subsets_share_entity_indices() {
        let ds = generate_synthetic(&spec(50, 0.1)).unwrap();
        let sub = ds.subset(&[7, 3]).unwrap();
        assert_eq!(sub.n_drugs(), ds.n_drugs());
        assert_eq!(sub.examples()[0], ds.examples()[7]);
        assert!(ds.subset(&[50]).is_err());
    }
}
