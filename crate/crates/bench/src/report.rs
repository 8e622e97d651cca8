use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{BenchError, BenchResult};

pub const COMPARE_HEADER: &str =
    "distribution,client_count,ensemble_mse,federated_mse,pct_difference";
pub const GRID_HEADER: &str = "setup,row_key,col_key,repeats,mean_mse,std_mse,pct_change";
pub const CELLS_HEADER: &str = "row_key,col_key,repeat,seed,final_mse";

/// `100 * (fed - ens) / ens`; positive means the federation did worse.
pub fn pct_difference(fed_mse: f64, ens_mse: f64) -> BenchResult<f64> {
    if ens_mse == 0.0 || !ens_mse.is_finite() || !fed_mse.is_finite() {
        return Err(BenchError::Runtime(format!(
            "pct_difference undefined for fed {fed_mse}, ens {ens_mse}"
        )));
    }
    Ok(100.0 * (fed_mse - ens_mse) / ens_mse)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Iid,
    Noniid,
}

impl Distribution {
    pub fn as_str(self) -> &'static str {
        match self {
            Distribution::Iid => "iid",
            Distribution::Noniid => "noniid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub distribution: Distribution,
    pub client_count: usize,
    pub ensemble_mse: f64,
    pub federated_mse: f64,
    pub pct_difference: f64,
}

impl ComparisonRow {
    pub fn new(
        distribution: Distribution,
        client_count: usize,
        ensemble_mse: f64,
        federated_mse: f64,
    ) -> BenchResult<Self> {
        Ok(ComparisonRow {
            distribution,
            client_count,
            ensemble_mse,
            federated_mse,
            pct_difference: pct_difference(federated_mse, ensemble_mse)?,
        })
    }
}

/// One repeat of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLog {
    pub row_key: String,
    pub col_key: String,
    pub repeat: usize,
    pub seed: u64,
    pub final_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub row_key: String,
    pub col_key: String,
    pub repeats: usize,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub pct_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub setup: String,
    pub cells: Vec<GridCell>,
    pub reference_cell: (String, String),
    pub log: Vec<CellLog>,
    pub provenance: Value,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Groups `log` into cells in first-appearance order of `(row, col)` and
/// normalises every mean against the reference cell.
pub fn aggregate(
    setup: &str,
    log: Vec<CellLog>,
    reference: (String, String),
    provenance: Value,
) -> BenchResult<GridReport> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for l in &log {
        let key = (l.row_key.clone(), l.col_key.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut cells: Vec<GridCell> = keys
        .into_iter()
        .map(|(row_key, col_key)| {
            let mut entries: Vec<&CellLog> = log
                .iter()
                .filter(|l| l.row_key == row_key && l.col_key == col_key)
                .collect();
            entries.sort_by_key(|l| l.repeat);
            let values: Vec<f64> = entries.iter().map(|l| l.final_mse).collect();
            let (mean_mse, std_mse) = mean_std(&values);
            GridCell {
                row_key,
                col_key,
                repeats: values.len(),
                mean_mse,
                std_mse,
                pct_change: 0.0,
            }
        })
        .collect();
    let reference_mse = cells
        .iter()
        .find(|c| (&c.row_key, &c.col_key) == (&reference.0, &reference.1))
        .map(|c| c.mean_mse)
        .ok_or_else(|| {
            BenchError::Runtime(format!(
                "reference cell ({}, {}) missing from the log",
                reference.0, reference.1
            ))
        })?;
    for c in &mut cells {
        c.pct_change = if (&c.row_key, &c.col_key) == (&reference.0, &reference.1) {
            0.0
        } else {
            pct_difference(c.mean_mse, reference_mse)?
        };
    }
    Ok(GridReport {
        setup: setup.to_string(),
        cells,
        reference_cell: reference,
        log,
        provenance,
    })
}

pub fn write_compare_csv<W: Write>(rows: &[ComparisonRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{COMPARE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.distribution.as_str(),
            r.client_count,
            r.ensemble_mse,
            r.federated_mse,
            r.pct_difference
        )?;
    }
    Ok(())
}

pub fn write_grid_csv<W: Write>(report: &GridReport, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{GRID_HEADER}")?;
    for c in &report.cells {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            report.setup, c.row_key, c.col_key, c.repeats, c.mean_mse, c.std_mse, c.pct_change
        )?;
    }
    Ok(())
}

pub fn write_cells_csv<W: Write>(log: &[CellLog], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CELLS_HEADER}")?;
    for l in log {
        writeln!(
            out,
            "{},{},{},{},{}",
            l.row_key, l.col_key, l.repeat, l.seed, l.final_mse
        )?;
    }
    Ok(())
}

pub fn read_cells_csv(path: &Path) -> BenchResult<Vec<CellLog>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| BenchError::Runtime(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| BenchError::Runtime(format!("{}: {e}", path.display())))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CELLS_HEADER {
        return Err(BenchError::Runtime(format!(
            "{}: expected header `{CELLS_HEADER}`, found `{header}`",
            path.display()
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| BenchError::Runtime(format!("{}: {e}", path.display()))))
        .collect()
}

fn write_file(
    path: &Path,
    write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> BenchResult<()> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| BenchError::io(path, e))?;
    fs::write(path, buf).map_err(|e| BenchError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> BenchResult<()> {
    write_file(path, |buf| {
        serde_json::to_writer_pretty(&mut *buf, value)?;
        buf.push(b'\n');
        Ok(())
    })
}

/// `compare.csv` plus `compare.json` with the provenance.
pub fn write_comparison(
    rows: &[ComparisonRow],
    provenance: &Value,
    out_dir: &Path,
) -> BenchResult<()> {
    fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
    write_file(&out_dir.join("compare.csv"), |buf| {
        write_compare_csv(rows, buf)
    })?;
    write_json(&out_dir.join("compare.json"), provenance)
}

#[derive(Serialize, Deserialize)]
struct GridMeta {
    setup: String,
    reference_cell: (String, String),
    provenance: Value,
}

/// `grid.csv`, `cells.csv` and `grid.json` (setup, reference, provenance).
pub fn write_grid(report: &GridReport, out_dir: &Path) -> BenchResult<()> {
    fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
    write_file(&out_dir.join("grid.csv"), |buf| write_grid_csv(report, buf))?;
    write_file(&out_dir.join("cells.csv"), |buf| {
        write_cells_csv(&report.log, buf)
    })?;
    write_json(
        &out_dir.join("grid.json"),
        &GridMeta {
            setup: report.setup.clone(),
            reference_cell: report.reference_cell.clone(),
            provenance: report.provenance.clone(),
        },
    )
}

/// Rebuilds a report from the `cells.csv` and `grid.json` in `dir`.
pub fn reload_grid(dir: &Path) -> BenchResult<GridReport> {
    let meta_path = dir.join("grid.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| BenchError::io(&meta_path, e))?;
    let meta: GridMeta = serde_json::from_str(&text)
        .map_err(|e| BenchError::Runtime(format!("{}: {e}", meta_path.display())))?;
    let log = read_cells_csv(&dir.join("cells.csv"))?;
    aggregate(&meta.setup, log, meta.reference_cell, meta.provenance)
}

/// Table 1 of the original federated DTI benchmark, as printed: rounded
/// ensemble/federated MSE pairs and the percentage differences.
pub const TABLE1: [(Distribution, usize, f64, f64, f64); 10] = [
    (Distribution::Iid, 2, 0.509, 0.530, 4.08),
    (Distribution::Iid, 4, 0.563, 0.577, 2.58),
    (Distribution::Iid, 8, 0.567, 0.574, 1.30),
    (Distribution::Iid, 16, 0.576, 0.578, 0.42),
    (Distribution::Iid, 32, 0.709, 0.599, -15.53),
    (Distribution::Noniid, 2, 0.550, 0.556, 1.19),
    (Distribution::Noniid, 4, 0.556, 0.556, -0.05),
    (Distribution::Noniid, 8, 0.568, 0.574, 1.20),
    (Distribution::Noniid, 16, 0.573, 0.578, 0.690),
    (Distribution::Noniid, 32, 0.579, 0.578, -0.024),
];

pub fn table1_rows() -> BenchResult<Vec<ComparisonRow>> {
    TABLE1
        .iter()
        .map(|&(d, k, ens, fed, _)| ComparisonRow::new(d, k, ens, fed))
        .collect()
}
