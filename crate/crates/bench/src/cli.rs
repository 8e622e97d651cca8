use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use dtifl_core::ensemble::{evaluate_ensemble, train_bagging_with};
use dtifl_core::federation::{run_federation_with, write_history};
use dtifl_core::learner::checkpoint::save_params;
use serde_json::json;

use crate::config::{DataSource, ExperimentConfig, Strategy};
use crate::error::{BenchError, BenchResult};
use crate::experiments::{cell_seed, key, run_comparison, run_grid, PartitionPlan, RunSeeds};
use crate::report::{reload_grid, table1_rows, write_comparison, write_grid};

#[derive(Debug, Parser)]
#[command(
    name = "dtifl",
    version,
    about = "Federated vs. ensemble benchmarks for drug-target affinity"
)]
pub struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replaces the config's base_seed (the synthetic seed for `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out; the input directory for `report --from`].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Concurrent training jobs; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic dataset as CSV.
    Synth,
    /// Write the partition manifest of one grid cell.
    Partition(CellArgs),
    /// Run one federation and write its history and final parameters.
    Fed(CellArgs),
    /// Train the bagging ensemble for one grid cell.
    Ensemble(CellArgs),
    /// Federated vs. ensemble MSE per client count.
    Compare,
    /// Run the grid selected by the config's strategy.
    Grid,
    /// Re-aggregate a grid directory, or emit the reference Table 1 rows.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct CellArgs {
    /// Client count (extra clients for `addition`) [default: first in config].
    #[arg(long)]
    pub clients: Option<usize>,
    /// Mixing level, dominant share or extra share [default: first in config].
    #[arg(long)]
    pub col: Option<f64>,
    /// Repeat index used to derive the cell seed.
    #[arg(long, default_value_t = 0)]
    pub repeat: usize,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ReportArgs {
    /// Directory holding `cells.csv` and `grid.json`.
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Write the published federated/ensemble comparison as `compare.csv`.
    #[arg(long)]
    pub table1: bool,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> BenchResult<()> {
    if cli.workers == 0 {
        return Err(BenchError::Config("--workers must be >= 1".into()));
    }
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Report(args) => return report(args, cli.out.as_deref()),
        Command::Synth => return synth(&load_config(cli)?, cli.seed, &out),
        _ => {}
    }
    let cfg = load_config(cli)?;
    let split = cfg.load_split()?;
    create_dir(&out)?;
    match &cli.command {
        Command::Compare => {
            let (rows, provenance) = run_comparison(&cfg, &split, cli.workers)?;
            write_comparison(&rows, &provenance, &out)?;
            println!(
                "wrote {} ({} rows)",
                out.join("compare.csv").display(),
                rows.len()
            );
        }
        Command::Grid => {
            let report = run_grid(&cfg, &split, cli.workers)?;
            write_grid(&report, &out)?;
            println!(
                "wrote {} ({} cells)",
                out.join("grid.csv").display(),
                report.cells.len()
            );
        }
        Command::Partition(args) => {
            let cell = Cell::resolve(&cfg, args)?;
            let p = cell.plan.build(&split.train, cell.seeds.partition)?;
            p.save(out.join("partition.csv"), out.join("partition.json"))?;
            println!(
                "wrote {} (sizes {:?})",
                out.join("partition.csv").display(),
                p.sizes()
            );
        }
        Command::Fed(args) => {
            let cell = Cell::resolve(&cfg, args)?;
            let p = cell.plan.build(&split.train, cell.seeds.partition)?;
            let mcfg = cfg.model_config(&split.train);
            let tcfg = cfg.train.with_seed(cell.seeds.train);
            let fed = run_federation_with::<f64>(
                &split,
                &p,
                &mcfg,
                &tcfg,
                cfg.rounds,
                cell.seeds.init,
                cli.workers,
            )?;
            let path = out.join("history.csv");
            let mut buf = Vec::new();
            write_history(&fed.history, &mut buf).map_err(|e| BenchError::io(&path, e))?;
            fs::write(&path, buf).map_err(|e| BenchError::io(&path, e))?;
            save_params(&fed.final_params, out.join("params.ckpt"))?;
            write_json(
                &out.join("run.json"),
                &json!({ "cell": cell.describe(), "echo": fed.echo, "final_mse": fed.final_mse() }),
            )?;
            println!("final test MSE {}", fed.final_mse().unwrap_or(f64::NAN));
        }
        Command::Ensemble(args) => {
            let cell = Cell::resolve(&cfg, args)?;
            let p = cell.plan.build(&split.train, cell.seeds.partition)?;
            let mcfg = cfg.model_config(&split.train);
            let tcfg = cfg.train.with_seed(cell.seeds.train);
            let ens = train_bagging_with::<f64>(
                &split,
                &p,
                &mcfg,
                &tcfg,
                cfg.member_epochs(),
                cell.seeds.init,
                cli.workers,
            )?;
            ens.save(&out)?;
            let mse = evaluate_ensemble(&ens, split.test.examples())?;
            write_json(
                &out.join("ensemble_eval.json"),
                &json!({
                    "cell": cell.describe(),
                    "member_epochs": cfg.member_epochs(),
                    "members": ens.client_ids(),
                    "partition": ens.partition(),
                    "test_mse": mse,
                }),
            )?;
            println!(
                "ensemble of {} members, test MSE {mse}",
                ens.members().len()
            );
        }
        Command::Synth | Command::Report(_) => unreachable!(),
    }
    Ok(())
}

fn load_config(cli: &Cli) -> BenchResult<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| BenchError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let (Some(seed), false) = (cli.seed, matches!(cli.command, Command::Synth)) {
        cfg.base_seed = seed;
    }
    Ok(cfg)
}

fn synth(cfg: &ExperimentConfig, seed: Option<u64>, out: &Path) -> BenchResult<()> {
    let DataSource::Synthetic(mut spec) = cfg.dataset.clone() else {
        return Err(BenchError::Config(
            "synth needs a synthetic dataset source".into(),
        ));
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let ds = dtifl_core::dataset::generate_synthetic(&spec)?;
    create_dir(out)?;
    let path = out.join("dataset.csv");
    ds.save_csv(&path)?;
    println!("wrote {} ({} records)", path.display(), ds.len());
    Ok(())
}

fn report(args: &ReportArgs, out: Option<&Path>) -> BenchResult<()> {
    if let Some(from) = &args.from {
        let report = reload_grid(from)?;
        let out = out.unwrap_or(from);
        write_grid(&report, out)?;
        println!(
            "wrote {} ({} cells)",
            out.join("grid.csv").display(),
            report.cells.len()
        );
    } else {
        let out = out.unwrap_or(Path::new("out"));
        let rows = table1_rows()?;
        write_comparison(
            &rows,
            &json!({ "source": "published table, rounded MSE pairs" }),
            out,
        )?;
        println!(
            "wrote {} ({} rows)",
            out.join("compare.csv").display(),
            rows.len()
        );
    }
    Ok(())
}

/// The grid cell a single-run command targets.
struct Cell {
    row: usize,
    col: f64,
    repeat: usize,
    seed: u64,
    seeds: RunSeeds,
    plan: PartitionPlan,
}

impl Cell {
    fn resolve(cfg: &ExperimentConfig, args: &CellArgs) -> BenchResult<Self> {
        let (rows, cols): (&[usize], &[f64]) = match cfg.strategy {
            Strategy::Iid => (&cfg.client_counts, &[0.0]),
            Strategy::Quantity => (&cfg.client_counts, &cfg.dominant_shares),
            Strategy::Addition => (&cfg.addition.extra_clients, &cfg.addition.extra_shares),
            _ => (&cfg.client_counts, &cfg.mixing_levels),
        };
        let row = args.clients.unwrap_or(rows[0]);
        let col = args.col.unwrap_or(cols[0]);
        let plan = PartitionPlan::at(cfg, row, col);
        let probe = ExperimentConfig {
            client_counts: vec![row.max(1)],
            ..cfg.clone()
        };
        probe.validate()?;
        let seed = cell_seed(
            cfg.base_seed,
            cfg.strategy.tag(),
            &key(row),
            &key(col),
            args.repeat,
        );
        Ok(Cell {
            row,
            col,
            repeat: args.repeat,
            seed,
            seeds: RunSeeds::from_cell(seed),
            plan,
        })
    }

    fn describe(&self) -> serde_json::Value {
        json!({
            "row_key": key(self.row),
            "col_key": key(self.col),
            "repeat": self.repeat,
            "seed": self.seed,
            "seeds": self.seeds,
            "plan": self.plan,
        })
    }
}

fn create_dir(dir: &Path) -> BenchResult<()> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> BenchResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialise");
    text.push('\n');
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}
