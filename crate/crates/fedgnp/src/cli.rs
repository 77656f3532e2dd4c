use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use fedgnp_core::datagen::dirichlet_partition;

use crate::config::{load_config, ExperimentSpec};
use crate::error::{HarnessError, Result};
use crate::formats::{partition_to_json, read_dataset, save_checkpoint, write_dataset};
use crate::report::{checks_text, write_report};
use crate::sweep::{cells, generate_for_seed, read_summary, rows_from_log, run_cell, run_sweep, MetricsTable};

#[derive(Debug, Parser)]
#[command(name = "fedgnp", version, about = "Federated fine-tuning simulator with noisy-projection aggregation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the generated datasets of every configured seed as text files.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dirichlet label-skew partition, printed as JSON.
    Partition {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        clients: usize,
        #[arg(long)]
        seed: u64,
        /// Dataset text file; defaults to the benchmark training set of `seed`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single run; the configuration must describe exactly one cell.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(HarnessError::io(dir))
}

fn gen_data(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    for &seed in &spec.seeds {
        let dir = out.join(format!("seed_{seed}"));
        create_dir(&dir)?;
        let data = generate_for_seed(spec, seed)?;
        write_dataset(&dir.join("id_train.txt"), &data.id_train)?;
        write_dataset(&dir.join("id_test.txt"), &data.id_test)?;
        for ds in &data.ood_tests {
            write_dataset(&dir.join(format!("{}.txt", ds.name)), ds)?;
        }
        log::info!("wrote {}", dir.display());
    }
    Ok(())
}

fn partition(
    alpha: f64,
    clients: usize,
    seed: u64,
    data: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    if !(alpha > 0.0) {
        return Err(HarnessError::Config(format!("--alpha must be positive, got {alpha}")));
    }
    if clients == 0 {
        return Err(HarnessError::Config("--clients must be at least 1".into()));
    }
    let ds = match data {
        Some(path) => read_dataset(path)?,
        None => generate_for_seed(&ExperimentSpec::default(), seed)?.id_train,
    };
    let part = dirichlet_partition(&ds, clients, alpha, seed)?;
    let json = partition_to_json(&part) + "\n";
    match out {
        Some(path) => fs::write(path, json).map_err(HarnessError::io(path)),
        None => std::io::stdout()
            .write_all(json.as_bytes())
            .map_err(HarnessError::io("<stdout>")),
    }
}

fn single_run(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    let all = cells(spec);
    let [cell] = all[..] else {
        return Err(HarnessError::Config(format!(
            "run expects exactly one alpha, mask, gnp flag and seed ({} cells given); use sweep",
            all.len()
        )));
    };
    create_dir(out)?;
    spec.save(&out.join("config.json"))?;
    let data = generate_for_seed(spec, cell.seed)?;
    let log = run_cell(spec, &cell, &data)?;
    let table = MetricsTable {
        rows: rows_from_log(&cell, &log),
    };
    table.write_csv(&out.join("run.csv"))?;
    save_checkpoint(&out.join("model.json"), &log.final_model)?;
    let last = log.last();
    println!(
        "{}: round {} id_acc {:.4} ood_acc {:?} (trainable {}/{})",
        cell.label(),
        last.round,
        last.id_accuracy,
        last.ood_accuracies,
        log.param_report.trainable,
        log.param_report.total
    );
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { config, out } => gen_data(&load_config(config)?, out),
        Command::Partition {
            alpha,
            clients,
            seed,
            data,
            out,
        } => partition(*alpha, *clients, *seed, data.as_deref(), out.as_deref()),
        Command::Run { config, out } => single_run(&load_config(config)?, out),
        Command::Sweep { config, out } => {
            let spec = load_config(config)?;
            let dir = out.clone().unwrap_or_else(|| spec.out_dir.clone());
            create_dir(&dir)?;
            spec.save(&dir.join("config.json"))?;
            let summary = run_sweep(&spec, &dir)?;
            println!(
                "{} cells, {} rows, {} failed -> {}",
                spec.num_cells(),
                summary.rows.len(),
                summary.errors.len(),
                dir.display()
            );
            if let Some(first) = summary.errors.first() {
                return Err(HarnessError::format(
                    &dir,
                    format!("{} cell(s) failed, first: {}", summary.errors.len(), first.error),
                ));
            }
            Ok(())
        }
        Command::Report { input, out } => {
            let summary = read_summary(input)?;
            let report = write_report(&summary, out)?;
            print!("{}", checks_text(&report));
            Ok(())
        }
    }
}
