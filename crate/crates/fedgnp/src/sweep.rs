//! Cross-product sweeps over `alpha × mask × gnp × seed`.
//!
//! Every cell writes its own CSV under `cells/`; a cell whose file already
//! exists is loaded instead of recomputed. After all cells finish the merged
//! `summary.csv` and `summary.json` are written by a single writer, in cell
//! enumeration order, so the output does not depend on scheduling.
//!
//! Sub-seeds depend only on the base seed (and alpha for the partition),
//! never on the mask or the gnp flag. Cells that differ only in those two
//! axes therefore see identical data, partitions, client draws and
//! initialization.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use fedgnp_core::datagen::{dirichlet_partition, generate, GeneratedData};
use fedgnp_core::federation::{run, FederatedData, RunLog};
use fedgnp_core::model::{MlpClassifier, ModelDims, PeftMask};
use fedgnp_core::tensorlab::mix_seed;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentSpec, MAX_SHIFTS};
use crate::error::{HarnessError, Result};

const SEED_DATA: u64 = 0xda7a;
const SEED_PARTITION: u64 = 0x9a27;
const SEED_RUN: u64 = 0x52a2;

pub const CELLS_DIR: &str = "cells";
pub const SUMMARY_CSV: &str = "summary.csv";
pub const SUMMARY_JSON: &str = "summary.json";

pub fn data_seed(seed: u64) -> u64 {
    mix_seed(seed, &[SEED_DATA])
}

pub fn partition_seed(seed: u64, alpha: f64) -> u64 {
    mix_seed(seed, &[SEED_PARTITION, alpha.to_bits()])
}

pub fn run_seed(seed: u64) -> u64 {
    mix_seed(seed, &[SEED_RUN])
}

/// One row of the summary table. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub alpha: f64,
    pub mask: String,
    pub gnp: bool,
    pub seed: u64,
    pub round: usize,
    pub id_acc: f64,
    pub ood1_acc: Option<f64>,
    pub ood2_acc: Option<f64>,
    pub ood3_acc: Option<f64>,
    pub loss: f64,
    pub sve: Option<f64>,
    pub lsvr: Option<f64>,
    pub gda: Option<f64>,
    pub gamma: f64,
    pub clamped: bool,
    pub robust_norm: f64,
}

impl MetricsRow {
    pub fn ood_accs(&self) -> Vec<f64> {
        [self.ood1_acc, self.ood2_acc, self.ood3_acc]
            .into_iter()
            .flatten()
            .collect()
    }

    pub fn mean_ood(&self) -> Option<f64> {
        let v = self.ood_accs();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(COLUMNS)?;
        }
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.into_inner()
            .map_err(|e| HarnessError::Config(format!("csv buffer: {e}")))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header != COLUMNS {
            return Err(HarnessError::Config(format!(
                "unexpected summary columns {header:?}"
            )));
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(HarnessError::io(path))?;
        Self::from_csv(&bytes).map_err(|e| HarnessError::format(path, e.to_string()))
    }
}

pub const COLUMNS: [&str; 16] = [
    "alpha",
    "mask",
    "gnp",
    "seed",
    "round",
    "id_acc",
    "ood1_acc",
    "ood2_acc",
    "ood3_acc",
    "loss",
    "sve",
    "lsvr",
    "gda",
    "gamma",
    "clamped",
    "robust_norm",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub alpha: f64,
    pub mask: PeftMask,
    pub gnp: bool,
    pub seed: u64,
}

impl Cell {
    pub fn file_name(&self) -> String {
        let mask = self.mask.to_string().replace(':', "-");
        format!(
            "alpha={}_mask={mask}_gnp={}_seed={}.csv",
            self.alpha, self.gnp, self.seed
        )
    }

    pub fn label(&self) -> String {
        format!(
            "alpha={} mask={} gnp={} seed={}",
            self.alpha, self.mask, self.gnp, self.seed
        )
    }
}

pub fn cells(spec: &ExperimentSpec) -> Vec<Cell> {
    let mut out = Vec::with_capacity(spec.num_cells());
    for &alpha in &spec.alphas {
        for &mask in &spec.masks {
            for &gnp in &spec.gnp_flags {
                for &seed in &spec.seeds {
                    out.push(Cell {
                        alpha,
                        mask,
                        gnp,
                        seed,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub alpha: f64,
    pub mask: String,
    pub gnp: bool,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub mask: String,
    pub trainable: usize,
    pub total: usize,
    pub ratio: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<MetricsRow>,
    pub errors: Vec<CellError>,
    pub params: Vec<ParamRow>,
}

impl SweepSummary {
    pub fn table(&self) -> MetricsTable {
        MetricsTable {
            rows: self.rows.clone(),
        }
    }
}

pub fn rows_from_log(cell: &Cell, log: &RunLog) -> Vec<MetricsRow> {
    log.records
        .iter()
        .map(|r| {
            let ood = |k: usize| r.ood_accuracies.get(k).copied();
            MetricsRow {
                alpha: cell.alpha,
                mask: cell.mask.to_string(),
                gnp: cell.gnp,
                seed: cell.seed,
                round: r.round,
                id_acc: r.id_accuracy,
                ood1_acc: ood(0),
                ood2_acc: ood(1),
                ood3_acc: ood(2),
                loss: r.loss,
                sve: r.snapshot.map(|s| s.sve),
                lsvr: r.snapshot.map(|s| s.lsvr),
                gda: r.snapshot.map(|s| s.gda),
                gamma: r.gamma,
                clamped: r.clamped,
                robust_norm: r.robust_norm,
            }
        })
        .collect()
}

pub fn generate_for_seed(spec: &ExperimentSpec, seed: u64) -> Result<GeneratedData> {
    Ok(generate(&spec.data.generator(data_seed(seed)))?)
}

/// Runs one cell on pre-generated data.
pub fn run_cell(spec: &ExperimentSpec, cell: &Cell, data: &GeneratedData) -> Result<RunLog> {
    if data.ood_tests.len() > MAX_SHIFTS {
        return Err(HarnessError::Config(format!(
            "at most {MAX_SHIFTS} shifted test sets supported"
        )));
    }
    let partition = dirichlet_partition(
        &data.id_train,
        spec.base.clients,
        cell.alpha,
        partition_seed(cell.seed, cell.alpha),
    )?;
    let fed = FederatedData {
        train: data.id_train.clone(),
        id_test: data.id_test.clone(),
        ood_tests: data.ood_tests.clone(),
        partition,
    };
    let cfg = spec.cell_config(cell.alpha, cell.mask, cell.gnp, run_seed(cell.seed));
    Ok(run(&cfg, &fed)?)
}

pub fn param_rows(spec: &ExperimentSpec) -> Result<Vec<ParamRow>> {
    let dims = ModelDims {
        input: spec.data.dim,
        hidden: spec.base.hidden,
        classes: spec.data.classes,
    };
    spec.masks
        .iter()
        .map(|&mask| {
            let r = MlpClassifier::init(0, dims, mask)?.param_report();
            Ok(ParamRow {
                mask: mask.to_string(),
                trainable: r.trainable,
                total: r.total,
                ratio: r.ratio(),
            })
        })
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(HarnessError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(HarnessError::io(path))
}

/// Runs (or resumes) every cell of `spec`, writing into `out_dir`.
pub fn run_sweep(spec: &ExperimentSpec, out_dir: &Path) -> Result<SweepSummary> {
    spec.validate()?;
    let cell_dir = out_dir.join(CELLS_DIR);
    fs::create_dir_all(&cell_dir).map_err(HarnessError::io(&cell_dir))?;
    let all = cells(spec);

    let pending: Vec<bool> = all
        .iter()
        .map(|c| !cell_dir.join(c.file_name()).exists())
        .collect();
    let mut needed: Vec<u64> = all
        .iter()
        .zip(&pending)
        .filter(|(_, p)| **p)
        .map(|(c, _)| c.seed)
        .collect();
    needed.sort_unstable();
    needed.dedup();
    let datasets: BTreeMap<u64, std::result::Result<GeneratedData, String>> = needed
        .par_iter()
        .map(|&s| (s, generate_for_seed(spec, s).map_err(|e| e.to_string())))
        .collect();

    let results: Vec<std::result::Result<Vec<MetricsRow>, String>> = all
        .par_iter()
        .zip(&pending)
        .map(|(cell, &todo)| {
            let path = cell_dir.join(cell.file_name());
            if !todo {
                log::debug!("reusing {}", path.display());
                return MetricsTable::read_csv(&path)
                    .map(|t| t.rows)
                    .map_err(|e| e.to_string());
            }
            let data = datasets[&cell.seed].as_ref().map_err(Clone::clone)?;
            let log = run_cell(spec, cell, data).map_err(|e| e.to_string())?;
            let table = MetricsTable {
                rows: rows_from_log(cell, &log),
            };
            table.write_csv(&path).map_err(|e| e.to_string())?;
            log::info!("finished {}", cell.label());
            Ok(table.rows)
        })
        .collect();

    let mut summary = SweepSummary {
        params: param_rows(spec)?,
        ..Default::default()
    };
    for (cell, res) in all.iter().zip(results) {
        match res {
            Ok(rows) => summary.rows.extend(rows),
            Err(error) => {
                log::error!("cell {} failed: {error}", cell.label());
                summary.errors.push(CellError {
                    alpha: cell.alpha,
                    mask: cell.mask.to_string(),
                    gnp: cell.gnp,
                    seed: cell.seed,
                    error,
                });
            }
        }
    }
    summary.table().write_csv(&out_dir.join(SUMMARY_CSV))?;
    let json = serde_json::to_vec_pretty(&summary)?;
    write_atomic(&out_dir.join(SUMMARY_JSON), &json)?;
    Ok(summary)
}

pub fn read_summary(dir: &Path) -> Result<SweepSummary> {
    let json: PathBuf = dir.join(SUMMARY_JSON);
    let table = MetricsTable::read_csv(&dir.join(SUMMARY_CSV))?;
    let mut summary = if json.exists() {
        let bytes = fs::read(&json).map_err(HarnessError::io(&json))?;
        serde_json::from_slice::<SweepSummary>(&bytes)
            .map_err(|e| HarnessError::format(&json, e.to_string()))?
    } else {
        SweepSummary::default()
    };
    summary.rows = table.rows;
    Ok(summary)
}
