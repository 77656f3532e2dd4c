//! Post-processing of a sweep: heatmap-ready accuracy grid, indicator time
//! series and the directional checks on the benchmark.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use fedgnp_core::model::PeftMask;
use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::sweep::{MetricsRow, SweepSummary};

pub const GRID_CSV: &str = "accuracy_grid.csv";
pub const SERIES_CSV: &str = "indicators.csv";
pub const CHECKS_TXT: &str = "checks.txt";

pub const LOW_ALPHA: f64 = 0.1;
pub const HIGH_ALPHA: f64 = 10.0;
/// Minimum OOD gap and maximum ID gap (fractions) for the heterogeneity check.
pub const OOD_GAP: f64 = 0.03;
pub const ID_GAP: f64 = 0.03;
/// Largest ID change allowed when the correction is switched on.
pub const GNP_ID_TOLERANCE: f64 = 0.01;
/// Snapshots averaged at the end of a run.
pub const TAIL_SNAPSHOTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: u32,
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {:>2} {}: {}", self.status, self.id, self.name, self.detail)
    }
}

/// Key of one run inside a sweep.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct RunKey {
    alpha_bits: u64,
    mask: String,
    gnp: bool,
    seed: u64,
}

#[derive(Debug, Clone)]
struct RunView<'a> {
    alpha: f64,
    rows: Vec<&'a MetricsRow>,
}

impl RunView<'_> {
    fn last(&self) -> &MetricsRow {
        self.rows.iter().max_by_key(|r| r.round).expect("nonempty run")
    }

    fn tail_indicators(&self) -> Option<(f64, f64)> {
        let mut snaps: Vec<&&MetricsRow> = self.rows.iter().filter(|r| r.sve.is_some()).collect();
        snaps.sort_by_key(|r| r.round);
        let tail = &snaps[snaps.len().saturating_sub(TAIL_SNAPSHOTS)..];
        if tail.is_empty() {
            return None;
        }
        let n = tail.len() as f64;
        let sve = tail.iter().map(|r| r.sve.unwrap()).sum::<f64>() / n;
        let lsvr = tail.iter().filter_map(|r| r.lsvr).sum::<f64>() / n;
        Some((sve, lsvr))
    }
}

fn group(rows: &[MetricsRow]) -> BTreeMap<RunKey, RunView<'_>> {
    let mut out: BTreeMap<RunKey, RunView<'_>> = BTreeMap::new();
    for r in rows {
        let key = RunKey {
            alpha_bits: r.alpha.to_bits(),
            mask: r.mask.clone(),
            gnp: r.gnp,
            seed: r.seed,
        };
        out.entry(key)
            .or_insert_with(|| RunView {
                alpha: r.alpha,
                rows: Vec::new(),
            })
            .rows
            .push(r);
    }
    out
}

/// Runs with missing rounds relative to the longest run.
pub fn incomplete_runs(rows: &[MetricsRow]) -> usize {
    let runs = group(rows);
    let longest = runs.values().map(|v| v.rows.len()).max().unwrap_or(0);
    runs.values().filter(|v| v.rows.len() < longest).count()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub alpha: f64,
    pub mask: String,
    pub id_acc_off: Option<f64>,
    pub id_acc_on: Option<f64>,
    pub id_acc_delta: Option<f64>,
    pub ood_acc_off: Option<f64>,
    pub ood_acc_on: Option<f64>,
    pub ood_acc_delta: Option<f64>,
    pub seeds: usize,
}

/// Final-round accuracies averaged over seeds, gnp off next to gnp on.
pub fn accuracy_grid(rows: &[MetricsRow]) -> Vec<GridRow> {
    let runs = group(rows);
    let mut cells: BTreeMap<(u64, String), [Vec<(f64, f64)>; 2]> = BTreeMap::new();
    let mut alphas = BTreeMap::new();
    for (k, v) in &runs {
        let last = v.last();
        let entry = cells.entry((k.alpha_bits, k.mask.clone())).or_default();
        entry[k.gnp as usize].push((last.id_acc, last.mean_ood().unwrap_or(f64::NAN)));
        alphas.insert(k.alpha_bits, v.alpha);
    }
    let mut out: Vec<GridRow> = cells
        .into_iter()
        .map(|((bits, mask), [off, on])| {
            let avg = |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| {
                (!v.is_empty()).then(|| mean(&v.iter().map(f).collect::<Vec<_>>()))
            };
            let (id_off, id_on) = (avg(&off, |p| p.0), avg(&on, |p| p.0));
            let (ood_off, ood_on) = (avg(&off, |p| p.1), avg(&on, |p| p.1));
            GridRow {
                alpha: alphas[&bits],
                mask,
                id_acc_off: id_off,
                id_acc_on: id_on,
                id_acc_delta: id_on.zip(id_off).map(|(a, b)| a - b),
                ood_acc_off: ood_off,
                ood_acc_on: ood_on,
                ood_acc_delta: ood_on.zip(ood_off).map(|(a, b)| a - b),
                seeds: off.len().max(on.len()),
            }
        })
        .collect();
    out.sort_by(|a, b| a.alpha.total_cmp(&b.alpha).then_with(|| a.mask.cmp(&b.mask)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesRow {
    pub alpha: f64,
    pub mask: String,
    pub gnp: bool,
    pub seed: u64,
    pub round: usize,
    pub sve: f64,
    pub lsvr: f64,
    pub gda: f64,
    pub gamma: f64,
}

pub fn indicator_series(rows: &[MetricsRow]) -> Vec<SeriesRow> {
    rows.iter()
        .filter_map(|r| {
            Some(SeriesRow {
                alpha: r.alpha,
                mask: r.mask.clone(),
                gnp: r.gnp,
                seed: r.seed,
                round: r.round,
                sve: r.sve?,
                lsvr: r.lsvr?,
                gda: r.gda?,
                gamma: r.gamma,
            })
        })
        .collect()
}

/// Mask the directional checks run on: `full` when swept, else the first one.
pub fn primary_mask(rows: &[MetricsRow]) -> Option<String> {
    let full = PeftMask::Full.to_string();
    if rows.iter().any(|r| r.mask == full) {
        Some(full)
    } else {
        rows.first().map(|r| r.mask.clone())
    }
}

struct Selection<'a> {
    runs: &'a BTreeMap<RunKey, RunView<'a>>,
    mask: String,
}

impl<'a> Selection<'a> {
    fn seeds(&self, alpha: f64, gnp: bool) -> BTreeMap<u64, &'a RunView<'a>> {
        self.runs
            .iter()
            .filter(|(k, _)| k.alpha_bits == alpha.to_bits() && k.mask == self.mask && k.gnp == gnp)
            .map(|(k, v)| (k.seed, v))
            .collect()
    }
}

fn skip(id: u32, name: &'static str, why: impl Into<String>) -> Check {
    Check {
        id,
        name,
        status: Status::Skip,
        detail: why.into(),
    }
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

pub fn heterogeneity_check(summary: &SweepSummary) -> Check {
    const NAME: &str = "heterogeneity harms OOD more than ID";
    let runs = group(&summary.rows);
    let Some(mask) = primary_mask(&summary.rows) else {
        return skip(13, NAME, "empty table");
    };
    let sel = Selection { runs: &runs, mask };
    let (low, high) = (sel.seeds(LOW_ALPHA, false), sel.seeds(HIGH_ALPHA, false));
    if low.is_empty() || high.is_empty() {
        return skip(13, NAME, "needs baseline runs at alpha 0.1 and 10");
    }
    let stat = |m: &BTreeMap<u64, &RunView>, f: fn(&MetricsRow) -> f64| {
        mean(&m.values().map(|v| f(v.last())).collect::<Vec<_>>())
    };
    let ood = |r: &MetricsRow| r.mean_ood().unwrap_or(f64::NAN);
    let id = |r: &MetricsRow| r.id_acc;
    let (ood_l, ood_h) = (stat(&low, ood), stat(&high, ood));
    let (id_l, id_h) = (stat(&low, id), stat(&high, id));
    let ok = ood_l <= ood_h - OOD_GAP && (id_l - id_h).abs() < ID_GAP;
    Check {
        id: 13,
        name: NAME,
        status: verdict(ok),
        detail: format!(
            "mask {}: OOD {:.4} (alpha 0.1) vs {:.4} (alpha 10), gap {:+.2} pp (need >= 3); ID {:.4} vs {:.4}, |gap| {:.2} pp (need < 3)",
            sel.mask,
            ood_l,
            ood_h,
            100.0 * (ood_h - ood_l),
            id_l,
            id_h,
            100.0 * (id_l - id_h).abs()
        ),
    }
}

pub fn indicator_trend_check(summary: &SweepSummary) -> Check {
    const NAME: &str = "indicator trends under heterogeneity";
    let runs = group(&summary.rows);
    let Some(mask) = primary_mask(&summary.rows) else {
        return skip(14, NAME, "empty table");
    };
    let sel = Selection { runs: &runs, mask };
    let tails = |alpha: f64| -> Option<(f64, f64)> {
        let seeds = sel.seeds(alpha, false);
        let t: Vec<(f64, f64)> = seeds.values().filter_map(|v| v.tail_indicators()).collect();
        (!t.is_empty() && t.len() == seeds.len()).then(|| {
            (
                mean(&t.iter().map(|p| p.0).collect::<Vec<_>>()),
                mean(&t.iter().map(|p| p.1).collect::<Vec<_>>()),
            )
        })
    };
    let (Some((sve_l, lsvr_l)), Some((sve_h, lsvr_h))) = (tails(LOW_ALPHA), tails(HIGH_ALPHA))
    else {
        return skip(14, NAME, "needs baseline snapshots at alpha 0.1 and 10");
    };
    Check {
        id: 14,
        name: NAME,
        status: verdict(sve_l < sve_h && lsvr_l > lsvr_h),
        detail: format!(
            "mask {}: SVE {sve_l:.5} (alpha 0.1) vs {sve_h:.5} (alpha 10), need lower; LSVR {lsvr_l:.5} vs {lsvr_h:.5}, need higher",
            sel.mask
        ),
    }
}

pub fn gnp_benefit_check(summary: &SweepSummary) -> Check {
    const NAME: &str = "noisy projection helps under heterogeneity";
    let runs = group(&summary.rows);
    let Some(mask) = primary_mask(&summary.rows) else {
        return skip(15, NAME, "empty table");
    };
    let sel = Selection { runs: &runs, mask };
    let (off, on) = (sel.seeds(LOW_ALPHA, false), sel.seeds(LOW_ALPHA, true));
    let paired: Vec<(&MetricsRow, &MetricsRow)> = off
        .iter()
        .filter_map(|(s, v)| on.get(s).map(|w| (v.last(), w.last())))
        .collect();
    if paired.is_empty() {
        return skip(15, NAME, "needs paired gnp off/on runs at alpha 0.1");
    }
    let n = paired.len();
    let ood_off = mean(&paired.iter().map(|p| p.0.mean_ood().unwrap_or(f64::NAN)).collect::<Vec<_>>());
    let ood_on = mean(&paired.iter().map(|p| p.1.mean_ood().unwrap_or(f64::NAN)).collect::<Vec<_>>());
    let id_off = mean(&paired.iter().map(|p| p.0.id_acc).collect::<Vec<_>>());
    let id_on = mean(&paired.iter().map(|p| p.1.id_acc).collect::<Vec<_>>());
    let wins = paired
        .iter()
        .filter(|(a, b)| b.mean_ood().unwrap_or(f64::NAN) > a.mean_ood().unwrap_or(f64::NAN))
        .count();
    // At least 3 of every 5 seeds.
    let enough_wins = wins * 5 >= 3 * n;
    let ok = ood_on >= ood_off && enough_wins && (id_on - id_off).abs() <= GNP_ID_TOLERANCE;
    Check {
        id: 15,
        name: NAME,
        status: verdict(ok),
        detail: format!(
            "mask {}: OOD {ood_on:.4} (gnp) vs {ood_off:.4} (baseline), better in {wins}/{n} seeds; ID {id_on:.4} vs {id_off:.4}, |gap| {:.2} pp (need <= 1)",
            sel.mask,
            100.0 * (id_on - id_off).abs()
        ),
    }
}

fn mask_kind(name: &str) -> Option<usize> {
    match name.parse::<PeftMask>().ok()? {
        PeftMask::BiasOnly => Some(0),
        PeftMask::LowRank(_) => Some(1),
        PeftMask::Bottleneck(_) => Some(2),
        PeftMask::Full => Some(3),
    }
}

pub fn mask_coverage_check(summary: &SweepSummary) -> Check {
    const NAME: &str = "all fine-tuning masks covered";
    let runs = group(&summary.rows);
    let mut kinds: [Option<String>; 4] = Default::default();
    for k in runs.keys() {
        if let Some(i) = mask_kind(&k.mask) {
            kinds[i].get_or_insert_with(|| k.mask.clone());
        }
    }
    if kinds.iter().any(Option::is_none) {
        return skip(16, NAME, "sweep does not include all four mask kinds");
    }
    let names: Vec<String> = kinds.into_iter().flatten().collect();
    let mut problems = Vec::new();
    for e in &summary.errors {
        problems.push(format!("{} alpha={} gnp={} seed={}: {}", e.mask, e.alpha, e.gnp, e.seed, e.error));
    }
    for m in &names {
        for (alpha, gnp) in [(LOW_ALPHA, false), (HIGH_ALPHA, false), (LOW_ALPHA, true)] {
            let sel = Selection { runs: &runs, mask: m.clone() };
            if sel.seeds(alpha, gnp).is_empty() {
                problems.push(format!("{m}: no runs at alpha={alpha} gnp={gnp}"));
            }
        }
    }
    let ratio = |m: &str| summary.params.iter().find(|p| p.mask == m).map(|p| p.ratio);
    let ratios: Option<Vec<f64>> = names.iter().map(|m| ratio(m)).collect();
    let detail_ratios = match &ratios {
        Some(r) => names
            .iter()
            .zip(r)
            .map(|(m, v)| format!("{m} {v:.4}"))
            .collect::<Vec<_>>()
            .join(" < "),
        None => "trainable ratios missing".into(),
    };
    let ordered = ratios.as_ref().is_some_and(|r| r.windows(2).all(|w| w[0] < w[1]));
    if !ordered {
        problems.push(format!("ratio order violated: {detail_ratios}"));
    }
    Check {
        id: 16,
        name: NAME,
        status: verdict(problems.is_empty()),
        detail: if problems.is_empty() {
            format!("{} runs error free; ratios {detail_ratios}", runs.len())
        } else {
            problems.join("; ")
        },
    }
}

pub fn directional_checks(summary: &SweepSummary) -> Vec<Check> {
    vec![
        heterogeneity_check(summary),
        indicator_trend_check(summary),
        gnp_benefit_check(summary),
        mask_coverage_check(summary),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub grid: Vec<GridRow>,
    pub series: Vec<SeriesRow>,
    pub checks: Vec<Check>,
    /// Set when cells failed or runs are shorter than the longest one.
    pub partial: bool,
}

pub fn build_report(summary: &SweepSummary) -> Report {
    Report {
        grid: accuracy_grid(&summary.rows),
        series: indicator_series(&summary.rows),
        checks: directional_checks(summary),
        partial: !summary.errors.is_empty() || incomplete_runs(&summary.rows) > 0,
    }
}

fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::Config(format!("csv buffer: {e}")))
}

pub fn checks_text(report: &Report) -> String {
    let mut out = String::new();
    if report.partial {
        out.push_str("PARTIAL REPORT: some cells failed or are incomplete\n");
    }
    for c in &report.checks {
        out.push_str(&c.to_string());
        out.push('\n');
    }
    out
}

pub fn write_report(summary: &SweepSummary, out_dir: &Path) -> Result<Report> {
    fs::create_dir_all(out_dir).map_err(HarnessError::io(out_dir))?;
    let report = build_report(summary);
    let grid_header = [
        "alpha",
        "mask",
        "id_acc_off",
        "id_acc_on",
        "id_acc_delta",
        "ood_acc_off",
        "ood_acc_on",
        "ood_acc_delta",
        "seeds",
    ];
    let series_header = ["alpha", "mask", "gnp", "seed", "round", "sve", "lsvr", "gda", "gamma"];
    let files = [
        (GRID_CSV, csv_bytes(&report.grid, &grid_header)?),
        (SERIES_CSV, csv_bytes(&report.series, &series_header)?),
        (CHECKS_TXT, checks_text(&report).into_bytes()),
    ];
    for (name, bytes) in files {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(HarnessError::io(&path))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(alpha: f64, gnp: bool, seed: u64, round: usize, id: f64, ood: f64) -> MetricsRow {
        MetricsRow {
            alpha,
            mask: "full".into(),
            gnp,
            seed,
            round,
            id_acc: id,
            ood1_acc: Some(ood),
            ood2_acc: Some(ood),
            ood3_acc: Some(ood),
            loss: 0.5,
            sve: (round % 10 == 0).then_some(1.0),
            lsvr: (round % 10 == 0).then_some(0.4),
            gda: (round % 10 == 0).then_some(0.1),
            gamma: 0.0,
            clamped: false,
            robust_norm: 1.0,
        }
    }

    #[test]
    fn grid_delta_is_on_minus_off() {
        let rows = vec![
            row(0.1, false, 0, 1, 0.5, 0.4),
            row(0.1, false, 0, 2, 0.8, 0.6),
            row(0.1, true, 0, 1, 0.5, 0.4),
            row(0.1, true, 0, 2, 0.7, 0.65),
        ];
        let g = accuracy_grid(&rows);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].id_acc_off, Some(0.8));
        assert!((g[0].id_acc_delta.unwrap() + 0.1).abs() < 1e-12);
        assert!((g[0].ood_acc_delta.unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn series_has_one_row_per_snapshot() {
        let rows: Vec<MetricsRow> = (1..=35).map(|t| row(1.0, false, 0, t, 0.5, 0.5)).collect();
        assert_eq!(indicator_series(&rows).len(), 3);
    }

    #[test]
    fn checks_skip_without_data() {
        let checks = directional_checks(&SweepSummary::default());
        assert!(checks.iter().all(|c| c.status == Status::Skip));
    }

    #[test]
    fn truncated_runs_flag_a_partial_report() {
        let mut rows: Vec<MetricsRow> = (1..=4).map(|t| row(0.1, false, 0, t, 0.5, 0.5)).collect();
        rows.extend((1..=2).map(|t| row(0.1, false, 1, t, 0.5, 0.5)));
        let summary = SweepSummary {
            rows,
            ..Default::default()
        };
        assert!(build_report(&summary).partial);
    }
}
