use std::path::Path;

use crate::data::Dataset;
use crate::diagnostics::{format_value, EpochMetrics, RunRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{InitScheme, PatchConfig};

use super::{train_run, TrainConfig};

/// Published means (accuracies as fractions) for a variant, for comparison
/// in reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportedRow {
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub test_acc_std: f64,
}

/// One patch combination of the ablation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub resolution: Option<f64>,
    pub skip: bool,
    pub weight_norm: Option<f64>,
    pub energy_norm: Option<f64>,
    pub init_scheme: InitScheme,
    pub init_const: f64,
    pub reported: Option<ReportedRow>,
}

impl Variant {
    /// `base` with this variant's patches swapped in. Dropout and the
    /// weight-norm schedule come from `base`.
    pub fn patch(&self, base: &PatchConfig) -> PatchConfig {
        PatchConfig {
            resolution: self.resolution,
            skip: self.skip,
            weight_norm: self.weight_norm,
            energy_norm: self.energy_norm,
            init_scheme: self.init_scheme,
            init_const: self.init_const,
            ..base.clone()
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn row(
    name: &str,
    resolution: Option<f64>,
    skip: bool,
    weight_norm: Option<f64>,
    energy_norm: Option<f64>,
    normal_const: Option<f64>,
    reported: [f64; 5],
) -> Variant {
    let [train_loss, train_acc, test_loss, test_acc, test_acc_std] = reported;
    Variant {
        name: name.to_string(),
        resolution,
        skip,
        weight_norm,
        energy_norm,
        init_scheme: if normal_const.is_some() {
            InitScheme::Normal
        } else {
            InitScheme::Uniform
        },
        init_const: normal_const.unwrap_or(1.0),
        reported: Some(ReportedRow {
            train_loss,
            train_acc: train_acc / 100.0,
            test_loss,
            test_acc: test_acc / 100.0,
            test_acc_std: test_acc_std / 100.0,
        }),
    }
}

/// The fifteen distinct patch combinations of the Cora ablation table, with
/// their published numbers. The table lists "r = 1 with skip" twice; the
/// first listing is kept.
pub fn table1_variants() -> Vec<Variant> {
    let r1 = Some(1.0);
    vec![
        row("baseline", None, false, None, None, None, [1.946, 14.29, 1.960, 23.11, 8.80]),
        row("tr1", r1, false, None, None, None, [0.004, 99.93, 4.608, 57.10, 7.85]),
        row("normal1.8", None, false, None, None, Some(1.8), [0.106, 98.07, 1.806, 67.45, 4.37]),
        row("tr1+normal0.8", r1, false, None, None, Some(0.8), [0.005, 100.0, 2.908, 65.13, 4.53]),
        row("wn7", None, false, Some(7.0), None, None, [0.811, 71.93, 1.184, 64.68, 9.94]),
        row("en800", None, false, None, Some(800.0), None, [0.011, 100.0, 1.088, 69.72, 2.55]),
        row("tr1+wn5", r1, false, Some(5.0), None, None, [0.359, 89.79, 1.562, 64.35, 4.65]),
        row("tr1+en550", r1, false, None, Some(550.0), None, [0.002, 100.0, 1.912, 62.08, 2.95]),
        row("tr1+skip", r1, true, None, None, None, [0.008, 99.93, 1.723, 68.15, 5.29]),
        row("skip+normal0.9", None, true, None, None, Some(0.9), [0.034, 99.79, 1.318, 72.30, 2.59]),
        row("skip+wn7", None, true, Some(7.0), None, None, [0.378, 95.43, 1.009, 73.98, 2.68]),
        row("skip+en2900", None, true, None, Some(2900.0), None, [0.003, 100.0, 1.543, 71.28, 2.95]),
        row("tr1+skip+normal0.5", r1, true, None, None, Some(0.5), [0.005, 100.0, 1.447, 69.32, 2.83]),
        row("tr1+skip+wn3", r1, true, Some(3.0), None, None, [0.193, 98.50, 1.247, 68.48, 3.72]),
        row("tr1+skip+en325", r1, true, None, Some(325.0), None, [0.080, 100.0, 2.074, 70.52, 2.39]),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub records: Vec<RunRecord>,
}

impl VariantOutcome {
    pub fn summary(&self) -> Vec<SummaryRow> {
        summarize(&self.variant.name, &self.records)
    }
}

/// Runs every variant `base.runs` times. Run `k` of each variant uses seed
/// `base.seed + k` and is named `<variant>-run<k>`. All runs are scheduled
/// together on `exec`.
pub fn ablate(
    data: &Dataset,
    base: &TrainConfig,
    variants: &[Variant],
    exec: Execution,
) -> Result<Vec<VariantOutcome>> {
    base.validate()?;
    let configs: Vec<TrainConfig> = variants
        .iter()
        .map(|v| {
            let cfg = TrainConfig {
                patch: v.patch(&base.patch),
                ..base.clone()
            };
            cfg.validate().map(|_| cfg)
        })
        .collect::<Result<_>>()?;
    let runs = base.runs;
    let records = exec.map_indices(variants.len() * runs, |job| {
        let (v, k) = (job / runs, job % runs);
        let mut rec = train_run(&configs[v], data, base.seed + k as u64)?;
        super::rename(&mut rec, format!("{}-run{k}", variants[v].name));
        log::info!("{} done", rec.run_id);
        Ok(rec)
    });
    let mut records = records.into_iter().collect::<Result<Vec<_>>>()?.into_iter();
    Ok(variants
        .iter()
        .map(|v| VariantOutcome {
            variant: v.clone(),
            records: records.by_ref().take(runs).collect(),
        })
        .collect())
}

/// Metrics reported per variant, in output order.
pub const SUMMARY_METRICS: [&str; 6] = EpochMetrics::NAMES;

/// Aggregate of one metric over the successful runs of a variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Runs that entered the statistics.
    pub n_runs: usize,
    pub n_failed: usize,
}

/// Failed runs are left out of the mean and std and counted in `n_failed`.
pub fn summarize(variant: &str, records: &[RunRecord]) -> Vec<SummaryRow> {
    let finals: Vec<EpochMetrics> = records
        .iter()
        .filter(|r| !r.failed())
        .filter_map(|r| r.summary.map(|s| s.metrics))
        .collect();
    let n_failed = records.len() - finals.len();
    SUMMARY_METRICS
        .iter()
        .map(|&metric| {
            let vals: Vec<f64> = finals.iter().map(|m| m.get(metric).expect("known metric")).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            SummaryRow {
                variant: variant.to_string(),
                metric: metric.to_string(),
                mean,
                std: var.sqrt(),
                n_runs: vals.len(),
                n_failed,
            }
        })
        .collect()
}

const SUMMARY_HEADER: [&str; 6] = ["variant", "metric", "mean", "std", "n_runs", "n_failed"];

fn csv_err(path: &Path, source: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_summary_csv(path: impl AsRef<Path>, rows: &[SummaryRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(SUMMARY_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.metric.clone(),
            format_value(r.mean),
            format_value(r.std),
            r.n_runs.to_string(),
            r.n_failed.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(Error::parse(path, 1, "unexpected summary header"));
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let bad = || Error::parse(path, k + 2, "malformed summary row");
        let num = |i: usize| rec.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad);
        let count = |i: usize| rec.get(i).and_then(|v| v.parse::<usize>().ok()).ok_or_else(bad);
        rows.push(SummaryRow {
            variant: rec.get(0).ok_or_else(bad)?.to_string(),
            metric: rec.get(1).ok_or_else(bad)?.to_string(),
            mean: num(2)?,
            std: num(3)?,
            n_runs: count(4)?,
            n_failed: count(5)?,
        });
    }
    Ok(rows)
}
