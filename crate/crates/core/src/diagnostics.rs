//! Per-epoch traces of layer energies, weight norms and gradient norms.
//!
//! Layer `L<i>` (for `i` in `1..=n`) describes the hidden activation `Y_i`
//! together with the weight `W_{i-1}` that produced it and its gradient.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::backprop::Gradients;
use crate::error::{Error, Result};
use crate::linalg::frobenius_norm;
use crate::model::{ForwardCache, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpochMetrics {
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

impl EpochMetrics {
    pub const NAMES: [&'static str; 6] = [
        "train_loss",
        "train_acc",
        "val_loss",
        "val_acc",
        "test_loss",
        "test_acc",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.train_loss,
            self.train_acc,
            self.val_loss,
            self.val_acc,
            self.test_loss,
            self.test_acc,
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        Self::NAMES
            .iter()
            .position(|&n| n == name)
            .map(|k| self.values()[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// `‖Y_i‖_F²`.
    pub energy: f64,
    pub col_energy_min: f64,
    pub col_energy_mean: f64,
    pub col_energy_max: f64,
    /// `‖W_{i-1}‖_F`.
    pub weight_norm: f64,
    /// `‖dW_{i-1}‖_F`.
    pub grad_norm: f64,
    pub zero_activation: bool,
    /// Per-column energies, kept only when requested.
    pub columns: Option<Vec<f64>>,
}

impl LayerTrace {
    pub const FIELDS: [&'static str; 6] = ["energy", "colE_min", "colE_mean", "colE_max", "wnorm", "gnorm"];

    fn values(&self) -> [f64; 6] {
        [
            self.energy,
            self.col_energy_min,
            self.col_energy_mean,
            self.col_energy_max,
            self.weight_norm,
            self.grad_norm,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub metrics: EpochMetrics,
    pub layers: Vec<LayerTrace>,
}

impl EpochTrace {
    pub fn zero_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.zero_activation)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Builds the trace row for one epoch. `cache` and `grads` must come from the
/// same parameters.
pub fn snapshot_epoch(
    epoch: usize,
    cache: &ForwardCache<'_>,
    grads: &Gradients,
    params: &ModelParams,
    metrics: EpochMetrics,
    keep_columns: bool,
) -> EpochTrace {
    let layers = cache
        .hidden
        .iter()
        .enumerate()
        .map(|(h, y)| {
            let cols = y.column_energies();
            let energy = y.sum_of_squares();
            let (min, max, sum) = cols.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY, 0.0),
                |(lo, hi, s), &c| (lo.min(c), hi.max(c), s + c),
            );
            LayerTrace {
                energy,
                col_energy_min: min,
                col_energy_mean: sum / cols.len() as f64,
                col_energy_max: max,
                weight_norm: frobenius_norm(&params.weights[h]),
                grad_norm: frobenius_norm(&grads.weights[h]),
                zero_activation: energy == 0.0 || cache.zero_activation[h],
                columns: keep_columns.then_some(cols),
            }
        })
        .collect();
    EpochTrace {
        epoch,
        metrics,
        layers,
    }
}

/// Metrics at the best-validation-loss checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub best_epoch: usize,
    pub metrics: EpochMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub epoch: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub seed: u64,
    /// Every hyperparameter as `key = value` lines, in a stable order.
    pub config: Vec<(String, String)>,
    pub traces: Vec<EpochTrace>,
    pub summary: Option<RunSummary>,
    pub failure: Option<RunFailure>,
    /// Parameters at the best-validation-loss epoch.
    pub best_params: Option<ModelParams>,
}

impl RunRecord {
    pub fn hidden_depth(&self) -> usize {
        self.traces.first().map_or(0, |t| t.layers.len())
    }

    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

/// Ten significant digits, enough for a relative round-trip error below 1e-9.
pub fn format_value(v: f64) -> String {
    format!("{v:.9e}")
}

pub fn trace_header(hidden_depth: usize) -> Vec<String> {
    let mut header = vec!["epoch".to_string()];
    header.extend(EpochMetrics::NAMES.iter().map(|s| s.to_string()));
    for i in 1..=hidden_depth {
        header.extend(LayerTrace::FIELDS.iter().map(|f| format!("{f}_L{i}")));
    }
    header
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn write_csv(record: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(trace_header(record.hidden_depth()))
        .map_err(|e| csv_err(path, e))?;
    for t in &record.traces {
        let mut row = vec![t.epoch.to_string()];
        row.extend(t.metrics.values().iter().map(|&v| format_value(v)));
        for layer in &t.layers {
            row.extend(layer.values().iter().map(|&v| format_value(v)));
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long-format dump of per-column energies: `epoch,layer,column,energy`.
pub fn write_column_csv(record: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["epoch", "layer", "column", "energy"])
        .map_err(|e| csv_err(path, e))?;
    for t in &record.traces {
        for (h, layer) in t.layers.iter().enumerate() {
            for (j, &e) in layer.columns.iter().flatten().enumerate() {
                w.write_record([
                    t.epoch.to_string(),
                    (h + 1).to_string(),
                    j.to_string(),
                    format_value(e),
                ])
                .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_config(record: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    for (k, v) in &record.config {
        text.push_str(&format!("{k} = {v}\n"));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Paths of the trace and config files for `run_id` inside `dir`.
pub fn run_files(dir: &Path, run_id: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{run_id}.trace.csv")),
        dir.join(format!("{run_id}.config.txt")),
    )
}

/// A trace CSV read back as numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TraceTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn row_for_epoch(&self, epoch: usize) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|r| r[0] == epoch as f64)
            .map(Vec::as_slice)
    }
}

pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<TraceTable> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(path, k + 2, format!("bad number {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(TraceTable { header, rows })
}
