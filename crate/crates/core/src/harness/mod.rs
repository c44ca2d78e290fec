//! Training runs with early stopping, the ablation matrix, random
//! hyperparameter search and the energy-inequality verifier.

mod ablation;
mod checkpoint;
mod config;
mod search;
mod theorem;

pub use ablation::{
    ablate, read_summary_csv, summarize, table1_variants, write_summary_csv, ReportedRow, SummaryRow,
    Variant, VariantOutcome, SUMMARY_METRICS,
};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use config::{DataSource, TrainConfig};
pub use search::{random_search, Candidate, SearchResult, SearchSpace};
pub use theorem::{verify_theorem, TheoremReport};

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backprop::{backward, output_gradient, Gradients};
use crate::data::Dataset;
use crate::diagnostics::{
    read_trace_csv, run_files, snapshot_epoch, write_column_csv, write_config, write_csv,
    EpochMetrics, EpochTrace, RunFailure, RunRecord, RunSummary,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::graph_ops::{propagation_operator, Operator};
use crate::model::{accuracy, forward, init_params, nll_loss, ForwardCache, Mode, ModelParams};
use crate::optim::{adam_step, apply_weight_norm, OptimizerState};

/// Config keys added to every run record next to the [`TrainConfig`] keys.
pub const RUN_ID_KEY: &str = "run-id";
pub const RUN_SEED_KEY: &str = "run-seed";

fn metrics_of(cache: &ForwardCache<'_>, data: &Dataset) -> Result<EpochMetrics> {
    let s = &data.splits;
    let loss = |mask: &[usize]| nll_loss(&cache.logits, &data.targets, mask);
    let acc = |mask: &[usize]| accuracy(&cache.logits, &data.labels, mask);
    let test = |f: &dyn Fn(&[usize]) -> Result<f64>| {
        if s.test.is_empty() {
            Ok(f64::NAN)
        } else {
            f(&s.test)
        }
    };
    Ok(EpochMetrics {
        train_loss: loss(&s.train)?,
        train_acc: acc(&s.train)?,
        val_loss: loss(&s.val)?,
        val_acc: acc(&s.val)?,
        test_loss: test(&loss)?,
        test_acc: test(&acc)?,
    })
}

/// Eval-mode metrics and training-loss gradients for `params`.
fn eval_epoch(
    epoch: usize,
    params: &ModelParams,
    op: &Operator,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(EpochTrace, Gradients)> {
    let cache = forward(params, op, &data.features, &cfg.patch, Mode::Eval, 0)?;
    let metrics = metrics_of(&cache, data)?;
    let g = output_gradient(&cache.logits, &data.targets, &data.splits.train)?;
    let grads = backward(&cache, params, op, &g, &cfg.patch)?;
    let trace = snapshot_epoch(epoch, &cache, &grads, params, metrics, cfg.keep_columns);
    Ok((trace, grads))
}

/// Re-derives the trace row of `epoch` from saved parameters.
pub fn trace_from_params(
    cfg: &TrainConfig,
    data: &Dataset,
    params: &ModelParams,
    epoch: usize,
) -> Result<EpochTrace> {
    let op = propagation_operator(&data.graph, cfg.patch.resolution);
    eval_epoch(epoch, params, &op, data, cfg).map(|(t, _)| t)
}

/// One training run.
///
/// Epoch 0 records the initial parameters; epoch `e ≥ 1` records the
/// parameters after `e` optimizer steps. Each row holds eval-mode metrics and
/// the gradient of the training loss at those parameters. The best
/// validation loss is tracked from epoch 1 on, and training stops once it has
/// not strictly improved for `patience` epochs or after `max_epochs` steps.
/// A non-finite loss or gradient ends the run with a recorded failure.
pub fn train_run(cfg: &TrainConfig, data: &Dataset, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    if data.splits.train.is_empty() || data.splits.val.is_empty() {
        return Err(Error::InvalidDataset("training needs non-empty train and validation splits".into()));
    }
    let op = propagation_operator(&data.graph, cfg.patch.resolution);
    let widths = cfg.widths(data.feature_dim(), data.num_classes);
    let mut params = init_params(&widths, &cfg.patch, seed)?;
    if let Some(lambda) = cfg.patch.weight_norm {
        apply_weight_norm(&mut params, lambda);
    }
    let mut opt = OptimizerState::new(cfg.adam, &params)?;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
    dropout_rng.set_stream(1);

    let run_id = format!("run-{seed}");
    let mut config = cfg.to_pairs();
    config.push((RUN_ID_KEY.into(), run_id.clone()));
    config.push((RUN_SEED_KEY.into(), seed.to_string()));
    let mut record = RunRecord {
        run_id,
        seed,
        config,
        traces: Vec::new(),
        summary: None,
        failure: None,
        best_params: None,
    };

    let mut since_best = 0;
    for epoch in 0..=cfg.max_epochs {
        let (trace, grads) = eval_epoch(epoch, &params, &op, data, cfg)?;
        let metrics = trace.metrics;
        record.traces.push(trace);
        if !metrics.train_loss.is_finite() || !metrics.val_loss.is_finite() {
            record.failure = Some(RunFailure {
                epoch,
                reason: "non-finite loss".into(),
            });
            break;
        }
        if !grads.is_finite() {
            record.failure = Some(RunFailure {
                epoch,
                reason: "non-finite gradient".into(),
            });
            break;
        }
        if epoch >= 1 {
            match record.summary {
                Some(best) if metrics.val_loss.partial_cmp(&best.metrics.val_loss) != Some(Ordering::Less) => {
                    since_best += 1
                }
                _ => {
                    record.summary = Some(RunSummary {
                        best_epoch: epoch,
                        metrics,
                    });
                    record.best_params = Some(params.clone());
                    since_best = 0;
                }
            }
            if since_best >= cfg.patience {
                break;
            }
        }
        if epoch == cfg.max_epochs {
            break;
        }

        let step_grads = if cfg.patch.dropout > 0.0 {
            let cache = forward(
                &params,
                &op,
                &data.features,
                &cfg.patch,
                Mode::Train,
                dropout_rng.next_u64(),
            )?;
            let g = output_gradient(&cache.logits, &data.targets, &data.splits.train)?;
            backward(&cache, &params, &op, &g, &cfg.patch)?
        } else {
            grads
        };
        if let Err(e) = adam_step(&mut opt, &mut params, &step_grads) {
            match e {
                Error::NonFinite(what) => {
                    record.failure = Some(RunFailure {
                        epoch,
                        reason: format!("non-finite {what}"),
                    });
                    break;
                }
                other => return Err(other),
            }
        }
        if let (Some(lambda), false) = (cfg.patch.weight_norm, cfg.patch.weight_norm_init_only) {
            apply_weight_norm(&mut params, lambda);
        }
    }
    log::debug!(
        "{} finished after {} epochs{}",
        record.run_id,
        record.traces.len(),
        record.failure.as_ref().map_or(String::new(), |f| format!(" ({})", f.reason))
    );
    Ok(record)
}

/// `cfg.runs` independent runs with seeds `cfg.seed + k`, named `{prefix}run{k}`.
pub fn run_many(cfg: &TrainConfig, data: &Dataset, prefix: &str, exec: Execution) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    exec.map_indices(cfg.runs, |k| {
        let mut rec = train_run(cfg, data, cfg.seed + k as u64)?;
        rename(&mut rec, format!("{prefix}run{k}"));
        Ok(rec)
    })
    .into_iter()
    .collect()
}

fn rename(rec: &mut RunRecord, id: String) {
    for (k, v) in &mut rec.config {
        if k == RUN_ID_KEY {
            v.clone_from(&id);
        }
    }
    rec.run_id = id;
}

pub fn checkpoint_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.ckpt"))
}

/// Writes the trace, config snapshot and best checkpoint of a run, plus the
/// per-column energies when they were kept.
pub fn write_run(dir: &Path, rec: &RunRecord) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (trace, config) = run_files(dir, &rec.run_id);
    write_csv(rec, trace)?;
    write_config(rec, config)?;
    if let (Some(params), Some(summary)) = (&rec.best_params, &rec.summary) {
        write_checkpoint(checkpoint_path(dir, &rec.run_id), summary.best_epoch, params)?;
    }
    if rec.traces.iter().any(|t| t.layers.iter().any(|l| l.columns.is_some())) {
        write_column_csv(rec, dir.join(format!("{}.columns.csv", rec.run_id)))?;
    }
    Ok(())
}

/// Result of re-deriving one run's checkpointed trace row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCheck {
    pub run_id: String,
    pub epoch: usize,
    pub max_rel_error: f64,
    pub worst_column: String,
}

/// Relative tolerance of [`diagnose`].
pub const DIAGNOSE_TOL: f64 = 1e-9;

impl RunCheck {
    pub fn ok(&self) -> bool {
        self.max_rel_error <= DIAGNOSE_TOL
    }
}

/// Reads a `key = value` run config into a [`TrainConfig`] plus run id and seed.
pub fn read_run_config(path: &Path) -> Result<(TrainConfig, String, u64)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut id, mut seed) = (None, None);
    let mut options = String::new();
    for line in text.lines() {
        match line.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
            Some((RUN_ID_KEY, v)) => id = Some(v.to_string()),
            Some((RUN_SEED_KEY, v)) => seed = v.parse().ok(),
            // Blank placeholder keeps line numbers aligned for parse errors.
            _ => options.push_str(line),
        }
        options.push('\n');
    }
    let mut cfg = TrainConfig::default();
    cfg.apply_text(&options, path)?;
    match (id, seed) {
        (Some(id), Some(seed)) => Ok((cfg, id, seed)),
        _ => Err(Error::InvalidConfig(format!(
            "{} lacks {RUN_ID_KEY} or {RUN_SEED_KEY}",
            path.display()
        ))),
    }
}

/// Recomputes the best-epoch trace row of every run in `dir` from its
/// checkpoint and compares it against the saved trace CSV.
pub fn diagnose(dir: &Path) -> Result<Vec<RunCheck>> {
    let mut configs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".config.txt"))
        .collect();
    configs.sort();
    let mut checks = Vec::new();
    let mut cached: Option<(Option<DataSource>, bool, Dataset)> = None;
    for path in configs {
        let (cfg, run_id, _) = read_run_config(&path)?;
        let ckpt = checkpoint_path(dir, &run_id);
        if !ckpt.exists() {
            continue;
        }
        let data = match &cached {
            Some((src, norm, d)) if *src == cfg.data && *norm == cfg.normalize_features => d.clone(),
            _ => {
                let d = cfg.load_data()?;
                cached = Some((cfg.data.clone(), cfg.normalize_features, d.clone()));
                d
            }
        };
        let (epoch, params) = read_checkpoint(&ckpt)?;
        let trace = trace_from_params(&cfg, &data, &params, epoch)?;
        let (trace_path, _) = run_files(dir, &run_id);
        let table = read_trace_csv(&trace_path)?;
        let saved = table.row_for_epoch(epoch).ok_or_else(|| {
            Error::InvalidDataset(format!("{} has no row for epoch {epoch}", trace_path.display()))
        })?;
        let mut fresh = vec![epoch as f64];
        fresh.extend(trace.metrics.values());
        for l in &trace.layers {
            fresh.extend([
                l.energy,
                l.col_energy_min,
                l.col_energy_mean,
                l.col_energy_max,
                l.weight_norm,
                l.grad_norm,
            ]);
        }
        if fresh.len() != saved.len() {
            return Err(Error::InvalidDataset(format!(
                "{} has {} columns, recomputed row has {}",
                trace_path.display(),
                saved.len(),
                fresh.len()
            )));
        }
        let mut check = RunCheck {
            run_id,
            epoch,
            max_rel_error: 0.0,
            worst_column: String::new(),
        };
        for ((a, b), name) in fresh.iter().zip(saved).zip(&table.header) {
            let err = if a == b || (a.is_nan() && b.is_nan()) {
                0.0
            } else {
                (a - b).abs() / a.abs().max(b.abs())
            };
            if err > check.max_rel_error || check.worst_column.is_empty() {
                check.max_rel_error = err;
                check.worst_column.clone_from(name);
            }
        }
        checks.push(check);
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;

    fn sbm() -> Dataset {
        crate::data::generate_sbm(&SyntheticSpec::default())
            .unwrap()
            .row_normalized()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            depth: 3,
            width: 8,
            max_epochs: 30,
            patience: 10,
            runs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn patience_one_with_constant_loss_stops_at_epoch_two() {
        let mut cfg = small_cfg();
        cfg.patience = 1;
        cfg.adam.lr = 1e-300;
        let rec = train_run(&cfg, &sbm(), 0).unwrap();
        assert_eq!(rec.traces.last().unwrap().epoch, 2);
        assert_eq!(rec.summary.unwrap().best_epoch, 1);
        assert_eq!(rec.traces[1].metrics, rec.traces[2].metrics);
    }

    #[test]
    fn early_stopping_runs_at_least_patience_plus_one_epochs() {
        let mut cfg = small_cfg();
        cfg.patience = 5;
        cfg.adam.lr = 0.5;
        let rec = train_run(&cfg, &sbm(), 3).unwrap();
        let last = rec.traces.last().unwrap().epoch;
        assert!(last > cfg.patience || last == cfg.max_epochs, "{last}");
        let epochs: Vec<usize> = rec.traces.iter().map(|t| t.epoch).collect();
        assert_eq!(epochs, (0..=last).collect::<Vec<_>>());
    }

    #[test]
    fn summary_matches_best_validation_epoch() {
        let rec = train_run(&small_cfg(), &sbm(), 1).unwrap();
        let s = rec.summary.unwrap();
        let best = rec.traces[1..]
            .iter()
            .min_by(|a, b| a.metrics.val_loss.total_cmp(&b.metrics.val_loss))
            .unwrap();
        assert_eq!(s.best_epoch, best.epoch);
        assert_eq!(s.metrics, best.metrics);
        let again = trace_from_params(&small_cfg(), &sbm(), rec.best_params.as_ref().unwrap(), s.best_epoch)
            .unwrap();
        assert_eq!(again, rec.traces[s.best_epoch]);
    }

    #[test]
    fn identical_seeds_give_identical_records() {
        let mut cfg = small_cfg();
        cfg.patch.dropout = 0.3;
        let a = train_run(&cfg, &sbm(), 5).unwrap();
        let b = train_run(&cfg, &sbm(), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.traces, train_run(&cfg, &sbm(), 6).unwrap().traces);
    }

    #[test]
    fn divergence_is_recorded_not_raised() {
        let mut cfg = small_cfg();
        cfg.patch.init_const = 1e200;
        cfg.depth = 4;
        let rec = train_run(&cfg, &sbm(), 0).unwrap();
        let f = rec.failure.expect("run should diverge");
        assert_eq!(f.epoch, 0);
        assert!(f.reason.contains("non-finite"), "{}", f.reason);
    }

    #[test]
    fn parallel_runs_match_sequential() {
        let cfg = small_cfg();
        let data = sbm();
        let seq = run_many(&cfg, &data, "x-", Execution::Sequential).unwrap();
        let par = run_many(&cfg, &data, "x-", Execution::Parallel).unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq[1].run_id, "x-run1");
        assert_eq!(seq[1].seed, 1);
    }

    #[test]
    fn diagnose_rederives_saved_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.data = Some(DataSource::Sbm(SyntheticSpec::default()));
        cfg.patch.energy_norm = Some(3.0);
        let data = cfg.load_data().unwrap();
        for rec in run_many(&cfg, &data, "", Execution::default()).unwrap() {
            write_run(dir.path(), &rec).unwrap();
        }
        let checks = diagnose(dir.path()).unwrap();
        assert_eq!(checks.len(), 2);
        for c in &checks {
            assert!(c.ok(), "{c:?}");
        }
    }
}
