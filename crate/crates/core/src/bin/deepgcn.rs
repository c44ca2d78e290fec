use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use deepgcn::diagnostics::{format_value, RunRecord};
use deepgcn::harness::{
    ablate, diagnose, random_search, run_many, summarize, table1_variants, verify_theorem, write_run,
    write_summary_csv, SearchSpace, SummaryRow, TrainConfig,
};
use deepgcn::Execution;

#[derive(Parser)]
#[command(name = "deepgcn", version, about = "Train and diagnose deep graph convolutional networks")]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Run independent runs one after another instead of in parallel.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train `runs` independently seeded models.
    Train {
        #[command(flatten)]
        opts: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full ablation matrix.
    Ablate {
        #[command(flatten)]
        opts: ConfigArgs,
        /// Use the fifteen-variant patch matrix (the only matrix available).
        #[arg(long, required = true)]
        table1: bool,
        /// Comma-separated subset of variant names.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random hyperparameter search over the patch template given by the options.
    Search {
        #[command(flatten)]
        opts: ConfigArgs,
        /// `default` or `desk` (widths 8..=64).
        #[arg(long, default_value = "default")]
        space: String,
        /// Hard cap on candidates.
        #[arg(long)]
        max_candidates: Option<usize>,
        /// Wall-clock budget in minutes; results then depend on machine speed.
        #[arg(long)]
        budget_mins: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the energy inequality of ReLU after the renormalized affinity.
    VerifyTheorem {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 50)]
        max_nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-derive checkpointed trace rows of every run in a directory.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
    },
}

/// Training options. Each one overrides the same key of `--config`.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` file with any of the options below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (features.txt, labels.txt, edges.txt, splits.txt).
    #[arg(long, conflicts_with = "sbm")]
    data: Option<PathBuf>,
    /// Synthetic block model, e.g. `blocks=3,nodes=50,p_in=0.2,p_out=0.01`.
    #[arg(long)]
    sbm: Option<String>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Whether weight decay also applies to biases (default true).
    #[arg(long)]
    decay_biases: Option<bool>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    resolution: Option<f64>,
    #[arg(long)]
    skip: bool,
    #[arg(long)]
    weight_norm: Option<f64>,
    #[arg(long)]
    weight_norm_init_only: bool,
    #[arg(long)]
    energy_norm: Option<f64>,
    /// `uniform` or `normal`.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    init_const: Option<f64>,
    #[arg(long)]
    normalize_features: Option<bool>,
    /// Also write per-column energies.
    #[arg(long)]
    keep_columns: bool,
}

impl ConfigArgs {
    fn overrides(&self) -> anyhow::Result<Vec<(&'static str, String)>> {
        let mut out = Vec::new();
        if let Some(d) = &self.data {
            let abs = fs::canonicalize(d).with_context(|| format!("dataset directory {}", d.display()))?;
            out.push(("data", abs.display().to_string()));
        }
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("sbm", self.sbm.clone());
        push("depth", self.depth.map(|v| v.to_string()));
        push("width", self.width.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("weight-decay", self.weight_decay.map(|v| v.to_string()));
        push("decay-biases", self.decay_biases.map(|v| v.to_string()));
        push("dropout", self.dropout.map(|v| v.to_string()));
        push("patience", self.patience.map(|v| v.to_string()));
        push("max-epochs", self.max_epochs.map(|v| v.to_string()));
        push("runs", self.runs.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("resolution", self.resolution.map(|v| v.to_string()));
        push("skip", self.skip.then(|| "true".into()));
        push("weight-norm", self.weight_norm.map(|v| v.to_string()));
        push("weight-norm-init-only", self.weight_norm_init_only.then(|| "true".into()));
        push("energy-norm", self.energy_norm.map(|v| v.to_string()));
        push("init", self.init.clone());
        push("init-const", self.init_const.map(|v| v.to_string()));
        push("normalize-features", self.normalize_features.map(|v| v.to_string()));
        push("keep-columns", self.keep_columns.then(|| "true".into()));
        Ok(out)
    }

    fn build(&self) -> Result<TrainConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::from_file(path).map_err(usage)?,
            None => TrainConfig::default(),
        };
        for (k, v) in self.overrides().map_err(usage)? {
            cfg.set(k, &v).map_err(usage)?;
        }
        cfg.validate().map_err(usage)?;
        if cfg.data.is_none() {
            return Err(usage(anyhow!("no dataset: pass --data or --sbm")));
        }
        Ok(cfg)
    }
}

enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
    Verify(String),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Run(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match run(cli.command, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command, exec: Execution) -> Result<(), Failure> {
    match command {
        Command::Train { opts, out } => train(&opts.build()?, &out, exec),
        Command::Ablate { opts, only, out, .. } => ablation(&opts.build()?, &only, &out, exec),
        Command::Search {
            opts,
            space,
            max_candidates,
            budget_mins,
            out,
        } => {
            let cfg = opts.build()?;
            let mut space = SearchSpace::by_name(&space).map_err(usage)?;
            if let Some(m) = max_candidates {
                space.max_candidates = m;
            }
            space.budget = budget_mins.map(|m| Duration::from_secs_f64(m * 60.0));
            search(&cfg, &space, &out, exec)
        }
        Command::VerifyTheorem {
            trials,
            max_nodes,
            seed,
        } => theorem(trials, max_nodes, seed),
        Command::Diagnose { run } => diagnose_dir(&run),
    }
}

fn write_records(out: &Path, records: &[RunRecord]) -> Result<(), Failure> {
    for rec in records {
        write_run(out, rec)?;
    }
    Ok(())
}

fn print_summary(rows: &[SummaryRow]) {
    for r in rows {
        println!(
            "{:<22} {:<10} mean {:>10.4} std {:>8.4}  ({} runs, {} failed)",
            r.variant, r.metric, r.mean, r.std, r.n_runs, r.n_failed
        );
    }
}

fn train(cfg: &TrainConfig, out: &Path, exec: Execution) -> Result<(), Failure> {
    let data = cfg.load_data()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let records = run_many(cfg, &data, "", exec)?;
    write_records(out, &records)?;
    let rows = summarize("train", &records);
    write_summary_csv(out.join("summary.csv"), &rows)?;
    print_summary(&rows);
    if records.iter().all(RunRecord::failed) {
        return Err(Failure::Run(anyhow!("every run diverged")));
    }
    Ok(())
}

fn ablation(base: &TrainConfig, only: &[String], out: &Path, exec: Execution) -> Result<(), Failure> {
    let mut variants = table1_variants();
    if !only.is_empty() {
        if let Some(bad) = only.iter().find(|n| !variants.iter().any(|v| &v.name == *n)) {
            return Err(usage(anyhow!("unknown variant {bad:?}")));
        }
        variants.retain(|v| only.contains(&v.name));
    }
    let data = base.load_data()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outcomes = ablate(&data, base, &variants, exec)?;
    let mut rows = Vec::new();
    for o in &outcomes {
        write_records(out, &o.records)?;
        rows.extend(o.summary());
    }
    write_summary_csv(out.join("ablation_summary.csv"), &rows)?;
    println!(
        "{:<22} {:>10} {:>10} {:>10} {:>10}   published test acc",
        "variant", "train loss", "train acc", "test loss", "test acc"
    );
    for o in &outcomes {
        let s = o.summary();
        let mean = |m: &str| s.iter().find(|r| r.metric == m).map_or(f64::NAN, |r| r.mean);
        let published = o
            .variant
            .reported
            .map_or(String::new(), |p| format!("{:.2}%", 100.0 * p.test_acc));
        println!(
            "{:<22} {:>10.3} {:>9.2}% {:>10.3} {:>9.2}%   {published}",
            o.variant.name,
            mean("train_loss"),
            100.0 * mean("train_acc"),
            mean("test_loss"),
            100.0 * mean("test_acc"),
        );
    }
    Ok(())
}

fn search(cfg: &TrainConfig, space: &SearchSpace, out: &Path, exec: Execution) -> Result<(), Failure> {
    let data = cfg.load_data()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let result = random_search(&data, space, cfg, cfg.seed, exec)?;

    let path = out.join("search_candidates.csv");
    let mut w = csv::Writer::from_path(&path).with_context(|| path.display().to_string())?;
    let keys: Vec<String> = result.best.to_pairs().into_iter().map(|(k, _)| k).collect();
    let mut header = vec!["candidate".to_string(), "score".into(), "n_failed".into()];
    header.extend(keys.iter().cloned());
    w.write_record(&header)?;
    for c in &result.candidates {
        let mut row = vec![c.index.to_string(), format_value(c.score), c.n_failed.to_string()];
        row.extend(c.config.to_pairs().into_iter().map(|(_, v)| v));
        w.write_record(&row)?;
    }
    w.flush()?;

    let text: String = result
        .best
        .to_pairs()
        .iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    fs::write(out.join("best.config.txt"), text)?;
    write_records(out, &result.final_records)?;
    let rows = summarize("best", &result.final_records);
    write_summary_csv(out.join("search_summary.csv"), &rows)?;
    println!(
        "{} candidates evaluated, best quick score {:.4}",
        result.candidates.len(),
        result.best_score
    );
    print_summary(&rows);
    Ok(())
}

fn theorem(trials: usize, max_nodes: usize, seed: u64) -> Result<(), Failure> {
    let started = Instant::now();
    let r = verify_theorem(trials, max_nodes, seed).map_err(usage)?;
    println!("trials               {}", r.trials);
    println!("violations           {}", r.violations);
    println!("max energy ratio     {:.15}", r.max_ratio);
    println!("equality residual    {:.3e}", r.equality_residual);
    println!("strict losses        {}/{}", r.strict_losses, r.trials);
    println!(
        "strict margin        min {:.3e}  median {:.3e}  max {:.3e}",
        r.margin_quantile(0.0),
        r.margin_quantile(0.5),
        r.margin_quantile(1.0)
    );
    println!("elapsed              {:.2?}", started.elapsed());
    if r.passed() {
        Ok(())
    } else {
        Err(Failure::Verify(format!(
            "{} violations, equality residual {:.3e}, {} of {} strict",
            r.violations, r.equality_residual, r.strict_losses, r.trials
        )))
    }
}

fn diagnose_dir(dir: &Path) -> Result<(), Failure> {
    let checks = diagnose(dir)?;
    if checks.is_empty() {
        return Err(Failure::Run(anyhow!("no checkpointed runs in {}", dir.display())));
    }
    let mut bad = 0;
    for c in &checks {
        println!(
            "{:<28} epoch {:>6}  max rel error {:.3e} ({})  {}",
            c.run_id,
            c.epoch,
            c.max_rel_error,
            c.worst_column,
            if c.ok() { "ok" } else { "MISMATCH" }
        );
        bad += usize::from(!c.ok());
    }
    if bad > 0 {
        return Err(Failure::Run(anyhow!(
            "{bad} of {} runs do not match their checkpoints",
            checks.len()
        )));
    }
    Ok(())
}

