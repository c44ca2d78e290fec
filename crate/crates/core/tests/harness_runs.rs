use deepgcn::data::Dataset;
use deepgcn::exec::Execution;
use deepgcn::harness::{
    ablate, random_search, read_summary_csv, run_many, summarize, table1_variants, write_summary_csv,
    DataSource, SearchSpace, TrainConfig,
};

fn toy() -> (TrainConfig, Dataset) {
    let cfg = TrainConfig {
        depth: 2,
        max_epochs: 200,
        runs: 5,
        data: Some(DataSource::Sbm(Default::default())),
        ..TrainConfig::default()
    };
    let data = cfg.load_data().unwrap();
    (cfg, data)
}

#[test]
fn toy_sbm_is_learned_perfectly() {
    let (cfg, data) = toy();
    for rec in run_many(&cfg, &data, "", Execution::default()).unwrap() {
        let m = rec.summary.unwrap().metrics;
        assert_eq!(m.train_acc, 1.0, "{}", rec.run_id);
        assert_eq!(m.test_acc, 1.0, "{}", rec.run_id);
    }
}

fn collapsed(template: &TrainConfig) -> SearchSpace {
    let lr = template.adam.lr;
    let wd = template.adam.weight_decay;
    SearchSpace {
        lr: (lr, lr),
        weight_decay: (wd, wd),
        width: (template.width, template.width, 1),
        dropout: (0.0, 0.0),
        resolution: (1.0, 1.0),
        init_const: (1.0, 1.0),
        weight_norm: (1.0, 1.0),
        energy_norm: (1.0, 1.0),
        quick_runs: 1,
        final_runs: 2,
        ..SearchSpace::default()
    }
}

#[test]
fn collapsed_space_returns_its_point() {
    let (mut cfg, data) = toy();
    cfg.max_epochs = 5;
    let space = collapsed(&cfg);
    let res = random_search(&data, &space, &cfg, 0, Execution::default()).unwrap();
    assert_eq!(res.candidates.len(), space.stall_limit + 1);
    let point = TrainConfig { runs: 1, ..cfg.clone() };
    assert!(res.candidates.iter().all(|c| c.config == point));
    assert_eq!(res.best, TrainConfig { runs: 2, ..cfg });
    assert_eq!(res.final_records.len(), 2);
    assert_eq!(res.final_records[1].run_id, "final-run1");
}

#[test]
fn search_is_reproducible() {
    let (mut cfg, data) = toy();
    cfg.max_epochs = 10;
    let space = SearchSpace {
        stall_limit: 3,
        max_candidates: 5,
        quick_runs: 1,
        final_runs: 1,
        ..SearchSpace::desk()
    };
    let a = random_search(&data, &space, &cfg, 7, Execution::Sequential).unwrap();
    let b = random_search(&data, &space, &cfg, 7, Execution::default()).unwrap();
    assert_eq!(a, b);
    let c = random_search(&data, &space, &cfg, 8, Execution::default()).unwrap();
    assert_ne!(a.candidates[0].config, c.candidates[0].config);
}

fn mean_val_acc(cfg: &TrainConfig, data: &Dataset) -> f64 {
    let recs = run_many(cfg, data, "", Execution::default()).unwrap();
    recs.iter()
        .map(|r| r.summary.map_or(0.0, |s| s.metrics.val_acc))
        .sum::<f64>()
        / recs.len() as f64
}

#[test]
fn search_beats_the_fixed_baseline_on_a_deep_sbm() {
    let spec = "blocks=7,nodes=100,p_in=0.05,p_out=0.005,dim=32,seed=0,train=20,val=100,test=300";
    let mut base = TrainConfig {
        max_epochs: 150,
        patience: 30,
        runs: 2,
        ..TrainConfig::default()
    };
    base.set("sbm", spec).unwrap();
    let data = base.load_data().unwrap();
    let baseline = mean_val_acc(&base, &data);

    let space = SearchSpace {
        stall_limit: 4,
        max_candidates: 8,
        quick_runs: 2,
        final_runs: 2,
        ..SearchSpace::desk()
    };
    let res = random_search(&data, &space, &base, 0, Execution::default()).unwrap();
    println!(
        "baseline val_acc {baseline:.4}, search best {:.4} after {} candidates",
        res.best_score,
        res.candidates.len()
    );
    assert!(res.best_score >= baseline, "{} < {baseline}", res.best_score);
}

#[test]
fn ablation_means_are_arithmetic_means() {
    let (mut cfg, data) = toy();
    cfg.max_epochs = 30;
    cfg.runs = 3;
    let variants: Vec<_> = table1_variants()
        .into_iter()
        .filter(|v| ["baseline", "tr1", "skip+wn7"].contains(&v.name.as_str()))
        .collect();
    let outcomes = ablate(&data, &cfg, &variants, Execution::default()).unwrap();
    assert_eq!(outcomes.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.csv");
    let mut all = Vec::new();
    for o in &outcomes {
        assert_eq!(o.records.len(), 3);
        assert_eq!(o.records[2].run_id, format!("{}-run2", o.variant.name));
        for row in o.summary() {
            let vals: Vec<f64> = o
                .records
                .iter()
                .map(|r| r.summary.unwrap().metrics.get(&row.metric).unwrap())
                .collect();
            let mut mean = 0.0;
            for v in &vals {
                mean += v / vals.len() as f64;
            }
            assert!((row.mean - mean).abs() <= 1e-12, "{} {}", row.variant, row.metric);
            assert_eq!(row.n_runs, 3);
            all.push(row);
        }
    }
    write_summary_csv(&path, &all).unwrap();
    for (a, b) in read_summary_csv(&path).unwrap().iter().zip(&all) {
        assert!((a.mean - b.mean).abs() <= 1e-9 * b.mean.abs().max(1.0));
        assert!((a.std - b.std).abs() <= 1e-9 * b.std.abs().max(1.0));
    }
    assert_eq!(summarize("x", &outcomes[0].records), {
        let mut rows = outcomes[0].summary();
        rows.iter_mut().for_each(|r| r.variant = "x".into());
        rows
    });
}

#[test]
fn parallel_and_sequential_ablations_agree() {
    let (mut cfg, data) = toy();
    cfg.max_epochs = 10;
    cfg.runs = 2;
    cfg.patch.dropout = 0.3;
    let variants: Vec<_> = table1_variants().into_iter().take(4).collect();
    let a = ablate(&data, &cfg, &variants, Execution::Sequential).unwrap();
    let b = ablate(&data, &cfg, &variants, Execution::default()).unwrap();
    assert_eq!(a, b);
}
