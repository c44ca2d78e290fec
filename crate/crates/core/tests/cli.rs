use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SBM: &str = "blocks=2,nodes=20,dim=8,seed=3";

fn deepgcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepgcn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    deepgcn(args).status.code().expect("exit code")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn train_into(dir: &Path, extra: &[&str]) {
    let mut args = vec![
        "train", "--sbm", SBM, "--depth", "3", "--width", "6", "--max-epochs", "15", "--runs", "2",
        "--dropout", "0.25", "--keep-columns", "--out",
    ];
    args.push(dir.to_str().unwrap());
    args.extend(extra);
    let out = deepgcn(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_outputs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    train_into(&a, &[]);
    train_into(&b, &[]);
    train_into(&c, &["--sequential"]);
    let fa = files(&a);
    for name in ["run0.trace.csv", "run1.config.txt", "run1.ckpt", "run0.columns.csv", "summary.csv"] {
        assert!(fa.contains_key(name), "{name} missing: {:?}", fa.keys());
    }
    assert_eq!(fa, files(&b));
    assert_eq!(fa, files(&c));
}

#[test]
fn diagnose_accepts_fresh_runs_and_flags_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("runs");
    train_into(&dir, &["--energy-norm", "3"]);
    let d = dir.to_str().unwrap();
    let out = deepgcn(&["diagnose", "--run", d]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches(" ok").count(), 2);

    let ckpt = dir.join("run0.ckpt");
    let text = fs::read_to_string(&ckpt).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let row = lines.iter().position(|l| l.starts_with("weight 0")).unwrap() + 1;
    let first: Vec<f64> = lines[row].split_whitespace().map(|v| v.parse().unwrap()).collect();
    lines[row] = first.iter().map(|v| format!("{:?}", v * 1.5 + 0.1)).collect::<Vec<_>>().join(" ");
    fs::write(&ckpt, lines.join("\n") + "\n").unwrap();
    let out = deepgcn(&["diagnose", "--run", d]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("MISMATCH"));
}

#[test]
fn exit_codes() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["train", "--out", "/nonexistent/x"]), 1);
    assert_eq!(code(&["train", "--sbm", SBM, "--depth", "zero", "--out", "x"]), 1);
    assert_eq!(code(&["train", "--sbm", SBM, "--runs", "0", "--out", "x"]), 1);
    assert_eq!(code(&["train", "--sbm", SBM, "--dropout", "1.0", "--out", "x"]), 1);
    assert_eq!(code(&["ablate", "--sbm", SBM, "--out", "x"]), 1);
    assert_eq!(code(&["ablate", "--table1", "--sbm", SBM, "--only", "nope", "--out", "x"]), 1);
    assert_eq!(code(&["train", "--data", "/nonexistent/dataset", "--out", "x"]), 1);
    assert_eq!(code(&["verify-theorem", "--trials", "0"]), 1);
    assert_eq!(code(&["verify-theorem", "--trials", "20", "--max-nodes", "10"]), 0);
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(code(&["diagnose", "--run", empty.path().to_str().unwrap()]), 2);

    let out = empty.path().join("diverged");
    let out = out.to_str().unwrap();
    let diverging = [
        "train", "--sbm", SBM, "--depth", "2", "--runs", "2", "--max-epochs", "5", "--init", "normal",
        "--init-const", "1e200", "--out", out,
    ];
    assert_eq!(code(&diverging), 2);
    let summary = fs::read_to_string(Path::new(out).join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().ends_with(",0,2"), "{summary}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(
        &cfg,
        format!("# small run\nsbm = {SBM}\ndepth = 3\nwidth = 12\nmax_epochs = 4\nruns = 1\nskip = on\n"),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let args = [
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--width",
        "5",
        "--out",
        out.to_str().unwrap(),
    ];
    let res = deepgcn(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("run0.config.txt")).unwrap();
    for line in ["depth = 3", "width = 5", "max-epochs = 4", "skip = true", "run-id = run0", "run-seed = 0"] {
        assert!(text.lines().any(|l| l == line), "{line:?} not in\n{text}");
    }

    fs::write(&cfg, "depth = 3\ncolour = red\n").unwrap();
    let res = deepgcn(&args);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("run.cfg:2"));
}
