use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chla(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chla"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"
seed = 3
models = ["rf", "svr", "ann"]

[simulate]
n = 60

[preprocess]
resolutions = [20.0]

[cv]
k = 3
repetitions = 1

[grids.rf]
mtry = [2]
n_trees = 10

[grids.svr]
gamma = [0.01]
cost = [10.0]

[grids.ann]
size = [3]
decay = [0.01]
max_iters = 100
"#;

#[test]
fn stepwise_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let data = dir.path().join("data");
    let ds = dir.path().join("ds");

    let out = chla(&["--config", arg(&cfg), "simulate", "--out", arg(&data)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(data.join("spectra.csv").exists());

    let out = chla(&[
        "--config",
        arg(&cfg),
        "preprocess",
        "--input",
        arg(&data),
        "--out",
        arg(&ds),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(ds.join("dataset_20nm_raw.csv").exists());
    assert!(ds.join("dataset_20nm_der.csv").exists());

    let model = dir.path().join("svr.json");
    let out = chla(&[
        "--config",
        arg(&cfg),
        "train",
        "--dataset",
        arg(&ds.join("dataset_20nm_raw.csv")),
        "--model",
        "svm",
        "--out",
        arg(&model),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.path().join("svr.cv.csv").exists());

    let results = dir.path().join("results.csv");
    let out = chla(&[
        "evaluate",
        "--model",
        arg(&model),
        "--dataset",
        arg(&ds.join("dataset_20nm_raw.csv")),
        "--results",
        arg(&results),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&results).unwrap();
    assert!(text.starts_with("model,resolution_nm,variant,seed,subset,n,r2,rmse,mae\n"));
    assert_eq!(text.lines().count(), 2);

    let report = dir.path().join("report");
    let out = chla(&[
        "report",
        "--results",
        arg(&results),
        "--out",
        arg(&report),
        "--scatter",
        "svr:20:raw",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(report.join("table_20nm.csv").exists());
    assert!(report.join("scatter.svg").exists());

    let out = chla(&[
        "evaluate",
        "--model",
        arg(&model),
        "--dataset",
        arg(&ds.join("dataset_20nm_der.csv")),
        "--results",
        arg(&results),
        "--subset",
        "all",
    ]);
    assert_eq!(out.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&out.stderr).contains("features"));
}

#[test]
fn run_writes_whole_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    let work = dir.path().join("work");
    let out = chla(&["--config", arg(&cfg), "run", "--out", arg(&work)]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = fs::read_to_string(work.join("results.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 6);
    assert!(work.join("report/report.md").exists());
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    let out = chla(&["simulate", "--out", arg(dir.path()), "--n", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "unknown_key = 1\n").unwrap();
    let out = chla(&["--config", arg(&bad), "simulate", "--out", arg(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("chla: config error"));

    let out = chla(&[
        "preprocess",
        "--input",
        arg(&dir.path().join("missing")),
        "--out",
        arg(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(4));

    let out = chla(&[
        "train",
        "--dataset",
        "x.csv",
        "--model",
        "gbm",
        "--out",
        "m.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
