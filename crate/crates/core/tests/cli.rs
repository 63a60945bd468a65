use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 11
classes = [2]

[dataset]
n_per_class = 120

[train]
n_estimators = 4
max_depth = 6
folds = 3

[grid]
families = ["rf", "nn", "svm"]
classes = [2]
max_rows_nn_svm = 60

[grid.rf]
n_estimators = [1, 4]
max_depth = [4]

[grid.nn]
hidden = [[3]]
activation = ["tanh"]
solver = ["adam"]

[grid.nn.base]
epochs = 20

[grid.svm]
kernels = ["linear", "poly"]
degrees = [2]
gamma = ["scale"]
epochs = 2

[pipeline]
power_series_stride = 50

[[workloads]]
name = "mixed"
count = 300
mix = [0.25, 0.25, 0.25, 0.25]
operand_dist = "uniform32"

[[workloads]]
name = "logic"
count = 200
mix = [0.0, 0.0, 1.0, 0.0]
operand_dist = "sparse-bits"
"#;

fn adaptclk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adaptclk"))
        .args(args)
        .env_remove("ADAPTCLK_SEED")
        .env_remove("ADAPTCLK_CLASSES")
        .env_remove("ADAPTCLK_OUT")
        .env_remove("ADAPTCLK_FORMAT")
        .env_remove("ADAPTCLK_CONFIG")
        .env("RUST_LOG", "warn")
        .current_dir(dir)
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_without_dataset_names_the_missing_stage() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    let o = adaptclk(d.path(), &["--config", &cfg, "--out", "o", "train"]);
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("train") && e.contains("dataset"), "{e}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("bad.toml");
    fs::write(&p, "seed = 1\n[train]\ntrees = 4\n").unwrap();
    let o = adaptclk(d.path(), &["--config", p.to_str().unwrap(), "show-config"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown field"), "{}", stderr(&o));
}

#[test]
fn flag_beats_env_beats_config() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    let seed_of = |o: Output| {
        let text = String::from_utf8(o.stdout).unwrap();
        text.lines().find_map(|l| l.strip_prefix("seed = ")).unwrap().to_string()
    };
    assert_eq!(seed_of(adaptclk(d.path(), &["--config", &cfg, "show-config"])), "11");
    let env = Command::new(env!("CARGO_BIN_EXE_adaptclk")).args(["--config", &cfg, "show-config"]).env("ADAPTCLK_SEED", "22").output().unwrap();
    assert_eq!(seed_of(env), "22");
    let flag = Command::new(env!("CARGO_BIN_EXE_adaptclk"))
        .args(["--config", &cfg, "--seed", "33", "show-config"])
        .env("ADAPTCLK_SEED", "22")
        .output()
        .unwrap();
    assert_eq!(seed_of(flag), "33");
}

fn csv_artifacts(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn run_all_is_deterministic_and_versioned() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_config(d.path());
    for out in ["a", "b"] {
        let o = adaptclk(d.path(), &["--config", &cfg, "--out", out, "--format", "csv", "run-all"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (a, b) = (csv_artifacts(&d.path().join("a")), csv_artifacts(&d.path().join("b")));
    assert!(a.len() >= 8, "{:?}", a.iter().map(|x| &x.0).collect::<Vec<_>>());
    assert_eq!(a, b);
    for f in ["grid_rf_2c.csv", "grid_nn_2c.csv", "grid_svm_2c.csv", "report.csv", "report.txt", "results_2c.json", "forest_2c.json"] {
        assert!(d.path().join("a").join(f).exists(), "{f} missing");
    }

    let root = d.path().join("a");
    for (name, bytes) in &a {
        let first = String::from_utf8_lossy(bytes).lines().next().unwrap_or("").to_string();
        assert!(first.contains("fmt v") || first.starts_with("n_instructions"), "{name} starts with `{first}`");
    }
    let report = fs::read_to_string(root.join("report.txt")).unwrap();
    assert!(report.contains("Practical") && report.contains("Comparison"));

    // stale dataset version
    let ds = root.join("dataset_2c.csv");
    let text = fs::read_to_string(&ds).unwrap().replacen("datasetfmt v1", "datasetfmt v0", 1);
    fs::write(&ds, text).unwrap();
    let o = adaptclk(d.path(), &["--config", &cfg, "--out", "a", "train"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("datasetfmt v1"), "{}", stderr(&o));

    // stale results version
    let rp = root.join("results_2c.json");
    let text = fs::read_to_string(&rp).unwrap().replacen("resultsfmt v1", "resultsfmt v0", 1);
    fs::write(&rp, text).unwrap();
    let o = adaptclk(d.path(), &["--config", &cfg, "--out", "a", "report"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("report"), "{}", stderr(&o));
}
