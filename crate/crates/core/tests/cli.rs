use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_bimodal-cl");

fn cli(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BIMODAL_CL_OUT")
        .output()
        .expect("binary runs")
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(fs::read(path).unwrap()).to_vec()
}

const FAST: &str = r#"
[split]
num_tasks = 5
test_fraction = 0.25
seed = 3

[run]
epochs_per_task = 2
batch_size = 16
memory_capacity = 20
encoder = { hidden_dim = 8, embed_dim = 6 }
gdro = { lambda = 0.5, margin = 0.5, batch_classes = 4, batch_per_class = 3 }
"#;

fn fixture(dir: &Path) -> (String, String) {
    let ds = dir.join("ds.clds");
    let out = cli(&["gen", "--classes", "10", "--per-class", "12", "--dim", "4", "--seed", "5", "-o", ds.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = dir.join("fast.toml");
    fs::write(&cfg, FAST).unwrap();
    (ds.to_string_lossy().into_owned(), cfg.to_string_lossy().into_owned())
}

#[test]
fn gen_writes_requested_sample_count() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("ds.clds");
    let out = cli(&["gen", "--classes", "20", "--per-class", "50", "--dim", "16", "--seed", "7", "-o", path.to_str().unwrap()]);
    assert!(out.status.success());
    let ds = bimodal_cl::data::load(&path).unwrap();
    assert_eq!(ds.samples.len(), 1000);
    assert_eq!((ds.num_classes, ds.input_dim), (20, 16));
    assert!(String::from_utf8_lossy(&out.stdout).contains("1000 samples"));
}

#[test]
fn gen_same_seed_same_file() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.clds");
    let b = tmp.path().join("b.clds");
    let c = tmp.path().join("c.clds");
    for (p, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        assert!(cli(&["gen", "--classes", "5", "--per-class", "9", "--dim", "3", "--seed", seed, "-o", p.to_str().unwrap()])
            .status
            .success());
    }
    assert_eq!(sha(&a), sha(&b));
    assert_ne!(sha(&a), sha(&c));
}

#[test]
fn gen_domains_and_csv_export() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("d.clds");
    let csv = tmp.path().join("d.csv");
    let out = cli(&[
        "gen", "--classes", "3", "--per-class", "4", "--dim", "2", "--domains", "3", "--shift", "mean-offset",
        "--magnitude", "2", "-o", path.to_str().unwrap(), "--csv", csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ds = bimodal_cl::data::load(&path).unwrap();
    assert_eq!(ds.num_domains(), 3);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 36);
}

#[test]
fn invalid_arguments_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("x.clds");
    let out = cli(&["gen", "--classes", "5", "--per-class", "5", "--dim", "0", "-o", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert!(!path.exists());
    assert_eq!(cli(&["gen", "--classes", "5"]).status.code(), Some(2));
    assert_eq!(cli(&["gen", "--classes", "2", "--per-class", "2", "--dim", "2", "--domains", "2", "--shift", "warp", "-o", path.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn run_error_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, cfg) = fixture(tmp.path());
    let out_dir = tmp.path().join("runs");
    let out_dir = out_dir.to_str().unwrap();

    let bad_cfg = tmp.path().join("bad.toml");
    fs::write(&bad_cfg, "[run]\nepochs = 3\n").unwrap();
    let o = cli(&["run", "--config", bad_cfg.to_str().unwrap(), "--data", &ds, "--out", out_dir]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let o = cli(&["run", "--config", &cfg, "--data", &ds, "--out", out_dir, "--method", "nope"]);
    assert_eq!(o.status.code(), Some(2));

    let missing = tmp.path().join("missing.clds");
    let o = cli(&["run", "--config", &cfg, "--data", missing.to_str().unwrap(), "--out", out_dir]);
    assert_eq!(o.status.code(), Some(3));

    let garbage = tmp.path().join("garbage.clds");
    fs::write(&garbage, b"not a dataset").unwrap();
    let o = cli(&["run", "--config", &cfg, "--data", garbage.to_str().unwrap(), "--out", out_dir]);
    assert_eq!(o.status.code(), Some(3));

    let hot = tmp.path().join("hot.toml");
    fs::write(&hot, format!("{FAST}\n[run.optimizer]\nmode = \"momentum-sgd\"\nlr = 1e308\nbeta1 = 1.0\n")).unwrap();
    let o = cli(&["run", "--config", hot.to_str().unwrap(), "--data", &ds, "--out", out_dir, "--method", "gcl"]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_is_byte_deterministic_and_self_describing() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, cfg) = fixture(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = cli(&["run", "--config", &cfg, "--data", &ds, "--out", out.to_str().unwrap(), "--method", "gdro", "--memory", "20"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let run = "gdro-m20-s0";
    for f in ["accuracy.csv", "curve.csv", "log.jsonl", "curve.svg", "run.json"] {
        assert_eq!(fs::read(a.join(run).join(f)).unwrap(), fs::read(b.join(run).join(f)).unwrap(), "{f}");
    }
    let curve = fs::read_to_string(a.join(run).join("curve.csv")).unwrap();
    assert!(curve.starts_with("# method=gdro memory=20 seed=0 config_sha256="));
    assert_eq!(bimodal_cl::report::parse_curve_csv(&curve).unwrap().len(), 5);
    let acc = fs::read_to_string(a.join(run).join("accuracy.csv")).unwrap();
    assert_eq!(acc.lines().count(), 2 + 15);
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, cfg) = fixture(tmp.path());
    let env_out = tmp.path().join("env-out");
    let o = Command::new(BIN)
        .args(["run", "--config", &cfg, "--data", &ds, "--method", "zero-shot"])
        .env("BIMODAL_CL_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(env_out.join("zero-shot-m20-s0").join("curve.csv").exists());
}

#[test]
fn zero_shot_curve_is_flat_on_a_domain_stream() {
    // Zero-shot evaluates one fixed model; on a domain-incremental stream the
    // candidate set is fixed, so every stage sees the same predictions and
    // the per-domain accuracies never change.
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("d.clds");
    assert!(cli(&["gen", "--classes", "4", "--per-class", "10", "--dim", "3", "--domains", "3", "-o", ds.to_str().unwrap()])
        .status
        .success());
    let cfg = tmp.path().join("dil.toml");
    fs::write(&cfg, "[split]\nprotocol = \"dil\"\n[run]\nmethod = \"zero-shot\"\n").unwrap();
    let out = tmp.path().join("runs");
    let o = cli(&["run", "--config", cfg.to_str().unwrap(), "--data", ds.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acc = fs::read_to_string(out.join("zero-shot-m100-s0").join("accuracy.csv")).unwrap();
    let mut per_task: std::collections::BTreeMap<String, Vec<String>> = Default::default();
    for line in acc.lines().skip(2) {
        let f: Vec<&str> = line.split(',').collect();
        per_task.entry(f[1].to_string()).or_default().push(f[2].to_string());
    }
    for vals in per_task.values() {
        assert!(vals.windows(2).all(|w| w[0] == w[1]), "{vals:?}");
    }
}

#[test]
fn zero_shot_takes_no_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, cfg) = fixture(tmp.path());
    let out = tmp.path().join("runs");
    let o = cli(&["run", "--config", &cfg, "--data", &ds, "--out", out.to_str().unwrap(), "--method", "zero-shot", "--memory", "0"]);
    assert!(o.status.success());
    let log = fs::read_to_string(out.join("zero-shot-m0-s0").join("log.jsonl")).unwrap();
    assert!(log.is_empty(), "zero-shot takes no optimizer steps");
}

#[test]
fn compare_reports_mean_and_sample_std() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, cfg) = fixture(tmp.path());
    let out = tmp.path().join("runs");
    let outs = out.to_str().unwrap();
    let mut dirs = Vec::new();
    for method in ["gdro", "finetune-ce"] {
        for seed in ["0", "1", "2"] {
            let o = cli(&["run", "--config", &cfg, "--data", &ds, "--out", outs, "--method", method, "--seed", seed]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            dirs.push(out.join(format!("{method}-m20-s{seed}")));
        }
    }
    let report = tmp.path().join("report");
    let mut args = vec!["compare".to_string()];
    args.extend(dirs.iter().map(|d| d.to_string_lossy().into_owned()));
    args.extend(["--out".to_string(), report.to_string_lossy().into_owned()]);
    let o = cli(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let table = fs::read_to_string(report.join("compare.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(report.join("compare.svg").exists());

    // independent recomputation from the raw curve CSVs
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let finals: Vec<f64> = dirs
            .iter()
            .filter(|d| d.file_name().unwrap().to_string_lossy().starts_with(&format!("{}-m", f[0])))
            .map(|d| {
                let text = fs::read_to_string(d.join("curve.csv")).unwrap();
                let last = text.lines().last().unwrap();
                last.split(',').nth(1).unwrap().parse::<f64>().unwrap()
            })
            .collect();
        assert_eq!(finals.len(), 3);
        let mean = finals.iter().sum::<f64>() / 3.0;
        let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0;
        assert!((f[3].parse::<f64>().unwrap() - mean).abs() < 1e-12);
        assert!((f[4].parse::<f64>().unwrap() - var.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn compare_with_itself_has_zero_std_and_rejects_other_streams() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, cfg) = fixture(tmp.path());
    let out = tmp.path().join("runs");
    let o = cli(&["run", "--config", &cfg, "--data", &ds, "--out", out.to_str().unwrap(), "--method", "finetune-ce"]);
    assert!(o.status.success());
    let run = out.join("finetune-ce-m20-s0");
    let report = tmp.path().join("report");
    let o = cli(&["compare", run.to_str().unwrap(), run.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert!(o.status.success());
    let table = fs::read_to_string(report.join("compare.csv")).unwrap();
    let row: Vec<&str> = table.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[2], "2");
    assert_eq!(row[4].parse::<f64>().unwrap(), 0.0);

    // a different split seed is a different stream
    let other_cfg = tmp.path().join("other.toml");
    fs::write(&other_cfg, FAST.replace("seed = 3", "seed = 4")).unwrap();
    let other = tmp.path().join("other");
    let o = cli(&["run", "--config", other_cfg.to_str().unwrap(), "--data", &ds, "--out", other.to_str().unwrap(), "--method", "finetune-ce"]);
    assert!(o.status.success());
    let o = cli(&[
        "compare",
        run.to_str().unwrap(),
        other.join("finetune-ce-m20-s0").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("incompatible runs"));

    assert_eq!(cli(&["compare", run.to_str().unwrap()]).status.code(), Some(2));
}
