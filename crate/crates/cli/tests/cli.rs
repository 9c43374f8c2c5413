use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn duoreid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_duoreid"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = duoreid(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--preset",
    "separable",
    "--identities",
    "6",
    "--samples-per-modality",
    "8",
    "--epochs",
    "2",
    "--warmup-epochs",
    "1",
];

#[test]
fn generate_train_eval_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    let run = dir.path().join("run");
    let mut gen = vec!["generate", "--out", p(&data)];
    gen.extend(SMALL);
    ok(&gen);
    assert_eq!(fs::read_to_string(&data).unwrap().lines().count(), 96);

    let mut tr = vec!["train", "--dataset", p(&data), "--out-dir", p(&run)];
    tr.extend(SMALL);
    let line = ok(&tr);
    assert!(line.contains("I->V rank1"), "{line}");
    for f in [
        "checkpoint.json",
        "runlog.json",
        "metrics.json",
        "settings.txt",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let metrics = dir.path().join("eval.json");
    let ck = run.join("checkpoint.json");
    ok(&[
        "eval",
        "--checkpoint",
        p(&ck),
        "--dataset",
        p(&data),
        "--mode",
        "b",
        "--out",
        p(&metrics),
    ]);
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&metrics).unwrap()).unwrap();
    let r1 = v["infrared_to_visible"]["rank1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&r1));

    let exp = dir.path().join("exp");
    let log = run.join("runlog.json");
    let listed = ok(&[
        "export",
        "--run-log",
        p(&log),
        "--dataset",
        p(&data),
        "--out-dir",
        p(&exp),
        "--bins",
        "5",
    ]);
    for f in [
        "histograms.csv",
        "separation.csv",
        "mismatch.csv",
        "matchings.csv",
    ] {
        assert!(listed.contains(f), "{f} not reported");
    }
    let hist = fs::read_to_string(exp.join("histograms.csv")).unwrap();
    // Header plus 5 bins for each of 2 epochs.
    assert_eq!(hist.lines().count(), 11);
}

#[test]
fn settings_precedence_file_then_flags_then_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "identities = 3\nsamples-per-modality = 2\ndim = 4\n").unwrap();
    let out = dir.path().join("d.jsonl");
    ok(&[
        "generate",
        "--config",
        p(&cfg),
        "--identities",
        "5",
        "--out",
        p(&out),
    ]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 20);
    ok(&[
        "generate",
        "--config",
        p(&cfg),
        "--identities",
        "5",
        "--set",
        "identities=4",
        "--out",
        p(&out),
    ]);
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 16);
}

#[test]
fn bad_settings_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.jsonl");
    let r = duoreid(&["generate", "--set", "bogus=1", "--out", p(&out)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("unknown setting"));
    let r = duoreid(&[
        "generate",
        "--seed-a",
        "3",
        "--seed-b",
        "3",
        "--out",
        p(&out),
    ]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("distinct seeds"));
}

#[test]
fn ablate_and_sweep_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["ablate", "--seeds", "0"];
    args.extend(SMALL);
    let out_dir = dir.path().join("abl");
    args.extend(["--out-dir", p(&out_dir)]);
    let table = ok(&args);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "setting,rank1,map,minp");
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().any(|r| r.starts_with("no-ccm-cross-model,")));
    assert!(out_dir.join("ablation.csv").exists());
    assert!(out_dir.join("full-seed0.json").exists());

    let mut sweep = vec!["sweep-gamma", "--seeds", "0", "--gammas", "0.5,1.0"];
    sweep.extend(SMALL);
    let table = ok(&sweep);
    let labels: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(labels, ["gamma=0.5", "gamma=1", "adaptive"]);
}
