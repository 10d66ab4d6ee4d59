use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gatedclip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gatedclip"))
        .args(args)
        .output()
        .expect("spawn gatedclip")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn no_arguments_is_a_usage_error() {
    let o = gatedclip(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_exits_zero_everywhere() {
    assert_eq!(gatedclip(&["--help"]).status.code(), Some(0));
    for sub in [
        "gen-synthetic",
        "train",
        "eval",
        "predict",
        "analyze-gates",
        "inspect",
    ] {
        assert_eq!(gatedclip(&[sub, "--help"]).status.code(), Some(0), "{sub}");
    }
}

#[test]
fn bad_flags_and_values_are_usage_errors() {
    assert_eq!(
        gatedclip(&["inspect", "--data", "x", "--nope"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(gatedclip(&["frobnicate"]).status.code(), Some(1));
    let o = gatedclip(&[
        "gen-synthetic",
        "--out",
        "x",
        "--n",
        "10",
        "--mode",
        "diagonal",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(gatedclip(&["train", "--val", "v"]).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.gceb");
    assert_eq!(
        gatedclip(&["inspect", "--data", p(&missing)]).status.code(),
        Some(2)
    );
    let junk = dir.path().join("junk.gceb");
    fs::write(&junk, b"XXXXjunkjunkjunk").unwrap();
    let o = gatedclip(&["inspect", p(&junk)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("magic"));
    // invalid synthetic parameters are caught by the library, not the parser
    let out = dir.path().join("d.gceb");
    let o = gatedclip(&[
        "gen-synthetic",
        "--out",
        p(&out),
        "--n",
        "1",
        "--mode",
        "xor",
        "--seed",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.geb");
    let o = gatedclip(&[
        "gen-synthetic",
        "--n",
        "100",
        "--mode",
        "xor",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for args in [vec!["inspect", p(&out)], vec!["inspect", "--data", p(&out)]] {
        let o = gatedclip(&args);
        assert_eq!(o.status.code(), Some(0));
        let s = stdout(&o);
        assert!(s.contains("count: 100"), "{s}");
        assert!(s.contains("dim: 512"), "{s}");
        assert!(s.contains("version: 2"), "{s}");
        assert!(s.contains("labels: benign=50 hateful=50"), "{s}");
    }
}

fn write_small_setup(dir: &Path) -> std::path::PathBuf {
    let gen = gatedclip(&[
        "gen-synthetic",
        "--n",
        "200",
        "--val-n",
        "100",
        "--mode",
        "single_modality",
        "--dim",
        "16",
        "--seed",
        "3",
        "--out",
        p(&dir.join("train.gceb")),
        "--val-out",
        p(&dir.join("val.gceb")),
    ]);
    assert_eq!(
        gen.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&gen.stderr)
    );
    let config = dir.join("c.json");
    fs::write(
        &config,
        r#"{
  "train": "train.gceb",
  "val": "val.gceb",
  "max_epochs": 3,
  "patience": 2,
  "warmup_epochs": 1,
  "peak_lr": 0.003,
  "proj_hidden": 16,
  "proj_out": 8,
  "gate_hidden": 8,
  "cls_hidden": 8
}
"#,
    )
    .unwrap();
    config
}

#[test]
fn train_is_byte_reproducible_and_artifacts_work() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_setup(dir.path());
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = gatedclip(&[
            "train",
            "--config",
            p(&config),
            "--seed",
            "7",
            "--out-dir",
            p(&out),
            "--quiet",
        ]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(stdout(&o).contains("best val_auroc"));
        out
    };
    let (a, b) = (run("a"), run("b"));
    let ma = fs::read(a.join("metrics.jsonl")).unwrap();
    assert!(!ma.is_empty());
    assert_eq!(ma, fs::read(b.join("metrics.jsonl")).unwrap());
    assert!(a.join("timing.jsonl").exists());
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 7);
    assert_eq!(resolved["model"]["dim_in"], 16);

    let ck = a.join("best.gcck");
    let val = dir.path().join("val.gceb");

    let o = gatedclip(&["eval", "--data", p(&val), "--checkpoint", p(&ck)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s = stdout(&o);
    let auroc: f64 = s
        .lines()
        .find_map(|l| l.strip_prefix("auroc: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&auroc));
    assert!(s.contains("n: 100"));

    let scores = dir.path().join("scores.csv");
    let o = gatedclip(&[
        "predict",
        "--data",
        p(&val),
        "--checkpoint",
        p(&ck),
        "--out",
        p(&scores),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(&scores).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("id,score"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 100);
    assert!(rows.iter().all(|r| {
        let s: f64 = r.split(',').nth(1).unwrap().parse().unwrap();
        (0.0..=1.0).contains(&s)
    }));

    let gates = dir.path().join("gates.csv");
    let o = gatedclip(&[
        "analyze-gates",
        "--data",
        p(&val),
        "--checkpoint",
        p(&ck),
        "--out",
        p(&gates),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("group_mean[meta:image_signal]"));
    let text = fs::read_to_string(&gates).unwrap();
    assert!(text.starts_with("id,label,meta_tag,g\n"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 101);
}

#[test]
fn baseline_checkpoint_has_no_gates() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_small_setup(dir.path());
    let out = dir.path().join("base");
    let o = gatedclip(&[
        "train",
        "--config",
        p(&config),
        "--model",
        "baseline",
        "--out-dir",
        p(&out),
        "--quiet",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let o = gatedclip(&[
        "analyze-gates",
        "--data",
        p(&dir.path().join("val.gceb")),
        "--checkpoint",
        p(&out.join("best.gcck")),
        "--out",
        p(&dir.path().join("g.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
