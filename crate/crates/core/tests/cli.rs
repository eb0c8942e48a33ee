use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_losspaint");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small_paint(outdir: &Path, extra: &[&str]) -> Output {
    let outdir = outdir.to_str().unwrap();
    let mut args = vec![
        "paint",
        "--dataset",
        "synth:classes=4,per_class=10,d=4,seed=0",
        "--pattern",
        "ramp:2",
        "--widths",
        "8,8",
        "--epochs",
        "3",
        "--samples-per-epoch",
        "64",
        "--resolution",
        "6",
        "--outdir",
        outdir,
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn paint_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_paint(dir.path(), &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "checkpoint.lpnet",
        "metadata.json",
        "grid.csv",
        "surface.pgm",
        "report.txt",
        "report.json",
        "config.resolved.toml",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let grid = fs::read_to_string(dir.path().join("grid.csv")).unwrap();
    assert_eq!(grid.lines().next(), Some("alpha0,alpha1,value0"));
    assert_eq!(grid.lines().count(), 1 + 36);
    let bytes = fs::read(dir.path().join("checkpoint.lpnet")).unwrap();
    assert!(bytes.starts_with(b"LPNET1"));
}

#[test]
fn failed_threshold_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = small_paint(dir.path(), &["--untrained", "--threshold", "0"]);
    assert_eq!(code(&out), 2);
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("FAIL"));
}

#[test]
fn duplicate_inputs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("dup.csv");
    fs::write(&csv, "x0,x1,y0\n0.5,0.5,1\n0.5,0.5,0\n0.1,0.9,1\n").unwrap();
    let desc = format!("csv:{}", csv.display());
    let outdir = dir.path().join("out");
    let out = run(&[
        "paint-min",
        "--dataset",
        &desc,
        "--pattern",
        "bimodal",
        "--widths",
        "8",
        "--epochs",
        "1",
        "--outdir",
        outdir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn transfer_between_matched_datasets_passes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_paint(dir.path(), &[])), 0);
    let outdir = dir.path().join("transfer");
    let ckpt = dir.path().join("checkpoint.lpnet");
    let out = run(&[
        "transfer",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--dataset-a",
        "synth:classes=4,per_class=10,d=4,seed=0",
        "--dataset-b",
        "synth:classes=4,per_class=10,d=4,seed=5",
        "--resolution",
        "6",
        "--outdir",
        outdir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    // Same label moments, so only summation-order rounding may differ.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(outdir.join("transfer.json")).unwrap()).unwrap();
    assert!(report["max_abs_difference"].as_f64().unwrap() <= 1e-12);
    assert_eq!(report["passed"], true);
}

#[test]
fn render_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_paint(dir.path(), &[])), 0);
    let grid = dir.path().join("grid.csv");
    let a = dir.path().join("a.pgm");
    let b = dir.path().join("b.pgm");
    for target in [&a, &b] {
        let out = run(&["render", grid.to_str().unwrap(), target.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(&a).unwrap(),
        fs::read(dir.path().join("surface.pgm")).unwrap()
    );
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "epochs = 50\nwidths = [8, 8]\nresolution = 4\n").unwrap();
    let out = run(&[
        "paint",
        "--config",
        cfg.to_str().unwrap(),
        "--epochs",
        "2",
        "--samples-per-epoch",
        "32",
        "--dataset",
        "synth:classes=2,per_class=5,d=2",
        "--outdir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = fs::read_to_string(dir.path().join("config.resolved.toml")).unwrap();
    assert!(resolved.contains("epochs = 2"));
    assert!(resolved.contains("resolution = 4"));
}

#[test]
fn bad_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&small_paint(dir.path(), &["--loss", "hinge"])), 1);
    assert_eq!(code(&run(&["paint", "--no-such-flag"])), 1);
}

#[test]
fn verify_passes() {
    let out = run(&["verify"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(table.matches("PASS").count(), 7);
}
