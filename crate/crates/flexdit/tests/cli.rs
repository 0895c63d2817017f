//! Command-layer integration: library command functions plus the binary's
//! exit-code contract.

use flexdit::commands::{cmd_eval, cmd_report, cmd_sample, cmd_train, EvalArgs, SampleArgs};
use flexdit::config::RunConfig;
use flexdit::flow::OdeMethod;
use std::fs;
use std::path::Path;
use std::process::Command;

fn tiny_config(out: &Path) -> RunConfig {
    let text = format!(
        r#"
model.layers = 1
model.hidden = 32
model.heads = 2
model.max_tokens = 16
model.num_classes = 4
model.lora_rank = 8
flow.sampler = "uniform"
train.steps = 25
train.batch = 4
train.lr = 0.001
train.ema = 0.99
data.count = 48
data.classes = 4
data.resolutions = "8x8:0.6,4x8:0.4"
seed = 11
out = "{}"
"#,
        out.display()
    );
    RunConfig::parse_str(&text).unwrap()
}

#[test]
fn train_sample_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());

    let out = cmd_train(&cfg, |_| {}).unwrap();
    assert!(out.ckpt_dir.join("manifest").exists());
    assert!(out.trace_path.exists());
    let csv = fs::read_to_string(&out.trace_path).unwrap();
    assert!(csv.starts_with("step,loss,lr\n"));
    assert_eq!(csv.lines().count(), 26); // header + 25 steps
    assert!(dir.path().join("run.config").exists());

    // the persisted config parses back
    let persisted = fs::read_to_string(dir.path().join("run.config")).unwrap();
    let reparsed = RunConfig::parse_str(&persisted).unwrap();
    assert_eq!(reparsed.model, cfg.model);

    // sampling writes records, previews and metadata
    let mut args = SampleArgs::new(
        out.ckpt_dir.clone(),
        8,
        16,
        dir.path().join("samples"),
    );
    args.n = 3;
    args.ode = OdeMethod::Euler { steps: 4 };
    args.ppm = true;
    args.seed = 9;
    let sout = cmd_sample(&args).unwrap();
    assert_eq!(sout.paths.len(), 3);
    assert!(sout.warned, "8x16 at budget 16 without a method must warn");
    assert!(dir.path().join("samples/metadata").exists());
    assert!(dir.path().join("samples/0000.ppm").exists());
    let meta = fs::read_to_string(dir.path().join("samples/metadata")).unwrap();
    assert!(meta.contains("method none"));
    assert!(meta.contains("out_of_budget true"));

    // identical seeds reproduce sample files byte for byte
    let args2 = SampleArgs {
        out: dir.path().join("samples2"),
        ..args
    };
    cmd_sample(&args2).unwrap();
    let a = fs::read(dir.path().join("samples/0000.sample")).unwrap();
    let b = fs::read(dir.path().join("samples2/0000.sample")).unwrap();
    assert_eq!(a, b);

    // eval produces a valid CSV with one row per (resolution, metric)
    let eargs = EvalArgs {
        ckpt: out.ckpt_dir.clone(),
        dataset: dir.path().join("dataset"),
        resolutions: vec![(8, 8), (4, 8)],
        out: dir.path().join("eval"),
        per_class: 2,
        seed: 3,
        use_ema: true,
    };
    let rows = cmd_eval(&eargs).unwrap();
    assert!(rows.iter().any(|r| r.metric == "val_loss" && r.resolution == (8, 8)));
    assert!(rows.iter().any(|r| r.metric == "energy_distance" && r.resolution == (4, 8)));
    let csv = fs::read_to_string(dir.path().join("eval/eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("resolution,metric,value"));
    for line in lines {
        assert_eq!(line.split(',').count(), 3, "bad csv line {line}");
    }
    assert_eq!(csv.lines().count(), rows.len() + 1);
}

#[test]
fn train_same_seed_identical_traces() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let out_a = cmd_train(&tiny_config(dir_a.path()), |_| {}).unwrap();
    let out_b = cmd_train(&tiny_config(dir_b.path()), |_| {}).unwrap();
    for (a, b) in out_a.trace.iter().zip(&out_b.trace) {
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }
}

#[test]
fn missing_dataset_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.data.path = Some(dir.path().join("nowhere"));
    let err = cmd_train(&cfg, |_| {}).err().expect("should fail").to_string();
    assert!(err.contains("nowhere"), "{err}");
}

#[test]
fn resume_mismatch_refused_with_diff() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = cmd_train(&cfg, |_| {}).unwrap();

    let dir2 = tempfile::tempdir().unwrap();
    let mut cfg2 = tiny_config(dir2.path());
    cfg2.model.hidden = 64;
    cfg2.model.heads = 4;
    cfg2.train.resume = Some(out.ckpt_dir.clone());
    let err = cmd_train(&cfg2, |_| {}).err().expect("should refuse").to_string();
    assert!(err.contains("hidden"), "{err}");
    assert!(err.contains("checkpoint 32"), "{err}");
}

#[test]
fn report_presets() {
    let rows = cmd_report(&["b", "xl", "3b"], None, 256).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].config.layers, 15);
    assert_eq!(rows[1].config.hidden, 1152);
    assert!((rows[0].params as f64 / 1e6 - 128.0).abs() < 6.0);
    assert!((rows[2].gflops - 653.0).abs() / 653.0 < 0.10);
}

// ── binary-level exit codes ──────────────────────────────────────────

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flexdit"))
}

#[test]
fn exit_codes() {
    // 0: success
    let ok = bin().args(["report", "--preset", "b"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("768"), "{stdout}");

    // 2: config error (unknown key)
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "model.bogus = 1\n").unwrap();
    let cfgerr = bin()
        .args(["--config", bad_cfg.to_str().unwrap(), "train"])
        .output()
        .unwrap();
    assert_eq!(cfgerr.status.code(), Some(2));

    // 3: data error (missing dataset path)
    let cfg = dir.path().join("missing_data.toml");
    fs::write(
        &cfg,
        format!(
            "model.layers = 1\nmodel.hidden = 32\nmodel.heads = 2\nmodel.max_tokens = 16\n\
             model.num_classes = 4\nmodel.lora_rank = 8\ntrain.steps = 1\n\
             data.path = \"{}\"\ndata.resolutions = \"8x8:1.0\"\ndata.count = 8\n\
             data.classes = 4\nout = \"{}\"\n",
            dir.path().join("absent").display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let dataerr = bin().args(["--config", cfg.to_str().unwrap(), "train"]).output().unwrap();
    assert_eq!(dataerr.status.code(), Some(3), "{}", String::from_utf8_lossy(&dataerr.stderr));

    // 3: data error (missing checkpoint for sample)
    let samperr = bin()
        .args([
            "sample",
            "--ckpt",
            dir.path().join("no_ckpt").to_str().unwrap(),
            "--height",
            "8",
            "--width",
            "8",
        ])
        .output()
        .unwrap();
    assert_eq!(samperr.status.code(), Some(3));

    // 2: deterministic mode rejects the adaptive solver
    let det = bin()
        .args([
            "--deterministic",
            "sample",
            "--ckpt",
            "x",
            "--height",
            "8",
            "--width",
            "8",
            "--ode",
            "adaptive",
        ])
        .output()
        .unwrap();
    assert_eq!(det.status.code(), Some(2));
}
