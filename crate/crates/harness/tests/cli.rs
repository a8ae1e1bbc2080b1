use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dpscale::config::{DataConfig, ExperimentConfig, ModelConfig, SweepConfig};
use dpscale::data::load;
use dpscale::tune::{fixed_eps_sweep_on, tune_on, TuneReport};
use dpscale_core::accountant::compute_epsilon;
use serde_json::Value;

fn dpscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpscale"))
        .args(args)
        .env_remove("DPSCALE_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("one JSON document")
}

fn scratch_dir(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("dpscale-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn separable(n: usize) -> DataConfig {
    DataConfig::GaussianMixture {
        n,
        d: 10,
        classes: 2,
        separation: 8.0,
        test_fraction: 0.25,
        seed: 1,
    }
}

#[test]
fn epsilon_command_prints_one_json_line() {
    let out = dpscale(&["accountant", "epsilon", "--sigma", "1.5", "--q", "0.01", "--steps", "10000", "--delta", "1e-5"]);
    let v = stdout_json(&out);
    let eps = v["epsilon"].as_f64().unwrap();
    assert!((eps / 3.45 - 1.0).abs() < 0.1, "{eps}");
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);
    assert!(v["order"].as_f64().unwrap() > 1.0);
}

#[test]
fn sigma_then_epsilon_round_trips() {
    let v = stdout_json(&dpscale(&["accountant", "sigma", "--epsilon", "10", "--q", "0.01", "--steps", "5000", "--delta", "1e-5"]));
    let sigma = v["sigma"].as_f64().unwrap().to_string();
    let back = stdout_json(&dpscale(&["accountant", "epsilon", "--sigma", &sigma, "--q", "0.01", "--steps", "5000", "--delta", "1e-5"]));
    assert!((back["epsilon"].as_f64().unwrap() / 10.0 - 1.0).abs() < 1e-3);
}

#[test]
fn curves_are_csv_with_headers() {
    let out = dpscale(&[
        "accountant", "batch-curve", "--base-sigma", "0.5", "--base-batch", "1024", "--n", "1281167", "--steps", "2000",
        "--delta", "1e-6", "--batches", "1024,4096,16384,65536,262144,1048576",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("batch_size,epsilon"));
    let eps: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(eps.len(), 6);
    assert!(eps.windows(2).all(|w| w[1] < w[0]));

    let out = dpscale(&["accountant", "delta-curve", "--sigma", "1", "--q", "0.01", "--steps", "1000", "--points", "5"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("delta,epsilon\n"));
    let eps: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(eps.windows(2).all(|w| w[1] <= w[0]), "ε is non-increasing in δ");
}

#[test]
fn bad_arguments_fail_with_error_json_or_usage() {
    let out = dpscale(&["accountant", "epsilon", "--sigma", "1", "--q", "0.01", "--steps", "10", "--delta", "1.5"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "invalid_argument");

    let out = dpscale(&["accountant", "epsilon", "--sigma", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unreachable_target_is_reported() {
    // The largest order bounds ε below by log(1/δ)/255 whatever the noise.
    let out = dpscale(&["accountant", "sigma", "--epsilon", "0.01", "--q", "1", "--steps", "1", "--delta", "1e-5"]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "privacy_target_unreachable");
}

#[test]
fn nonprivate_logistic_regression_separates() {
    let dir = scratch_dir("nonprivate");
    let mut cfg = ExperimentConfig::example().non_private().with_epochs(5.0);
    cfg.data = separable(2000);
    cfg.model = ModelConfig::Logistic;
    let path = write_config(&dir, &cfg);
    let v = stdout_json(&dpscale(&["train", "--config", path.to_str().unwrap(), "--out", dir.join("run").to_str().unwrap()]));
    assert!(v["test_accuracy"].as_f64().unwrap() >= 0.99);
    assert!(v["privacy"].is_null());
}

#[test]
fn private_runs_hit_the_target_and_reproduce_from_their_record() {
    let dir = scratch_dir("repro");
    let mut cfg = ExperimentConfig::example();
    cfg.data = separable(3000);
    cfg.model = ModelConfig::Mlp {
        hidden: vec![8],
        activation: Default::default(),
    };
    cfg.optimizer.virtual_steps = 2;
    cfg.optimizer.batch_size = 64;
    cfg.optimizer.shards = 4;
    let path = write_config(&dir, &cfg);
    let a = dir.join("a");
    let b = dir.join("b");
    let v = stdout_json(&dpscale(&["train", "--config", path.to_str().unwrap(), "--out", a.to_str().unwrap()]));
    let p = &v["privacy"];
    assert!((p["epsilon"].as_f64().unwrap() / 10.0 - 1.0).abs() < 1e-3);

    // The ε in the record is recomputable from its own (σ, q, steps, δ).
    let recomputed = compute_epsilon(
        p["sigma"].as_f64().unwrap(),
        p["q"].as_f64().unwrap(),
        p["steps"].as_u64().unwrap(),
        p["delta"].as_f64().unwrap(),
    )
    .unwrap();
    assert_eq!(recomputed, p["epsilon"].as_f64().unwrap());

    // Re-running from the embedded snapshot gives byte-identical metrics.
    let record = a.join("run.json");
    stdout_json(&dpscale(&["train", "--config", record.to_str().unwrap(), "--out", b.to_str().unwrap()]));
    let ma = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("metrics.csv")).unwrap());
    assert!(String::from_utf8(ma).unwrap().starts_with("epoch,step,train_loss,train_accuracy,test_loss,test_accuracy,epsilon\n"));
    assert!(a.join("params.ckpt").is_file());

    // A different seed changes the run.
    let c = dir.join("c");
    stdout_json(&dpscale(&["train", "--config", path.to_str().unwrap(), "--set", "seed=9", "--out", c.to_str().unwrap()]));
    assert_ne!(std::fs::read(a.join("metrics.csv")).unwrap(), std::fs::read(c.join("metrics.csv")).unwrap());
}

#[test]
fn missing_dataset_is_a_structured_error() {
    let dir = scratch_dir("missing");
    let mut cfg = ExperimentConfig::example();
    cfg.data = DataConfig::Cifar10 { train_subset: None };
    let path = write_config(&dir, &cfg);
    let out = dpscale(&["train", "--config", path.to_str().unwrap()]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "dataset_missing");
}

#[test]
fn finetune_accounts_only_for_the_private_phase() {
    let dir = scratch_dir("finetune");
    let mut cfg = ExperimentConfig::example();
    cfg.model = ModelConfig::Mlp {
        hidden: vec![8, 8],
        activation: Default::default(),
    };
    cfg.data = separable(2000);
    cfg.optimizer.batch_size = 100;
    cfg.freeze.frozen_prefix = 2;
    cfg.finetune = Some(dpscale::config::FinetuneConfig {
        public_fraction: 0.3,
        pretrain_epochs: 2.0,
        pretrain_lr: 0.1,
        pretrain_batch_size: None,
        compare_scratch: false,
    });
    let cfg = cfg.with_epochs(2.0);
    let path = write_config(&dir, &cfg);
    let out = dir.join("out");
    let v = stdout_json(&dpscale(&["finetune", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert_eq!(v["frozen_unchanged"], true);
    assert!(v["pretrain"]["privacy"].is_null());
    let ft = &v["finetune"];
    assert_eq!(ft["privacy"]["steps"], ft["steps"]);
    // 1400 private examples at batch 100 for 2 epochs.
    assert_eq!(ft["steps"], 28);
    assert!((ft["privacy"]["q"].as_f64().unwrap() - 100.0 / 1400.0).abs() < 1e-15);
    assert!(out.join("finetune").join("metrics.csv").is_file());
}

fn tune_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::example();
    cfg.data = separable(2000);
    cfg.model = ModelConfig::Logistic;
    cfg.optimizer.batch_size = 100;
    cfg.optimizer.momentum = 0.0;
    cfg.output_dir = Some(dir.to_path_buf());
    cfg.sweep = Some(SweepConfig {
        learning_rates: vec![0.05, 0.2, 0.8],
        clip_norms: vec![0.01, 0.1, 1.0, 1e3, 1e4],
        reference_lr: Some(0.2),
        workers: 2,
        ..SweepConfig::default()
    });
    cfg.with_epochs(2.0)
}

/// The chosen C is the smallest one within one accuracy point of the unclipped run.
fn smallest_close_clip(r: &TuneReport) -> bool {
    let floor = r.reference_accuracy - 0.01;
    r.clip_sweep.iter().all(|c| {
        let close = c.test_accuracy >= floor;
        match c.clip_norm.unwrap().total_cmp(&r.chosen_clip) {
            std::cmp::Ordering::Less => !close,
            std::cmp::Ordering::Equal => close,
            std::cmp::Ordering::Greater => true,
        }
    })
}

#[test]
fn tune_follows_the_four_steps() {
    let dir = scratch_dir("tune");
    let cfg = tune_config(&dir);
    let splits = load(&cfg.data).unwrap();
    let r = tune_on(&cfg, &splits).unwrap();
    assert_eq!(r.reference_lr, 0.2);

    // At σ = 0 clipping only removes signal: accuracy does not fall as C grows,
    // and every C above the largest gradient norm is the unclipped run.
    let acc: Vec<f64> = r.clip_sweep.iter().map(|c| c.test_accuracy).collect();
    assert!(acc.windows(2).all(|w| w[1] >= w[0]), "{acc:?}");
    assert_eq!(acc[3], acc[4]);
    assert_eq!(acc[4], r.reference_accuracy);

    assert!(smallest_close_clip(&r));
    assert_eq!(r.heatmap.len(), 15);
    assert!(r.heatmap.iter().all(|c| c.epsilon.is_some_and(|e| (e / 10.0 - 1.0).abs() < 1e-3)));
    let csv = std::fs::read_to_string(dir.join("heatmap.csv")).unwrap();
    assert!(csv.starts_with("clip_norm,learning_rate,test_accuracy,epsilon,best\n"));
    assert_eq!(csv.lines().filter(|l| l.ends_with(",1")).count(), 1);

    // Identical results from a serial run.
    let mut serial = cfg.clone();
    serial.sweep.as_mut().unwrap().workers = 1;
    serial.output_dir = None;
    assert_eq!(tune_on(&serial, &splits).unwrap(), r);
}

#[test]
fn infeasible_clip_sweep_is_reported() {
    let dir = scratch_dir("infeasible");
    let mut cfg = tune_config(&dir);
    let sweep = cfg.sweep.as_mut().unwrap();
    sweep.clip_norms = vec![1e-9];
    sweep.tolerance = 0.0;
    cfg.data = DataConfig::GaussianMixture {
        n: 2000,
        d: 10,
        classes: 2,
        separation: 1.0,
        test_fraction: 0.25,
        seed: 1,
    };
    let splits = load(&cfg.data).unwrap();
    let err = tune_on(&cfg, &splits).unwrap_err();
    assert!(matches!(err, dpscale::Error::Infeasible(_)), "{err}");
    assert!(err.to_string().contains("C=0.000000001"));
}

#[test]
fn fixed_eps_sweep_raises_sigma_with_epochs() {
    let dir = scratch_dir("sweep");
    let mut cfg = tune_config(&dir);
    let sweep = cfg.sweep.as_mut().unwrap();
    sweep.epochs = vec![4.0, 1.0, 2.0];
    sweep.learning_rates = vec![0.1, 0.4];
    let splits = load(&cfg.data).unwrap();
    let rows = fixed_eps_sweep_on(&cfg, &splits).unwrap();
    let epochs: Vec<f64> = rows.iter().map(|r| r.epochs).collect();
    assert_eq!(epochs, [1.0, 2.0, 4.0]);
    assert!(rows.windows(2).all(|w| w[1].sigma > w[0].sigma));
    for r in &rows {
        assert!((r.epsilon / 10.0 - 1.0).abs() < 1e-3);
        assert_eq!(r.cells.len(), 2);
    }
    assert!(std::fs::read_to_string(dir.join("sweep.csv")).unwrap().starts_with("epochs,steps,sigma,epsilon,best_lr,best_accuracy\n"));
}

#[test]
fn bench_reports_ratios() {
    let dir = scratch_dir("bench");
    let out = dpscale(&[
        "bench", "--epochs", "1", "--warmup-epochs", "0", "--set", "data.n=1024", "--out", dir.to_str().unwrap(),
    ]);
    let v = stdout_json(&out);
    let row = &v["rows"][0];
    assert_eq!(row["batch_size"], 256);
    assert!(row["fast_ratio"].as_f64().unwrap() > 0.0);
    assert!(v["path_max_abs_diff"].as_f64().unwrap() <= 1e-10);
    assert!(std::fs::read_to_string(dir.join("bench.csv")).unwrap().starts_with("batch_size,"));
}
