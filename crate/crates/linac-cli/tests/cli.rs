//! End-to-end tests of the `linac` binary: every command runs as a real
//! subprocess against temp directories, and determinism checks compare
//! artifacts byte for byte (skipping the timestamped `*.meta.json` sidecars).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use linac_core::dataset::{generate_synthetic, SyntheticConfig};
use linac_core::evaluation::CorrectnessMask;
use linac_core::rng::PrivateKey;

const KEY: &str = "-2314326399425823309";

fn linac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linac"))
        .args(args)
        .output()
        .expect("spawn linac binary")
}

fn run_ok(args: &[&str]) -> String {
    let out = linac(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_err(args: &[&str]) -> String {
    let out = linac(args);
    assert!(
        !out.status.success(),
        "command {:?} unexpectedly succeeded\nstdout: {}",
        args,
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Relative path -> file bytes for every regular file under `dir`,
/// excluding the timestamped meta sidecars.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, map: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("read_dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, map);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .expect("under root")
                    .to_string_lossy()
                    .into_owned();
                if rel.ends_with(".meta.json") {
                    continue;
                }
                map.insert(rel, std::fs::read(&path).expect("read file"));
            }
        }
    }
    let mut map = BTreeMap::new();
    walk(dir, dir, &mut map);
    map
}

fn write_json(path: &Path, value: serde_json::Value) {
    std::fs::write(path, serde_json::to_vec_pretty(&value).expect("encode")).expect("write");
}

/// Save one 16x16 procedural image as a standalone LNT tensor.
fn write_single_image(path: &Path) {
    let cfg = SyntheticConfig::small(PrivateKey(31), 1, 0);
    let (train, _) = generate_synthetic::<f32>(&cfg).expect("generate");
    train.image(0).save_lnt(path).expect("save image");
}

#[test]
fn synth_then_transform_is_byte_identical_across_reruns_and_worker_counts() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let data = tmp.path().join("data");
    let data_s = data.to_str().unwrap();
    let stdout = run_ok(&[
        "synth", "--key", KEY, "--train", "6", "--test", "4", "--size", "small", "--out", data_s,
    ]);
    assert!(stdout.contains("synth"), "{stdout}");
    for file in [
        "train/images.lnt",
        "train/labels.json",
        "test/images.lnt",
        "test/labels.json",
        "synth.meta.json",
    ] {
        assert!(data.join(file).is_file(), "missing {file}");
    }

    let t_cfg = tmp.path().join("shuffle.json");
    write_json(
        &t_cfg,
        serde_json::json!({"kind": "shuffle", "block": 4, "key": 7}),
    );
    let dataset = data.join("train");
    let mut snaps = Vec::new();
    for (name, workers) in [("t1", "1"), ("t2", "8"), ("t3", "1")] {
        let out = tmp.path().join(name);
        run_ok(&[
            "--workers",
            workers,
            "transform",
            "--dataset",
            dataset.to_str().unwrap(),
            "--config",
            t_cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(out.join("images.lnt").is_file());
        assert!(out.join("transform.json").is_file());
        snaps.push(snapshot(&out));
    }
    assert_eq!(snaps[0], snaps[1], "1 vs 8 workers diverged");
    assert_eq!(snaps[0], snaps[2], "rerun diverged");
}

#[test]
fn fit_is_deterministic_and_rejects_top_layer_without_reconstruction_mode() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let img = tmp.path().join("image.lnt");
    write_single_image(&img);

    let mut snaps = Vec::new();
    for name in ["f1", "f2"] {
        let out = tmp.path().join(name);
        run_ok(&[
            "fit",
            "--image",
            img.to_str().unwrap(),
            "--key",
            "11",
            "--preset",
            "desk-small",
            "--epochs",
            "1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(out.join("activation_image.lnt").is_file());
        assert!(out.join("loss_trace.csv").is_file());
        assert!(out.join("params").is_dir());
        snaps.push(snapshot(&out));
    }
    assert_eq!(snaps[0], snaps[1], "fit rerun diverged");

    let stderr = run_err(&[
        "fit",
        "--image",
        img.to_str().unwrap(),
        "--key",
        "11",
        "--layers",
        "5",
        "--repr-layer",
        "5",
        "--epochs",
        "1",
        "--out",
        tmp.path().join("bad").to_str().unwrap(),
    ]);
    assert!(
        stderr.contains("reconstruction"),
        "expected a hint at reconstruction mode, got: {stderr}"
    );
}

#[test]
fn fit_meta_echoes_the_resolved_default_recipe() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let img = tmp.path().join("image.lnt");
    write_single_image(&img);
    let out = tmp.path().join("fit");
    run_ok(&[
        "fit",
        "--image",
        img.to_str().unwrap(),
        "--key",
        "3",
        "--epochs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let meta: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("fit.meta.json")).expect("meta"))
            .expect("json");
    let transform = &meta["transform"];
    assert_eq!(transform["kind"], "linac");
    assert_eq!(transform["arch"]["hidden_layers"], 5);
    assert_eq!(transform["arch"]["hidden_units"], 256);
    assert_eq!(transform["arch"]["frequencies"], 5);
    assert_eq!(transform["repr_layer"], 2);
    assert_eq!(transform["fit"]["batch_pixels"], 32);
    assert_eq!(transform["fit"]["learning_rate"], 1e-3);
    // One epoch over a 16x16 image in 32-pixel batches.
    assert_eq!(meta["steps"], 8);
    assert!(meta["final_loss"].as_f64().expect("loss") > 0.0);
    assert!(meta.get("generated_unix").is_some());
}

#[test]
fn train_attack_and_bruteforce_compose_into_a_full_run() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = tmp.path().join("experiment.json");
    write_json(
        &cfg,
        serde_json::json!({
            "key": -2314326399425823309i64,
            "dataset": {"kind": "synthetic", "train": 24, "test": 12, "size": "small"},
            "transform": {"kind": "shuffle", "block": 4},
            "classifier": {"epochs": 2, "batch_size": 8, "eval_every": 1},
            "attacks": [
                {"kind": "pgd", "steps": 3, "restarts": 1},
                {"kind": "square", "query_budget": 30, "restarts": 1}
            ]
        }),
    );
    let cfg_s = cfg.to_str().unwrap();
    let ckpt = tmp.path().join("run");
    let ckpt_s = ckpt.to_str().unwrap();

    let stdout = run_ok(&["train", "--config", cfg_s, "--out", ckpt_s]);
    assert!(stdout.contains("accuracy"), "{stdout}");
    assert!(ckpt.join("checkpoint").is_dir());
    assert!(ckpt.join("transform.json").is_file());
    assert!(ckpt.join("normalization.json").is_file());

    let atk = tmp.path().join("atk");
    let stdout = run_ok(&[
        "attack",
        "--config",
        cfg_s,
        "--checkpoint",
        ckpt_s,
        "--out",
        atk.to_str().unwrap(),
    ]);
    assert!(stdout.contains("best_known"), "{stdout}");
    for file in ["report.csv", "masks.json", "report.json", "attack.meta.json"] {
        assert!(atk.join(file).is_file(), "missing {file}");
    }
    let csv = std::fs::read_to_string(atk.join("report.csv")).expect("csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "attack,self,best_adversary");
    assert!(lines[1].starts_with("pgd,"), "{csv}");
    assert!(lines[2].starts_with("square,"), "{csv}");
    assert!(lines[3].starts_with("best_known,"), "{csv}");

    let bf = tmp.path().join("bf");
    let stdout = run_ok(&[
        "bruteforce",
        "--config",
        cfg_s,
        "--checkpoint",
        ckpt_s,
        "--keys",
        "3",
        "--batch",
        "8",
        "--out",
        bf.to_str().unwrap(),
    ]);
    assert!(stdout.contains("ranks"), "{stdout}");
    let keys_csv = std::fs::read_to_string(bf.join("keys.csv")).expect("keys.csv");
    let lines: Vec<&str> = keys_csv.lines().collect();
    assert_eq!(lines[0], "rank,key,accuracy");
    assert_eq!(lines.len(), 5, "true key + 3 wrong keys:\n{keys_csv}");
}

#[test]
fn report_merges_masks_and_rejects_mismatched_clean_sets() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let clean = vec![true, true, false, true];

    let mut a = CorrectnessMask::new(clean.clone());
    a.push_column("pgd", "self", vec![true, false, true, true])
        .expect("column");
    a.save(tmp.path().join("a.json")).expect("save");

    let mut b = CorrectnessMask::new(clean);
    b.push_column("square", "self", vec![true, true, true, false])
        .expect("column");
    b.save(tmp.path().join("b.json")).expect("save");

    let mut c = CorrectnessMask::new(vec![true, true, true, true]);
    c.push_column("pgd2", "self", vec![true, true, true, true])
        .expect("column");
    c.save(tmp.path().join("c.json")).expect("save");

    let out = tmp.path().join("merged");
    let stdout = run_ok(&[
        "report",
        "--masks",
        tmp.path().join("a.json").to_str().unwrap(),
        tmp.path().join("b.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("best known 25.00"), "{stdout}");
    let csv = std::fs::read_to_string(out.join("report.csv")).expect("csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "attack,self,best_adversary");
    assert_eq!(lines[1], "pgd,50.00,50.00");
    assert_eq!(lines[2], "square,50.00,50.00");
    assert_eq!(lines[3], "best_known,25.00,25.00");

    let stderr = run_err(&[
        "report",
        "--masks",
        tmp.path().join("a.json").to_str().unwrap(),
        tmp.path().join("c.json").to_str().unwrap(),
        "--out",
        tmp.path().join("bad").to_str().unwrap(),
    ]);
    assert!(stderr.contains("clean mask disagrees"), "{stderr}");
}

#[test]
fn sweep_emits_one_row_per_value() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg = tmp.path().join("experiment.json");
    write_json(
        &cfg,
        serde_json::json!({
            "key": 17,
            "dataset": {"kind": "synthetic", "train": 8, "test": 4, "size": "small"},
            "transform": {
                "kind": "linac",
                "hidden_layers": 3,
                "hidden_units": 8,
                "frequencies": 2,
                "repr_layer": 1,
                "epochs": 1,
                "batch_pixels": 32
            },
            "classifier": {"epochs": 1, "batch_size": 4, "eval_every": 1},
            "attacks": [{"kind": "pgd", "steps": 2, "restarts": 1}]
        }),
    );
    let out = tmp.path().join("sweep");
    let stdout = run_ok(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "n",
        "--values",
        "1,2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout.contains("sweep: 2 rows"), "{stdout}");
    let csv = std::fs::read_to_string(out.join("sweep.csv")).expect("csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "param,value,clean_accuracy,pgd_robust_accuracy");
    assert!(lines[1].starts_with("N,1,"), "{csv}");
    assert!(lines[2].starts_with("N,2,"), "{csv}");
    assert_eq!(lines.len(), 3);

    // A value above the layer count must fail before any training runs.
    let stderr = run_err(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--param",
        "k",
        "--values",
        "1,9",
        "--out",
        tmp.path().join("bad").to_str().unwrap(),
    ]);
    assert!(stderr.contains("--values 9"), "{stderr}");
}

#[test]
fn config_errors_name_the_offending_path() {
    let tmp = tempfile::tempdir().expect("tempdir");

    let unknown = tmp.path().join("unknown.json");
    write_json(
        &unknown,
        serde_json::json!({
            "key": 1,
            "dataset": {"kind": "synthetic", "train": 4, "test": 2, "size": "small"},
            "frobnicate": true
        }),
    );
    let stderr = run_err(&["train", "--config", unknown.to_str().unwrap(), "--out", "x"]);
    assert!(stderr.contains("frobnicate"), "{stderr}");
    assert!(stderr.contains("unknown.json"), "{stderr}");

    let bad_norm = tmp.path().join("norm.json");
    write_json(
        &bad_norm,
        serde_json::json!({
            "key": 1,
            "dataset": {"kind": "synthetic", "train": 4, "test": 2, "size": "small"},
            "transform": {"kind": "shuffle", "block": 4},
            "attacks": [{"kind": "pgd", "norm": "l3"}]
        }),
    );
    let stderr = run_err(&["train", "--config", bad_norm.to_str().unwrap(), "--out", "x"]);
    assert!(stderr.contains("attacks[0]"), "{stderr}");

    let stderr = run_err(&["train", "--config", "/nonexistent/config.json", "--out", "x"]);
    assert!(stderr.contains("config.json"), "{stderr}");
}
