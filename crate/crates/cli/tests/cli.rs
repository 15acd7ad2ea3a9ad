mod common;

use std::fs;
use std::path::Path;

use common::{code, files, p, read_json, stderr, stdout, vtreid};
use tempfile::TempDir;

const FAST: [&str; 8] = ["--P", "4", "--K", "2", "--holdout", "0.34", "--eval-every", "0"];

fn small_dataset(root: &Path) -> std::path::PathBuf {
    let data = root.join("data");
    let out = vtreid(["generate", "--ids", "6", "--per-modality", "4", "--seed", "3", "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

fn train_small(data: &Path, run: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["train", "--data", p(data), "--out", p(run)];
    args.extend(FAST);
    if !extra.contains(&"--epochs") {
        args.extend(["--epochs", "1"]);
    }
    args.extend(extra);
    vtreid(args)
}

#[test]
fn generate_writes_one_file_per_image() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    let out = vtreid(["generate", "--ids", "32", "--per-modality", "20", "--seed", "7", "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let grids = files(&data).into_iter().filter(|f| f.extension().is_some_and(|e| e == "grid")).count();
    assert_eq!(grids, 32 * 2 * 20);
    let manifest = read_json(&data.join("manifest.json"));
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["artifact_versions"]["grid"].is_string());
}

#[test]
fn generate_is_byte_identical_for_equal_flags() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = vtreid(["generate", "--ids", "4", "--per-modality", "3", "--seed", "11", "--out", p(d)]);
        assert_eq!(code(&out), 0);
    }
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    for f in fa.iter().filter(|f| f.as_os_str() != "manifest.json") {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{}", f.display());
    }
    // rerunning into the same directory is allowed and changes nothing
    let before = fs::read(a.join("id0000/visible/0000.grid")).unwrap();
    let out = vtreid(["generate", "--ids", "4", "--per-modality", "3", "--seed", "11", "--out", p(&a)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(a.join("id0000/visible/0000.grid")).unwrap(), before);
}

#[test]
fn generate_rejects_bad_requests() {
    let dir = TempDir::new().unwrap();
    let out = vtreid(["generate", "--ids", "1", "--out", p(&dir.path().join("one"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("at least 2 identities"), "{}", stderr(&out));

    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = vtreid(["generate", "--ids", "2", "--out", p(&blocker.join("sub"))]);
    assert_eq!(code(&out), 2);

    let foreign = dir.path().join("foreign");
    fs::create_dir_all(&foreign).unwrap();
    fs::write(foreign.join("notes.txt"), b"keep").unwrap();
    let out = vtreid(["generate", "--ids", "2", "--out", p(&foreign)]);
    assert_eq!(code(&out), 2);
    assert_eq!(fs::read(foreign.join("notes.txt")).unwrap(), b"keep");
}

#[test]
fn train_writes_checkpoint_history_and_report() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    let out = train_small(&data, &run, &["--epochs", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["manifest.json", "config.json", "model.ck", "history.csv", "report.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,lr,batches,loss"));
    let report = read_json(&run.join("report.json"));
    assert!(report["cmc"].as_array().is_some_and(|c| !c.is_empty()));
    for key in ["map", "minp", "num_queries"] {
        assert!(report[key].is_number(), "{key}");
    }
    let cfg = read_json(&run.join("config.json"));
    assert_eq!(cfg["model"]["split_index"], 2);
    assert_eq!(cfg["model"]["num_parts"], 6);
    assert_eq!(cfg["model"]["embed_dim"], 256);
    assert_eq!(cfg["model"]["pooling"], "gem");
    assert_eq!(cfg["loss"]["rho"], 0.3);
    assert_eq!(cfg["model"]["num_classes"], 4);
}

#[test]
fn train_accepts_the_weakest_baseline() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    let out = train_small(&data, &run, &["--split", "5", "--loss", "bh_tri"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cfg = read_json(&run.join("config.json"));
    assert_eq!(cfg["model"]["split_index"], 5);
    assert_eq!(cfg["variant"], "bh_tri");
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let file = dir.path().join("cfg.toml");
    fs::write(&file, "epochs = 2\nseed = 5\nsplit = 3\npool = \"max\"\n").unwrap();
    let run = dir.path().join("run");
    let out = vtreid([
        "train", "--data", p(&data), "--out", p(&run), "--config", p(&file), "--split", "1", "--P", "4", "--K", "2",
        "--holdout", "0.34",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cfg = read_json(&run.join("config.json"));
    assert_eq!(cfg["epochs"], 2);
    assert_eq!(cfg["seed"], 5);
    assert_eq!(cfg["model"]["split_index"], 1);
    assert_eq!(cfg["model"]["pooling"], "max");
    assert_eq!(cfg["k"], 2);
    let manifest = read_json(&run.join("manifest.json"));
    assert_eq!(manifest["config_file"], p(&file));
    assert_eq!(manifest["seed"], 5);
}

#[test]
fn invalid_training_configs_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    for extra in [&["--P", "1"][..], &["--parts", "4"], &["--pool", "median"], &["--split", "6"]] {
        let out = train_small(&data, &run, extra);
        assert_eq!(code(&out), 2, "{extra:?}: {}", stderr(&out));
    }
    let file = dir.path().join("bad.toml");
    fs::write(&file, "epoch = 2\n").unwrap();
    let out = train_small(&data, &run, &["--config", p(&file)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("unknown field"), "{}", stderr(&out));
    let out = train_small(&dir.path().join("missing"), &run, &[]);
    assert_eq!(code(&out), 2);
}

#[test]
fn non_finite_loss_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    let out = train_small(&data, &run, &["--lr", "1e30"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite loss"));
    assert!(run.join("manifest.json").is_file());
    assert!(!run.join("model.ck").exists());
}

#[test]
fn eval_reports_both_directions_and_round_trips_embeddings() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    assert_eq!(code(&train_small(&data, &run, &[])), 0);

    let first = dir.path().join("first");
    let bin = dir.path().join("emb.bin");
    let out = vtreid([
        "eval", "--run", p(&run), "--data", p(&data), "--out", p(&first), "--export-embeddings", p(&bin),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("v2t:") && stdout(&out).contains("t2v:"));
    let csv = fs::read_to_string(first.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    for d in ["v2t", "t2v"] {
        let r = read_json(&first.join(format!("eval_{d}.json")));
        assert_eq!(r["config_echo"]["direction"], d);
        assert_eq!(r["num_queries"], 8);
    }

    let csv_emb = dir.path().join("emb.csv");
    let out = vtreid(["eval", "--from-embeddings", p(&bin), "--out", p(&dir.path().join("again"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = vtreid([
        "eval", "--run", p(&run), "--data", p(&data), "--out", p(&dir.path().join("third")), "--export-embeddings",
        p(&csv_emb),
    ]);
    assert_eq!(code(&out), 0);
    let out = vtreid(["eval", "--from-embeddings", p(&csv_emb), "--out", p(&dir.path().join("fourth"))]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for d in ["v2t", "t2v"] {
        let name = format!("eval_{d}.json");
        let want = fs::read(first.join(&name)).unwrap();
        assert_eq!(fs::read(dir.path().join("again").join(&name)).unwrap(), want);
        assert_eq!(fs::read(dir.path().join("fourth").join(&name)).unwrap(), want);
    }

    let out = vtreid(["eval", "--from-embeddings", p(&bin), "--direction", "t2v"]);
    assert_eq!(code(&out), 0);
    assert!(!stdout(&out).contains("v2t"));
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let run = dir.path().join("run");
    let other = dir.path().join("other");
    assert_eq!(code(&train_small(&data, &run, &[])), 0);
    assert_eq!(code(&train_small(&data, &other, &["--dim", "32"])), 0);
    let out = vtreid([
        "eval",
        "--run",
        p(&run),
        "--checkpoint",
        p(&other.join("model.ck")),
        "--data",
        p(&data),
        "--out",
        p(&dir.path().join("ev")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("does not match"), "{}", stderr(&out));

    let bigger = dir.path().join("bigger");
    let g = vtreid(["generate", "--ids", "9", "--per-modality", "2", "--out", p(&bigger)]);
    assert_eq!(code(&g), 0);
    let out = vtreid(["eval", "--run", p(&run), "--data", p(&bigger), "--out", p(&dir.path().join("ev2"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn verify_suites() {
    let out = vtreid(["verify", "--suite", "counts"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("448/3584 vs 16/224"), "{}", stdout(&out));

    let dir = TempDir::new().unwrap();
    let out = vtreid(["verify", "--suite", "all", "--out", p(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let report = read_json(&dir.path().join("verify.json"));
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.len() > 30);
    assert!(checks.iter().all(|c| c["passed"] == true));

    assert_eq!(code(&vtreid(["verify", "--suite", "nope"])), 2);
}

#[test]
fn ablate_records_failing_cells() {
    let dir = TempDir::new().unwrap();
    let data = small_dataset(dir.path());
    let out_dir = dir.path().join("abl");
    let mut args = vec!["ablate", "--data", p(&data), "--out", p(&out_dir), "--axis", "parts", "--values", "1,4"];
    args.extend(FAST);
    args.extend(["--epochs", "1"]);
    let out = vtreid(args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "parts,rank1,map,minp,final_loss,error");
    assert_eq!(lines.len(), 3);
    let report = read_json(&out_dir.join("ablation.json"));
    let rows = report["rows"].as_array().unwrap();
    assert!(rows[0]["rank1"].is_number() && rows[0]["error"].is_null());
    assert!(rows[1]["rank1"].is_null() && rows[1]["error"].as_str().unwrap().contains("strips"));
}
