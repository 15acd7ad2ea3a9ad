use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use vtreid_core::data::{generate_synthetic, DatasetIndex, SyntheticSpec};
use vtreid_core::encoder::Checkpoint;
use vtreid_core::eval::{evaluate_cross_modality, Direction, EmbeddingSet, EvalReport};
use vtreid_core::trainer::{prepare_split, run_ablation, write_history_csv, TrainConfig, Trainer};
use vtreid_core::verify::run_suite;

use crate::config::resolve;
use crate::manifest::{write_json, RunManifest, MANIFEST_FILE};
use crate::{AblateArgs, EvalArgs, GenerateArgs, TrainArgs, VerifyArgs};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.ck";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";

/// Raised when a verification suite has failing checks.
#[derive(Debug)]
pub struct SuiteFailed(pub usize);

impl std::fmt::Display for SuiteFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} check(s) failed", self.0)
    }
}

impl std::error::Error for SuiteFailed {}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let mut spec = SyntheticSpec::new(a.ids, a.per_modality, a.seed);
    if let Some(s) = a.appearance_sigma {
        spec.appearance_sigma = s;
    }
    if let Some(s) = a.noise {
        spec.noise_sigma = s;
    }
    let data = generate_synthetic(&spec)?;
    check_generate_target(&a.out, data.identity_names())?;
    RunManifest::new("generate", &a.out, None, Some(a.seed)).write()?;
    data.save(&a.out)?;
    write_json(&a.out.join("spec.json"), &spec)?;
    println!(
        "wrote {} identities x 2 modalities x {} images to {}",
        data.num_identities(),
        a.per_modality,
        a.out.display()
    );
    Ok(())
}

/// Refuses to mix a new dataset into a directory holding other content.
fn check_generate_target(out: &Path, names: &[String]) -> Result<()> {
    let Ok(entries) = fs::read_dir(out) else {
        return Ok(());
    };
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let known = name == MANIFEST_FILE || name == "spec.json" || names.contains(&name);
        if !known {
            bail!("{} already contains `{name}`; choose an empty output directory", out.display());
        }
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve(a.config.as_deref(), &a.overrides)?;
    RunManifest::new("train", &a.out, a.config.as_deref(), Some(cfg.seed)).write()?;
    let dataset = load_dataset(&a.data)?;
    let (cfg, train_set, test_set) = prepare_split(&cfg, &dataset)?;
    write_json(&a.out.join(CONFIG_FILE), &cfg)?;
    let mut trainer = Trainer::new(cfg)?;
    let fit = trainer.fit(&train_set, test_set.as_ref()).map(|_| ());
    write_history(&a.out.join(HISTORY_FILE), &trainer)?;
    fit?;
    trainer.to_checkpoint().save(&a.out.join(CHECKPOINT_FILE))?;
    let report = match &test_set {
        Some(t) => Some(trainer.evaluate(t, trainer.config().direction)?),
        None => None,
    };
    write_json(&a.out.join(REPORT_FILE), &report)?;
    let last = trainer.history().last().expect("at least one epoch");
    print!("trained {} epochs, final loss {:.4}", last.epoch + 1, last.loss);
    match &report {
        Some(r) => println!("; held-out {}", summary(r)),
        None => println!(),
    }
    Ok(())
}

fn write_history(path: &Path, trainer: &Trainer) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_history_csv(trainer.history(), &mut w)?;
    w.flush()?;
    Ok(())
}

fn load_dataset(dir: &Path) -> Result<DatasetIndex> {
    DatasetIndex::load(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn summary(r: &EvalReport) -> String {
    format!(
        "rank-1 {:.4} rank-5 {:.4} mAP {:.4} mINP {:.4} ({} queries)",
        r.rank1(),
        r.rank(5),
        r.map,
        r.minp,
        r.num_queries
    )
}

#[derive(Serialize)]
struct EvalRow<'a> {
    direction: &'a str,
    report: &'a EvalReport,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let out: Option<PathBuf> = a.out.clone().or_else(|| a.run.clone());
    if let Some(dir) = &out {
        let seed_cfg = a.run.as_ref().and_then(|r| read_config(r).ok());
        RunManifest::new("eval", dir, None, seed_cfg.map(|c| c.seed)).write()?;
    }
    let set = match &a.from_embeddings {
        Some(path) => load_embeddings(path)?,
        None => {
            let run = a.run.as_ref().expect("clap requires --run");
            let data = a.data.as_ref().expect("clap requires --data");
            embed_test_split(run, a.checkpoint.as_deref(), data)?
        }
    };
    if let Some(path) = &a.export_embeddings {
        save_embeddings(&set, path)?;
    }
    let mut rows = Vec::new();
    for &d in &a.direction.0 {
        let report = evaluate_cross_modality(&set, d)?;
        println!("{}: {}", d.as_str(), summary(&report));
        rows.push((d, report));
    }
    if let Some(dir) = &out {
        for (d, r) in &rows {
            write_json(&dir.join(format!("eval_{}.json", d.as_str())), r)?;
        }
        write_eval_csv(&dir.join("eval.csv"), &rows)?;
    } else {
        let json: Vec<EvalRow> = rows
            .iter()
            .map(|(d, r)| EvalRow {
                direction: d.as_str(),
                report: r,
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&json)?);
    }
    Ok(())
}

fn read_config(run: &Path) -> Result<TrainConfig> {
    let path = run.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Embeds the identities the run held out, or the whole dataset when the
/// run trained without a held-out split.
fn embed_test_split(run: &Path, checkpoint: Option<&Path>, data: &Path) -> Result<EmbeddingSet> {
    let cfg = read_config(run)?;
    let ck_path = checkpoint.map_or_else(|| run.join(CHECKPOINT_FILE), Path::to_path_buf);
    let ck = Checkpoint::load(&ck_path)?;
    let trainer = Trainer::from_checkpoint(cfg.clone(), &ck)
        .with_context(|| format!("checkpoint {} does not match the run configuration", ck_path.display()))?;
    let dataset = load_dataset(data)?;
    ensure!(
        dataset.grid() == cfg.model.input_grid,
        "dataset grid {:?} differs from the model input grid {:?}",
        dataset.grid(),
        cfg.model.input_grid
    );
    let test = if cfg.holdout > 0.0 {
        let (train, test) = dataset.split_holdout(cfg.holdout)?;
        ensure!(
            train.num_identities() == cfg.model.num_classes,
            "dataset has {} training identities, the run was trained on {}",
            train.num_identities(),
            cfg.model.num_classes
        );
        test
    } else {
        dataset
    };
    Ok(trainer.embeddings(&test)?)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    if is_csv(path) {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        EmbeddingSet::read_csv(std::io::BufReader::new(f)).map_err(|m| anyhow::anyhow!("{}: {m}", path.display()))
    } else {
        Ok(EmbeddingSet::load(path)?)
    }
}

fn save_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    if is_csv(path) {
        set.save_csv(path)?;
    } else {
        set.save(path)?;
    }
    Ok(())
}

fn write_eval_csv(path: &Path, rows: &[(Direction, EvalReport)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "direction,num_queries,rank1,rank5,rank10,rank20,map,minp")?;
    for (d, r) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            d.as_str(),
            r.num_queries,
            r.rank1(),
            r.rank(5),
            r.rank(10),
            r.rank(20),
            r.map,
            r.minp
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let cfg = resolve(a.config.as_deref(), &a.overrides)?;
    RunManifest::new("ablate", &a.out, a.config.as_deref(), Some(cfg.seed)).write()?;
    let dataset = load_dataset(&a.data)?;
    let report = run_ablation(&cfg, a.axis, a.values.as_deref(), &dataset, a.repeats)?;
    write_json(&a.out.join("ablation.json"), &report)?;
    let path = a.out.join("ablation.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    report.write_csv(&mut w)?;
    w.flush()?;
    println!("{:>8}  {:>7}  {:>7}  {:>7}", a.axis.as_str(), "rank-1", "mAP", "mINP");
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    for r in &report.rows {
        print!("{:>8}  {:>7}  {:>7}  {:>7}", r.value, cell(r.rank1), cell(r.map), cell(r.minp));
        match &r.error {
            Some(e) => println!("  error: {e}"),
            None => println!(),
        }
    }
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> Result<()> {
    if let Some(dir) = &a.out {
        RunManifest::new("verify", dir, None, Some(a.seed)).write()?;
    }
    let report = run_suite(a.suite, a.seed);
    print!("{report}");
    if let Some(dir) = &a.out {
        write_json(&dir.join("verify.json"), &report)?;
    }
    let failed = report.failures().count();
    println!("{} checks, {} failed", report.checks.len(), failed);
    if failed > 0 {
        return Err(SuiteFailed(failed).into());
    }
    Ok(())
}
