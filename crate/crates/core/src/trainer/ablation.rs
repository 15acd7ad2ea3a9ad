use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::run::{prepare_split, Trainer};
use crate::data::{derive_seed, DatasetIndex};
use crate::encoder::{PoolingKind, NUM_STAGES};
use crate::error::{Error, Result};
use crate::losses::LossVariant;

const REPEAT_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Split,
    Loss,
    Parts,
    Pool,
    Dim,
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Split => "split",
            AblationAxis::Loss => "loss",
            AblationAxis::Parts => "parts",
            AblationAxis::Pool => "pool",
            AblationAxis::Dim => "dim",
        }
    }

    /// Values swept when none are given.
    pub fn default_values(self) -> Vec<String> {
        match self {
            AblationAxis::Split => (0..=NUM_STAGES).map(|s| format!("s{s}")).collect(),
            AblationAxis::Loss => LossVariant::ALL.iter().map(|v| v.as_str().to_string()).collect(),
            AblationAxis::Parts => ["1", "2", "3", "6"].map(String::from).to_vec(),
            AblationAxis::Pool => ["gem", "mean", "max"].map(String::from).to_vec(),
            AblationAxis::Dim => ["64", "128", "256", "512"].map(String::from).to_vec(),
        }
    }

    /// Sets this axis of `cfg` to `value`.
    pub fn apply(self, cfg: &mut TrainConfig, value: &str) -> Result<()> {
        let bad = || Error::config(format!("`{value}` is not a valid {} value", self.as_str()));
        match self {
            AblationAxis::Split => {
                let digits = value.strip_prefix('s').unwrap_or(value);
                cfg.model.split_index = digits.parse().map_err(|_| bad())?;
            }
            AblationAxis::Loss => cfg.variant = value.parse()?,
            AblationAxis::Parts => cfg.model.num_parts = value.parse().map_err(|_| bad())?,
            AblationAxis::Pool => cfg.model.pooling = value.parse()?,
            AblationAxis::Dim => cfg.model.embed_dim = value.parse().map_err(|_| bad())?,
        }
        Ok(())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(AblationAxis::Split),
            "loss" => Ok(AblationAxis::Loss),
            "parts" => Ok(AblationAxis::Parts),
            "pool" | "pooling" => Ok(AblationAxis::Pool),
            "dim" => Ok(AblationAxis::Dim),
            other => Err(Error::config(format!("unknown ablation axis `{other}`"))),
        }
    }
}

/// The ablated settings of `cfg`, as strings.
pub fn config_echo(cfg: &TrainConfig) -> BTreeMap<String, String> {
    let pool = match cfg.model.pooling {
        PoolingKind::Gem => "gem",
        PoolingKind::Mean => "mean",
        PoolingKind::Max => "max",
    };
    [
        ("split", format!("s{}", cfg.model.split_index)),
        ("loss", cfg.variant.as_str().to_string()),
        ("parts", cfg.model.num_parts.to_string()),
        ("pool", pool.to_string()),
        ("dim", cfg.model.embed_dim.to_string()),
        ("seed", cfg.seed.to_string()),
        ("epochs", cfg.epochs.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: String,
    pub config_echo: BTreeMap<String, String>,
    pub rank1: Option<f64>,
    pub map: Option<f64>,
    pub minp: Option<f64>,
    pub final_loss: Option<f64>,
    pub repeats: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{},rank1,map,minp,final_loss,error", self.axis.as_str())?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.value,
                opt(r.rank1),
                opt(r.map),
                opt(r.minp),
                opt(r.final_loss),
                err
            )?;
        }
        Ok(())
    }
}

struct CellResult {
    rank1: f64,
    map: f64,
    minp: f64,
    final_loss: f64,
}

fn run_cell(cfg: &TrainConfig, dataset: &DatasetIndex) -> Result<CellResult> {
    let (cfg, train, test) = prepare_split(cfg, dataset)?;
    let test = test.ok_or_else(|| Error::config("ablation needs a held-out split (holdout > 0)"))?;
    let mut trainer = Trainer::new(TrainConfig { eval_every: 0, ..cfg })?;
    let history = trainer.fit(&train, None)?;
    let final_loss = history.last().map_or(f64::NAN, |r| r.loss);
    let report = trainer.evaluate(&test, trainer.config().direction)?;
    Ok(CellResult {
        rank1: report.rank1(),
        map: report.map,
        minp: report.minp,
        final_loss,
    })
}

/// Trains and evaluates one model per value of `axis`. Failing cells are
/// recorded with their error and do not stop the sweep. With `repeats > 1`
/// metrics are averaged over derived seeds.
pub fn run_ablation(
    base: &TrainConfig,
    axis: AblationAxis,
    values: Option<&[String]>,
    dataset: &DatasetIndex,
    repeats: usize,
) -> Result<AblationReport> {
    if repeats == 0 {
        return Err(Error::config("repeats must be positive"));
    }
    let values = values.map_or_else(|| axis.default_values(), <[String]>::to_vec);
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = base.clone();
        let outcome = axis.apply(&mut cfg, &value).and_then(|()| {
            let mut acc = CellResult {
                rank1: 0.0,
                map: 0.0,
                minp: 0.0,
                final_loss: 0.0,
            };
            for r in 0..repeats {
                let seed = if r == 0 {
                    base.seed
                } else {
                    derive_seed(base.seed, &[REPEAT_STREAM, r as u64])
                };
                let c = run_cell(&TrainConfig { seed, ..cfg.clone() }, dataset)?;
                acc.rank1 += c.rank1;
                acc.map += c.map;
                acc.minp += c.minp;
                acc.final_loss += c.final_loss;
            }
            Ok(acc)
        });
        let n = repeats as f64;
        let echo = config_echo(&cfg);
        rows.push(match outcome {
            Ok(c) => AblationRow {
                value,
                config_echo: echo,
                rank1: Some(c.rank1 / n),
                map: Some(c.map / n),
                minp: Some(c.minp / n),
                final_loss: Some(c.final_loss / n),
                repeats,
                error: None,
            },
            Err(e) => AblationRow {
                value,
                config_echo: echo,
                rank1: None,
                map: None,
                minp: None,
                final_loss: None,
                repeats,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(AblationReport { axis, rows })
}
