use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::Args;
use serde::Deserialize;
use vtreid_core::encoder::PoolingKind;
use vtreid_core::eval::Direction;
use vtreid_core::losses::{LossVariant, Reduction};
use vtreid_core::trainer::TrainConfig;

use crate::Directions;

pub fn parse_from_str<T>(s: &str) -> std::result::Result<T, String>
where
    T: FromStr,
    T::Err: Display,
{
    s.parse().map_err(|e: T::Err| e.to_string())
}

pub fn parse_reduction(s: &str) -> std::result::Result<Reduction, String> {
    match s {
        "sum" => Ok(Reduction::Sum),
        "mean" => Ok(Reduction::Mean),
        other => Err(format!("unknown reduction `{other}` (sum|mean)")),
    }
}

pub fn parse_directions(s: &str) -> std::result::Result<Directions, String> {
    match s {
        "both" => Ok(Directions(vec![Direction::V2t, Direction::T2v])),
        other => parse_from_str::<Direction>(other).map(|d| Directions(vec![d])),
    }
}

/// Training settings shared by the config file and the command line. Unset
/// fields keep the value from the next lower layer.
#[derive(Args, Debug, Default, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    /// Metric term: bh_tri, hc_tri, lc, hc or id_only
    #[arg(long, value_parser = parse_from_str::<LossVariant>)]
    pub loss: Option<LossVariant>,
    /// Number of modality-specific stages (0..=5)
    #[arg(long)]
    pub split: Option<usize>,
    /// Horizontal strips per feature map
    #[arg(long)]
    pub parts: Option<usize>,
    /// Embedding width per part
    #[arg(long)]
    pub dim: Option<usize>,
    /// Part pooling: gem, mean or max
    #[arg(long, value_parser = parse_from_str::<PoolingKind>)]
    pub pool: Option<PoolingKind>,
    /// Initial GeM exponent
    #[arg(long)]
    pub gem_p: Option<f64>,
    /// Triplet margin
    #[arg(long)]
    pub rho: Option<f64>,
    /// Weight of the per-part metric term
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Label smoothing
    #[arg(long)]
    pub xi: Option<f64>,
    /// Loss reduction over anchors: sum or mean
    #[arg(long, value_parser = parse_reduction)]
    pub reduction: Option<Reduction>,
    /// Identities per batch
    #[arg(long = "P")]
    #[serde(alias = "P")]
    pub p: Option<usize>,
    /// Images per identity and modality in a batch
    #[arg(long = "K")]
    #[serde(alias = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Base learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Fraction of identities held out for testing
    #[arg(long)]
    pub holdout: Option<f64>,
    /// Validate every N epochs (0 disables)
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Query modality for validation: v2t or t2v
    #[arg(long, value_parser = parse_from_str::<Direction>)]
    pub direction: Option<Direction>,
}

macro_rules! layer {
    ($hi:expr, $lo:expr, $($f:ident),*) => {
        Overrides { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Overrides {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fields set in `self` win over those in `lower`.
    pub fn over(&self, lower: &Overrides) -> Overrides {
        layer!(
            self, lower, loss, split, parts, dim, pool, gem_p, rho, lambda, xi, reduction, p, k, epochs, seed, lr,
            momentum, holdout, eval_every, direction
        )
    }

    pub fn apply(&self, cfg: &mut TrainConfig) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src {
                    cfg.$($dst)+ = v;
                }
            };
        }
        set!(loss => variant);
        set!(split => model.split_index);
        set!(parts => model.num_parts);
        set!(dim => model.embed_dim);
        set!(pool => model.pooling);
        set!(gem_p => model.gem_p_init);
        set!(rho => loss.rho);
        set!(lambda => loss.lambda);
        set!(xi => loss.xi);
        set!(reduction => loss.reduction);
        set!(p => p);
        set!(k => k);
        set!(epochs => epochs);
        set!(seed => seed);
        set!(lr => base_lr);
        set!(momentum => momentum);
        set!(holdout => holdout);
        set!(eval_every => eval_every);
        set!(direction => direction);
    }
}

/// Built-in defaults, then the config file, then command-line flags.
pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<TrainConfig> {
    let file = match file {
        Some(p) => Overrides::load(p)?,
        None => Overrides::default(),
    };
    let mut cfg = TrainConfig::default();
    flags.over(&file).apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}
