use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of backbone stages. Split index `s` ranges over `0..=NUM_STAGES`.
pub const NUM_STAGES: usize = 5;

/// One backbone stage: per-cell channel mixing, batchnorm, relu, and an
/// optional 2x spatial pooling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Row/column halving factor, 1 or 2.
    pub downsample_rows: usize,
}

impl StageSpec {
    pub fn new(in_channels: usize, out_channels: usize, downsample_rows: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            downsample_rows,
        }
    }

    pub fn parameter_count(&self) -> usize {
        // weight + batchnorm affine
        self.in_channels * self.out_channels + 2 * self.out_channels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            rows,
            cols,
            channels,
        }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.rows, self.cols, self.channels]
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid::new(24, 12, 8)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingKind {
    Gem,
    Mean,
    Max,
}

impl PoolingKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolingKind::Gem => "gem",
            PoolingKind::Mean => "mean",
            PoolingKind::Max => "max",
        }
    }
}

impl std::str::FromStr for PoolingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gem" => Ok(PoolingKind::Gem),
            "mean" | "avg" => Ok(PoolingKind::Mean),
            "max" => Ok(PoolingKind::Max),
            other => Err(Error::config(format!("unknown pooling kind `{other}`"))),
        }
    }
}

/// Two-stream encoder and part-head description.
///
/// Stages `0..split_index` are duplicated per modality; stages
/// `split_index..5` form the shared embedding network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoStreamConfig {
    pub stages: Vec<StageSpec>,
    pub split_index: usize,
    pub input_grid: Grid,
    pub num_parts: usize,
    pub embed_dim: usize,
    pub gem_p_init: f64,
    pub num_classes: usize,
    pub learnable_gem: bool,
    pub pooling: PoolingKind,
}

impl Default for TwoStreamConfig {
    fn default() -> Self {
        Self {
            stages: vec![
                StageSpec::new(8, 16, 1),
                StageSpec::new(16, 32, 2),
                StageSpec::new(32, 32, 2),
                StageSpec::new(32, 64, 1),
                StageSpec::new(64, 64, 1),
            ],
            split_index: 2,
            input_grid: Grid::default(),
            num_parts: 6,
            embed_dim: 256,
            gem_p_init: 3.0,
            num_classes: 32,
            learnable_gem: true,
            pooling: PoolingKind::Gem,
        }
    }
}

impl TwoStreamConfig {
    /// Spatial grid after every stage has run.
    pub fn output_grid(&self) -> Grid {
        let mut rows = self.input_grid.rows;
        let mut cols = self.input_grid.cols;
        for s in &self.stages {
            rows /= s.downsample_rows;
            cols /= s.downsample_rows;
        }
        Grid::new(rows, cols, self.stages.last().map_or(0, |s| s.out_channels))
    }

    pub fn feature_dim(&self) -> usize {
        self.num_parts * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != NUM_STAGES {
            return Err(Error::config(format!(
                "expected {NUM_STAGES} stages, got {}",
                self.stages.len()
            )));
        }
        if self.split_index > NUM_STAGES {
            return Err(Error::config(format!(
                "split index {} outside 0..={NUM_STAGES}",
                self.split_index
            )));
        }
        let g = self.input_grid;
        if g.rows == 0 || g.cols == 0 || g.channels == 0 {
            return Err(Error::config("input grid extents must be positive"));
        }
        let (mut rows, mut cols, mut ch) = (g.rows, g.cols, g.channels);
        for (i, s) in self.stages.iter().enumerate() {
            if s.in_channels == 0 || s.out_channels == 0 {
                return Err(Error::config(format!("stage {i}: channels must be positive")));
            }
            if s.in_channels != ch {
                return Err(Error::config(format!(
                    "stage {i}: expects {} input channels, previous stage gives {ch}",
                    s.in_channels
                )));
            }
            match s.downsample_rows {
                1 => {}
                2 => {
                    if rows % 2 != 0 || cols % 2 != 0 {
                        return Err(Error::config(format!(
                            "stage {i}: cannot halve a {rows}x{cols} map"
                        )));
                    }
                    rows /= 2;
                    cols /= 2;
                }
                d => {
                    return Err(Error::config(format!("stage {i}: downsample {d} not in {{1, 2}}")));
                }
            }
            ch = s.out_channels;
        }
        if self.num_parts == 0 || rows % self.num_parts != 0 {
            return Err(Error::config(format!(
                "final map has {rows} rows, not divisible into {} strips",
                self.num_parts
            )));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("embed_dim must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("need at least 2 classes"));
        }
        if !(self.gem_p_init >= 1.0) || !self.gem_p_init.is_finite() {
            return Err(Error::config(format!("gem_p_init {} must be >= 1", self.gem_p_init)));
        }
        Ok(())
    }

    /// Trainable parameter count: shared stages once, specific stages twice,
    /// plus the part heads.
    pub fn parameter_count(&self) -> usize {
        let specific: usize = self.stages[..self.split_index]
            .iter()
            .map(StageSpec::parameter_count)
            .sum();
        let shared: usize = self.stages[self.split_index..]
            .iter()
            .map(StageSpec::parameter_count)
            .sum();
        shared + 2 * specific + self.head_parameter_count()
    }

    pub fn specific_parameter_count(&self) -> usize {
        2 * self.stages[..self.split_index]
            .iter()
            .map(StageSpec::parameter_count)
            .sum::<usize>()
    }

    fn head_parameter_count(&self) -> usize {
        let c = self.output_grid().channels;
        let per_part = c * self.embed_dim
            + 2 * self.embed_dim
            + self.embed_dim * self.num_classes
            + self.num_classes
            + usize::from(self.pooling == PoolingKind::Gem && self.learnable_gem);
        self.num_parts * per_part
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = TwoStreamConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.output_grid(), Grid::new(6, 3, 64));
        assert_eq!(cfg.feature_dim(), 1536);
    }

    #[test]
    fn indivisible_strips_rejected_at_build_time() {
        let cfg = TwoStreamConfig {
            num_parts: 4,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_count_strictly_increases_with_split() {
        let counts: Vec<usize> = (0..=NUM_STAGES)
            .map(|s| {
                TwoStreamConfig {
                    split_index: s,
                    ..Default::default()
                }
                .parameter_count()
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
        let s0 = TwoStreamConfig {
            split_index: 0,
            ..Default::default()
        };
        assert_eq!(s0.specific_parameter_count(), 0);
    }

    #[test]
    fn bad_stage_chain_rejected() {
        let mut cfg = TwoStreamConfig::default();
        cfg.stages[2].in_channels = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = TwoStreamConfig::default();
        cfg.stages[0].downsample_rows = 3;
        assert!(cfg.validate().is_err());
        let cfg = TwoStreamConfig {
            split_index: 6,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
