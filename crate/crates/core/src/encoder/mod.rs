//! Two-stream encoder and part-level feature head.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Grid, PoolingKind, StageSpec, TwoStreamConfig, NUM_STAGES};
pub use network::{
    gem_pool, partition_strips, Bound, ForwardOutput, NamedParam, NamedStats, Network, PartFeatures,
    GEM_EPS,
};
