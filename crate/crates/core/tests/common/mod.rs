#![allow(dead_code)]

use vtreid_core::encoder::{Grid, StageSpec};
use vtreid_core::{Tensor, TwoStreamConfig};

/// Small five-stage network on an 8x4x2 grid with a 4x2 final map.
pub fn tiny_config(split: usize) -> TwoStreamConfig {
    TwoStreamConfig {
        stages: vec![
            StageSpec::new(2, 4, 1),
            StageSpec::new(4, 4, 2),
            StageSpec::new(4, 4, 1),
            StageSpec::new(4, 4, 1),
            StageSpec::new(4, 4, 1),
        ],
        split_index: split,
        input_grid: Grid::new(8, 4, 2),
        num_parts: 2,
        embed_dim: 3,
        gem_p_init: 3.0,
        num_classes: 3,
        learnable_gem: true,
        pooling: vtreid_core::PoolingKind::Gem,
    }
}

pub fn lcg_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Wider variant of [`tiny_config`] for training runs.
pub fn small_config(split: usize) -> TwoStreamConfig {
    TwoStreamConfig {
        stages: vec![
            StageSpec::new(2, 8, 1),
            StageSpec::new(8, 8, 2),
            StageSpec::new(8, 16, 1),
            StageSpec::new(16, 16, 1),
            StageSpec::new(16, 16, 1),
        ],
        embed_dim: 16,
        ..tiny_config(split)
    }
}
