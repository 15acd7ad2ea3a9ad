//! Synthetic bimodal identities.
//!
//! Each identity owns a prototype grid built from a few horizontal bands of
//! identity-specific channel vectors plus per-cell texture. Visible images are
//! the prototype plus noise. Thermal images pass the prototype through a fixed
//! channel permutation and per-channel affine map before the noise is added.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::DatasetIndex;
use crate::encoder::Grid;
use crate::error::{Error, Result};
use crate::modality::Modality;
use crate::tensor::Tensor;

/// Fixed visible-to-thermal transform: `t[c] = scale[c] * v[perm[c]] + offset[c]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityShift {
    pub permutation: Vec<usize>,
    pub scale: Vec<f32>,
    pub offset: Vec<f32>,
}

impl ModalityShift {
    pub fn identity(channels: usize) -> Self {
        Self {
            permutation: (0..channels).collect(),
            scale: vec![1.0; channels],
            offset: vec![0.0; channels],
        }
    }

    /// Channel reversal with alternating gain and offset.
    pub fn standard(channels: usize) -> Self {
        Self {
            permutation: (0..channels).rev().collect(),
            scale: (0..channels).map(|c| if c % 2 == 0 { 0.6 } else { 1.4 }).collect(),
            offset: (0..channels).map(|c| if c % 3 == 0 { 0.8 } else { -0.5 }).collect(),
        }
    }

    fn validate(&self, channels: usize) -> Result<()> {
        let mut seen = vec![false; channels];
        if self.permutation.len() != channels || self.scale.len() != channels || self.offset.len() != channels {
            return Err(Error::config(format!("modality shift must cover {channels} channels")));
        }
        for &p in &self.permutation {
            if p >= channels || seen[p] {
                return Err(Error::config("modality shift permutation is not a permutation"));
            }
            seen[p] = true;
        }
        Ok(())
    }

    fn apply(&self, src: &[f32], channels: usize) -> Vec<f32> {
        let mut out = vec![0f32; src.len()];
        for (cell, dst) in src.chunks(channels).zip(out.chunks_mut(channels)) {
            for c in 0..channels {
                dst[c] = self.scale[c] * cell[self.permutation[c]] + self.offset[c];
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_ids: usize,
    pub images_per_modality: usize,
    pub grid: Grid,
    pub shift: ModalityShift,
    pub noise_sigma: f32,
    /// Number of horizontal colour bands in each prototype.
    pub bands: usize,
    /// Standard deviation of the per-cell texture around the band colour.
    pub texture_sigma: f32,
    /// Standard deviation of a per-image offset added to each band colour.
    pub appearance_sigma: f32,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(num_ids: usize, images_per_modality: usize, seed: u64) -> Self {
        let grid = Grid::default();
        Self {
            num_ids,
            images_per_modality,
            grid,
            shift: ModalityShift::standard(grid.channels),
            noise_sigma: 1.0,
            bands: 6,
            texture_sigma: 0.5,
            appearance_sigma: 1.15,
            seed,
        }
    }
}

fn identity_name(i: usize) -> String {
    format!("id{i:04}")
}

/// Builds the dataset in memory. Deterministic given `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetIndex> {
    if spec.num_ids < 2 {
        return Err(Error::config("synthetic data needs at least 2 identities"));
    }
    if spec.images_per_modality == 0 {
        return Err(Error::config("need at least one image per modality"));
    }
    let g = spec.grid;
    if g.rows == 0 || g.cols == 0 || g.channels == 0 {
        return Err(Error::config("grid extents must be positive"));
    }
    if spec.bands == 0 || spec.bands > g.rows {
        return Err(Error::config(format!("{} bands do not fit {} rows", spec.bands, g.rows)));
    }
    if !(spec.noise_sigma >= 0.0 && spec.texture_sigma >= 0.0 && spec.appearance_sigma >= 0.0) {
        return Err(Error::config("noise levels must be non-negative"));
    }
    spec.shift.validate(g.channels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let unit = Normal::new(0.0f32, 1.0).expect("unit normal");
    let mut items = Vec::with_capacity(spec.num_ids * 2 * spec.images_per_modality);
    for id in 0..spec.num_ids {
        let colours: Vec<f32> = (0..spec.bands * g.channels).map(|_| unit.sample(&mut rng)).collect();
        let mut proto = Vec::with_capacity(g.len());
        for r in 0..g.rows {
            let band = r * spec.bands / g.rows;
            for _ in 0..g.cols {
                for ch in 0..g.channels {
                    proto.push(colours[band * g.channels + ch] + spec.texture_sigma * unit.sample(&mut rng));
                }
            }
        }
        for m in Modality::ALL {
            for _ in 0..spec.images_per_modality {
                let shift: Vec<f32> = (0..spec.bands * g.channels)
                    .map(|_| spec.appearance_sigma * unit.sample(&mut rng))
                    .collect();
                let scene: Vec<f32> = proto
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let band = (i / (g.cols * g.channels)) * spec.bands / g.rows;
                        v + shift[band * g.channels + i % g.channels]
                    })
                    .collect();
                let seen = match m {
                    Modality::Visible => scene,
                    Modality::Thermal => spec.shift.apply(&scene, g.channels),
                };
                let data: Vec<f32> = seen
                    .iter()
                    .map(|&v| v + spec.noise_sigma * unit.sample(&mut rng))
                    .collect();
                items.push((identity_name(id), m, Tensor::new(g.shape(), data)?));
            }
        }
    }
    DatasetIndex::from_images(g, items)
}
