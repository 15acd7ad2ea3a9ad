//! Dataset indexing, PK batch sampling, augmentation and synthetic data.

mod augment;
mod dataset;
mod grid_file;
mod sampler;
mod synthetic;

pub use augment::{augment, flip_columns, pad_crop, CROP_PAD};
pub use dataset::{DatasetIndex, ImageRecord, MiniBatch};
pub use grid_file::{load_grid, read_grid, save_grid, write_grid, GRID_EXTENSION, GRID_MAGIC, GRID_VERSION};
pub use sampler::{batches_per_epoch, derive_seed, pk_sample, pk_sample_with};
pub use synthetic::{generate_synthetic, ModalityShift, SyntheticSpec};
