use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{DatasetIndex, MiniBatch};
use crate::error::{Error, Result};
use crate::modality::Modality;

/// Mixes a base seed with a path of indices into an independent stream seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    // splitmix64 finalizer per step
    let mut z = seed;
    for &p in path {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Draws `P` identities without replacement, then `K` visible and `K`
/// thermal images of each. Images are drawn without replacement unless an
/// identity has fewer than `K` images in a modality.
pub fn pk_sample(index: &DatasetIndex, p: usize, k: usize, seed: u64) -> Result<MiniBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pk_sample_with(index, p, k, &mut rng)
}

pub fn pk_sample_with(index: &DatasetIndex, p: usize, k: usize, rng: &mut impl Rng) -> Result<MiniBatch> {
    if p == 0 || k == 0 {
        return Err(Error::config("P and K must be positive"));
    }
    let n = index.num_identities();
    if n < p {
        return Err(Error::invalid(format!("dataset has {n} identities, batch needs P = {p}")));
    }
    let ids = sample(rng, n, p).into_vec();
    let mut batch = MiniBatch {
        images: Vec::with_capacity(2 * p * k),
        labels: Vec::with_capacity(2 * p * k),
        modalities: Vec::with_capacity(2 * p * k),
        sources: Vec::with_capacity(2 * p * k),
    };
    for id in ids {
        for m in Modality::ALL {
            let pool = index.indices(id, m);
            let picks: Vec<usize> = if pool.len() >= k {
                sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
            } else {
                (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
            };
            for src in picks {
                batch.images.push(index.image(src).clone());
                batch.labels.push(id);
                batch.modalities.push(m);
                batch.sources.push(src);
            }
        }
    }
    Ok(batch)
}

/// Batches per epoch: `ceil(total_images / 2PK)`.
pub fn batches_per_epoch(total_images: usize, p: usize, k: usize) -> usize {
    total_images.div_ceil(2 * p * k).max(1)
}
