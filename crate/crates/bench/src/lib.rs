//! Deterministic fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtreid_core::data::{generate_synthetic, DatasetIndex, SyntheticSpec};
use vtreid_core::eval::EmbeddingSet;
use vtreid_core::{Modality, Tensor};

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches data")
}

/// Labels and modality tags of a `P` x (`K` visible + `K` thermal) batch.
pub fn pk_layout(p: usize, k: usize) -> (Vec<usize>, Vec<Modality>) {
    let mut labels = Vec::with_capacity(2 * p * k);
    let mut mods = Vec::with_capacity(2 * p * k);
    for id in 0..p {
        for m in Modality::ALL {
            labels.extend(std::iter::repeat_n(id, k));
            mods.extend(std::iter::repeat_n(m, k));
        }
    }
    (labels, mods)
}

/// `ids` identities with `per_id` images in each modality, clustered around
/// one random centroid per identity.
pub fn retrieval_set(ids: usize, per_id: usize, dim: usize, seed: u64) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centroids: Vec<Vec<f32>> = (0..ids)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    let mut mods = Vec::new();
    for (id, c) in centroids.iter().enumerate() {
        for m in Modality::ALL {
            for _ in 0..per_id {
                vectors.push(c.iter().map(|x| x + rng.gen_range(-0.8..0.8)).collect());
                labels.push(id);
                mods.push(m);
            }
        }
    }
    EmbeddingSet::new(vectors, labels, mods).expect("consistent embedding set")
}

pub fn small_dataset(seed: u64) -> DatasetIndex {
    generate_synthetic(&SyntheticSpec::new(8, 4, seed)).expect("valid synthetic spec")
}
