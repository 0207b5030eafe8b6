#![allow(dead_code)]

use densecap_core::config::{CaptionHeadKind, ModelConfig};
use densecap_core::params::ParamStore;
use densecap_core::scalar::Scalar;
use densecap_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| T::from_f64_lossy(rng.random_range(lo..hi))).collect(),
    )
}

/// Overwrites every parameter with uniform noise in `[-scale, scale]`.
pub fn randomize<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = T::from_f64_lossy(rng.random_range(-scale..scale));
        }
    }
}

/// Width-8 model used by the gradient checks.
pub fn tiny_config(head: CaptionHeadKind, weak: bool) -> ModelConfig {
    ModelConfig {
        input_dim: 6,
        temporal_length: 8,
        num_levels: 2,
        d_model: 8,
        ffn_dim: 12,
        heads: 2,
        points: 2,
        enc_layers: 1,
        dec_layers: 1,
        num_queries: 2,
        max_count: 3,
        vocab_size: 9,
        max_caption_len: 5,
        caption_head: head,
        caption_hidden: 6,
        word_dim: 4,
        norm_groups: 2,
        weak_supervision: weak,
    }
}
