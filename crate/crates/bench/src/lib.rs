//! Fixtures shared by the benches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vmr_core::synth::{generate, SynthConfig};
use vmr_core::{Dataset, ModelParams};

/// Synthetic corpus with `n_videos` videos and untrained parameters.
pub fn fixture(n_videos: usize, n_train: usize) -> (Dataset, ModelParams) {
    let cfg = SynthConfig {
        n_videos,
        n_train,
        n_val: 0,
        n_test: 64,
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg).expect("valid synth config");
    let ds = corpus.dataset;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = ModelParams::random(16, ds.d_q().unwrap(), ds.d_v().unwrap(), &mut rng);
    (ds, params)
}
