//! Seeded generators. Each component draws from its own ChaCha stream, so one
//! seed shared across components (data, initialisation, splits) never makes
//! their draws coincide.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy)]
pub(crate) enum Stream {
    Blobs = 1,
    Subsample,
    TrainInit,
    TrainBatches,
    KMeans,
    ProbeSplit,
    Folds,
}

pub(crate) fn seeded(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
