//! Seeded random streams: one independent stream per (seed, purpose).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for `seed` and a purpose-specific stream number.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
