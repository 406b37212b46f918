use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator for one named purpose within a run. Distinct `stream`
/// values give independent sequences for the same seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
