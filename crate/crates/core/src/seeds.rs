//! Seed plumbing. One root seed per sample path; dwell draws, topology
//! choices and initial data read from separate ChaCha streams of that seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DWELL_STREAM: u64 = 0;
const CHOICE_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `index` in an ensemble rooted at `root`. Depends only on
/// the pair, so adding runs never changes existing ones.
pub fn derive_run_seed(root: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(index.wrapping_add(0x5DEE_CE66_D1CE_5EED)))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Independent generators for one sample path.
#[derive(Clone, Debug)]
pub struct PathRng {
    pub dwell: ChaCha8Rng,
    pub choice: ChaCha8Rng,
    pub init: ChaCha8Rng,
}

impl PathRng {
    pub fn new(seed: u64) -> Self {
        PathRng {
            dwell: stream(seed, DWELL_STREAM),
            choice: stream(seed, CHOICE_STREAM),
            init: stream(seed, INIT_STREAM),
        }
    }
}
