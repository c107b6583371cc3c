//! Counter-based random streams.
//!
//! Every stochastic consumer (a patient's MH chain, a simulated patient, a GMM
//! restart) owns a ChaCha stream keyed by `(master seed, domain, index)`, so
//! results do not depend on evaluation order or on how work is split across
//! threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream domains. Distinct domains never share key material.
pub mod domain {
    pub const SIMULATE_PATIENT: u64 = 1;
    pub const SAEM_PATIENT: u64 = 2;
    pub const SAEM_POPULATION: u64 = 3;
    pub const GMM_RESTART: u64 = 4;
    pub const PERSONALIZE: u64 = 5;
    pub const REPLICATE: u64 = 6;
    pub const GENERIC: u64 = 7;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream `index` within `domain` for the given master seed.
pub fn stream(seed: u64, domain: u64, index: u64) -> StreamRng {
    let key = splitmix64(seed ^ splitmix64(domain));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. for the `r`-th replicate of a study.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain)) ^ index)
}
