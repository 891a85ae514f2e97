//! Counter-based random streams.
//!
//! Every random quantity is drawn from a ChaCha stream whose key is a hash of
//! `(seed, domain, replica, item)`. Results therefore never depend on how work
//! is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream domains, one per consumer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    HeatBath = 1,
    QsosMetropolis = 2,
    ConductanceField = 3,
    MixtureSampler = 4,
    Sweep = 5,
    SelfTest = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes an arbitrary list of words into one 64-bit key.
pub fn mix(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908u64, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Stream keyed on `(seed, domain, replica, item)`.
pub fn stream(seed: u64, domain: Domain, replica: u64, item: u64) -> ChaCha8Rng {
    let base = mix(&[seed, domain as u64, replica, item]);
    let mut key = [0u8; 32];
    let mut state = base;
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Key for an unordered pair of signed ids, symmetric in its arguments.
pub fn pair_key(a: i64, b: i64) -> u64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    mix(&[lo as u64, hi as u64])
}
