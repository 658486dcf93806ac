//! Fixed-seed instances shared by the benchmarks.

use surplus_auctions::experiments::{random_instance, trial_rng, RandomClass};
use surplus_auctions::Instance;

pub const SEED: u64 = 0x5eed;

/// Deterministic random instance of `class` with `n` agents and `m` items.
pub fn fixture(class: RandomClass, n: usize, m: usize) -> Instance {
    let mut rng = trial_rng(SEED, (n * 1000 + m) as u64);
    random_instance(class, n, m, &mut rng).expect("fixture instance")
}
