//! Counter-based random streams. Every consumer draws from `(seed, stream)` so runs are
//! replayable and independent of thread scheduling.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const STREAM_COEFFICIENTS: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_INITIAL: u64 = 3;
/// Monte Carlo trial `i` uses stream `STREAM_TRIAL_BASE + i`.
pub const STREAM_TRIAL_BASE: u64 = 1 << 32;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}
