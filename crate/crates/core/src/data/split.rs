use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Sizes of the three parts: floors of the first two shares, remainder last.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || total <= 0.0 {
        return Err(Error::invalid(format!("bad split ratios {ratios:?}")));
    }
    let a = (n as f64 * ratios[0] / total).floor() as usize;
    let b = ((n as f64 * ratios[1] / total).floor() as usize).min(n - a);
    Ok([a, b, n - a - b])
}

/// Seeded shuffle, then contiguous train/dev/test cuts.
pub fn split<T>(mut items: Vec<T>, ratios: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let [a, b, _] = split_sizes(items.len(), ratios)?;
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = items.split_off(a + b);
    let dev = items.split_off(a);
    Ok((items, dev, test))
}
