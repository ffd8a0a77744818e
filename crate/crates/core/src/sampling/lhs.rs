use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Latin hypercube sample of `n` points in the box `bounds`.
///
/// Each coordinate range is cut into `n` equal strata and every stratum holds
/// exactly one point. Points lie strictly inside their strata, so the sample
/// never touches the box faces.
pub fn latin_hypercube(n: usize, bounds: &[(f64, f64)], seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    latin_hypercube_with(n, bounds, &mut rng)
}

pub fn latin_hypercube_with<R: Rng>(n: usize, bounds: &[(f64, f64)], rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::config("latin hypercube needs at least one point"));
    }
    if let Some((lo, hi)) = bounds.iter().find(|(lo, hi)| !(lo < hi)) {
        return Err(Error::config(format!("empty interval [{lo}, {hi}]")));
    }
    let mut points = vec![vec![0.0; bounds.len()]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for (dim, &(lo, hi)) in bounds.iter().enumerate() {
        strata.shuffle(rng);
        let width = (hi - lo) / n as f64;
        for (point, &k) in points.iter_mut().zip(&strata) {
            // Keep away from stratum edges so rounding cannot move a point
            // into the neighbouring stratum.
            let u: f64 = rng.random_range(1e-9..1.0 - 1e-9);
            point[dim] = lo + (k as f64 + u) * width;
        }
    }
    Ok(points)
}
