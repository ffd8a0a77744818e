use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;

/// Adds `epsilon * mean_c * N(0, 1)` to every state component `c`, where
/// `mean_c` is the mean magnitude of that component over all records (the
/// plain mean for positive data).
pub fn add_noise(dataset: &Dataset, epsilon: f64, seed: u64) -> Dataset {
    let mut out = dataset.clone();
    out.noise = epsilon;
    out.noise_seed = Some(seed);
    if epsilon == 0.0 || dataset.records.is_empty() {
        return out;
    }
    let m = dataset.state_dim();
    let n = dataset.records.len() as f64;
    let means: Vec<f64> = (0..m)
        .map(|c| dataset.records.iter().map(|r| r.u[c].abs()).sum::<f64>() / n)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for rec in &mut out.records {
        for (c, v) in rec.u.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += epsilon * means[c] * z;
        }
    }
    out
}
