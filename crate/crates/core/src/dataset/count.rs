use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Mean of the underlying normal, calibrated so the rounded and clamped
/// count over `1..=5` has mean 2.5581.
pub const DEFAULT_COUNT_MEAN: f64 = 2.4889;
/// Standard deviation of the underlying normal, calibrated so the clamped
/// count has standard deviation 1.1926.
pub const DEFAULT_COUNT_STD: f64 = 1.3383;
pub const DEFAULT_MAX_INSTANCES: usize = 5;

/// Number of foreground instances for one video: a normal draw rounded to the
/// nearest integer and clamped to `[1, max_n]`.
pub fn sample_instance_count(seed: u64, mean: f64, std: f64, max_n: usize) -> Result<usize> {
    if max_n < 1 {
        return Err(Error::Config(format!("max_n must be >= 1, got {max_n}")));
    }
    if !(std >= 0.0) || !mean.is_finite() || !std.is_finite() {
        return Err(Error::Config(format!("invalid count distribution N({mean}, {std})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?;
    let draw: f64 = normal.sample(&mut rng);
    Ok(draw.round().clamp(1.0, max_n as f64) as usize)
}
