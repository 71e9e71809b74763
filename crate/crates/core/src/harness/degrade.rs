use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Synthetic low-light model: `clamp(I^darken + n)` with
/// `n ~ N(0, read^2 + shot^2 * I^darken)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    pub darken_exponent: f32,
    pub read_noise_sigma: f32,
    pub shot_noise_scale: f32,
    pub seed: u64,
}

/// Upper bounds of the noise magnitudes drawn for training and evaluation.
pub const SAMPLED_READ_NOISE_MAX: f32 = 0.02;
pub const SAMPLED_SHOT_NOISE_MAX: f32 = 0.05;

impl DegradationParams {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=5.0).contains(&self.darken_exponent) {
            return Err(Error::InvalidArgument(format!(
                "darken exponent must be in [1, 5], got {}",
                self.darken_exponent
            )));
        }
        for (name, v) in [
            ("read noise", self.read_noise_sigma),
            ("shot noise", self.shot_noise_scale),
        ] {
            if !(0.0..=0.2).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be in [0, 0.2], got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Draw a degradation with the exponent inside `bucket`'s band.
    pub fn sample(rng: &mut impl Rng, bucket: DifficultyBucket) -> Self {
        let (lo, hi) = bucket.band();
        Self {
            darken_exponent: rng.random_range(lo..hi),
            read_noise_sigma: rng.random_range(0.0..=SAMPLED_READ_NOISE_MAX),
            shot_noise_scale: rng.random_range(0.0..=SAMPLED_SHOT_NOISE_MAX),
            seed: rng.random(),
        }
    }

    /// Draw from the full `[1.5, 5]` exponent range.
    pub fn sample_any(rng: &mut impl Rng) -> Self {
        let bucket = DifficultyBucket::ALL[rng.random_range(0..3)];
        Self::sample(rng, bucket)
    }
}

/// Darkening severity bands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyBucket {
    Normal,
    Hard,
    Extreme,
}

impl DifficultyBucket {
    pub const ALL: [Self; 3] = [Self::Normal, Self::Hard, Self::Extreme];

    /// Half-open exponent band (the extreme band includes 5).
    pub fn band(self) -> (f32, f32) {
        match self {
            Self::Normal => (1.5, 2.5),
            Self::Hard => (2.5, 3.5),
            Self::Extreme => (3.5, 5.0),
        }
    }

    pub fn of(darken_exponent: f32) -> Option<Self> {
        Self::ALL.into_iter().find(|b| {
            let (lo, hi) = b.band();
            darken_exponent >= lo
                && (darken_exponent < hi || *b == Self::Extreme && darken_exponent <= hi)
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Hard => "hard",
            Self::Extreme => "extreme",
        }
    }
}

pub fn degrade(img: &Tensor, p: &DegradationParams) -> Result<Tensor> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let (read2, shot2) = (p.read_noise_sigma.powi(2), p.shot_noise_scale.powi(2));
    let noisy = read2 > 0.0 || shot2 > 0.0;
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let dark = v.max(0.0).powf(p.darken_exponent);
            let n = if noisy {
                let z: f32 = StandardNormal.sample(&mut rng);
                z * (read2 + shot2 * dark).sqrt()
            } else {
                0.0
            };
            (dark + n).clamp(0.0, 1.0)
        })
        .collect();
    Tensor::new(img.shape(), data)
}
