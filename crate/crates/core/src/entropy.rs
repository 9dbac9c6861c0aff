//! Rate terms of the learned source coder: the Gaussian likelihood
//! convolved with a unit box, its factorized product, and a logistic
//! stand-in for the factorized prior of the side information.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::modem::open_uniform;
use crate::oracle::density::normal_cdf;
use crate::rng::RngState;

/// Smallest scale the models accept; smaller scales are clamped.
pub const SCALE_MIN: f64 = 1e-6;
/// Likelihoods are floored here before taking logs.
pub const LIKELIHOOD_FLOOR: f64 = 8.881_784_197_001_252e-16; // 2^-50

static SCALE_CLAMPS: AtomicU64 = AtomicU64::new(0);
static FLOOR_HITS: AtomicU64 = AtomicU64::new(0);

/// Counts of silent clamps since process start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Diagnostics {
    pub scale_clamps: u64,
    pub floor_hits: u64,
}

pub fn diagnostics() -> Diagnostics {
    Diagnostics {
        scale_clamps: SCALE_CLAMPS.load(Ordering::Relaxed),
        floor_hits: FLOOR_HITS.load(Ordering::Relaxed),
    }
}

pub(crate) fn clamp_scale(scale: f64) -> f64 {
    if scale < SCALE_MIN {
        SCALE_CLAMPS.fetch_add(1, Ordering::Relaxed);
        SCALE_MIN
    } else {
        scale
    }
}

pub(crate) fn floor_likelihood(p: f64) -> f64 {
    if p < LIKELIHOOD_FLOOR {
        FLOOR_HITS.fetch_add(1, Ordering::Relaxed);
        LIKELIHOOD_FLOOR
    } else {
        p
    }
}

/// Per-element Gaussian parameters predicted from the side information.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyParams {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl EntropyParams {
    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if mean.len() != scale.len() {
            return Err(Error::Shape(format!(
                "{} means for {} scales",
                mean.len(),
                scale.len()
            )));
        }
        Ok(Self {
            mean,
            scale: scale.into_iter().map(clamp_scale).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Mass of `[lo, hi]` under a symmetric CDF, evaluated on whichever tail
/// keeps precision.
fn tail_stable_mass(lo: f64, hi: f64, cdf: impl Fn(f64) -> f64) -> f64 {
    if lo > 0.0 {
        cdf(-lo) - cdf(-hi)
    } else {
        cdf(hi) - cdf(lo)
    }
}

/// `Phi((y - mu + 1/2)/sigma) - Phi((y - mu - 1/2)/sigma)`.
pub fn gu_likelihood(y: f64, mean: f64, scale: f64) -> f64 {
    let s = clamp_scale(scale);
    let c = (y - mean).abs();
    tail_stable_mass((c - 0.5) / s, (c + 0.5) / s, normal_cdf)
}

/// Logistic CDF.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic with location and scale, convolved with the unit box.
pub fn factorized_prior_likelihood(z: f64, loc: f64, scale: f64) -> f64 {
    let s = clamp_scale(scale);
    let c = (z - loc).abs();
    tail_stable_mass((c - 0.5) / s, (c + 0.5) / s, logistic)
}

/// Total bits `sum_i -log2 P(y_i)` under the factorized model.
pub fn sequence_rate_bits(y: &[f64], params: &EntropyParams) -> Result<f64> {
    if y.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} latents for {} entropy parameters",
            y.len(),
            params.len()
        )));
    }
    Ok(y.iter()
        .zip(params.mean.iter().zip(&params.scale))
        .map(|(y, (m, s))| -floor_likelihood(gu_likelihood(*y, *m, *s)).log2())
        .sum())
}

/// Adds independent `U(-1/2, 1/2)` draws, the training-time stand-in for
/// rounding.
pub fn add_training_noise(y: &[f64], rng: RngState) -> Vec<f64> {
    let mut r = rng.rng();
    y.iter().map(|v| v + open_uniform(&mut r, 0.5)).collect()
}

/// Draw from `N(mean, scale^2) * U(-1/2, 1/2)`.
pub fn sample_convolved<R: Rng>(rng: &mut R, mean: f64, scale: f64) -> f64 {
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    mean + scale * z + open_uniform(rng, 0.5)
}
