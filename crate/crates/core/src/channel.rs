//! AWGN and block-flat Rayleigh channels with perfect-CSI zero forcing.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::constellation::SymbolBlock;
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Gains below this magnitude are redrawn from the next sub-stream.
pub const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub kind: ChannelKind,
    pub snr_db: f64,
    /// Mean symbol energy the SNR is referenced to.
    pub power: f64,
}

impl ChannelParams {
    pub fn new(kind: ChannelKind, snr_db: f64, power: f64) -> Result<Self> {
        let p = Self { kind, snr_db, power };
        p.validate()?;
        Ok(p)
    }

    pub fn awgn(snr_db: f64, power: f64) -> Result<Self> {
        Self::new(ChannelKind::Awgn, snr_db, power)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::InvalidPower(self.power));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::Config(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        Ok(())
    }
}

/// Complex noise variance `E_s / 10^(snr/10)`.
pub fn noise_sigma2(params: &ChannelParams) -> f64 {
    params.power / 10f64.powf(params.snr_db / 10.0)
}

/// What the receiver sees after equalization: `output = input + error`.
#[derive(Debug, Clone, PartialEq)]
pub struct Impairment {
    pub gain: Complex64,
    /// Sub-streams skipped because the drawn gain was below [`MIN_GAIN`].
    pub redraws: u32,
    pub error: Vec<Complex64>,
}

/// Draws the post-equalization error for a block of `n` symbols.
///
/// AWGN: `error = n` with per-component variance `sigma^2 / 2`.
/// Rayleigh: one unit mean-square complex gain `h` per block and
/// `error = n / h`, the residual after zero forcing `(h s + n) / h`.
pub fn draw_impairment(n: usize, params: &ChannelParams, rng: RngState) -> Result<Impairment> {
    params.validate()?;
    let std = (noise_sigma2(params) / 2.0).sqrt();
    let mut noise_rng = rng.child("awgn").rng();
    let noise: Vec<Complex64> = (0..n)
        .map(|_| {
            let re: f64 = noise_rng.sample(StandardNormal);
            let im: f64 = noise_rng.sample(StandardNormal);
            Complex64::new(std * re, std * im)
        })
        .collect();
    match params.kind {
        ChannelKind::Awgn => Ok(Impairment {
            gain: Complex64::new(1.0, 0.0),
            redraws: 0,
            error: noise,
        }),
        ChannelKind::Rayleigh => {
            let fading = rng.child("fading");
            let mut redraws = 0u32;
            let gain = loop {
                let mut g = fading.substream(u64::from(redraws)).rng();
                let re: f64 = g.sample(StandardNormal);
                let im: f64 = g.sample(StandardNormal);
                let h = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
                if h.norm() >= MIN_GAIN {
                    break h;
                }
                redraws += 1;
            };
            Ok(Impairment {
                gain,
                redraws,
                error: noise.into_iter().map(|n| n / gain).collect(),
            })
        }
    }
}

/// Channel output together with the realization that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub block: SymbolBlock,
    pub gain: Complex64,
    pub redraws: u32,
}

/// Passes a block through the channel and equalizes it.
pub fn transmit(block: &SymbolBlock, params: &ChannelParams, rng: RngState) -> Result<Received> {
    let imp = draw_impairment(block.len(), params, rng)?;
    let samples = block
        .samples()
        .iter()
        .zip(&imp.error)
        .map(|(s, e)| s + e)
        .collect();
    Ok(Received {
        block: SymbolBlock::new(samples)?,
        gain: imp.gain,
        redraws: imp.redraws,
    })
}
