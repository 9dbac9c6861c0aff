//! The two end-to-end chains: hard modulation / channel / demodulation, and
//! its uniform-noise relaxation.

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{transmit, ChannelParams};
use crate::constellation::{grid_quantize, ConstellationSpec, SymbolBlock};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Stages of `s -> modulate -> channel -> demodulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct HardStages {
    pub modulated: SymbolBlock,
    pub received: SymbolBlock,
    pub demodulated: SymbolBlock,
}

/// Stages of `s -> +u1 -> channel -> +u2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedStages {
    pub dithered: SymbolBlock,
    pub received: SymbolBlock,
    pub output: SymbolBlock,
}

/// The two uniform perturbations of the relaxed chain, one real draw per
/// component, each on `(-d, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dither {
    pub before: Vec<Complex64>,
    pub after: Vec<Complex64>,
}

impl Dither {
    pub fn draw(n: usize, half_width: f64, rng: RngState) -> Self {
        let draw = |state: RngState| {
            let mut r = state.rng();
            (0..n)
                .map(|_| Complex64::new(open_uniform(&mut r, half_width), open_uniform(&mut r, half_width)))
                .collect()
        };
        Self {
            before: draw(rng.child("noise1")),
            after: draw(rng.child("noise2")),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            before: vec![Complex64::new(0.0, 0.0); n],
            after: vec![Complex64::new(0.0, 0.0); n],
        }
    }
}

/// Uniform draw on the open interval `(-h, h)`.
pub(crate) fn open_uniform<R: Rng>(rng: &mut R, h: f64) -> f64 {
    loop {
        let u = rng.random_range(-h..h);
        if u != -h {
            return u;
        }
    }
}

/// Rejects blocks with a component outside `[-A, A]`.
pub fn check_clipped(s: &SymbolBlock, spec: &ConstellationSpec) -> Result<()> {
    for (i, x) in s.to_interleaved().into_iter().enumerate() {
        if x.abs() > spec.bound {
            return Err(Error::ConstraintViolation {
                index: i,
                value: x,
                bound: spec.bound,
            });
        }
    }
    Ok(())
}

pub fn hard_chain(
    s: &SymbolBlock,
    spec: &ConstellationSpec,
    params: &ChannelParams,
    rng: RngState,
) -> Result<HardStages> {
    check_clipped(s, spec)?;
    let modulated = grid_quantize(s, spec);
    let received = transmit(&modulated, params, rng.child("channel"))?.block;
    let demodulated = grid_quantize(&received, spec);
    Ok(HardStages {
        modulated,
        received,
        demodulated,
    })
}

pub fn relaxed_chain(
    s: &SymbolBlock,
    spec: &ConstellationSpec,
    params: &ChannelParams,
    rng: RngState,
) -> Result<RelaxedStages> {
    let dither = Dither::draw(s.len(), spec.spacing, rng);
    relaxed_chain_with(s, spec, params, rng, &dither)
}

/// Relaxed chain with explicit dither draws; the channel still draws from
/// `rng`.
pub fn relaxed_chain_with(
    s: &SymbolBlock,
    spec: &ConstellationSpec,
    params: &ChannelParams,
    rng: RngState,
    dither: &Dither,
) -> Result<RelaxedStages> {
    check_clipped(s, spec)?;
    if dither.before.len() != s.len() || dither.after.len() != s.len() {
        return Err(Error::Shape(format!(
            "dither of length {}/{} for a block of {}",
            dither.before.len(),
            dither.after.len(),
            s.len()
        )));
    }
    let add = |b: &SymbolBlock, u: &[Complex64]| {
        SymbolBlock::new(b.samples().iter().zip(u).map(|(x, u)| x + u).collect())
    };
    let dithered = add(s, &dither.before)?;
    let received = transmit(&dithered, params, rng.child("channel"))?.block;
    let output = add(&received, &dither.after)?;
    Ok(RelaxedStages {
        dithered,
        received,
        output,
    })
}
