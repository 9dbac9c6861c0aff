//! Monte Carlo estimators that run the actual chains and count.
//!
//! Work is split into fixed chunks, each on its own sub-stream, so the
//! result only depends on `(rng, n)`, never on the number of workers.

use rayon::prelude::*;

use crate::channel::{noise_sigma2, ChannelParams};
use crate::constellation::{ConstellationSpec, SymbolBlock};
use crate::error::{Error, Result};
use crate::modem::{hard_chain, relaxed_chain, relaxed_chain_with, Dither};
use crate::rng::RngState;

use super::density::ScalarDensity;

pub const MIN_SAMPLES: usize = 10_000;
pub const MIN_BINS: usize = 32;

/// Components per chunk.
const CHUNK: usize = 1 << 16;
/// Complex symbols per channel block (one fading draw per block).
const BLOCK: usize = 64;

/// Worker count for Monte Carlo runs: `DJCM_THREADS` if set, else all cores.
pub fn worker_count() -> usize {
    std::env::var("DJCM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(worker_count()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Runs `per_block` over `n` source components grouped in blocks and folds
/// the per-chunk accumulators in chunk order.
fn run_chunks<A, F>(
    source: &ScalarDensity,
    n: usize,
    rng: RngState,
    init: impl Fn() -> A + Sync,
    per_block: F,
) -> Result<Vec<A>>
where
    A: Send,
    F: Fn(&mut A, &SymbolBlock, usize, RngState) -> Result<()> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    with_pool(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let chunk_rng = rng.substream(c as u64);
                let mut draw = chunk_rng.child("source").rng();
                let mut acc = init();
                let count = CHUNK.min(n - c * CHUNK);
                let mut done = 0;
                let mut b = 0u64;
                while done < count {
                    let take = (2 * BLOCK).min(count - done);
                    let mut reals: Vec<f64> = (0..take).map(|_| source.sample(&mut draw)).collect();
                    if reals.len() % 2 == 1 {
                        reals.push(0.0);
                    }
                    let block = SymbolBlock::from_interleaved(&reals)?;
                    per_block(&mut acc, &block, take, chunk_rng.substream(b))?;
                    done += take;
                    b += 1;
                }
                Ok(acc)
            })
            .collect()
    })
}

/// Frequencies of each demodulated level (`1..=side`) over `n` components.
pub fn mc_hard_pmf(
    source: &ScalarDensity,
    params: &ChannelParams,
    spec: &ConstellationSpec,
    n: usize,
    rng: RngState,
) -> Result<Vec<f64>> {
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientSamples { min: MIN_SAMPLES, got: n });
    }
    let side = spec.side();
    let counts = run_chunks(
        source,
        n,
        rng,
        || vec![0u64; side],
        |acc, block, take, r| {
            let out = hard_chain(block, spec, params, r)?;
            for x in out.demodulated.to_interleaved().into_iter().take(take) {
                acc[spec.level_index(x) - 1] += 1;
            }
            Ok(())
        },
    )?;
    let mut total = vec![0u64; side];
    for c in counts {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    Ok(total.into_iter().map(|c| c as f64 / n as f64).collect())
}

/// Normalized histogram on equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub density: Vec<f64>,
    /// Samples that fell outside `[lo, hi]` and were folded into the end bins.
    pub folded: u64,
}

impl Histogram {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.density.len() as f64
    }

    pub fn bin_of(&self, x: f64) -> usize {
        (((x - self.lo) / self.width()).floor().max(0.0) as usize).min(self.density.len() - 1)
    }

    pub fn centre(&self, b: usize) -> f64 {
        self.lo + (b as f64 + 0.5) * self.width()
    }

    pub fn density_at(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        self.density[self.bin_of(x)]
    }

    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.width()
    }

    /// Smooths with a Gaussian kernel of standard deviation `bandwidth`,
    /// truncated at four bandwidths and renormalized.
    pub fn smoothed(&self, bandwidth: f64) -> Histogram {
        let w = self.width();
        let reach = ((4.0 * bandwidth / w).ceil() as isize).max(0);
        let kernel: Vec<f64> = (-reach..=reach)
            .map(|k| (-0.5 * (k as f64 * w / bandwidth).powi(2)).exp())
            .collect();
        let nb = self.density.len() as isize;
        let mut out: Vec<f64> = (0..nb)
            .map(|i| {
                let (mut acc, mut wsum) = (0.0, 0.0);
                for (j, k) in kernel.iter().enumerate() {
                    let src = i + j as isize - reach;
                    if (0..nb).contains(&src) {
                        acc += k * self.density[src as usize];
                        wsum += k;
                    }
                }
                acc / wsum
            })
            .collect();
        let total: f64 = out.iter().sum::<f64>() * w;
        out.iter_mut().for_each(|v| *v /= total);
        Histogram {
            density: out,
            ..self.clone()
        }
    }
}

/// Histogram density of the relaxed-chain output over
/// `[-sqrt(M) d - 4 sigma, sqrt(M) d + 4 sigma]`.
pub fn mc_relaxed_density(
    source: &ScalarDensity,
    params: &ChannelParams,
    spec: &ConstellationSpec,
    n: usize,
    rng: RngState,
    bins: usize,
) -> Result<Histogram> {
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientSamples { min: MIN_SAMPLES, got: n });
    }
    if bins < MIN_BINS {
        return Err(Error::InsufficientBins { min: MIN_BINS, got: bins });
    }
    let reach = spec.half_span() + 4.0 * noise_sigma2(params).sqrt();
    relaxed_histogram(source, params, spec, n, rng, -reach, reach, bins, true)
}

/// As [`mc_relaxed_density`] but with both dither draws pinned to zero.
pub fn mc_relaxed_density_undithered(
    source: &ScalarDensity,
    params: &ChannelParams,
    spec: &ConstellationSpec,
    n: usize,
    rng: RngState,
    bins: usize,
) -> Result<Histogram> {
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientSamples { min: MIN_SAMPLES, got: n });
    }
    if bins < MIN_BINS {
        return Err(Error::InsufficientBins { min: MIN_BINS, got: bins });
    }
    let reach = spec.half_span() + 4.0 * noise_sigma2(params).sqrt();
    relaxed_histogram(source, params, spec, n, rng, -reach, reach, bins, false)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn relaxed_histogram(
    source: &ScalarDensity,
    params: &ChannelParams,
    spec: &ConstellationSpec,
    n: usize,
    rng: RngState,
    lo: f64,
    hi: f64,
    bins: usize,
    dither: bool,
) -> Result<Histogram> {
    let width = (hi - lo) / bins as f64;
    let parts = run_chunks(
        source,
        n,
        rng,
        || (vec![0u64; bins], 0u64),
        |acc, block, take, r| {
            let out = if dither {
                relaxed_chain(block, spec, params, r)?
            } else {
                relaxed_chain_with(block, spec, params, r, &Dither::zeros(block.len()))?
            };
            for x in out.output.to_interleaved().into_iter().take(take) {
                if x < lo || x > hi {
                    acc.1 += 1;
                }
                let b = (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1);
                acc.0[b] += 1;
            }
            Ok(())
        },
    )?;
    let mut counts = vec![0u64; bins];
    let mut folded = 0;
    for (c, f) in parts {
        folded += f;
        for (t, v) in counts.iter_mut().zip(c) {
            *t += v;
        }
    }
    Ok(Histogram {
        lo,
        hi,
        density: counts.into_iter().map(|c| c as f64 / (n as f64 * width)).collect(),
        folded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::build_spec;

    fn noiseless() -> ChannelParams {
        ChannelParams::awgn(1e6, 1.0).unwrap()
    }

    #[test]
    fn pinned_source_hits_one_level() {
        let spec = build_spec(16, 1.0).unwrap();
        let src = ScalarDensity::PointMass { at: spec.level(3) };
        let f = mc_hard_pmf(&src, &noiseless(), &spec, 20_000, RngState::new(0, 0)).unwrap();
        assert_eq!(f, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let spec = build_spec(64, 1.0).unwrap();
        let src = ScalarDensity::uniform_clipped(&spec);
        let p = ChannelParams::awgn(10.0, 1.0).unwrap();
        let a = mc_hard_pmf(&src, &p, &spec, 200_001, RngState::new(3, 1)).unwrap();
        let b = mc_hard_pmf(&src, &p, &spec, 200_001, RngState::new(3, 1)).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| {
                let source = src.clone();
                run_chunks(&source, 200_001, RngState::new(3, 1), || 0usize, |acc, _, t, _| {
                    *acc += t;
                    Ok(())
                })
            })
            .unwrap();
        assert_eq!(single.iter().sum::<usize>(), 200_001);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_runs() {
        let spec = build_spec(4, 1.0).unwrap();
        let src = ScalarDensity::uniform_clipped(&spec);
        assert!(matches!(
            mc_hard_pmf(&src, &noiseless(), &spec, 100, RngState::new(0, 0)),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            mc_relaxed_density(&src, &noiseless(), &spec, 10_000, RngState::new(0, 0), 8),
            Err(Error::InsufficientBins { .. })
        ));
    }

    #[test]
    fn randomness_off_lands_in_one_bin() {
        let spec = build_spec(64, 1.0).unwrap();
        let c = 0.3;
        let src = ScalarDensity::PointMass { at: c };
        let h = mc_relaxed_density_undithered(&src, &noiseless(), &spec, 10_000, RngState::new(2, 0), 64)
            .unwrap();
        let b = h.bin_of(c);
        assert!((h.density[b] * h.width() - 1.0).abs() < 1e-12);
        assert_eq!(h.density.iter().filter(|v| **v > 0.0).count(), 1);
    }

    #[test]
    fn dithered_mass_stays_within_two_spacings() {
        let spec = build_spec(1024, 1.0).unwrap();
        let c = 0.3;
        let src = ScalarDensity::PointMass { at: c };
        let h = mc_relaxed_density(&src, &noiseless(), &spec, 10_000, RngState::new(2, 0), 64).unwrap();
        assert!((h.integral() - 1.0).abs() < 1e-12);
        let d = spec.spacing;
        let inside: f64 = (0..h.density.len())
            .filter(|b| (h.centre(*b) - c).abs() <= 2.0 * d + h.width())
            .map(|b| h.density[b] * h.width())
            .sum();
        assert!((inside - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_keeps_normalization() {
        let h = Histogram {
            lo: 0.0,
            hi: 1.0,
            density: (0..50).map(|i| if i == 25 { 50.0 } else { 0.0 }).collect(),
            folded: 0,
        };
        let s = h.smoothed(0.05);
        assert!((s.integral() - 1.0).abs() < 1e-12);
        assert!(s.density[25] < 50.0 && s.density[24] > 0.0);
    }
}
