use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::channel::{noise_sigma2, ChannelKind, ChannelParams};
use crate::constellation::ConstellationSpec;
use crate::error::{Error, Result};
use crate::quad::integrate_pieces;

/// Gaussian tails are cut where the density drops to 1e-16 of its peak,
/// i.e. at `sqrt(2 ln 1e16)` standard deviations.
pub const GAUSSIAN_TAIL: f64 = 8.583_864_105_157_82;

/// Absolute tolerance for the inner mass integrals.
pub(crate) const MASS_TOL: f64 = 1e-13;

const SQRT_2PI: f64 = 2.506_628_274_631_000_2;

/// A one-dimensional law for a source component or a channel error
/// component: a continuous part plus optional point masses.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarDensity {
    /// Uniform on `[-half_span, half_span]`, then clipped to `[-bound, bound]`.
    /// The clipped tails become atoms at `+-bound`.
    UniformClipped { half_span: f64, bound: f64 },
    /// Gaussian `(mean, scale)` restricted to `[lo, hi]` and renormalized.
    TruncatedGaussian {
        mean: f64,
        scale: f64,
        lo: f64,
        hi: f64,
        norm: f64,
    },
    /// Gaussian error, evaluated out to [`GAUSSIAN_TAIL`] standard deviations.
    Gaussian { mean: f64, std: f64 },
    /// Degenerate error, all mass at one point.
    PointMass { at: f64 },
    /// Piecewise-constant density on equal-width bins starting at `lo`.
    Empirical {
        lo: f64,
        width: f64,
        density: Vec<f64>,
    },
}

/// Named source fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    UniformClipped,
    TruncatedGaussian,
}

impl SourceKind {
    pub fn density(self, spec: &ConstellationSpec) -> ScalarDensity {
        match self {
            SourceKind::UniformClipped => ScalarDensity::uniform_clipped(spec),
            SourceKind::TruncatedGaussian => ScalarDensity::truncated_gaussian(spec),
        }
    }
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

impl ScalarDensity {
    /// The reference source: uniform over all decision cells, clipped to the
    /// outer levels.
    pub fn uniform_clipped(spec: &ConstellationSpec) -> Self {
        ScalarDensity::UniformClipped {
            half_span: spec.half_span(),
            bound: spec.bound,
        }
    }

    /// Second fixture: mean 0, scale `A/2`, truncated to `[-A, A]`.
    pub fn truncated_gaussian(spec: &ConstellationSpec) -> Self {
        let scale = spec.bound / 2.0;
        Self::truncated(0.0, scale, -spec.bound, spec.bound)
    }

    pub fn truncated(mean: f64, scale: f64, lo: f64, hi: f64) -> Self {
        let norm = normal_cdf((hi - mean) / scale) - normal_cdf((lo - mean) / scale);
        ScalarDensity::TruncatedGaussian {
            mean,
            scale,
            lo,
            hi,
            norm,
        }
    }

    /// Per-component error law of an equalized channel. Only AWGN has a
    /// closed form; Rayleigh is Monte Carlo only.
    pub fn channel_error(params: &ChannelParams) -> Result<Self> {
        match params.kind {
            ChannelKind::Awgn => {
                let var = noise_sigma2(params) / 2.0;
                Ok(if var > 0.0 {
                    ScalarDensity::Gaussian {
                        mean: 0.0,
                        std: var.sqrt(),
                    }
                } else {
                    ScalarDensity::PointMass { at: 0.0 }
                })
            }
            ChannelKind::Rayleigh => Err(Error::Unsupported(
                "no quadrature oracle for the equalized Rayleigh error".into(),
            )),
        }
    }

    /// Histogram density from samples over `[lo, hi]`; samples outside are
    /// dropped before normalizing.
    pub fn empirical(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 || hi <= lo {
            return Err(Error::InvalidDensity("empty histogram range".into()));
        }
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        let mut kept = 0usize;
        for &x in samples {
            if x >= lo && x <= hi {
                let b = (((x - lo) / width) as usize).min(bins - 1);
                counts[b] += 1;
                kept += 1;
            }
        }
        if kept == 0 {
            return Err(Error::InvalidDensity("no samples inside the range".into()));
        }
        let density = counts
            .into_iter()
            .map(|c| c as f64 / (kept as f64 * width))
            .collect();
        Ok(ScalarDensity::Empirical { lo, width, density })
    }

    /// Continuous part of the density at `x`.
    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            ScalarDensity::UniformClipped { half_span, bound } => {
                if x.abs() <= *bound {
                    0.5 / half_span
                } else {
                    0.0
                }
            }
            ScalarDensity::TruncatedGaussian {
                mean,
                scale,
                lo,
                hi,
                norm,
            } => {
                if x < *lo || x > *hi {
                    0.0
                } else {
                    let z = (x - mean) / scale;
                    (-0.5 * z * z).exp() / (scale * SQRT_2PI * norm)
                }
            }
            ScalarDensity::Gaussian { mean, std } => {
                let z = (x - mean) / std;
                if z.abs() > GAUSSIAN_TAIL {
                    0.0
                } else {
                    (-0.5 * z * z).exp() / (std * SQRT_2PI)
                }
            }
            ScalarDensity::PointMass { .. } => 0.0,
            ScalarDensity::Empirical { lo, width, density } => {
                if x < *lo {
                    return 0.0;
                }
                let b = ((x - lo) / width) as usize;
                match density.get(b) {
                    Some(v) => *v,
                    None if b == density.len() && x <= lo + width * density.len() as f64 => {
                        density[b - 1]
                    }
                    None => 0.0,
                }
            }
        }
    }

    /// Point masses `(location, mass)`.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match self {
            ScalarDensity::UniformClipped { half_span, bound } => {
                let m = 0.5 * (half_span - bound) / half_span;
                if m > 0.0 {
                    vec![(-*bound, m), (*bound, m)]
                } else {
                    vec![]
                }
            }
            ScalarDensity::PointMass { at } => vec![(*at, 1.0)],
            _ => vec![],
        }
    }

    /// Interval outside of which the law carries no mass (Gaussian tails
    /// truncated).
    pub fn support(&self) -> (f64, f64) {
        match self {
            ScalarDensity::UniformClipped { bound, .. } => (-*bound, *bound),
            ScalarDensity::TruncatedGaussian { lo, hi, .. } => (*lo, *hi),
            ScalarDensity::Gaussian { mean, std } => {
                (mean - GAUSSIAN_TAIL * std, mean + GAUSSIAN_TAIL * std)
            }
            ScalarDensity::PointMass { at } => (*at, *at),
            ScalarDensity::Empirical { lo, width, density } => {
                (*lo, lo + width * density.len() as f64)
            }
        }
    }

    /// Points where the density jumps or kinks.
    pub fn breakpoints(&self) -> Vec<f64> {
        let (lo, hi) = self.support();
        let mut b = vec![lo, hi];
        if let ScalarDensity::Empirical { lo, width, density } = self {
            b.extend((1..density.len()).map(|i| lo + width * i as f64));
        }
        if let ScalarDensity::Gaussian { mean, .. } = self {
            b.push(*mean);
        }
        b
    }

    /// Probability of `[a, b)`: quadrature over the continuous part plus the
    /// atoms inside.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let atoms: f64 = self
            .atoms()
            .iter()
            .filter(|(x, _)| *x >= a && *x < b)
            .map(|(_, m)| m)
            .sum();
        let (lo, hi) = self.support();
        let (a, b) = (a.max(lo), b.min(hi));
        if b <= a || matches!(self, ScalarDensity::PointMass { .. }) {
            return atoms;
        }
        atoms + integrate_pieces(|x| self.pdf(x), a, b, &self.breakpoints(), MASS_TOL)
    }

    pub fn total_mass(&self) -> f64 {
        self.mass(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Checks non-negativity of the parameters and unit total mass.
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            ScalarDensity::UniformClipped { half_span, bound } => {
                *half_span > 0.0 && *bound > 0.0 && bound <= half_span
            }
            ScalarDensity::TruncatedGaussian { scale, lo, hi, norm, .. } => {
                *scale > 0.0 && lo < hi && *norm > 0.0
            }
            ScalarDensity::Gaussian { std, .. } => *std > 0.0,
            ScalarDensity::PointMass { at } => at.is_finite(),
            ScalarDensity::Empirical { width, density, .. } => {
                *width > 0.0 && !density.is_empty() && density.iter().all(|d| *d >= 0.0)
            }
        };
        if !ok {
            return Err(Error::InvalidDensity(format!("bad parameters: {self:?}")));
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidDensity(format!("total mass {total}")));
        }
        Ok(())
    }

    /// Checks that a source law respects the clipping constraint `[-A, A]`.
    pub fn validate_source(&self, spec: &ConstellationSpec) -> Result<()> {
        self.validate()?;
        let (lo, hi) = self.support();
        if lo < -spec.bound - 1e-12 || hi > spec.bound + 1e-12 {
            return Err(Error::InvalidDensity(format!(
                "source support [{lo}, {hi}] exceeds the clipping bound {}",
                spec.bound
            )));
        }
        Ok(())
    }

    /// One draw.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ScalarDensity::UniformClipped { half_span, bound } => {
                rng.random_range(-*half_span..*half_span).clamp(-*bound, *bound)
            }
            ScalarDensity::TruncatedGaussian {
                mean, scale, lo, hi, ..
            } => loop {
                let z: f64 = rng.sample(StandardNormal);
                let x = mean + scale * z;
                if x >= *lo && x <= *hi {
                    break x;
                }
            },
            ScalarDensity::Gaussian { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + std * z
            }
            ScalarDensity::PointMass { at } => *at,
            ScalarDensity::Empirical { lo, width, density } => {
                let total: f64 = density.iter().sum();
                let mut u = rng.random_range(0.0..total);
                for (i, d) in density.iter().enumerate() {
                    if u < *d {
                        return lo + width * (i as f64 + u / d);
                    }
                    u -= d;
                }
                lo + width * density.len() as f64
            }
        }
    }
}
