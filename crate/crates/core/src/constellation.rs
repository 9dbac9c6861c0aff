//! Square QAM grids under an average-power budget, and modulation /
//! demodulation as nearest-level quantization.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a square M-QAM constellation.
///
/// Points sit at `(2m - side - 1) * spacing` per component, `m = 1..=side`,
/// with `side = sqrt(order)`. The spacing is chosen so that uniform use of
/// all points meets `power` with equality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstellationSpec {
    pub order: u32,
    pub power: f64,
    /// Half the minimum distance between points, `d`.
    pub spacing: f64,
    /// Outermost per-component level, `(side - 1) * d`.
    pub bound: f64,
}

/// Builds the constellation for `order` points and mean symbol energy `power`.
pub fn build_spec(order: u32, power: f64) -> Result<ConstellationSpec> {
    let side = exact_sqrt(order).filter(|_| order >= 4).ok_or(Error::InvalidOrder(order))?;
    if !(power.is_finite() && power > 0.0) {
        return Err(Error::InvalidPower(power));
    }
    let spacing = (3.0 * power / (2.0 * (f64::from(order) - 1.0))).sqrt();
    Ok(ConstellationSpec {
        order,
        power,
        spacing,
        bound: f64::from(side - 1) * spacing,
    })
}

fn exact_sqrt(n: u32) -> Option<u32> {
    let r = n.isqrt();
    (r * r == n).then_some(r)
}

impl ConstellationSpec {
    /// Points per component, `sqrt(M)`.
    pub fn side(&self) -> usize {
        self.order.isqrt() as usize
    }

    /// Value of level `m` (1-based, `1..=side`).
    pub fn level(&self, m: usize) -> f64 {
        (2 * m as i64 - self.side() as i64 - 1) as f64 * self.spacing
    }

    pub fn levels(&self) -> Vec<f64> {
        (1..=self.side()).map(|m| self.level(m)).collect()
    }

    /// `sqrt(M) * d`, the half-width of the union of all decision cells that
    /// intersect the clipped range.
    pub fn half_span(&self) -> f64 {
        self.side() as f64 * self.spacing
    }

    pub fn grid_points(&self) -> Vec<Complex64> {
        let levels = self.levels();
        levels
            .iter()
            .flat_map(|&i| levels.iter().map(move |&q| Complex64::new(i, q)))
            .collect()
    }

    /// Mean `|p|^2` over all grid points.
    pub fn mean_grid_energy(&self) -> f64 {
        let pts = self.grid_points();
        pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64
    }

    /// 1-based index of the level nearest to `x`; ties go to the level of
    /// larger magnitude (to `+d` at the origin of an even grid).
    pub fn level_index(&self, x: f64) -> usize {
        let side = self.side();
        let d = self.spacing;
        let mag = x.abs();
        let positive = x >= 0.0;
        if side.is_multiple_of(2) {
            // positive levels (2j + 1) d, j = 0..side/2
            let j = ((mag - d) / (2.0 * d) + 0.5).floor().clamp(0.0, (side / 2 - 1) as f64) as usize;
            if positive {
                side / 2 + 1 + j
            } else {
                side / 2 - j
            }
        } else {
            // levels 2 j d, j = 0..=(side-1)/2
            let j = (mag / (2.0 * d) + 0.5).floor().clamp(0.0, ((side - 1) / 2) as f64) as usize;
            let centre = side / 2 + 1;
            if positive {
                centre + j
            } else {
                centre - j
            }
        }
    }

    /// Nearest level to a real component.
    pub fn quantize_component(&self, x: f64) -> f64 {
        self.level(self.level_index(x))
    }

    pub fn clip_component(&self, x: f64) -> f64 {
        x.clamp(-self.bound, self.bound)
    }
}

/// A non-empty block of finite complex channel samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    samples: Vec<Complex64>,
}

impl SymbolBlock {
    pub fn new(samples: Vec<Complex64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidLength("symbol block must hold at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::InvalidSample { index: i });
        }
        Ok(Self { samples })
    }

    /// Pairs consecutive reals as (I, Q).
    pub fn from_interleaved(reals: &[f64]) -> Result<Self> {
        if !reals.len().is_multiple_of(2) {
            return Err(Error::InvalidLength(format!(
                "interleaved I/Q needs an even count, got {}",
                reals.len()
            )));
        }
        Self::new(reals.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect())
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        self.samples.iter().flat_map(|s| [s.re, s.im]).collect()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub(crate) fn map_components<F: Fn(f64) -> f64>(&self, f: F) -> Self {
        Self {
            samples: self.samples.iter().map(|s| Complex64::new(f(s.re), f(s.im))).collect(),
        }
    }
}

/// Modulator and demodulator: each component goes to its nearest level.
/// Values beyond the outer levels saturate.
pub fn grid_quantize(block: &SymbolBlock, spec: &ConstellationSpec) -> SymbolBlock {
    block.map_components(|x| spec.quantize_component(x))
}

/// Limits every component to `[-A, A]`.
pub fn clip(block: &SymbolBlock, spec: &ConstellationSpec) -> SymbolBlock {
    block.map_components(|x| spec.clip_component(x))
}

/// Mean energy per complex sample.
pub fn average_power(block: &SymbolBlock) -> f64 {
    block.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / block.len() as f64
}
