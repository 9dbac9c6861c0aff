//! Deterministic per-component probabilities of the demodulated level
//! (hard chain) and the density of the relaxed-chain output.
//!
//! Integration limits are the nearest-point decision regions: level `m`
//! receives every point within `d` of it, and the outermost levels receive
//! everything beyond.

use crate::constellation::ConstellationSpec;
use crate::error::{Error, Result};
use crate::quad::integrate_pieces;

use super::density::{ScalarDensity, MASS_TOL};

/// Absolute tolerance of the outer integrals.
pub const ORACLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Lower,
    Upper,
}

/// Mass of the source inside each modulation cell, `t = 1..=side`. The two
/// outer cells extend to infinity.
pub fn cell_masses(source: &ScalarDensity, spec: &ConstellationSpec) -> Vec<f64> {
    let side = spec.side();
    let d = spec.spacing;
    (1..=side)
        .map(|t| {
            let v = spec.level(t);
            let lo = if t == 1 { f64::NEG_INFINITY } else { v - d };
            let hi = if t == side { f64::INFINITY } else { v + d };
            source.mass(lo, hi)
        })
        .collect()
}

/// `P(level m received | level t sent)` for the given error law.
fn transition(m: usize, t: usize, error: &ScalarDensity, spec: &ConstellationSpec) -> f64 {
    let side = spec.side();
    let d = spec.spacing;
    let offset = 2.0 * (m as f64 - t as f64) * d;
    let lo = if m == 1 { f64::NEG_INFINITY } else { offset - d };
    let hi = if m == side { f64::INFINITY } else { offset + d };
    error.mass(lo, hi)
}

fn level_pmf_with(cells: &[f64], m: usize, error: &ScalarDensity, spec: &ConstellationSpec) -> f64 {
    cells
        .iter()
        .enumerate()
        .map(|(i, c)| if *c == 0.0 { 0.0 } else { c * transition(m, i + 1, error, spec) })
        .sum()
}

/// Probability that the hard chain delivers inner level `m` (`2..=side-1`).
pub fn inner_pmf(
    m: usize,
    source: &ScalarDensity,
    error: &ScalarDensity,
    spec: &ConstellationSpec,
) -> Result<f64> {
    let side = spec.side();
    if m < 2 || m + 1 > side {
        return Err(Error::WrongRegion {
            level: m,
            side,
            expected: "an inner level",
        });
    }
    Ok(level_pmf_with(&cell_masses(source, spec), m, error, spec))
}

/// Probability that the hard chain delivers an outermost level.
pub fn edge_pmf(
    edge: Edge,
    source: &ScalarDensity,
    error: &ScalarDensity,
    spec: &ConstellationSpec,
) -> f64 {
    let m = match edge {
        Edge::Lower => 1,
        Edge::Upper => spec.side(),
    };
    level_pmf_with(&cell_masses(source, spec), m, error, spec)
}

/// Hard-chain PMF over all levels `1..=side`.
pub fn hard_pmf(source: &ScalarDensity, error: &ScalarDensity, spec: &ConstellationSpec) -> Vec<f64> {
    let cells = cell_masses(source, spec);
    (1..=spec.side())
        .map(|m| level_pmf_with(&cells, m, error, spec))
        .collect()
}

/// Density of the relaxed-chain output at `x`:
///
/// `p(x) = 1/(4 d^2) ∫ P_s[v-d, v+d) · P_e[x-v-d, x-v+d) dv`
///
/// with `v` running over the source support widened by `d`.
pub fn relaxed_density(
    x: f64,
    source: &ScalarDensity,
    error: &ScalarDensity,
    spec: &ConstellationSpec,
) -> f64 {
    let d = spec.spacing;
    let (slo, shi) = source.support();
    let (elo, ehi) = error.support();
    // the error window must overlap the error support
    let lo = (slo - d).max(x - ehi - d);
    let hi = (shi + d).min(x - elo + d);
    if hi <= lo {
        return 0.0;
    }
    let mut breaks: Vec<f64> = Vec::new();
    for b in source.breakpoints().into_iter().chain(source.atoms().into_iter().map(|a| a.0)) {
        breaks.push(b - d);
        breaks.push(b + d);
    }
    for b in error.breakpoints().into_iter().chain(error.atoms().into_iter().map(|a| a.0)) {
        breaks.push(x - b - d);
        breaks.push(x - b + d);
    }
    let scale = 1.0 / (4.0 * d * d);
    integrate_pieces(
        |v| {
            let s = source.mass(v - d, v + d);
            if s <= MASS_TOL * 1e-3 {
                return 0.0;
            }
            s * error.mass(x - v - d, x - v + d) * scale
        },
        lo,
        hi,
        &breaks,
        ORACLE_TOL,
    )
}
