use std::io::Write;

use crate::channel::ChannelParams;
use crate::constellation::ConstellationSpec;
use crate::error::Result;
use crate::rng::RngState;

use super::density::ScalarDensity;
use super::mc::{mc_hard_pmf, mc_relaxed_density};
use super::pmf::{hard_pmf, relaxed_density};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelKind {
    Inner,
    Edge,
}

impl LevelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LevelKind::Inner => "inner",
            LevelKind::Edge => "edge",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    /// 1-based level index `m`.
    pub level: usize,
    pub kind: LevelKind,
    /// `(2m - sqrt(M) - 1) d`.
    pub value: f64,
    pub hard_pmf: f64,
    pub relaxed_density: f64,
    /// `2 d` times the relaxed density.
    pub scaled_density: f64,
    pub mc_pmf: f64,
    pub mc_density: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

/// Level-by-level comparison of the hard chain's PMF with the relaxed
/// chain's density, with Monte Carlo columns alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct DistReport {
    pub order: u32,
    pub snr_db: f64,
    pub spacing: f64,
    pub samples: usize,
    pub records: Vec<LevelRecord>,
    /// Largest relative error over inner levels (`None` when there are none).
    pub delta_inner: Option<f64>,
    pub delta_edge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub samples: usize,
    pub bins: usize,
}

pub const REPORT_HEADER: [&str; 12] = [
    "order",
    "snr_db",
    "level",
    "kind",
    "level_value",
    "hard_pmf",
    "relaxed_density",
    "scaled_density",
    "mc_pmf",
    "mc_density",
    "abs_err",
    "rel_err",
];

pub const SUMMARY_HEADER: [&str; 4] = ["order", "snr_db", "delta_inner", "delta_edge"];

/// Builds the report. The deltas come from the quadrature oracles only.
pub fn equivalence_report(
    spec: &ConstellationSpec,
    params: &ChannelParams,
    source: &ScalarDensity,
    opts: &McOptions,
    rng: RngState,
) -> Result<DistReport> {
    source.validate_source(spec)?;
    let error = ScalarDensity::channel_error(params)?;
    let pmf = hard_pmf(source, &error, spec);
    let mc = mc_hard_pmf(source, params, spec, opts.samples, rng.child("hard"))?;
    let hist = mc_relaxed_density(source, params, spec, opts.samples, rng.child("relaxed"), opts.bins)?;
    let side = spec.side();
    let two_d = 2.0 * spec.spacing;
    let records: Vec<LevelRecord> = (1..=side)
        .map(|m| {
            let value = spec.level(m);
            let density = relaxed_density(value, source, &error, spec);
            let scaled = two_d * density;
            let p = pmf[m - 1];
            let abs_err = (p - scaled).abs();
            LevelRecord {
                level: m,
                kind: if m == 1 || m == side { LevelKind::Edge } else { LevelKind::Inner },
                value,
                hard_pmf: p,
                relaxed_density: density,
                scaled_density: scaled,
                mc_pmf: mc[m - 1],
                mc_density: hist.density_at(value),
                abs_err,
                rel_err: if p > 0.0 { abs_err / p } else { abs_err },
            }
        })
        .collect();
    let max_of = |kind| {
        records
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.rel_err)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    };
    Ok(DistReport {
        order: spec.order,
        snr_db: params.snr_db,
        spacing: spec.spacing,
        samples: opts.samples,
        delta_inner: max_of(LevelKind::Inner),
        delta_edge: max_of(LevelKind::Edge).unwrap_or(0.0),
        records,
    })
}

impl DistReport {
    pub fn pmf_sum(&self) -> f64 {
        self.records.iter().map(|r| r.hard_pmf).sum()
    }

    /// Largest `|mc - oracle|` in binomial standard errors over all levels.
    pub fn max_mc_sigma(&self) -> f64 {
        let n = self.samples as f64;
        self.records
            .iter()
            .map(|r| {
                let se = (r.hard_pmf * (1.0 - r.hard_pmf) / n).sqrt();
                let diff = (r.mc_pmf - r.hard_pmf).abs();
                if se > 0.0 {
                    diff / se
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        for r in &self.records {
            w.write_record([
                self.order.to_string(),
                self.snr_db.to_string(),
                r.level.to_string(),
                r.kind.as_str().to_string(),
                r.value.to_string(),
                r.hard_pmf.to_string(),
                r.relaxed_density.to_string(),
                r.scaled_density.to_string(),
                r.mc_pmf.to_string(),
                r.mc_density.to_string(),
                r.abs_err.to_string(),
                r.rel_err.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One `(order, snr, delta_inner, delta_edge)` row per report.
pub fn write_summary<W: Write>(reports: &[DistReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in reports {
        w.write_record([
            r.order.to_string(),
            r.snr_db.to_string(),
            r.delta_inner.map(|v| v.to_string()).unwrap_or_default(),
            r.delta_edge.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::build_spec;

    #[test]
    fn small_report_is_complete() {
        let spec = build_spec(16, 1.0).unwrap();
        let params = ChannelParams::awgn(10.0, 1.0).unwrap();
        let src = ScalarDensity::uniform_clipped(&spec);
        let opts = McOptions { samples: 100_000, bins: 128 };
        let r = equivalence_report(&spec, &params, &src, &opts, RngState::new(1, 0)).unwrap();
        assert_eq!(r.records.len(), 4);
        assert!((r.pmf_sum() - 1.0).abs() < 1e-9);
        assert!(r.max_mc_sigma() < 5.0);
        assert!(r.delta_inner.is_some());
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), REPORT_HEADER.join(","));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn rayleigh_has_no_oracle() {
        let spec = build_spec(16, 1.0).unwrap();
        let params = ChannelParams::new(crate::channel::ChannelKind::Rayleigh, 10.0, 1.0).unwrap();
        let src = ScalarDensity::uniform_clipped(&spec);
        let opts = McOptions { samples: 10_000, bins: 64 };
        assert!(equivalence_report(&spec, &params, &src, &opts, RngState::new(1, 0)).is_err());
    }
}
