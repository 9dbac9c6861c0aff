//! Entropy-guided rate matching and the two-stage prefix masks.

use std::io::Write;

use crate::error::{Error, Result};

/// `round(eta * rate_bits)` clamped to `[0, cap]`; rounds half away from
/// zero.
pub fn symbol_length(rate_bits: f64, eta: f64, cap: usize) -> Result<usize> {
    if !(rate_bits.is_finite() && rate_bits >= 0.0) {
        return Err(Error::InvalidRate(rate_bits));
    }
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::Config(format!("eta must be > 0, got {eta}")));
    }
    if cap == 0 {
        return Err(Error::Config("symbol cap must be >= 1".into()));
    }
    Ok((eta * rate_bits).round().min(cap as f64) as usize)
}

/// `k` leading ones followed by `cap - k` zeros.
pub fn mask_vector(k: usize, cap: usize) -> Result<Vec<u8>> {
    if k > cap {
        return Err(Error::Bounds { k, cap });
    }
    Ok((0..cap).map(|i| u8::from(i < k)).collect())
}

/// Symbol budgets and masks for every embedding at both reduction stages.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub channel_width: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub rates: Vec<f64>,
    pub lengths1: Vec<usize>,
    pub lengths2: Vec<usize>,
    pub masks1: Vec<Vec<u8>>,
    pub masks2: Vec<Vec<u8>>,
}

pub fn hierarchical_plan(rates: &[f64], eta1: f64, eta2: f64, cap: usize) -> Result<MaskPlan> {
    if !(eta2 > 0.0 && eta1 > eta2) {
        return Err(Error::Config(format!(
            "need eta1 > eta2 > 0, got eta1 = {eta1}, eta2 = {eta2}"
        )));
    }
    let lengths1 = rates
        .iter()
        .map(|r| symbol_length(*r, eta1, cap))
        .collect::<Result<Vec<_>>>()?;
    let lengths2 = rates
        .iter()
        .map(|r| symbol_length(*r, eta2, cap))
        .collect::<Result<Vec<_>>>()?;
    Ok(MaskPlan {
        channel_width: cap,
        eta1,
        eta2,
        rates: rates.to_vec(),
        masks1: lengths1.iter().map(|k| mask_vector(*k, cap)).collect::<Result<_>>()?,
        masks2: lengths2.iter().map(|k| mask_vector(*k, cap)).collect::<Result<_>>()?,
        lengths1,
        lengths2,
    })
}

impl MaskPlan {
    pub fn embeddings(&self) -> usize {
        self.rates.len()
    }

    /// Complex symbols actually sent, `sum_i k2_i`.
    pub fn total_symbols(&self) -> usize {
        self.lengths2.iter().sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["embedding", "rate_bits", "k1", "k2"])?;
        for i in 0..self.embeddings() {
            w.write_record([
                i.to_string(),
                self.rates[i].to_string(),
                self.lengths1[i].to_string(),
                self.lengths2[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Channel bandwidth ratio, symbols per source dimension.
pub fn cbr(n_symbols: usize, n_source: usize) -> Result<f64> {
    if n_source == 0 {
        return Err(Error::Division("source length is zero"));
    }
    Ok(n_symbols as f64 / n_source as f64)
}
