use serde::{Deserialize, Serialize};

use crate::constellation::build_spec;
use crate::error::{Error, Result};

/// Training hyperparameters for the three phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Step counts of phases 1, 2 and 3.
    pub phases: [usize; 3],
    pub learning_rates: [f64; 3],
    pub orders: Vec<u32>,
    /// Inclusive SNR range in dB; training SNRs are drawn uniformly from it.
    pub snr_range: [f64; 2],
    pub eta1: f64,
    pub eta2: f64,
    pub power: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            phases: [2000, 2000, 500],
            learning_rates: [1e-3, 1e-3, 1e-4],
            orders: vec![4, 16, 64, 256, 1024],
            snr_range: [0.0, 13.0],
            eta1: 0.4,
            eta2: 0.2,
            power: 1.0,
            batch_size: 32,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.phases.contains(&0) {
            return bad(format!("phase step counts must be positive, got {:?}", self.phases));
        }
        if !self.learning_rates.iter().all(|r| r.is_finite() && *r > 0.0) {
            return bad(format!("learning rates must be > 0, got {:?}", self.learning_rates));
        }
        if self.orders.is_empty() {
            return bad("order set is empty".into());
        }
        for m in &self.orders {
            build_spec(*m, 1.0)?;
        }
        let [lo, hi] = self.snr_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("snr_range must satisfy lo <= hi, got [{lo}, {hi}]"));
        }
        if !(self.eta2 > 0.0 && self.eta1 > self.eta2 && self.eta1.is_finite()) {
            return bad(format!(
                "need eta1 > eta2 > 0, got eta1 = {}, eta2 = {}",
                self.eta1, self.eta2
            ));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::InvalidPower(self.power));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_invalid_fields() {
        let cases = [
            TrainConfig { phases: [10, 0, 10], ..Default::default() },
            TrainConfig { eta1: 0.2, eta2: 0.2, ..Default::default() },
            TrainConfig { orders: vec![4, 8], ..Default::default() },
            TrainConfig { snr_range: [5.0, 1.0], ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { lambda: f64::NAN, ..Default::default() },
        ];
        for c in cases {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"lamda": 3}"#);
        assert!(r.is_err());
        let c: TrainConfig = serde_json::from_str(r#"{"lambda": 3, "orders": [16]}"#).unwrap();
        assert_eq!(c.lambda, 3.0);
        assert_eq!(c.phases, [2000, 2000, 500]);
    }
}
