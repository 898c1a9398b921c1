use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{CorrWindowSpec, DegeneratePolicy};
use crate::resample::{MtfSpec, DEFAULT_MTF_GAIN, DEFAULT_MTF_HALF_WIDTH};

pub const DEFAULT_PROBE_ITERS: usize = 5;

fn default_probe_iters() -> usize {
    DEFAULT_PROBE_ITERS
}

fn default_half_width() -> usize {
    DEFAULT_MTF_HALF_WIDTH
}

/// Tuning hyperparameters. Only the documented JSON keys are (de)serialized;
/// the remaining knobs are set through the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub gamma_high: f64,
    pub gamma_low: f64,
    pub beta0: f64,
    pub epsilon: f64,
    pub n_s_max: usize,
    pub n0: usize,
    pub eta: f64,
    pub alpha: f64,
    pub seed: u64,
    pub mtf_gain: f64,
    /// Correlation window side; defaults to the resolution ratio.
    pub corr_sigma: Option<usize>,
    #[serde(skip, default = "default_probe_iters")]
    pub probe_iters: usize,
    #[serde(skip, default = "default_half_width")]
    pub mtf_half_width: usize,
    #[serde(skip)]
    pub degenerate: DegeneratePolicy,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            gamma_high: 0.65,
            gamma_low: 0.59,
            beta0: 2.0,
            epsilon: 0.007,
            n_s_max: 20,
            n0: 80,
            eta: 30.0,
            alpha: 1e-5,
            seed: 0,
            mtf_gain: DEFAULT_MTF_GAIN,
            corr_sigma: None,
            probe_iters: DEFAULT_PROBE_ITERS,
            mtf_half_width: DEFAULT_MTF_HALF_WIDTH,
            degenerate: DegeneratePolicy::Zero,
        }
    }
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidParameter(m));
        if !(self.gamma_low > 0.0 && self.gamma_low < self.gamma_high) {
            return fail(format!("need 0 < gamma_low < gamma_high, got {} and {}", self.gamma_low, self.gamma_high));
        }
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return fail(format!("beta0 must be positive, got {}", self.beta0));
        }
        if !(self.epsilon >= 0.0) {
            return fail(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if self.n_s_max > self.n0 {
            return fail(format!("n_s_max ({}) must not exceed n0 ({})", self.n_s_max, self.n0));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return fail(format!("eta must be non-negative, got {}", self.eta));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.mtf_gain > 0.0 && self.mtf_gain < 1.0) {
            return fail(format!("mtf_gain must be in (0,1), got {}", self.mtf_gain));
        }
        if matches!(self.corr_sigma, Some(s) if s < 2) {
            return fail("corr_sigma must be >= 2".into());
        }
        Ok(())
    }

    pub fn mtf(&self, ratio: usize) -> Result<MtfSpec> {
        MtfSpec::new(self.mtf_gain, self.mtf_half_width, ratio)
    }

    pub fn corr(&self, ratio: usize) -> Result<CorrWindowSpec> {
        Ok(CorrWindowSpec::new(self.corr_sigma.unwrap_or(ratio))?.with_policy(self.degenerate))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
