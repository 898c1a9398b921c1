use serde::{Deserialize, Serialize};

use super::TuneConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    /// Spectral loss only.
    Off,
    /// Spectral plus weighted spatial loss.
    On,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Off => "OFF",
            Phase::On => "ON",
        }
    }
}

/// Two-threshold switch, evaluated every iteration whatever the phase.
pub fn hysteresis_step(phase: Phase, ratio: f64, gamma_low: f64, gamma_high: f64) -> Phase {
    if ratio > gamma_high {
        Phase::Off
    } else if ratio < gamma_low {
        Phase::On
    } else {
        phase
    }
}

/// Phases after each ratio of a sequence, starting from OFF.
pub fn phase_signal(ratios: &[f64], cfg: &TuneConfig) -> Vec<Phase> {
    ratios
        .iter()
        .scan(Phase::Off, |p, &r| {
            *p = hysteresis_step(*p, r, cfg.gamma_low, cfg.gamma_high);
            Some(*p)
        })
        .collect()
}

/// Largest of `beta0, beta0/2, beta0/4` whose probe keeps the spectral loss
/// within `(1 + epsilon) * reference`; `beta0/8` otherwise.
///
/// `probe(beta)` must run on scratch state and return the spectral loss
/// after the probe.
pub fn select_beta(reference: f64, cfg: &TuneConfig, mut probe: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    for k in 0..3 {
        let beta = cfg.beta0 / f64::from(1u32 << k);
        let after = probe(beta)?;
        if after.is_finite() && after <= (1.0 + cfg.epsilon) * reference {
            return Ok(beta);
        }
    }
    Ok(cfg.beta0 / 8.0)
}
