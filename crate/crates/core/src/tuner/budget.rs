use serde::{Deserialize, Serialize};

use super::TuneConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationBudget {
    pub delta_n: f64,
    pub per_band: Vec<usize>,
    pub global_cap: usize,
}

/// `dN = eta*B*N0 / (B - sum c)`, `N_b = round(N0 + dN (1 - c_b))`, cap `(1+eta) B N0`.
pub fn compute_iteration_budget(c: &[f64], cfg: &TuneConfig) -> Result<IterationBudget> {
    if c.is_empty() {
        return Err(Error::InvalidParameter("correlation vector is empty".into()));
    }
    let b = c.len() as f64;
    let n0 = cfg.n0 as f64;
    let slack = b - c.iter().sum::<f64>();
    if !(slack > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "band correlations sum to {} with {} bands; the overhead share is undefined",
            b - slack,
            c.len()
        )));
    }
    let delta_n = cfg.eta * b * n0 / slack;
    let per_band = c.iter().map(|&cb| (n0 + delta_n * (1.0 - cb)).round().max(0.0) as usize).collect();
    Ok(IterationBudget { delta_n, per_band, global_cap: ((1.0 + cfg.eta) * b * n0).round() as usize })
}
