use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{hysteresis_step, select_beta, Phase, TraceRecord, TuneConfig};
use crate::error::{Error, Result};
use crate::loss::{LossValues, SpatialTerm, SpectralTerm};
use crate::metrics::is_degenerate_reference;
use crate::neural::{adam_step, backward, forward, ModelParams, OptimizerState};
use crate::resample::{exp_interpolate, MtfSpec};

/// How the spatial term is switched during a band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Hysteresis,
    /// Spatial term always on.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaChoice {
    WarmUp,
    Fixed(f64),
}

/// Per-band loop settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandOptions {
    pub schedule: Schedule,
    pub beta: BetaChoice,
    pub n_b_max: usize,
    pub n_s_max: usize,
}

impl BandOptions {
    pub fn tuning(cfg: &TuneConfig, n_b_max: usize) -> Self {
        Self { schedule: Schedule::Hysteresis, beta: BetaChoice::WarmUp, n_b_max, n_s_max: cfg.n_s_max }
    }
}

/// Normalized inputs of one band.
#[derive(Debug, Clone)]
pub struct BandContext<'a> {
    pub band: usize,
    pub hs_up: Array2<f32>,
    pub pan: ArrayView2<'a, f32>,
    pub spectral: SpectralTerm,
    pub spatial: &'a SpatialTerm,
    /// Spectral loss of the interpolated band itself.
    pub l_exp: f64,
    /// Mean absolute value of the coarse band.
    pub scale: f64,
}

impl<'a> BandContext<'a> {
    pub fn new(
        band: usize,
        hs_band: ArrayView2<'_, f32>,
        pan: ArrayView2<'a, f32>,
        spatial: &'a SpatialTerm,
        mtf: &MtfSpec,
    ) -> Result<Self> {
        let hs_up = exp_interpolate(hs_band, mtf.ratio)?;
        let spectral = SpectralTerm::new(hs_band, mtf)?;
        let l_exp = spectral.value(hs_up.view())?;
        let scale = hs_band.iter().map(|v| v.abs() as f64).sum::<f64>() / hs_band.len().max(1) as f64;
        Ok(Self { band, hs_up, pan, spectral, spatial, l_exp, scale })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum BandStatus {
    Tuned,
    /// The interpolated band already reprojects exactly; it is passed through.
    DegenerateReference,
    /// A loss or gradient went non-finite; the band is passed through.
    NonFinite(String),
}

/// Outcome of tuning one band. `fused` is in the normalized domain.
#[derive(Debug, Clone)]
pub struct BandResult {
    pub band: usize,
    pub fused: Array2<f32>,
    /// Parameters the next band starts from.
    pub params: ModelParams,
    pub values: Option<LossValues>,
    pub beta: f64,
    pub n_b: usize,
    pub n_bs: usize,
    pub exhausted: bool,
    pub status: BandStatus,
    /// Iteration whose parameters were selected; `n_b` means the final state.
    pub selected_iter: usize,
    pub trace: Vec<TraceRecord>,
}

struct Eval {
    fused: Array2<f32>,
    spectral: f64,
    spatial: f64,
}

struct Candidate {
    params: ModelParams,
    eval: Eval,
    iter: usize,
}

impl Candidate {
    fn ratio(&self, l_exp: f64) -> f64 {
        self.eval.spectral / l_exp
    }
}

fn passthrough(ctx: &BandContext<'_>, prev: &ModelParams, status: BandStatus, trace: Vec<TraceRecord>, n_b: usize, n_bs: usize) -> BandResult {
    BandResult {
        band: ctx.band,
        fused: ctx.hs_up.clone(),
        params: prev.clone(),
        values: None,
        beta: 0.0,
        n_b,
        n_bs,
        exhausted: false,
        status,
        selected_iter: 0,
        trace,
    }
}

fn check_finite(e: &Eval) -> Result<()> {
    if !e.spectral.is_finite() || !e.spatial.is_finite() {
        return Err(Error::NonFinite(format!("loss is spectral={} spatial={}", e.spectral, e.spatial)));
    }
    Ok(())
}

/// One optimizer step; returns the losses at the pre-update parameters.
fn step(ctx: &BandContext<'_>, params: &mut ModelParams, opt: &mut OptimizerState, beta: f64) -> Result<Eval> {
    let (fused, state) = forward(params, ctx.hs_up.view(), ctx.pan)?;
    let (spectral, mut grad) = ctx.spectral.value_and_grad(fused.view())?;
    let spatial = if beta > 0.0 {
        let (v, g) = ctx.spatial.value_and_grad(fused.view())?;
        grad.scaled_add(beta, &g);
        v
    } else {
        ctx.spatial.value(fused.view())?
    };
    let eval = Eval { fused, spectral, spatial };
    check_finite(&eval)?;
    let grads = backward(&state, params, grad.view())?;
    adam_step(params, &grads, opt)?;
    Ok(eval)
}

fn evaluate(ctx: &BandContext<'_>, params: &ModelParams) -> Result<Eval> {
    let (fused, _) = forward(params, ctx.hs_up.view(), ctx.pan)?;
    let eval = Eval { spectral: ctx.spectral.value(fused.view())?, spatial: ctx.spatial.value(fused.view())?, fused };
    check_finite(&eval)?;
    Ok(eval)
}

/// Snapshot rule: lowest spatial loss among states with `ratio <= gamma_high`,
/// falling back to the lowest ratio when none qualifies.
struct Selector {
    gamma_high: f64,
    l_exp: f64,
    qualified: Option<Candidate>,
    lowest_ratio: Option<Candidate>,
}

impl Selector {
    fn offer(&mut self, params: &ModelParams, eval: &Eval, iter: usize) {
        let ratio = eval.spectral / self.l_exp;
        let take = |slot: &Option<Candidate>, better: &dyn Fn(&Candidate) -> bool| slot.as_ref().is_none_or(better);
        let copy = || Candidate {
            params: params.clone(),
            eval: Eval { fused: eval.fused.clone(), spectral: eval.spectral, spatial: eval.spatial },
            iter,
        };
        if ratio <= self.gamma_high && take(&self.qualified, &|c| eval.spatial < c.eval.spatial) {
            self.qualified = Some(copy());
        }
        if self.qualified.is_none() && take(&self.lowest_ratio, &|c| ratio < c.ratio(self.l_exp)) {
            self.lowest_ratio = Some(copy());
        }
    }

    fn finish(self) -> Option<Candidate> {
        self.qualified.or(self.lowest_ratio)
    }
}

/// Run the tuning loop for one band starting from `prev`.
pub fn run_band(ctx: &BandContext<'_>, prev: &ModelParams, cfg: &TuneConfig, opts: &BandOptions) -> Result<BandResult> {
    if is_degenerate_reference(ctx.l_exp, ctx.scale) {
        log::warn!("band {}: interpolated band reprojects exactly; passing it through", ctx.band);
        return Ok(passthrough(ctx, prev, BandStatus::DegenerateReference, vec![], 0, 0));
    }
    match run_band_inner(ctx, prev, cfg, opts) {
        Err(Error::NonFinite(msg)) => {
            log::warn!("band {}: {msg}; passing the interpolated band through", ctx.band);
            Ok(passthrough(ctx, prev, BandStatus::NonFinite(msg), vec![], 0, 0))
        }
        other => other,
    }
}

fn run_band_inner(ctx: &BandContext<'_>, prev: &ModelParams, cfg: &TuneConfig, opts: &BandOptions) -> Result<BandResult> {
    let l_exp = ctx.l_exp;
    let beta_on = match opts.beta {
        BetaChoice::Fixed(b) => b,
        BetaChoice::WarmUp if opts.n_b_max == 0 => cfg.beta0,
        BetaChoice::WarmUp => {
            let reference = evaluate(ctx, prev)?.spectral;
            select_beta(reference, cfg, |beta| {
                let mut scratch = prev.clone();
                let mut opt = OptimizerState::new(cfg.alpha);
                for _ in 0..cfg.probe_iters {
                    step(ctx, &mut scratch, &mut opt, beta)?;
                }
                Ok(evaluate(ctx, &scratch)?.spectral)
            })?
        }
    };

    let mut params = prev.clone();
    let mut opt = OptimizerState::new(cfg.alpha);
    let mut phase = match opts.schedule {
        Schedule::Hysteresis => Phase::Off,
        Schedule::Flat => Phase::On,
    };
    let mut selector = Selector { gamma_high: cfg.gamma_high, l_exp, qualified: None, lowest_ratio: None };
    let mut trace = Vec::new();
    let (mut n_b, mut n_bs) = (0usize, 0usize);
    while n_bs < opts.n_s_max && n_b < opts.n_b_max {
        let beta = if phase == Phase::On { beta_on } else { 0.0 };
        let before = params.clone();
        let eval = step(ctx, &mut params, &mut opt, beta)?;
        let ratio = eval.spectral / l_exp;
        if opts.schedule == Schedule::Hysteresis {
            selector.offer(&before, &eval, n_b);
        }
        n_b += 1;
        if phase == Phase::On {
            n_bs += 1;
        }
        trace.push(TraceRecord {
            band: ctx.band,
            iter: n_b,
            phase,
            beta,
            loss_spectral: eval.spectral,
            loss_spatial: eval.spatial,
            loss_ratio: ratio,
            n_b,
            n_bs,
        });
        if opts.schedule == Schedule::Hysteresis {
            phase = hysteresis_step(phase, ratio, cfg.gamma_low, cfg.gamma_high);
        }
    }
    let last = evaluate(ctx, &params)?;
    selector.offer(&params, &last, n_b);
    let chosen = match opts.schedule {
        Schedule::Flat => Candidate { params, eval: last, iter: n_b },
        Schedule::Hysteresis => selector.finish().expect("final state was offered"),
    };
    let values = LossValues::new(chosen.eval.spectral, chosen.eval.spatial, l_exp, beta_on)?;
    log::debug!(
        "band {}: {n_b} iterations ({n_bs} spatial), beta {beta_on}, ratio {:.4}, spatial {:.4}",
        ctx.band,
        values.ratio,
        values.spatial
    );
    Ok(BandResult {
        band: ctx.band,
        fused: chosen.eval.fused,
        params: chosen.params,
        values: Some(values),
        beta: beta_on,
        n_b,
        n_bs,
        exhausted: n_b >= opts.n_b_max && n_bs < opts.n_s_max,
        status: BandStatus::Tuned,
        selected_iter: chosen.iter,
        trace,
    })
}
