//! Rolling band-by-band tuning with the hysteresis-switched spatial term.

mod band;
mod budget;
mod config;
mod hysteresis;
mod trace;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

pub use band::{run_band, BandContext, BandOptions, BandResult, BandStatus, BetaChoice, Schedule};
pub use budget::{compute_iteration_budget, IterationBudget};
pub use config::{TuneConfig, DEFAULT_PROBE_ITERS};
pub use hysteresis::{hysteresis_step, phase_signal, select_beta, Phase};
pub use trace::{TraceRecord, TuneTrace, TRACE_HEADER};

use crate::error::{Error, Result};
use crate::loss::{LossValues, SpatialTerm};
use crate::metrics::{exp_cube, reprojection_profile, BandErrorProfile};
use crate::neural::{init_weights, ModelParams};
use crate::raster::{band_correlations, validate_pair, HsCube, PairedScene};

/// Scene divided by one global scale so the network sees values in [-1, 1].
#[derive(Debug, Clone)]
pub struct NormalizedScene {
    pub pan: Array2<f32>,
    pub hs: Array3<f32>,
    pub scale: f32,
}

impl NormalizedScene {
    pub fn new(scene: &PairedScene) -> Self {
        let peak = scene.pan.view().iter().chain(scene.hs.view().iter()).fold(0.0f32, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 && peak.is_finite() { peak } else { 1.0 };
        Self { pan: scene.pan.view().mapv(|v| v / scale), hs: scene.hs.view().mapv(|v| v / scale), scale }
    }

    pub fn band(&self, b: usize) -> ndarray::ArrayView2<'_, f32> {
        self.hs.index_axis(ndarray::Axis(0), b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub band: usize,
    pub correlation: f64,
    pub budget: usize,
    pub iterations: usize,
    pub spatial_iterations: usize,
    pub exhausted: bool,
    pub status: BandStatus,
    pub beta: f64,
    pub selected_iter: usize,
    pub values: Option<LossValues>,
}

#[derive(Debug, Clone)]
pub struct SharpenOutput {
    pub fused: HsCube,
    pub trace: TuneTrace,
    pub profile: BandErrorProfile,
    pub bands: Vec<BandSummary>,
    pub budget: IterationBudget,
    pub params: ModelParams,
    pub total_iterations: usize,
}

/// Tune the network band by band and return the fused cube.
///
/// Runs on the ambient rayon pool; wrap in [`crate::Execution::install`] to pick one.
pub fn sharpen_cube(scene: &PairedScene, cfg: &TuneConfig) -> Result<SharpenOutput> {
    validate_pair(scene)?;
    cfg.validate()?;
    let ratio = scene.ratio;
    let mtf = cfg.mtf(ratio)?;
    let corr = cfg.corr(ratio)?;
    let norm = NormalizedScene::new(scene);
    let c = band_correlations(&scene.hs);
    let budget = compute_iteration_budget(&c, cfg)?;
    let spatial = SpatialTerm::new(norm.pan.view(), corr)?;

    let mut params = init_weights(cfg.seed);
    let mut used = 0usize;
    let mut trace = TuneTrace::default();
    let mut planes = Vec::with_capacity(scene.hs.bands());
    let mut bands = Vec::with_capacity(scene.hs.bands());
    for b in 0..scene.hs.bands() {
        let cap = budget.per_band[b].min(budget.global_cap.saturating_sub(used));
        let ctx = BandContext::new(b, norm.band(b), norm.pan.view(), &spatial, &mtf)?;
        let res = run_band(&ctx, &params, cfg, &BandOptions::tuning(cfg, cap))?;
        used += res.n_b;
        log::info!(
            "band {b}: {} iterations ({} spatial) of {cap}, ratio {}",
            res.n_b,
            res.n_bs,
            res.values.map_or("n/a".to_string(), |v| format!("{:.4}", v.ratio))
        );
        bands.push(BandSummary {
            band: b,
            correlation: c[b],
            budget: cap,
            iterations: res.n_b,
            spatial_iterations: res.n_bs,
            exhausted: res.exhausted,
            status: res.status.clone(),
            beta: res.beta,
            selected_iter: res.selected_iter,
            values: res.values,
        });
        trace.records.extend(res.trace);
        planes.push(res.fused.mapv(|v| v * norm.scale));
        params = res.params;
    }
    let fused = HsCube::from_bands(&planes, scene.hs.wavelengths().map(|w| w.to_vec()))?;
    let profile = reprojection_profile(&fused, &scene.hs, &exp_cube(&scene.hs, ratio)?, &mtf)?;
    Ok(SharpenOutput { fused, trace, profile, bands, budget, params, total_iterations: used })
}

/// One (learning rate, beta) setting of a trajectory study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryEndpoint {
    pub config: TrajectoryConfig,
    pub schedule: Schedule,
    pub gamma_low: f64,
    pub gamma_high: f64,
    pub iterations: usize,
    pub selected_iter: usize,
    pub loss_ratio: f64,
    pub loss_spatial: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRun {
    pub config: TrajectoryConfig,
    pub trace: Vec<TraceRecord>,
    pub endpoint: TrajectoryEndpoint,
}

/// Tune one band from fresh weights with a fixed beta for `iters` iterations.
///
/// The flat schedule ends at the last iterate; the hysteresis schedule at its
/// selected snapshot.
pub fn run_trajectory(
    scene: &PairedScene,
    band: usize,
    cfg: &TuneConfig,
    run: TrajectoryConfig,
    schedule: Schedule,
    iters: usize,
) -> Result<TrajectoryRun> {
    validate_pair(scene)?;
    if band >= scene.hs.bands() {
        return Err(Error::InvalidParameter(format!("band {band} out of range 0..{}", scene.hs.bands())));
    }
    if !(run.beta >= 0.0 && run.alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("invalid grid point alpha={} beta={}", run.alpha, run.beta)));
    }
    let cfg = TuneConfig { alpha: run.alpha, ..cfg.clone() };
    cfg.validate()?;
    let mtf = cfg.mtf(scene.ratio)?;
    let norm = NormalizedScene::new(scene);
    let spatial = SpatialTerm::new(norm.pan.view(), cfg.corr(scene.ratio)?)?;
    let ctx = BandContext::new(band, norm.band(band), norm.pan.view(), &spatial, &mtf)?;
    let opts = BandOptions { schedule, beta: BetaChoice::Fixed(run.beta), n_b_max: iters, n_s_max: usize::MAX };
    let res = run_band(&ctx, &init_weights(cfg.seed), &cfg, &opts)?;
    let values = res
        .values
        .ok_or_else(|| Error::DegenerateReference(format!("band {band} cannot be tuned: {:?}", res.status)))?;
    Ok(TrajectoryRun {
        config: run,
        endpoint: TrajectoryEndpoint {
            config: run,
            schedule,
            gamma_low: cfg.gamma_low,
            gamma_high: cfg.gamma_high,
            iterations: res.n_b,
            selected_iter: res.selected_iter,
            loss_ratio: values.ratio,
            loss_spatial: values.spatial,
        },
        trace: res.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{spatial_loss_abs, CorrWindowSpec};
    use crate::neural::predict;
    use crate::raster::PanImage;
    use crate::resample::{mtf_downscale, MtfSpec};
    use crate::synth::{generate_scene, SceneSpec};

    fn small_scene(bands: usize, seed: u64) -> PairedScene {
        let spec = SceneSpec { width: 24, height: 24, ratio: 4, bands, inversion_fraction: 0.0, seed, ..Default::default() };
        generate_scene(&spec).unwrap().scene().unwrap()
    }

    fn quick() -> TuneConfig {
        TuneConfig { n0: 10, n_s_max: 5, eta: 2.0, ..Default::default() }
    }

    #[test]
    fn self_consistent_pair_reaches_target() {
        let spec = SceneSpec { width: 36, height: 36, ratio: 4, bands: 1, seed: 9, ..Default::default() };
        let pan = generate_scene(&spec).unwrap().pan;
        let mtf = MtfSpec::with_ratio(4).unwrap();
        let hs = mtf_downscale(pan.view(), &mtf).unwrap().mapv(|v| v as f32);
        let scene = PairedScene::new(pan.clone(), HsCube::new(hs.insert_axis(ndarray::Axis(0))).unwrap()).unwrap();
        // one band from random weights, with no earlier bands to inherit from
        let cfg = TuneConfig { alpha: 1e-4, n0: 150, n_s_max: 150, eta: 20.0, ..Default::default() };
        let out = sharpen_cube(&scene, &cfg).unwrap();
        let v = out.bands[0].values.unwrap();
        assert!(!out.bands[0].exhausted);
        assert!(v.ratio <= 0.65, "{v:?}");
        let rho = 1.0 - spatial_loss_abs(out.fused.band(0), pan.view(), &CorrWindowSpec::new(4).unwrap()).unwrap();
        assert!(rho >= 0.9, "mean |rho| {rho}");
    }

    fn context_parts(scene: &PairedScene, cfg: &TuneConfig) -> (NormalizedScene, SpatialTerm, MtfSpec) {
        let norm = NormalizedScene::new(scene);
        let spatial = SpatialTerm::new(norm.pan.view(), cfg.corr(scene.ratio).unwrap()).unwrap();
        (norm, spatial, cfg.mtf(scene.ratio).unwrap())
    }

    #[test]
    fn zero_budget_returns_previous_parameters() {
        let scene = small_scene(1, 1);
        let cfg = quick();
        let (norm, spatial, mtf) = context_parts(&scene, &cfg);
        let ctx = BandContext::new(0, norm.band(0), norm.pan.view(), &spatial, &mtf).unwrap();
        let prev = init_weights(3);
        let res = run_band(&ctx, &prev, &cfg, &BandOptions::tuning(&cfg, 0)).unwrap();
        assert!(res.trace.is_empty());
        assert_eq!(res.params, prev);
        assert_eq!(res.n_b, 0);
        assert_eq!(res.fused, predict(&prev, ctx.hs_up.view(), norm.pan.view()).unwrap());
    }

    #[test]
    fn counters_and_snapshot_dominance() {
        let scene = small_scene(3, 2);
        let cfg = quick();
        let out = sharpen_cube(&scene, &cfg).unwrap();
        assert!(out.total_iterations <= out.budget.global_cap);
        for s in &out.bands {
            let recs: Vec<_> = out.trace.band(s.band).collect();
            assert_eq!(recs.len(), s.iterations);
            for (i, r) in recs.iter().enumerate() {
                assert_eq!(r.iter, i + 1);
                assert_eq!(r.n_b, i + 1);
                assert!(r.n_bs <= cfg.n_s_max.min(r.n_b));
                assert_eq!(r.beta == 0.0, r.phase == Phase::Off);
            }
            assert!(s.iterations <= s.budget);
            assert!(s.spatial_iterations == cfg.n_s_max || s.exhausted);
            let v = s.values.unwrap();
            if v.ratio <= cfg.gamma_high {
                for r in recs.iter().filter(|r| r.loss_ratio <= cfg.gamma_high) {
                    assert!(v.spatial <= r.loss_spatial, "band {}: {} > {}", s.band, v.spatial, r.loss_spatial);
                }
            }
        }
    }

    #[test]
    fn degenerate_band_passes_through() {
        let scene = small_scene(2, 5);
        let mut cube = scene.hs.view().to_owned();
        cube.index_axis_mut(ndarray::Axis(0), 1).fill(0.4);
        let scene = PairedScene::new(scene.pan.clone(), HsCube::new(cube).unwrap()).unwrap();
        let out = sharpen_cube(&scene, &quick()).unwrap();
        assert_eq!(out.bands[1].status, BandStatus::DegenerateReference);
        assert_eq!(out.bands[1].iterations, 0);
        assert!(out.fused.band(1).iter().all(|&v| (v - 0.4).abs() < 1e-5));
        assert_eq!(out.profile.undefined_bands(), vec![1]);
    }

    #[test]
    fn non_finite_parameters_abort_the_band() {
        let scene = small_scene(1, 6);
        let cfg = quick();
        let (norm, spatial, mtf) = context_parts(&scene, &cfg);
        let ctx = BandContext::new(0, norm.band(0), norm.pan.view(), &spatial, &mtf).unwrap();
        let mut prev = init_weights(0);
        prev.layers[2].bias[0] = f32::NAN;
        let res = run_band(&ctx, &prev, &cfg, &BandOptions::tuning(&cfg, 10)).unwrap();
        assert!(matches!(res.status, BandStatus::NonFinite(_)));
        assert_eq!(res.fused, ctx.hs_up);
        assert_eq!(res.params.digest(), prev.digest());
    }

    #[test]
    fn power_of_two_rescaling_is_exact() {
        let scene = small_scene(2, 7);
        let scaled = PairedScene::new(
            PanImage::new(scene.pan.view().mapv(|v| v * 4.0)).unwrap(),
            HsCube::new(scene.hs.view().mapv(|v| v * 4.0)).unwrap(),
        )
        .unwrap();
        let a = sharpen_cube(&scene, &quick()).unwrap();
        let b = sharpen_cube(&scaled, &quick()).unwrap();
        assert_eq!(a.fused.view().mapv(|v| v * 4.0), b.fused.view());
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn single_band_cube_matches_run_band() {
        let scene = small_scene(1, 8);
        let cfg = quick();
        let out = sharpen_cube(&scene, &cfg).unwrap();
        let (norm, spatial, mtf) = context_parts(&scene, &cfg);
        let ctx = BandContext::new(0, norm.band(0), norm.pan.view(), &spatial, &mtf).unwrap();
        let cap = out.budget.per_band[0];
        let res = run_band(&ctx, &init_weights(cfg.seed), &cfg, &BandOptions::tuning(&cfg, cap)).unwrap();
        assert_eq!(out.fused.band(0), res.fused.mapv(|v| v * norm.scale));
        assert_eq!(out.trace.records, res.trace);
    }

    #[test]
    fn flat_trajectory_keeps_last_iterate() {
        let scene = small_scene(1, 10);
        let cfg = quick();
        let run = TrajectoryConfig { alpha: 1e-4, beta: 0.5 };
        let t = run_trajectory(&scene, 0, &cfg, run, Schedule::Flat, 12).unwrap();
        assert_eq!(t.trace.len(), 12);
        assert!(t.trace.iter().all(|r| r.phase == Phase::On && r.beta == 0.5));
        assert_eq!(t.endpoint.selected_iter, 12);
        assert!(run_trajectory(&scene, 1, &cfg, run, Schedule::Flat, 12).is_err());
    }
}
