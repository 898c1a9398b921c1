//! Batch commands behind the `hysharp` binary.
//!
//! Every command returns an [`Outcome`] listing the artifacts it wrote; the
//! binary prints it as JSON on stdout, or a [`Failure`] on stderr.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Axis};
use serde::Serialize;
use serde_json::json;

use hysharp_core::loss::{local_correlation_map, CorrWindowSpec};
use hysharp_core::metrics::{assess_full, assess_reduced, degrade_cube, DEFAULT_Q_BLOCK};
use hysharp_core::raster::{load_pan, load_raster, save_pan, save_raster};
use hysharp_core::synth::{generate_scene, SceneSpec};
use hysharp_core::tuner::{run_trajectory, sharpen_cube, Schedule, TrajectoryConfig, TuneConfig};
use hysharp_core::{Error, Execution, HsCube, MtfSpec, PairedScene, PanImage};

/// Legend edges of the quantized correlation map.
pub const CORR_BIN_EDGES: [f64; 6] = [-1.0, -0.6, -0.2, 0.2, 0.6, 1.0];

#[derive(Debug, Parser)]
#[command(name = "hysharp", version, about = "Band-wise hyperspectral pansharpening")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse a PAN image and an HS cube.
    Sharpen(SharpenArgs),
    /// Score a fused cube at reduced (rr) or full (fr) resolution.
    Assess(AssessArgs),
    /// Write a synthetic scene.
    Simulate(SimulateArgs),
    /// Record loss trajectories for a grid of (alpha, beta) pairs on one band.
    Trajectory(TrajectoryArgs),
    /// Local PAN/HS correlation map of one band at HS scale.
    Corrmap(CorrmapArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TuneFlags {
    /// Tuning configuration JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mtf_gain: Option<f64>,
    /// Correlation window side.
    #[arg(long)]
    pub sigma: Option<usize>,
    /// Run all kernels on one thread.
    #[arg(long)]
    pub deterministic: bool,
}

impl TuneFlags {
    /// Flags override the config file, which overrides the defaults.
    pub fn resolve(&self) -> Result<TuneConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => TuneConfig::from_json(&fs::read_to_string(path)?)?,
            None => TuneConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(g) = self.mtf_gain {
            cfg.mtf_gain = g;
        }
        if let Some(s) = self.sigma {
            cfg.corr_sigma = Some(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn execution(&self) -> Execution {
        if self.deterministic {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(Debug, Args)]
pub struct SharpenArgs {
    #[arg(long)]
    pub pan: PathBuf,
    #[arg(long)]
    pub hs: PathBuf,
    /// Fused cube path; sidecar files share its stem.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tune: TuneFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Rr,
    Fr,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long)]
    pub fused: PathBuf,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub hs: Option<PathBuf>,
    #[arg(long)]
    pub pan: Option<PathBuf>,
    /// Resolution ratio when it cannot be inferred from an HS cube.
    #[arg(long)]
    pub ratio: Option<usize>,
    #[arg(long)]
    pub mtf_gain: Option<f64>,
    #[arg(long)]
    pub sigma: Option<usize>,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene specification JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Flat,
    Hysteresis,
}

impl From<ScheduleArg> for Schedule {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Flat => Schedule::Flat,
            ScheduleArg::Hysteresis => Schedule::Hysteresis,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrajectoryArgs {
    #[arg(long)]
    pub pan: PathBuf,
    #[arg(long)]
    pub hs: PathBuf,
    /// 0-based band index.
    #[arg(long)]
    pub band: usize,
    /// Comma-separated `alpha:beta` pairs.
    #[arg(long)]
    pub grid: String,
    #[arg(long, value_enum, default_value = "hysteresis")]
    pub schedule: ScheduleArg,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Trajectory CSV path; endpoints go to `<stem>.endpoints.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub tune: TuneFlags,
}

#[derive(Debug, Args)]
pub struct CorrmapArgs {
    #[arg(long)]
    pub pan: PathBuf,
    #[arg(long)]
    pub hs: PathBuf,
    /// 0-based band index.
    #[arg(long)]
    pub band: usize,
    /// Window side; defaults to the resolution ratio.
    #[arg(long)]
    pub sigma: Option<usize>,
    #[arg(long)]
    pub mtf_gain: Option<f64>,
    /// Map raster path; the quantized map goes to `<stem>.quantized.hsr`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub exit_code: i32,
    pub error: &'static str,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { exit_code: if e.is_input_error() { 2 } else { 1 }, error: e.kind(), message: e.to_string() }
    }
}

pub fn run(cli: Cli) -> Result<Outcome, Failure> {
    let start = Instant::now();
    let artifacts = match cli.command {
        Command::Sharpen(a) => cmd_sharpen(&a),
        Command::Assess(a) => cmd_assess(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Trajectory(a) => cmd_trajectory(&a),
        Command::Corrmap(a) => cmd_corrmap(&a),
    }?;
    Ok(Outcome { exit_code: 0, artifacts, seconds: start.elapsed().as_secs_f64() })
}

/// `dir/stem.suffix` next to `path`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn ensure_parent(path: &Path) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    ensure_parent(path)?;
    Ok(BufWriter::new(File::create(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn load_scene(pan: &Path, hs: &Path) -> Result<PairedScene, Error> {
    PairedScene::new(load_pan(pan)?, load_raster(hs)?)
}

pub fn cmd_sharpen(a: &SharpenArgs) -> Result<Vec<PathBuf>, Error> {
    let cfg = a.tune.resolve()?;
    let scene = load_scene(&a.pan, &a.hs)?;
    let out = a.tune.execution().install(|| sharpen_cube(&scene, &cfg))??;

    let trace_path = sidecar(&a.out, "trace.csv");
    let profile_path = sidecar(&a.out, "profile.csv");
    let summary_path = sidecar(&a.out, "summary.json");
    save_raster_to(&a.out, &out.fused)?;
    out.trace.write_csv(create(&trace_path)?)?;
    out.profile.write_csv(create(&profile_path)?)?;
    let iterations: Vec<usize> = out.bands.iter().map(|b| b.iterations).collect();
    let summary = json!({
        "config": cfg,
        "ratio": scene.ratio,
        "bands": out.bands,
        "budget": out.budget,
        "total_iterations": out.total_iterations,
        "mean_iterations": out.total_iterations as f64 / iterations.len() as f64,
        "histogram": {
            "iterations": iterations,
            "spatial_iterations": out.bands.iter().map(|b| b.spatial_iterations).collect::<Vec<_>>(),
            "budget": out.bands.iter().map(|b| b.budget).collect::<Vec<_>>(),
        },
        "undefined_bands": out.profile.undefined_bands(),
    });
    write_json(&summary_path, &summary)?;
    Ok(vec![a.out.clone(), trace_path, profile_path, summary_path])
}

fn save_raster_to(path: &Path, cube: &HsCube) -> Result<(), Error> {
    ensure_parent(path)?;
    save_raster(path, cube)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str, mode: &str) -> Result<&'a PathBuf, Error> {
    p.as_ref().ok_or_else(|| Error::InvalidParameter(format!("{mode} assessment needs --{what}")))
}

pub fn cmd_assess(a: &AssessArgs) -> Result<Vec<PathBuf>, Error> {
    let fused = load_raster(&a.fused)?;
    let gain = a.mtf_gain.unwrap_or(hysharp_core::resample::DEFAULT_MTF_GAIN);
    let hs = a.hs.as_ref().map(load_raster).transpose()?;
    let ratio = match (&hs, a.ratio) {
        (_, Some(r)) => r,
        (Some(hs), None) => {
            if fused.width() % hs.width() != 0 {
                return Err(Error::Ratio(format!("fused width {} vs HS width {}", fused.width(), hs.width())));
            }
            fused.width() / hs.width()
        }
        (None, None) => return Err(Error::InvalidParameter("pass --hs or --ratio".into())),
    };
    let mtf = MtfSpec::new(gain, hysharp_core::resample::DEFAULT_MTF_HALF_WIDTH, ratio)?;
    let report = match a.mode {
        Mode::Rr => {
            let gt = load_raster(required(&a.gt, "gt", "RR")?)?;
            // Wald protocol: the HS input is the degraded ground truth.
            let hs = match hs {
                Some(hs) => hs,
                None => degrade_cube(&gt, &mtf)?,
            };
            assess_reduced(&fused, &gt, Some(&hs), &mtf, DEFAULT_Q_BLOCK)?
        }
        Mode::Fr => {
            let hs = hs.ok_or_else(|| Error::InvalidParameter("FR assessment needs --hs".into()))?;
            let pan = load_pan(required(&a.pan, "pan", "FR")?)?;
            let corr = CorrWindowSpec::new(a.sigma.unwrap_or(ratio))?;
            assess_full(&fused, &hs, &pan, &mtf, &corr, DEFAULT_Q_BLOCK)?
        }
    };
    let profile_path = sidecar(&a.out, "profile.csv");
    write_json(&a.out, &report)?;
    let mut paths = vec![a.out.clone()];
    if let Some(p) = &report.profile {
        p.write_csv(create(&profile_path)?)?;
        paths.push(profile_path);
    }
    Ok(paths)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<Vec<PathBuf>, Error> {
    let mut spec: SceneSpec = match &a.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidParameter(format!("scene spec: {e}")))?,
        None => SceneSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let scene = generate_scene(&spec)?;
    fs::create_dir_all(&a.out)?;
    let truth = a.out.join("truth.hsr");
    let pan = a.out.join("pan.hsr");
    let hs = a.out.join("hs.hsr");
    let manifest = a.out.join("manifest.json");
    save_raster(&truth, &scene.truth)?;
    save_pan(&pan, &scene.pan)?;
    save_raster(&hs, &scene.coarse)?;
    write_json(
        &manifest,
        &json!({
            "spec": spec,
            "inversion_bands": scene.inversion_bands,
            "visible_bands": scene.visible_bands,
            "files": {"truth": "truth.hsr", "pan": "pan.hsr", "hs": "hs.hsr"},
        }),
    )?;
    Ok(vec![truth, pan, hs, manifest])
}

/// Parse `a1:b1,a2:b2,...`.
pub fn parse_grid(text: &str) -> Result<Vec<TrajectoryConfig>, Error> {
    let bad = || Error::InvalidParameter(format!("grid must look like 1e-5:0.5,3e-5:0.1, got {text:?}"));
    let grid: Vec<TrajectoryConfig> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (a, b) = pair.split_once(':').ok_or_else(bad)?;
            Ok(TrajectoryConfig {
                alpha: a.trim().parse().map_err(|_| bad())?,
                beta: b.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect::<Result<_, Error>>()?;
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

pub const TRAJECTORY_HEADER: &str = "config,alpha,beta,schedule,iter,phase,beta_applied,loss_spectral,loss_spatial,loss_ratio";

pub fn cmd_trajectory(a: &TrajectoryArgs) -> Result<Vec<PathBuf>, Error> {
    let cfg = a.tune.resolve()?;
    let grid = parse_grid(&a.grid)?;
    let scene = load_scene(&a.pan, &a.hs)?;
    let schedule = Schedule::from(a.schedule);
    let runs = a.tune.execution().install(|| {
        grid.iter()
            .map(|&g| run_trajectory(&scene, a.band, &cfg, g, schedule, a.iters))
            .collect::<Result<Vec<_>, Error>>()
    })??;

    let mut csv = String::from(TRAJECTORY_HEADER);
    csv.push('\n');
    let sched = match schedule {
        Schedule::Flat => "flat",
        Schedule::Hysteresis => "hysteresis",
    };
    for (i, run) in runs.iter().enumerate() {
        for r in &run.trace {
            csv.push_str(&format!(
                "{i},{},{},{sched},{},{},{},{},{},{}\n",
                run.config.alpha,
                run.config.beta,
                r.iter,
                r.phase.as_str(),
                r.beta,
                r.loss_spectral,
                r.loss_spatial,
                r.loss_ratio
            ));
        }
    }
    let endpoints_path = sidecar(&a.out, "endpoints.json");
    std::io::Write::write_all(&mut create(&a.out)?, csv.as_bytes())?;
    write_json(&endpoints_path, &runs.iter().map(|r| &r.endpoint).collect::<Vec<_>>())?;
    Ok(vec![a.out.clone(), endpoints_path])
}

/// Bin index 0..=4 for the legend edges, NaN stays NaN.
pub fn quantize_correlation(rho: f64) -> f32 {
    if rho.is_nan() {
        return f32::NAN;
    }
    CORR_BIN_EDGES[1..5].iter().take_while(|&&e| rho >= e).count() as f32
}

/// Correlation map of `hs` band `band` with the PAN brought to HS scale.
pub fn correlation_map(pan: &PanImage, hs: &HsCube, band: usize, mtf: &MtfSpec, corr: &CorrWindowSpec) -> Result<Array2<f64>, Error> {
    if band >= hs.bands() {
        return Err(Error::InvalidParameter(format!("band {band} out of range 0..{}", hs.bands())));
    }
    let pan_low = hysharp_core::mtf_downscale(pan.view(), mtf)?;
    local_correlation_map(hs.band(band), pan_low.view(), corr)
}

pub fn cmd_corrmap(a: &CorrmapArgs) -> Result<Vec<PathBuf>, Error> {
    let scene = load_scene(&a.pan, &a.hs)?;
    let gain = a.mtf_gain.unwrap_or(hysharp_core::resample::DEFAULT_MTF_GAIN);
    let mtf = MtfSpec::new(gain, hysharp_core::resample::DEFAULT_MTF_HALF_WIDTH, scene.ratio)?;
    let corr = CorrWindowSpec::new(a.sigma.unwrap_or(scene.ratio))?;
    let map = correlation_map(&scene.pan, &scene.hs, a.band, &mtf, &corr)?;
    let as_cube = |m: Array2<f32>| HsCube::new(m.insert_axis(Axis(0)));
    let quantized_path = sidecar(&a.out, "quantized.hsr");
    save_raster_to(&a.out, &as_cube(map.mapv(|v| v as f32))?)?;
    save_raster_to(&quantized_path, &as_cube(map.mapv(quantize_correlation))?)?;
    Ok(vec![a.out.clone(), quantized_path])
}
