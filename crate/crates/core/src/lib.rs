//! Band-wise hyperspectral pansharpening.
//!
//! A small residual CNN is tuned on the target scene one band at a time,
//! each band starting from the weights selected for the previous one. The
//! spatial loss term is switched on and off by a hysteresis controller that
//! watches how far spectral fidelity drifts from the interpolator baseline.

pub mod error;
pub mod loss;
pub mod metrics;
pub mod neural;
pub mod exec;
pub mod num;
pub mod raster;
pub mod resample;
pub mod synth;
pub mod tuner;

pub use error::{Error, Result};
pub use exec::Execution;
pub use raster::{band_correlations, HsCube, PairedScene, PanImage};
pub use resample::{exp_interpolate, mtf_downscale, KernelSpec, MtfSpec};
pub use tuner::{compute_iteration_budget, sharpen_cube, SharpenOutput, TuneConfig, TuneTrace};
