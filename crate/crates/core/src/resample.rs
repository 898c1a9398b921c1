//! Scale-change operators.
//!
//! Both operators are separable and linear. Each axis is a sparse
//! `out_len x in_len` matrix whose rows already include the symmetric
//! boundary extension, so the adjoint (needed by the spectral loss
//! gradient) is just the transposed application.
//!
//! Grid convention: low-resolution pixel `i` sits at high-resolution
//! coordinate `i*R + (R-1)/2` (center of its R x R block). For even `R`
//! this is a half-integer position, and both kernels are sampled at the
//! corresponding fractional offsets.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{reflect, Real};

/// Low-resolution taps per output phase of the interpolator.
pub const EXP_TAPS: usize = 23;
pub const DEFAULT_MTF_GAIN: f64 = 0.30;
pub const DEFAULT_MTF_HALF_WIDTH: usize = 20;

/// Polyphase interpolation kernel: one 23-tap filter per output phase.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub ratio: usize,
    /// `phases[p][m]` weights low-res sample `i0 - (m - 11)` for output phase `p`,
    /// where `i0 = x / R`.
    pub phases: Vec<[f64; EXP_TAPS]>,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    /// Every phase sums to one (DC preservation).
    PerPhaseUnitSum,
}

/// Hann-windowed sinc with cutoff pi/R, evaluated at a fine-grid offset `t`.
pub(crate) fn exp_kernel_raw(t: f64, ratio: usize) -> f64 {
    let r = ratio as f64;
    let u = t / r;
    let sinc = if u.abs() < 1e-12 { 1.0 } else { (PI * u).sin() / (PI * u) };
    let half = (EXP_TAPS as f64 + 1.0) / 2.0 * r;
    if t.abs() >= half {
        0.0
    } else {
        sinc * 0.5 * (1.0 + (PI * t / half).cos())
    }
}

impl KernelSpec {
    pub fn new(ratio: usize) -> Result<Self> {
        if ratio < 2 {
            return Err(Error::Ratio(format!("interpolation ratio must be >= 2, got {ratio}")));
        }
        let r = ratio as f64;
        let center = (EXP_TAPS / 2) as isize;
        let phases = (0..ratio)
            .map(|p| {
                let delta = p as f64 - (r - 1.0) / 2.0;
                let mut taps = [0.0; EXP_TAPS];
                for (m, tap) in taps.iter_mut().enumerate() {
                    let t = delta + r * (m as isize - center) as f64;
                    *tap = exp_kernel_raw(t, ratio);
                }
                let sum: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|v| *v /= sum);
                taps
            })
            .collect();
        Ok(Self { ratio, phases, normalization: Normalization::PerPhaseUnitSum })
    }

    fn axis(&self, in_len: usize) -> AxisOp {
        let r = self.ratio;
        let center = (EXP_TAPS / 2) as isize;
        let rows = (0..in_len * r)
            .map(|x| {
                let i0 = (x / r) as isize;
                self.phases[x % r]
                    .iter()
                    .enumerate()
                    .map(|(m, &w)| (reflect(i0 - (m as isize - center), in_len), w))
                    .collect()
            })
            .collect();
        AxisOp { in_len, rows }
    }
}

/// MTF-matched Gaussian degradation filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MtfSpec {
    pub gain_at_nyquist: f64,
    pub half_width: usize,
    pub ratio: usize,
}

impl MtfSpec {
    pub fn new(gain_at_nyquist: f64, half_width: usize, ratio: usize) -> Result<Self> {
        if !(gain_at_nyquist > 0.0 && gain_at_nyquist < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gain at Nyquist must be in (0,1), got {gain_at_nyquist}"
            )));
        }
        if ratio < 2 {
            return Err(Error::Ratio(format!("ratio must be >= 2, got {ratio}")));
        }
        if half_width == 0 {
            return Err(Error::InvalidParameter("kernel half-width must be positive".into()));
        }
        Ok(Self { gain_at_nyquist, half_width, ratio })
    }

    pub fn with_ratio(ratio: usize) -> Result<Self> {
        Self::new(DEFAULT_MTF_GAIN, DEFAULT_MTF_HALF_WIDTH, ratio)
    }

    /// Gaussian standard deviation (fine pixels) whose continuous response at
    /// `1/(2R)` cycles/pixel equals the requested gain.
    pub fn sigma(&self) -> f64 {
        self.ratio as f64 * (-2.0 * self.gain_at_nyquist.ln()).sqrt() / PI
    }

    /// Offset of the block center from the first pixel of the block.
    fn phase(&self) -> f64 {
        (self.ratio as f64 - 1.0) / 2.0
    }

    /// `(k, t, weight)` for fine pixels `floor(center) + k` at distance `t` from
    /// the block center; weights sum to one.
    pub fn taps(&self) -> Vec<(isize, f64, f64)> {
        let frac = self.phase().fract();
        let hw = self.half_width as f64;
        let s = self.sigma();
        let lo = (-hw + frac).ceil() as isize;
        let hi = (hw + frac).floor() as isize;
        let mut taps: Vec<(isize, f64, f64)> = (lo..=hi)
            .map(|k| {
                let t = k as f64 - frac;
                (k, t, (-t * t / (2.0 * s * s)).exp())
            })
            .collect();
        let sum: f64 = taps.iter().map(|t| t.2).sum();
        taps.iter_mut().for_each(|t| t.2 /= sum);
        taps
    }

    fn axis(&self, in_len: usize) -> AxisOp {
        let base = self.phase().floor() as isize;
        let taps = self.taps();
        let rows = (0..in_len / self.ratio)
            .map(|i| {
                let origin = (i * self.ratio) as isize + base;
                taps.iter().map(|&(k, _, w)| (reflect(origin + k, in_len), w)).collect()
            })
            .collect();
        AxisOp { in_len, rows }
    }
}

/// Sparse 1-D linear map.
#[derive(Debug, Clone)]
struct AxisOp {
    in_len: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

/// A separable operator built from one [`AxisOp`] per axis.
#[derive(Debug, Clone)]
pub struct Separable {
    rows: AxisOp,
    cols: AxisOp,
}

impl Separable {
    pub fn in_dim(&self) -> (usize, usize) {
        (self.rows.in_len, self.cols.in_len)
    }

    pub fn out_dim(&self) -> (usize, usize) {
        (self.rows.rows.len(), self.cols.rows.len())
    }

    pub fn apply<T: Real>(&self, img: ArrayView2<'_, T>) -> Result<Array2<T>> {
        check_dim(img.dim(), self.in_dim())?;
        let (h_in, _) = self.in_dim();
        let (h_out, w_out) = self.out_dim();
        // horizontal pass
        let mut tmp = Array2::<f64>::zeros((h_in, w_out));
        for y in 0..h_in {
            let row = img.row(y);
            for (x, taps) in self.cols.rows.iter().enumerate() {
                tmp[[y, x]] = taps.iter().map(|&(j, w)| w * row[j].as_f64()).sum();
            }
        }
        let mut out = Array2::<T>::zeros((h_out, w_out));
        for (y, taps) in self.rows.rows.iter().enumerate() {
            for x in 0..w_out {
                let v: f64 = taps.iter().map(|&(i, w)| w * tmp[[i, x]]).sum();
                out[[y, x]] = T::from_f64(v);
            }
        }
        Ok(out)
    }

    /// Transposed application: maps an output-shaped image back to input shape.
    pub fn apply_adjoint(&self, img: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim(img.dim(), self.out_dim())?;
        let (h_in, w_in) = self.in_dim();
        let (_, w_out) = self.out_dim();
        let mut tmp = Array2::<f64>::zeros((h_in, w_out));
        for (y, taps) in self.rows.rows.iter().enumerate() {
            for &(i, w) in taps {
                for x in 0..w_out {
                    tmp[[i, x]] += w * img[[y, x]];
                }
            }
        }
        let mut out = Array2::<f64>::zeros((h_in, w_in));
        for y in 0..h_in {
            for (x, taps) in self.cols.rows.iter().enumerate() {
                let g = tmp[[y, x]];
                for &(j, w) in taps {
                    out[[y, j]] += w * g;
                }
            }
        }
        Ok(out)
    }
}

fn check_dim(got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!("image is {got:?}, operator expects {want:?}")));
    }
    Ok(())
}

/// Interpolator for `(h, w)` low-resolution planes.
pub fn exp_operator(h: usize, w: usize, ratio: usize) -> Result<Separable> {
    let k = KernelSpec::new(ratio)?;
    Ok(Separable { rows: k.axis(h), cols: k.axis(w) })
}

/// Degradation operator for `(h, w)` high-resolution planes.
pub fn mtf_operator(h: usize, w: usize, spec: &MtfSpec) -> Result<Separable> {
    if h % spec.ratio != 0 || w % spec.ratio != 0 {
        return Err(Error::Dimension(format!(
            "{w}x{h} is not divisible by ratio {}",
            spec.ratio
        )));
    }
    Ok(Separable { rows: spec.axis(h), cols: spec.axis(w) })
}

/// Upscale by `ratio` with the polyphase windowed-sinc interpolator.
pub fn exp_interpolate<T: Real>(band: ArrayView2<'_, T>, ratio: usize) -> Result<Array2<T>> {
    let (h, w) = band.dim();
    exp_operator(h, w, ratio)?.apply(band)
}

/// Low-pass with the MTF Gaussian and decimate by `spec.ratio`.
pub fn mtf_downscale<T: Real>(band: ArrayView2<'_, T>, spec: &MtfSpec) -> Result<Array2<T>> {
    let (h, w) = band.dim();
    mtf_operator(h, w, spec)?.apply(band)
}
