//! Reduced- and full-resolution quality indexes.
//!
//! `Q_avg` is the band-averaged universal image quality index; it stands in
//! for the hypercomplex Q2^n index, and every report says so.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{local_correlation_map, CorrWindowSpec, DegeneratePolicy, SpectralTerm};
use crate::num::{is_degenerate, Real};
use crate::raster::{HsCube, PanImage};
use crate::resample::{exp_interpolate, mtf_downscale, MtfSpec};

pub const Q_INDEX_NOTE: &str = "Q_avg: band-averaged UIQI over sliding blocks (stride block/2), used in place of Q2^n";
pub const DEFAULT_Q_BLOCK: usize = 32;

/// True when a reference reprojection error is too small to normalize by.
pub fn is_degenerate_reference(l_exp: f64, band_scale: f64) -> bool {
    !(l_exp > 0.0) || !l_exp.is_finite() || l_exp <= 1e-9 * band_scale.abs()
}

fn mean_abs<T: Real>(band: ArrayView2<'_, T>) -> f64 {
    band.iter().map(|v| v.as_f64().abs()).sum::<f64>() / band.len().max(1) as f64
}

/// Per-band reprojection error of a fused cube and of the EXP baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandErrorProfile {
    pub bands: Vec<usize>,
    pub error: Vec<f64>,
    pub error_exp: Vec<f64>,
    /// `None` where the EXP error is degenerate.
    pub normalized: Vec<Option<f64>>,
}

impl BandErrorProfile {
    pub fn undefined_bands(&self) -> Vec<usize> {
        self.bands.iter().zip(&self.normalized).filter(|(_, e)| e.is_none()).map(|(b, _)| *b).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv_writer(out);
        w.write_record(["band", "E", "E_exp", "e"]).map_err(csv_err)?;
        for i in 0..self.bands.len() {
            let e = self.normalized[i].map_or_else(|| "NaN".to_string(), |v| v.to_string());
            w.write_record([self.bands[i].to_string(), self.error[i].to_string(), self.error_exp[i].to_string(), e])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(out)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

fn check_same(a: &HsCube, b: &HsCube) -> Result<()> {
    if a.view().dim() != b.view().dim() {
        return Err(Error::Dimension(format!(
            "cubes are {:?} and {:?}",
            a.view().dim(),
            b.view().dim()
        )));
    }
    Ok(())
}

/// `E_b = |down(fused_b) - hs_b|_1 / n` and `e_b = E_b / E_b(exp)`.
pub fn reprojection_profile(fused: &HsCube, hs: &HsCube, exp_cube: &HsCube, mtf: &MtfSpec) -> Result<BandErrorProfile> {
    check_same(fused, exp_cube)?;
    if fused.bands() != hs.bands() {
        return Err(Error::Dimension(format!("{} fused bands vs {} hs bands", fused.bands(), hs.bands())));
    }
    let rows: Vec<Result<(f64, f64)>> = (0..hs.bands())
        .into_par_iter()
        .map(|b| {
            let term = SpectralTerm::new(hs.band(b), mtf)?;
            Ok((term.value(fused.band(b))?, term.value(exp_cube.band(b))?))
        })
        .collect();
    let mut profile = BandErrorProfile { bands: vec![], error: vec![], error_exp: vec![], normalized: vec![] };
    for (b, row) in rows.into_iter().enumerate() {
        let (e, e_exp) = row?;
        profile.bands.push(b);
        profile.error.push(e);
        profile.error_exp.push(e_exp);
        profile.normalized.push((!is_degenerate_reference(e_exp, mean_abs(hs.band(b)))).then(|| e / e_exp));
    }
    Ok(profile)
}

/// EXP-interpolate every band of a cube.
pub fn exp_cube(hs: &HsCube, ratio: usize) -> Result<HsCube> {
    hs.map_bands(|band| exp_interpolate(band, ratio))
}

/// MTF-degrade every band of a cube.
pub fn degrade_cube(cube: &HsCube, mtf: &MtfSpec) -> Result<HsCube> {
    cube.map_bands(|band| mtf_downscale(band, mtf))
}

/// Mean spectral angle in degrees. Pixels where either vector is zero are skipped.
pub fn sam(fused: &HsCube, reference: &HsCube) -> Result<f64> {
    check_same(fused, reference)?;
    if fused.bands() < 2 {
        return Err(Error::Dimension("spectral angle needs at least two bands".into()));
    }
    let (f, r) = (fused.view(), reference.view());
    let (bands, h, w) = f.dim();
    let per_row: Vec<(f64, usize)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut total = 0.0;
            let mut count = 0;
            for x in 0..w {
                let nf = (0..bands).map(|b| (f[[b, y, x]] as f64).powi(2)).sum::<f64>().sqrt();
                let nr = (0..bands).map(|b| (r[[b, y, x]] as f64).powi(2)).sum::<f64>().sqrt();
                if nf == 0.0 || nr == 0.0 {
                    continue;
                }
                let (mut diff, mut sum) = (0.0, 0.0);
                for b in 0..bands {
                    let u = f[[b, y, x]] as f64 / nf;
                    let v = r[[b, y, x]] as f64 / nr;
                    diff += (u - v).powi(2);
                    sum += (u + v).powi(2);
                }
                total += 2.0 * diff.sqrt().atan2(sum.sqrt());
                count += 1;
            }
            (total, count)
        })
        .collect();
    let (total, count) = per_row.iter().fold((0.0, 0), |(t, c), &(a, b)| (t + a, c + b));
    if count == 0 {
        return Err(Error::Undefined("every pixel has a zero spectral vector".into()));
    }
    Ok((total / count as f64).to_degrees())
}

/// `100/R * sqrt(mean_b (RMSE_b / mu_b)^2)`; zero-mean reference bands are skipped.
pub fn ergas(fused: &HsCube, reference: &HsCube, ratio: usize) -> Result<f64> {
    check_same(fused, reference)?;
    if ratio == 0 {
        return Err(Error::Ratio("ratio must be positive".into()));
    }
    let mut acc = 0.0;
    let mut used = 0usize;
    for b in 0..reference.bands() {
        let (f, r) = (fused.band(b), reference.band(b));
        let n = r.len() as f64;
        let mu = r.iter().map(|&v| v as f64).sum::<f64>() / n;
        if mu == 0.0 {
            log::warn!("ERGAS: band {b} has zero reference mean and is excluded");
            continue;
        }
        let mse = f.iter().zip(r.iter()).map(|(&a, &c)| (a as f64 - c as f64).powi(2)).sum::<f64>() / n;
        acc += mse / (mu * mu);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Undefined("every reference band has zero mean".into()));
    }
    Ok(100.0 / ratio as f64 * (acc / used as f64).sqrt())
}

/// Universal image quality index of two equally sized samples.
pub fn uiqi(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    let flat = is_degenerate(vx, mx) && is_degenerate(vy, my);
    let var_sum = if flat { 0.0 } else { vx + vy };
    let mean_sq = mx * mx + my * my;
    match (var_sum == 0.0, mean_sq == 0.0) {
        (true, true) => 1.0,
        (true, false) => 2.0 * mx * my / mean_sq,
        (false, true) => 2.0 * cxy / var_sum,
        (false, false) => 4.0 * cxy * mx * my / (var_sum * mean_sq),
    }
}

fn block_starts(n: usize, block: usize) -> Vec<usize> {
    let stride = (block / 2).max(1);
    (0..=n - block).step_by(stride).collect()
}

/// Block-averaged UIQI of a single band pair.
pub fn q_band<A: Real, B: Real>(x: ArrayView2<'_, A>, y: ArrayView2<'_, B>, block: usize) -> Result<f64> {
    let (h, w) = x.dim();
    if y.dim() != (h, w) {
        return Err(Error::Dimension(format!("bands are {:?} and {:?}", x.dim(), y.dim())));
    }
    if block == 0 || block > h.min(w) {
        return Err(Error::InvalidParameter(format!("block {block} does not fit a {w}x{h} band")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let (mut bx, mut by) = (Vec::with_capacity(block * block), Vec::with_capacity(block * block));
    for &y0 in &block_starts(h, block) {
        for &x0 in &block_starts(w, block) {
            bx.clear();
            by.clear();
            for i in y0..y0 + block {
                for j in x0..x0 + block {
                    bx.push(x[[i, j]].as_f64());
                    by.push(y[[i, j]].as_f64());
                }
            }
            total += uiqi(&bx, &by);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Band-averaged block UIQI.
pub fn q_avg(fused: &HsCube, reference: &HsCube, block: usize) -> Result<f64> {
    check_same(fused, reference)?;
    let per_band: Vec<Result<f64>> =
        (0..fused.bands()).into_par_iter().map(|b| q_band(fused.band(b), reference.band(b), block)).collect();
    let mut total = 0.0;
    for q in per_band {
        total += q?;
    }
    Ok(total / fused.bands() as f64)
}

/// `1 - Q_avg(down(fused), hs)`, with the block clamped to the coarse size.
pub fn d_lambda(fused: &HsCube, hs: &HsCube, mtf: &MtfSpec, block: usize) -> Result<f64> {
    let down = degrade_cube(fused, mtf)?;
    let block = block.min(hs.width()).min(hs.height());
    Ok(1.0 - q_avg(&down, hs, block)?)
}

/// `1 - R^2` of the least-squares affine fit of the PAN on the fused bands.
pub fn d_s(fused: &HsCube, pan: &PanImage) -> Result<f64> {
    if (fused.height(), fused.width()) != (pan.height(), pan.width()) {
        return Err(Error::Dimension(format!(
            "fused is {}x{}, pan is {}x{}",
            fused.width(),
            fused.height(),
            pan.width(),
            pan.height()
        )));
    }
    let n = pan.view().len();
    let bands = fused.bands();
    let p: Vec<f64> = pan.view().iter().map(|&v| v as f64).collect();
    let mp = p.iter().sum::<f64>() / n as f64;
    let y = DVector::from_iterator(n, p.iter().map(|v| v - mp));
    let sst = y.norm_squared();
    if sst == 0.0 {
        return Err(Error::Undefined("pan is constant; R^2 is undefined".into()));
    }
    let means: Vec<f64> =
        (0..bands).map(|b| fused.band(b).iter().map(|&v| v as f64).sum::<f64>() / n as f64).collect();
    let cube = fused.view();
    let (_, _, w) = cube.dim();
    let x = DMatrix::from_fn(n, bands, |i, b| cube[[b, i / w, i % w]] as f64 - means[b]);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let fit = if smax == 0.0 {
        DVector::zeros(bands)
    } else {
        let tol = smax * (n.max(bands) as f64) * f64::EPSILON;
        svd.solve(&y, tol).map_err(|e| Error::Undefined(format!("least squares: {e}")))?
    };
    let sse = (&x * fit - &y).norm_squared();
    Ok((sse / sst).clamp(0.0, 1.0))
}

/// Mean of `1 - rho` (signed) over all bands and windows.
pub fn d_rho(fused: &HsCube, pan: &PanImage, spec: &CorrWindowSpec) -> Result<f64> {
    let per_band: Vec<Result<(f64, usize)>> = (0..fused.bands())
        .into_par_iter()
        .map(|b| {
            let map = local_correlation_map(fused.band(b), pan.view(), spec)?;
            let mut total = 0.0;
            let mut count = 0;
            for &r in map.iter() {
                if r.is_nan() {
                    continue;
                }
                total += 1.0 - r;
                count += 1;
            }
            Ok((total, count))
        })
        .collect();
    let (mut total, mut count) = (0.0, 0usize);
    for r in per_band {
        let (t, c) = r?;
        total += t;
        count += c;
    }
    if count == 0 {
        debug_assert_eq!(spec.degenerate, DegeneratePolicy::Exclude);
        return Err(Error::Undefined("every correlation window is degenerate".into()));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssessmentContext {
    #[serde(rename = "RR")]
    Reduced,
    #[serde(rename = "FR")]
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub context: AssessmentContext,
    pub q_index: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sam: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ergas: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_avg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<BandErrorProfile>,
}

impl QualityReport {
    fn empty(context: AssessmentContext) -> Self {
        Self {
            context,
            q_index: Q_INDEX_NOTE.into(),
            sam: None,
            ergas: None,
            q_avg: None,
            d_lambda: None,
            d_s: None,
            d_rho: None,
            profile: None,
        }
    }
}

/// Reduced-resolution assessment against ground truth. `hs` adds the
/// reprojection profile when available.
pub fn assess_reduced(
    fused: &HsCube,
    gt: &HsCube,
    hs: Option<&HsCube>,
    mtf: &MtfSpec,
    block: usize,
) -> Result<QualityReport> {
    let mut report = QualityReport::empty(AssessmentContext::Reduced);
    report.sam = Some(sam(fused, gt)?);
    report.ergas = Some(ergas(fused, gt, mtf.ratio)?);
    report.q_avg = Some(q_avg(fused, gt, block.min(gt.width()).min(gt.height()))?);
    if let Some(hs) = hs {
        report.profile = Some(reprojection_profile(fused, hs, &exp_cube(hs, mtf.ratio)?, mtf)?);
    }
    Ok(report)
}

/// Full-resolution assessment from the inputs alone.
pub fn assess_full(
    fused: &HsCube,
    hs: &HsCube,
    pan: &PanImage,
    mtf: &MtfSpec,
    corr: &CorrWindowSpec,
    block: usize,
) -> Result<QualityReport> {
    let mut report = QualityReport::empty(AssessmentContext::Full);
    report.d_lambda = Some(d_lambda(fused, hs, mtf, block)?);
    report.d_s = Some(d_s(fused, pan)?);
    report.d_rho = Some(d_rho(fused, pan, corr)?);
    report.profile = Some(reprojection_profile(fused, hs, &exp_cube(hs, mtf.ratio)?, mtf)?);
    Ok(report)
}
