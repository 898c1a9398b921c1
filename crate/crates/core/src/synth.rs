//! Seeded synthetic scenes and Wald-protocol degradation.
//!
//! A scene is a linear mixture of smooth abundance fields and smooth
//! endmember spectra, plus a binary map of sharp disks and rectangles. The
//! shared features add contrast to every band; on the designated inversion
//! bands the contrast is negated, so those bands anti-correlate with the PAN
//! around feature edges. A second set of features shows only in the visible
//! bands and therefore in the PAN.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::degrade_cube;
use crate::num::reflect;
use crate::raster::{HsCube, PairedScene, PanImage};
use crate::resample::{mtf_downscale, MtfSpec, DEFAULT_MTF_GAIN, DEFAULT_MTF_HALF_WIDTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub ratio: usize,
    pub endmembers: usize,
    pub inversion_fraction: f64,
    /// Noise std as a fraction of the scene's dynamic range.
    pub noise: f64,
    /// Per-band overrides of `noise`, as `(band, level)` pairs.
    pub band_noise: Vec<(usize, f64)>,
    pub mtf_gain: f64,
    /// Number of PAN-only features relative to the shared ones.
    pub pan_only_share: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 60,
            height: 60,
            bands: 16,
            ratio: 6,
            endmembers: 4,
            inversion_fraction: 0.25,
            noise: 0.005,
            band_noise: Vec::new(),
            mtf_gain: DEFAULT_MTF_GAIN,
            pan_only_share: 0.5,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.bands == 0 || self.width == 0 || self.height == 0 {
            return bad("scene needs at least one band and a non-empty grid".into());
        }
        if self.ratio < 2 {
            return Err(Error::Ratio(format!("ratio must be >= 2, got {}", self.ratio)));
        }
        if self.width % self.ratio != 0 || self.height % self.ratio != 0 {
            return Err(Error::Dimension(format!(
                "{}x{} is not divisible by ratio {}",
                self.width, self.height, self.ratio
            )));
        }
        if self.endmembers == 0 {
            return bad("need at least one endmember".into());
        }
        if !(self.pan_only_share >= 0.0 && self.pan_only_share.is_finite()) {
            return bad(format!("pan_only_share must be non-negative, got {}", self.pan_only_share));
        }
        if !(0.0..=1.0).contains(&self.inversion_fraction) {
            return bad(format!("inversion fraction {} is outside [0,1]", self.inversion_fraction));
        }
        if !(self.noise >= 0.0) || self.band_noise.iter().any(|&(b, n)| b >= self.bands || !(n >= 0.0)) {
            return bad("noise levels must be non-negative and refer to existing bands".into());
        }
        if !(self.mtf_gain > 0.0 && self.mtf_gain < 1.0) {
            return bad(format!("mtf gain {} is outside (0,1)", self.mtf_gain));
        }
        Ok(())
    }

    pub fn mtf(&self) -> Result<MtfSpec> {
        MtfSpec::new(self.mtf_gain, DEFAULT_MTF_HALF_WIDTH, self.ratio)
    }

    /// The last `round(fraction * B)` bands.
    pub fn inversion_bands(&self) -> Vec<usize> {
        let n = (self.inversion_fraction * self.bands as f64).round() as usize;
        (self.bands - n.min(self.bands)..self.bands).collect()
    }

    /// The first `ceil(B / 3)` bands, which the PAN integrates.
    pub fn visible_bands(&self) -> Vec<usize> {
        (0..self.bands.div_ceil(3)).collect()
    }

    fn noise_for(&self, band: usize) -> f64 {
        self.band_noise.iter().rev().find(|&&(b, _)| b == band).map_or(self.noise, |&(_, n)| n)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTruth {
    pub spec: SceneSpec,
    pub truth: HsCube,
    pub pan: PanImage,
    pub coarse: HsCube,
    pub inversion_bands: Vec<usize>,
    pub visible_bands: Vec<usize>,
    /// 1 inside a shared feature, 0 elsewhere, at PAN resolution.
    pub features: Array2<f32>,
    /// Features present only in the visible bands.
    pub pan_features: Array2<f32>,
}

impl SyntheticTruth {
    /// Pixels whose window (same geometry as the correlation loss) straddles a
    /// shared feature edge and no PAN-only edge.
    pub fn feature_mask(&self, sigma: usize) -> Array2<bool> {
        let shared = edge_mask(&self.features.mapv(|v| v as f64), sigma, 0.5);
        let pan_only = edge_mask(&self.pan_features.mapv(|v| v as f64), sigma, 0.5);
        ndarray::Zip::from(&shared).and(&pan_only).map_collect(|&s, &p| s && !p)
    }

    /// [`SyntheticTruth::feature_mask`] for the degraded feature map at HS scale.
    pub fn coarse_feature_mask(&self, sigma: usize) -> Result<Array2<bool>> {
        let mtf = self.spec.mtf()?;
        let shared = edge_mask(&mtf_downscale(self.features.mapv(|v| v as f64).view(), &mtf)?, sigma, 0.25);
        let pan_only = edge_mask(&mtf_downscale(self.pan_features.mapv(|v| v as f64).view(), &mtf)?, sigma, 0.25);
        Ok(ndarray::Zip::from(&shared).and(&pan_only).map_collect(|&s, &p| s && !p))
    }

    pub fn scene(&self) -> Result<PairedScene> {
        PairedScene::new(self.pan.clone(), self.coarse.clone())
    }
}

/// Windows whose sample spread reaches `threshold`.
pub fn edge_mask(map: &Array2<f64>, sigma: usize, threshold: f64) -> Array2<bool> {
    let (h, w) = map.dim();
    let start = -((sigma / 2) as isize);
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for dy in 0..sigma as isize {
            for dx in 0..sigma as isize {
                let v = map[[reflect(y as isize + start + dy, h), reflect(x as isize + start + dx, w)]];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        hi - lo >= threshold
    })
}

fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let hw = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-hw..=hw).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let (h, w) = img.dim();
    let pass = |src: &Array2<f64>, vertical: bool| {
        Array2::from_shape_fn((h, w), |(y, x)| {
            taps.iter()
                .enumerate()
                .map(|(i, t)| {
                    let k = i as isize - hw;
                    let v = if vertical {
                        src[[reflect(y as isize + k, h), x]]
                    } else {
                        src[[y, reflect(x as isize + k, w)]]
                    };
                    t * v
                })
                .sum::<f64>()
                / norm
        })
    };
    pass(&pass(img, false), true)
}

fn abundances(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Array2<f64>> {
    let (h, w) = (spec.height, spec.width);
    let blur = (spec.width.min(spec.height) as f64 / 15.0).max(2.0);
    let fields: Vec<Array2<f64>> = (0..spec.endmembers)
        .map(|_| {
            let noise = Array2::from_shape_fn((h, w), |_| rng.sample::<f64, _>(StandardNormal));
            let f = gaussian_blur(&noise, blur);
            let m = f.mean().unwrap_or(0.0);
            let sd = f.std(0.0).max(1e-12);
            f.mapv(|v| (v - m) / sd)
        })
        .collect();
    let mut out: Vec<Array2<f64>> = fields.iter().map(|f| f.mapv(|v| v.exp())).collect();
    let total = out.iter().fold(Array2::<f64>::zeros((h, w)), |acc, a| acc + a);
    out.iter_mut().for_each(|a| *a /= &total);
    out
}

fn spectra(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..spec.endmembers)
        .map(|_| {
            let level = rng.random_range(0.25..0.75);
            let terms: Vec<(f64, f64)> = (1..=2)
                .map(|k| (rng.random_range(-0.2..0.2) / k as f64, rng.random_range(0.0..std::f64::consts::TAU)))
                .collect();
            (0..spec.bands)
                .map(|b| {
                    let t = b as f64 / spec.bands as f64;
                    let v: f64 = terms
                        .iter()
                        .enumerate()
                        .map(|(k, &(a, phi))| a * (std::f64::consts::PI * (k + 1) as f64 * t + phi).sin())
                        .sum();
                    (level + v).clamp(0.05, 1.0)
                })
                .collect()
        })
        .collect()
}

fn features(spec: &SceneSpec, rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let (h, w) = (spec.height, spec.width);
    let r0 = spec.ratio as f64;
    let mut f = Array2::<f64>::zeros((h, w));
    for _ in 0..n {
        let (cy, cx) = (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64));
        let r = rng.random_range(r0..2.0 * r0);
        f.indexed_iter_mut().for_each(|((y, x), v)| {
            if (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2) <= r * r {
                *v = 1.0;
            }
        });
    }
    for _ in 0..n.div_ceil(2) {
        let rh = rng.random_range(1.5 * r0..3.0 * r0) as usize;
        let rw = rng.random_range(1.5 * r0..3.0 * r0) as usize;
        let y0 = rng.random_range(0..h.saturating_sub(rh).max(1));
        let x0 = rng.random_range(0..w.saturating_sub(rw).max(1));
        for y in y0..(y0 + rh).min(h) {
            for x in x0..(x0 + rw).min(w) {
                f[[y, x]] = 1.0;
            }
        }
    }
    f
}

/// Build a scene. Deterministic per seed; band noise uses one substream per band.
pub fn generate_scene(spec: &SceneSpec) -> Result<SyntheticTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let abund = abundances(spec, &mut rng);
    let spectra = spectra(spec, &mut rng);
    let n = ((spec.width * spec.height) as f64 / 500.0).round().max(3.0) as usize;
    let feat = features(spec, &mut rng, n);
    let n_pan = (n as f64 * spec.pan_only_share).round() as usize;
    let pan_feat = features(spec, &mut rng, n_pan) * feat.mapv(|f| 1.0 - f);
    let (h, w) = (spec.height, spec.width);

    let base: Vec<Array2<f64>> = (0..spec.bands)
        .map(|b| abund.iter().zip(&spectra).fold(Array2::zeros((h, w)), |acc, (a, s)| acc + a * s[b]))
        .collect();
    let (lo, hi) = base.iter().flat_map(|b| b.iter()).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| {
        (l.min(v), u.max(v))
    });
    let range = (hi - lo).max(1e-3);
    let amp = range;
    let inversion = spec.inversion_bands();
    let visible = spec.visible_bands();

    let bands: Vec<Array2<f32>> = (0..spec.bands)
        .into_par_iter()
        .map(|b| {
            let contrast = if inversion.contains(&b) {
                feat.mapv(|f| amp * (1.0 - f))
            } else if visible.contains(&b) {
                (&feat + &pan_feat) * amp
            } else {
                &feat * amp
            };
            let mut band = &base[b] + &contrast;
            let std = spec.noise_for(b) * range;
            if std > 0.0 {
                let mut sub = ChaCha8Rng::seed_from_u64(spec.seed);
                sub.set_stream(b as u64 + 1);
                let dist = Normal::new(0.0, std).expect("positive std");
                band.iter_mut().for_each(|v| *v += dist.sample(&mut sub));
            }
            band.mapv(|v| v as f32)
        })
        .collect();

    let weights: Vec<f64> = visible.iter().map(|_| rng.random_range(0.5..1.5)).collect();
    let wsum: f64 = weights.iter().sum();
    let pan = visible
        .iter()
        .zip(&weights)
        .fold(Array2::<f64>::zeros((h, w)), |acc, (&b, &wt)| acc + (&base[b] + (&feat + &pan_feat) * amp) * (wt / wsum));

    let truth = HsCube::from_bands(&bands, None)?;
    let coarse = degrade_cube(&truth, &spec.mtf()?)?;
    Ok(SyntheticTruth {
        spec: spec.clone(),
        truth,
        pan: PanImage::new(pan.mapv(|v| v as f32))?,
        coarse,
        inversion_bands: inversion,
        visible_bands: visible,
        features: feat.mapv(|v| v as f32),
        pan_features: pan_feat.mapv(|v| v as f32),
    })
}

/// Reduced-resolution pair from a full-resolution truth, which is kept as GT.
pub fn wald_degrade(truth: &SyntheticTruth, mtf: &MtfSpec) -> Result<(PairedScene, HsCube)> {
    let coarse = degrade_cube(&truth.truth, mtf)?;
    Ok((PairedScene::new(truth.pan.clone(), coarse)?, truth.truth.clone()))
}
