//! Spectral (reprojection) and spatial (local correlation) loss terms.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::{is_degenerate, reflect, Real};
use crate::resample::{mtf_operator, MtfSpec, Separable};

/// What a zero-variance window contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneratePolicy {
    /// rho := 0, so the window costs 1 in the spatial loss.
    #[default]
    Zero,
    /// The window is left out of averages (NaN in the map).
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrWindowSpec {
    pub sigma: usize,
    pub degenerate: DegeneratePolicy,
}

impl CorrWindowSpec {
    pub fn new(sigma: usize) -> Result<Self> {
        if sigma < 2 {
            return Err(Error::InvalidParameter(format!("correlation window must be >= 2, got {sigma}")));
        }
        Ok(Self { sigma, degenerate: DegeneratePolicy::Zero })
    }

    pub fn with_policy(mut self, policy: DegeneratePolicy) -> Self {
        self.degenerate = policy;
        self
    }

    /// Offset of the first window row/column relative to the center pixel.
    fn start(&self) -> isize {
        -((self.sigma / 2) as isize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub spectral: f64,
    pub spatial: f64,
    pub ratio: f64,
    pub beta: f64,
    pub combined: f64,
}

impl LossValues {
    pub fn new(spectral: f64, spatial: f64, spectral_exp: f64, beta: f64) -> Result<Self> {
        Ok(Self {
            spectral,
            spatial,
            ratio: normalized_spectral(spectral, spectral_exp)?,
            beta,
            combined: spectral + beta * spatial,
        })
    }
}

/// `L / L_exp`.
pub fn normalized_spectral(l_lambda: f64, l_lambda_exp: f64) -> Result<f64> {
    if !(l_lambda_exp > 0.0) || !l_lambda_exp.is_finite() {
        return Err(Error::DegenerateReference(format!("reference spectral loss is {l_lambda_exp}")));
    }
    Ok(l_lambda / l_lambda_exp)
}

/// Reprojection loss against one coarse band, with the degradation operator prebuilt.
#[derive(Debug, Clone)]
pub struct SpectralTerm {
    op: Separable,
    target: Array2<f64>,
}

impl SpectralTerm {
    pub fn new<T: Real>(hs_band: ArrayView2<'_, T>, mtf: &MtfSpec) -> Result<Self> {
        let (h, w) = hs_band.dim();
        let op = mtf_operator(h * mtf.ratio, w * mtf.ratio, mtf)?;
        Ok(Self { op, target: hs_band.mapv(|v| v.as_f64()) })
    }

    fn residual<T: Real>(&self, fused: ArrayView2<'_, T>) -> Result<Array2<f64>> {
        if fused.dim() != self.op.in_dim() {
            return Err(Error::Dimension(format!(
                "fused band is {:?}, expected {:?}",
                fused.dim(),
                self.op.in_dim()
            )));
        }
        Ok(self.op.apply(fused.mapv(|v| v.as_f64()).view())? - &self.target)
    }

    pub fn value<T: Real>(&self, fused: ArrayView2<'_, T>) -> Result<f64> {
        let r = self.residual(fused)?;
        Ok(r.iter().map(|v| v.abs()).sum::<f64>() / r.len() as f64)
    }

    /// Value and subgradient with respect to the fused band.
    pub fn value_and_grad<T: Real>(&self, fused: ArrayView2<'_, T>) -> Result<(f64, Array2<f64>)> {
        let r = self.residual(fused)?;
        let n = r.len() as f64;
        let value = r.iter().map(|v| v.abs()).sum::<f64>() / n;
        let sign = r.mapv(|v| if v > 0.0 { 1.0 / n } else if v < 0.0 { -1.0 / n } else { 0.0 });
        Ok((value, self.op.apply_adjoint(sign.view())?))
    }
}

/// Pixel-normalized l1 distance between the degraded fused band and the HS band.
pub fn spectral_loss<A: Real, B: Real>(fused: ArrayView2<'_, A>, hs_band: ArrayView2<'_, B>, mtf: &MtfSpec) -> Result<f64> {
    let (h, w) = hs_band.dim();
    if fused.dim() != (h * mtf.ratio, w * mtf.ratio) {
        return Err(Error::Dimension(format!(
            "fused band is {:?}, hs band {:?} at ratio {}",
            fused.dim(),
            hs_band.dim(),
            mtf.ratio
        )));
    }
    SpectralTerm::new(hs_band, mtf)?.value(fused)
}

/// Moments of one window.
#[derive(Debug, Clone, Copy)]
struct Window {
    mean_a: f64,
    mean_b: f64,
    sd_a: f64,
    sd_b: f64,
    rho: Option<f64>,
}

fn window_rows(h: usize, w: usize, spec: &CorrWindowSpec) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let table = |n: usize| -> Vec<Vec<usize>> {
        (0..n)
            .map(|c| (0..spec.sigma).map(|k| reflect(c as isize + spec.start() + k as isize, n)).collect())
            .collect()
    };
    (table(h), table(w))
}

fn windows(a: &Array2<f64>, b: &Array2<f64>, spec: &CorrWindowSpec) -> Vec<Window> {
    let (h, w) = a.dim();
    let (ry, rx) = window_rows(h, w, spec);
    let n = (spec.sigma * spec.sigma) as f64;
    (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let (ry, rx) = (&ry, &rx);
            (0..w).map(move |x| {
                let (mut sa, mut sb) = (0.0, 0.0);
                for &i in &ry[y] {
                    for &j in &rx[x] {
                        sa += a[[i, j]];
                        sb += b[[i, j]];
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
                for &i in &ry[y] {
                    for &j in &rx[x] {
                        let da = a[[i, j]] - ma;
                        let db = b[[i, j]] - mb;
                        saa += da * da;
                        sbb += db * db;
                        sab += da * db;
                    }
                }
                let (va, vb) = (saa / n, sbb / n);
                let rho = if is_degenerate(va, ma) || is_degenerate(vb, mb) {
                    None
                } else {
                    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
                };
                Window { mean_a: ma, mean_b: mb, sd_a: va.sqrt(), sd_b: vb.sqrt(), rho }
            })
        })
        .collect()
}

fn check_pair(a: (usize, usize), b: (usize, usize), spec: &CorrWindowSpec) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("images are {a:?} and {b:?}")));
    }
    if spec.sigma < 2 {
        return Err(Error::InvalidParameter(format!("correlation window must be >= 2, got {}", spec.sigma)));
    }
    if a.0 < spec.sigma || a.1 < spec.sigma {
        return Err(Error::Dimension(format!("image {a:?} is smaller than the {0}x{0} window", spec.sigma)));
    }
    Ok(())
}

/// Pearson correlation over the window around each pixel.
///
/// Degenerate windows are 0 under [`DegeneratePolicy::Zero`] and NaN under
/// [`DegeneratePolicy::Exclude`].
pub fn local_correlation_map<A: Real, B: Real>(
    a: ArrayView2<'_, A>,
    b: ArrayView2<'_, B>,
    spec: &CorrWindowSpec,
) -> Result<Array2<f64>> {
    check_pair(a.dim(), b.dim(), spec)?;
    let fill = match spec.degenerate {
        DegeneratePolicy::Zero => 0.0,
        DegeneratePolicy::Exclude => f64::NAN,
    };
    let wins = windows(&a.mapv(|v| v.as_f64()), &b.mapv(|v| v.as_f64()), spec);
    Ok(Array2::from_shape_vec(a.dim(), wins.iter().map(|w| w.rho.unwrap_or(fill)).collect()).expect("one per pixel"))
}

/// Spatial loss `<1 - |rho|>` against a fixed PAN plane.
#[derive(Debug, Clone)]
pub struct SpatialTerm {
    pan: Array2<f64>,
    spec: CorrWindowSpec,
}

impl SpatialTerm {
    pub fn new<T: Real>(pan: ArrayView2<'_, T>, spec: CorrWindowSpec) -> Result<Self> {
        check_pair(pan.dim(), pan.dim(), &spec)?;
        Ok(Self { pan: pan.mapv(|v| v.as_f64()), spec })
    }

    fn reduce(&self, wins: &[Window]) -> (f64, f64) {
        let mut total = 0.0;
        let mut count = 0.0;
        for w in wins {
            match (w.rho, self.spec.degenerate) {
                (Some(r), _) => {
                    total += 1.0 - r.abs();
                    count += 1.0;
                }
                (None, DegeneratePolicy::Zero) => {
                    total += 1.0;
                    count += 1.0;
                }
                (None, DegeneratePolicy::Exclude) => {}
            }
        }
        // with every window excluded there is no structure to match
        if count == 0.0 { (1.0, 0.0) } else { (total / count, count) }
    }

    pub fn value<T: Real>(&self, fused: ArrayView2<'_, T>) -> Result<f64> {
        check_pair(fused.dim(), self.pan.dim(), &self.spec)?;
        let wins = windows(&fused.mapv(|v| v.as_f64()), &self.pan, &self.spec);
        Ok(self.reduce(&wins).0)
    }

    /// Value and gradient with respect to the fused band. Degenerate
    /// windows have zero gradient.
    pub fn value_and_grad<T: Real>(&self, fused: ArrayView2<'_, T>) -> Result<(f64, Array2<f64>)> {
        check_pair(fused.dim(), self.pan.dim(), &self.spec)?;
        let f = fused.mapv(|v| v.as_f64());
        let wins = windows(&f, &self.pan, &self.spec);
        let (value, count) = self.reduce(&wins);
        let (h, w) = f.dim();
        let mut grad = Array2::<f64>::zeros((h, w));
        if count == 0.0 {
            return Ok((value, grad));
        }
        let (ry, rx) = window_rows(h, w, &self.spec);
        let n = (self.spec.sigma * self.spec.sigma) as f64;
        for (s, win) in wins.iter().enumerate() {
            let Some(rho) = win.rho else { continue };
            if rho == 0.0 {
                continue;
            }
            let scale = -rho.signum() / (count * n * win.sd_a);
            let (y, x) = (s / w, s % w);
            for &i in &ry[y] {
                for &j in &rx[x] {
                    let da = (f[[i, j]] - win.mean_a) / win.sd_a;
                    let db = (self.pan[[i, j]] - win.mean_b) / win.sd_b;
                    grad[[i, j]] += scale * (db - rho * da);
                }
            }
        }
        Ok((value, grad))
    }
}

/// `<1 - |rho|>` over all windows, in `[0, 1]`.
pub fn spatial_loss_abs<A: Real, B: Real>(fused: ArrayView2<'_, A>, pan: ArrayView2<'_, B>, spec: &CorrWindowSpec) -> Result<f64> {
    check_pair(fused.dim(), pan.dim(), spec)?;
    SpatialTerm::new(pan, *spec)?.value(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::pearson;
    use crate::resample::{exp_interpolate, mtf_downscale};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))
    }

    fn spec6() -> CorrWindowSpec {
        CorrWindowSpec::new(6).unwrap()
    }

    #[test]
    fn spectral_zero_cases() {
        let mtf = MtfSpec::with_ratio(6).unwrap();
        let hs = Array2::<f64>::from_elem((5, 4), 0.4);
        let up = exp_interpolate(hs.view(), 6).unwrap();
        assert!(spectral_loss(up.view(), hs.view(), &mtf).unwrap() < 1e-12);

        let fused = random(30, 24, 1);
        let hs = mtf_downscale(fused.view(), &mtf).unwrap();
        assert_eq!(spectral_loss(fused.view(), hs.view(), &mtf).unwrap(), 0.0);
    }

    #[test]
    fn spectral_matches_elementwise_oracle() {
        let mtf = MtfSpec::new(0.3, 20, 3).unwrap();
        let fused = random(12, 9, 2);
        let hs = random(4, 3, 3);
        // independent 2-D evaluation of the degradation from the tap list
        let taps = mtf.taps();
        let base = 1isize; // floor((3-1)/2)
        let (h, w) = fused.dim();
        let mut want = 0.0;
        for i in 0..4 {
            for j in 0..3 {
                let mut v = 0.0;
                for &(ky, _, wy) in &taps {
                    for &(kx, _, wx) in &taps {
                        let y = reflect(3 * i as isize + base + ky, h);
                        let x = reflect(3 * j as isize + base + kx, w);
                        v += wy * wx * fused[[y, x]];
                    }
                }
                want += (v - hs[[i, j]]).abs();
            }
        }
        want /= 12.0;
        let got = spectral_loss(fused.view(), hs.view(), &mtf).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!(spectral_loss(fused.view(), random(4, 4, 0).view(), &mtf).is_err());
    }

    #[test]
    fn normalized_ratio() {
        assert_eq!(normalized_spectral(0.3, 0.3).unwrap(), 1.0);
        assert!((normalized_spectral(0.59 * 0.02, 0.02).unwrap() - 0.59).abs() < 1e-15);
        assert!(matches!(normalized_spectral(0.1, 0.0), Err(Error::DegenerateReference(_))));
        assert!(normalized_spectral(0.1, -1.0).is_err());
    }

    #[test]
    fn correlation_map_affine_cases() {
        let a = random(16, 16, 4);
        let pos = local_correlation_map(a.view(), (&a * 2.0 + 3.0).view(), &spec6()).unwrap();
        assert!(pos.iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let neg = local_correlation_map(a.view(), (-&a).view(), &spec6()).unwrap();
        assert!(neg.iter().all(|&r| (r + 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_window_matches_scalar_pearson() {
        let a = random(6, 6, 5);
        let b = random(6, 6, 6);
        let want = pearson(a.as_slice().unwrap(), b.as_slice().unwrap()).unwrap();
        // on a 6x6 image the window at the center pixel (3,3) spans rows 0..6 exactly
        let map = local_correlation_map(a.view(), b.view(), &spec6()).unwrap();
        assert!((map[[3, 3]] - want).abs() < 1e-12);
    }

    #[test]
    fn degenerate_windows_follow_policy() {
        let flat = Array2::<f64>::from_elem((8, 8), 2.0);
        let pan = random(8, 8, 7);
        let map = local_correlation_map(flat.view(), pan.view(), &spec6()).unwrap();
        assert!(map.iter().all(|&r| r == 0.0));
        assert_eq!(spatial_loss_abs(flat.view(), pan.view(), &spec6()).unwrap(), 1.0);
        let ex = spec6().with_policy(DegeneratePolicy::Exclude);
        assert!(local_correlation_map(flat.view(), pan.view(), &ex).unwrap().iter().all(|r| r.is_nan()));
    }

    #[test]
    fn spatial_loss_polarity_and_noise() {
        let pan = random(64, 64, 8);
        assert!(spatial_loss_abs(pan.view(), pan.view(), &spec6()).unwrap() < 1e-12);
        assert!(spatial_loss_abs((-&pan).view(), pan.view(), &spec6()).unwrap() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = Array2::from_shape_fn((64, 64), |_| rng.sample::<f64, _>(StandardNormal));
        let v = spatial_loss_abs(noise.view(), pan.view(), &spec6()).unwrap();
        assert!(v > 0.8, "noise loss {v}");
    }

    #[test]
    fn spectral_gradient_matches_finite_differences() {
        let mtf = MtfSpec::new(0.3, 6, 2).unwrap();
        let fused = random(8, 10, 10);
        let hs = random(4, 5, 11);
        let term = SpectralTerm::new(hs.view(), &mtf).unwrap();
        let (_, g) = term.value_and_grad(fused.view()).unwrap();
        let h = 1e-7;
        for idx in [(0, 0), (3, 4), (7, 9), (5, 1)] {
            let mut p = fused.clone();
            p[idx] += h;
            let mut m = fused.clone();
            m[idx] -= h;
            let fd = (term.value(p.view()).unwrap() - term.value(m.view()).unwrap()) / (2.0 * h);
            assert!((fd - g[idx]).abs() < 1e-6, "{idx:?}: {fd} vs {}", g[idx]);
        }
    }

    #[test]
    fn spatial_gradient_matches_finite_differences() {
        let pan = random(12, 12, 12);
        let fused = &pan * 0.5 + random(12, 12, 13) * 0.5;
        for spec in [spec6(), CorrWindowSpec::new(3).unwrap()] {
            let term = SpatialTerm::new(pan.view(), spec).unwrap();
            let (_, g) = term.value_and_grad(fused.view()).unwrap();
            let h = 1e-6;
            for idx in [(0, 0), (6, 6), (11, 3), (2, 9)] {
                let mut p = fused.clone();
                p[idx] += h;
                let mut m = fused.clone();
                m[idx] -= h;
                let fd = (term.value(p.view()).unwrap() - term.value(m.view()).unwrap()) / (2.0 * h);
                assert!((fd - g[idx]).abs() < 1e-6 * fd.abs().max(1e-3), "{idx:?}: {fd} vs {}", g[idx]);
            }
        }
    }

    proptest! {
        #[test]
        fn spatial_loss_symmetries(seed in 0u64..500, scale in 0.1f64..10.0, offset in -5.0f64..5.0) {
            let pan = random(12, 12, seed);
            let fused = random(12, 12, seed + 1000);
            let base = spatial_loss_abs(fused.view(), pan.view(), &spec6()).unwrap();
            let neg_f = spatial_loss_abs((-&fused).view(), pan.view(), &spec6()).unwrap();
            let neg_p = spatial_loss_abs(fused.view(), (-&pan).view(), &spec6()).unwrap();
            let aff = spatial_loss_abs(fused.view(), (&pan * scale + offset).view(), &spec6()).unwrap();
            prop_assert!((base - neg_f).abs() < 1e-12);
            prop_assert!((base - neg_p).abs() < 1e-12);
            prop_assert!((base - aff).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&base));
            let map = local_correlation_map(fused.view(), pan.view(), &spec6()).unwrap();
            prop_assert!(map.iter().all(|r| (-1.0..=1.0).contains(r)));
        }

        #[test]
        fn spectral_is_nonnegative_and_lipschitz(seed in 0u64..500, k in 0usize..144, d in -1.0f64..1.0) {
            let mtf = MtfSpec::new(0.3, 20, 3).unwrap();
            let fused = random(12, 12, seed);
            let hs = random(4, 4, seed + 1);
            let a = spectral_loss(fused.view(), hs.view(), &mtf).unwrap();
            let mut moved = fused.clone();
            moved[(k / 12, k % 12)] += d;
            let b = spectral_loss(moved.view(), hs.view(), &mtf).unwrap();
            prop_assert!(a >= 0.0 && b >= 0.0);
            // |dL| <= |d| * colsum_k / n_coarse; colsum_k * R^2 stays within 4% of 1
            let op = mtf_operator(12, 12, &mtf).unwrap();
            let colsum = op.apply_adjoint(Array2::ones((4, 4)).view()).unwrap();
            prop_assert!(colsum.iter().all(|&c| c * 9.0 < 1.04));
            prop_assert!((a - b).abs() <= d.abs() * colsum[(k / 12, k % 12)] / 16.0 + 1e-12);
        }
    }
}
