//! The three-layer residual conv predictor, its exact gradients, and Adam.
//!
//! Parameters are stored as `f32`. Forward and backward are generic over the
//! activation type so the same code runs in `f32` for tuning and in `f64`
//! for gradient checking. Gradients and optimizer moments are always `f64`.

mod adam;
mod checkpoint;
pub(crate) mod conv;

use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

pub use adam::{adam_step, OptimizerState};
pub use checkpoint::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kernel: usize,
}

impl LayerShape {
    pub const fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

/// Input: interpolated HS band and PAN. Output: one detail plane.
pub const ARCHITECTURE: [LayerShape; 3] = [
    LayerShape { out_ch: 48, in_ch: 2, kernel: 7 },
    LayerShape { out_ch: 32, in_ch: 48, kernel: 7 },
    LayerShape { out_ch: 1, in_ch: 32, kernel: 5 },
];

/// Weight is `(out, in*k*k)` with the column index laid out as `(in, dy, dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub layers: [LayerTensors<T>; 3],
}

pub type ModelParams = ParamSet<f32>;
pub type Gradients = ParamSet<f64>;

impl<T: Real> ParamSet<T> {
    pub fn zeros() -> Self {
        Self {
            layers: ARCHITECTURE.map(|s| LayerTensors {
                weight: Array2::zeros((s.out_ch, s.fan_in())),
                bias: Array1::zeros(s.out_ch),
            }),
        }
    }

    /// Tensors in order `w1, b1, w2, b2, w3, b3`.
    pub fn tensors(&self) -> [&[T]; 6] {
        let [l1, l2, l3] = &self.layers;
        [
            l1.weight.as_slice().expect("standard layout"),
            l1.bias.as_slice().expect("standard layout"),
            l2.weight.as_slice().expect("standard layout"),
            l2.bias.as_slice().expect("standard layout"),
            l3.weight.as_slice().expect("standard layout"),
            l3.bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 6] {
        let [l1, l2, l3] = &mut self.layers;
        [
            l1.weight.as_slice_mut().expect("standard layout"),
            l1.bias.as_slice_mut().expect("standard layout"),
            l2.weight.as_slice_mut().expect("standard layout"),
            l2.bias.as_slice_mut().expect("standard layout"),
            l3.weight.as_slice_mut().expect("standard layout"),
            l3.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat indexing across all tensors in [`ParamSet::tensors`] order.
    pub fn get(&self, mut i: usize) -> T {
        for t in self.tensors() {
            if i < t.len() {
                return t[i];
            }
            i -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set(&mut self, mut i: usize, v: T) {
        for t in self.tensors_mut() {
            if i < t.len() {
                t[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            layers: self.layers.clone().map(|l| LayerTensors {
                weight: l.weight.mapv(|v| U::from_f64(v.as_f64())),
                bias: l.bias.mapv(|v| U::from_f64(v.as_f64())),
            }),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        Self {
            layers: self.layers.clone().map(|l| LayerTensors { weight: l.weight * k, bias: l.bias * k }),
        }
    }
}

impl ModelParams {
    /// FNV-1a over the raw parameter bits.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in self.tensors() {
            for v in t {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Zero-mean Gaussian weights with std `1/sqrt(fan_in)`, zero biases.
pub fn init_weights(seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros();
    for (layer, shape) in params.layers.iter_mut().zip(ARCHITECTURE) {
        let dist = Normal::new(0.0, 1.0 / (shape.fan_in() as f64).sqrt()).expect("positive std");
        layer.weight.iter_mut().for_each(|w| *w = dist.sample(&mut rng) as f32);
    }
    params
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardState<T> {
    input: Array3<T>,
    hidden: [Array3<T>; 2],
    digest: u64,
}

impl<T: Real> ForwardState<T> {
    pub fn dim(&self) -> (usize, usize) {
        let (_, h, w) = self.input.dim();
        (h, w)
    }

    /// Post-ReLU activations of hidden layer `l` (0 or 1).
    pub fn hidden(&self, l: usize) -> &Array3<T> {
        &self.hidden[l]
    }
}

fn layer_weights<T: Real>(params: &ModelParams) -> [(Array2<T>, Array1<T>); 3] {
    params.layers.clone().map(|l| {
        (l.weight.mapv(|v| T::from_f64(v as f64)), l.bias.mapv(|v| T::from_f64(v as f64)))
    })
}

/// `fused = hs_up + net(hs_up, pan)`.
pub fn forward<T: Real>(
    params: &ModelParams,
    hs_up: ArrayView2<'_, T>,
    pan: ArrayView2<'_, T>,
) -> Result<(Array2<T>, ForwardState<T>)> {
    if hs_up.dim() != pan.dim() {
        return Err(Error::Dimension(format!(
            "interpolated band is {:?}, pan is {:?}",
            hs_up.dim(),
            pan.dim()
        )));
    }
    if hs_up.is_empty() {
        return Err(Error::Dimension("empty input".into()));
    }
    let input = ndarray::stack(Axis(0), &[hs_up, pan]).expect("same shape");
    let [(w1, b1), (w2, b2), (w3, b3)] = layer_weights::<T>(params);
    let a1 = conv::forward(input.view(), w1.view(), b1.view(), ARCHITECTURE[0].kernel, true);
    let a2 = conv::forward(a1.view(), w2.view(), b2.view(), ARCHITECTURE[1].kernel, true);
    let detail = conv::forward(a2.view(), w3.view(), b3.view(), ARCHITECTURE[2].kernel, false);
    let fused = &hs_up + &detail.index_axis(Axis(0), 0);
    let state = ForwardState { input, hidden: [a1, a2], digest: params.digest() };
    Ok((fused, state))
}

/// Forward pass without keeping activations.
pub fn predict<T: Real>(params: &ModelParams, hs_up: ArrayView2<'_, T>, pan: ArrayView2<'_, T>) -> Result<Array2<T>> {
    forward(params, hs_up, pan).map(|(fused, _)| fused)
}

/// Parameter gradients of a scalar loss given `d loss / d fused`.
pub fn backward<T: Real>(
    state: &ForwardState<T>,
    params: &ModelParams,
    grad_out: ArrayView2<'_, f64>,
) -> Result<Gradients> {
    if state.digest != params.digest() {
        return Err(Error::StaleState("parameters changed since the forward pass".into()));
    }
    if grad_out.dim() != state.dim() {
        return Err(Error::StaleState(format!(
            "output gradient is {:?}, forward pass was {:?}",
            grad_out.dim(),
            state.dim()
        )));
    }
    let [(w1, _), (w2, _), (w3, _)] = layer_weights::<T>(params);
    let d3 = grad_out.mapv(T::from_f64).insert_axis(Axis(0));
    let [a1, a2] = &state.hidden;

    let mut g3 = conv::backward(a2.view(), w3.view(), d3.view(), ARCHITECTURE[2].kernel, true);
    let mut d2 = g3.input.take().expect("requested");
    relu_mask(&mut d2, a2);
    let mut g2 = conv::backward(a1.view(), w2.view(), d2.view(), ARCHITECTURE[1].kernel, true);
    let mut d1 = g2.input.take().expect("requested");
    relu_mask(&mut d1, a1);
    let g1 = conv::backward(state.input.view(), w1.view(), d1.view(), ARCHITECTURE[0].kernel, false);

    Ok(ParamSet {
        layers: [g1, g2, g3].map(|g| LayerTensors { weight: g.weight, bias: g.bias }),
    })
}

fn relu_mask<T: Real>(grad: &mut Array3<T>, activation: &Array3<T>) {
    grad.zip_mut_with(activation, |g, &a| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_plane(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        let a = init_weights(7);
        assert_eq!(a, init_weights(7));
        assert_ne!(a, init_weights(8));
        assert_eq!(a.len(), 48 * 98 + 48 + 32 * 48 * 49 + 32 + 32 * 25 + 1);
        let w = &a.layers[0].weight;
        assert_eq!(w.len(), 4704);
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / w.len() as f64;
        let sd = (w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        let target = 1.0 / 98f64.sqrt();
        assert!((sd - target).abs() < 0.2 * target, "sd {sd}");
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn zero_params_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hs = random_plane(9, 8, &mut rng).mapv(|v| v as f32);
        let pan = random_plane(9, 8, &mut rng).mapv(|v| v as f32);
        let fused = predict(&ModelParams::zeros(), hs.view(), pan.view()).unwrap();
        assert_eq!(fused, hs);
    }

    #[test]
    fn dead_relus_leave_only_last_bias() {
        let mut p = init_weights(3);
        p.layers[0].bias.fill(-1e3);
        p.layers[1].bias.fill(-1e3);
        p.layers[2].bias.fill(0.25);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let hs = random_plane(12, 12, &mut rng);
        let pan = random_plane(12, 12, &mut rng);
        let fused = predict(&p, hs.view(), pan.view()).unwrap();
        for (f, h) in fused.iter().zip(hs.iter()) {
            assert_eq!(*f, h + 0.25);
        }
    }

    #[test]
    fn single_pixel_scalar_oracle() {
        // A 1x1 image mirrors onto itself, so every tap sees the same sample
        // and each layer collapses to a scalar affine map over channels.
        let p = {
            let mut p = init_weights(11);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for l in p.layers.iter_mut() {
                l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.2));
            }
            p
        };
        let (hs, pan) = (0.7f64, 0.3f64);
        let mut act = vec![hs, pan];
        for (i, (layer, shape)) in p.layers.iter().zip(ARCHITECTURE).enumerate() {
            let kk = shape.kernel * shape.kernel;
            act = (0..shape.out_ch)
                .map(|o| {
                    let mut z = layer.bias[o] as f64;
                    for (c, a) in act.iter().enumerate() {
                        let taps: f64 = (0..kk).map(|t| layer.weight[[o, c * kk + t]] as f64).sum();
                        z += taps * a;
                    }
                    if i < 2 { z.max(0.0) } else { z }
                })
                .collect();
        }
        let want = hs + act[0];
        let got = predict(&p, Array2::from_elem((1, 1), hs).view(), Array2::from_elem((1, 1), pan).view()).unwrap();
        assert!((got[[0, 0]] - want).abs() < 1e-12);
    }

    #[test]
    fn dims_must_match() {
        let a = Array2::<f32>::zeros((4, 4));
        let b = Array2::<f32>::zeros((4, 5));
        assert!(matches!(forward(&ModelParams::zeros(), a.view(), b.view()), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_rejects_stale_state() {
        let mut p = init_weights(1);
        let x = Array2::<f32>::from_elem((6, 6), 0.5);
        let (_, state) = forward(&p, x.view(), x.view()).unwrap();
        let g = Array2::<f64>::ones((6, 6));
        assert!(backward(&state, &p, Array2::<f64>::ones((5, 6)).view()).is_err());
        p.set(3, 1.0);
        assert!(matches!(backward(&state, &p, g.view()), Err(Error::StaleState(_))));
    }

    #[test]
    fn zero_and_doubled_output_gradients() {
        let p = init_weights(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hs = random_plane(10, 10, &mut rng);
        let pan = random_plane(10, 10, &mut rng);
        let (_, state) = forward(&p, hs.view(), pan.view()).unwrap();
        let zero = backward(&state, &p, Array2::zeros((10, 10)).view()).unwrap();
        assert!(zero.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        let g = random_plane(10, 10, &mut rng) - 0.5;
        let once = backward(&state, &p, g.view()).unwrap();
        let twice = backward(&state, &p, (&g * 2.0).view()).unwrap();
        for (a, b) in once.tensors().iter().zip(twice.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() <= 1e-12 * x.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn shift_equivariance_in_interior() {
        let p = init_weights(6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (h, w) = (30, 30);
        let hs = random_plane(h, w + 1, &mut rng);
        let pan = random_plane(h, w + 1, &mut rng);
        use ndarray::s;
        let a = predict(&p, hs.slice(s![.., ..w]), pan.slice(s![.., ..w])).unwrap();
        let b = predict(&p, hs.slice(s![.., 1..]), pan.slice(s![.., 1..])).unwrap();
        // receptive field radius is 3 + 3 + 2 = 8 pixels
        for y in 8..h - 8 {
            for x in 9..w - 8 {
                assert!((a[[y, x]] - b[[y, x - 1]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn f32_forward_tracks_f64() {
        let p = init_weights(2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let hs = random_plane(20, 20, &mut rng);
        let pan = random_plane(20, 20, &mut rng);
        let d = predict(&p, hs.view(), pan.view()).unwrap();
        let s = predict(&p, hs.mapv(|v| v as f32).view(), pan.mapv(|v| v as f32).view()).unwrap();
        for (a, b) in d.iter().zip(s.iter()) {
            assert!((a - *b as f64).abs() < 1e-4);
        }
    }
}
