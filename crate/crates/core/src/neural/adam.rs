use super::{Gradients, ModelParams};
use crate::error::{Error, Result};

/// Adam moments and hyperparameters. Moments are kept in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(lr: f64) -> Self {
        Self { m: Gradients::zeros(), v: Gradients::zeros(), step: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update. Non-finite gradients leave everything untouched.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    if let Some((t, i)) = grads
        .tensors()
        .iter()
        .enumerate()
        .find_map(|(t, g)| g.iter().position(|v| !v.is_finite()).map(|i| (t, i)))
    {
        return Err(Error::NonFinite(format!("gradient tensor {t} entry {i}")));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    let (b1, b2, lr, eps) = (opt.beta1, opt.beta2, opt.lr, opt.eps);
    let OptimizerState { m, v, .. } = opt;
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(m.tensors_mut()).zip(v.tensors_mut())
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let update = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
            p[i] = (p[i] as f64 - update) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::init_weights;

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = init_weights(1);
        let before = p.clone();
        let mut opt = OptimizerState::new(1e-3);
        opt.m.set(5, 0.5);
        opt.v.set(5, 0.25);
        adam_step(&mut p, &Gradients::zeros(), &mut opt).unwrap();
        assert_eq!(opt.step, 1);
        assert!((opt.m.get(5) - 0.45).abs() < 1e-15);
        assert!((opt.v.get(5) - 0.25 * 0.999).abs() < 1e-15);
        // m is nonzero here so p[5] moves; all others must not
        for i in (0..p.len()).filter(|&i| i != 5) {
            assert_eq!(p.get(i), before.get(i));
        }
        let mut p2 = init_weights(1);
        let mut fresh = OptimizerState::new(1e-3);
        adam_step(&mut p2, &Gradients::zeros(), &mut fresh).unwrap();
        assert_eq!(p2, before);
    }

    #[test]
    fn first_step_magnitude() {
        let mut p = ModelParams::zeros();
        let mut g = Gradients::zeros();
        g.set(0, 1.0);
        let mut opt = OptimizerState::new(1e-5);
        adam_step(&mut p, &g, &mut opt).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        assert_eq!(p.get(0), (-1e-5 / (1.0 + 1e-8)) as f32);
        assert!((1..p.len()).all(|i| p.get(i) == 0.0));
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_mutation() {
        let mut p = init_weights(2);
        let before = p.clone();
        let mut g = Gradients::zeros();
        g.set(100, f64::NAN);
        let mut opt = OptimizerState::new(1e-5);
        let snapshot = opt.clone();
        assert!(matches!(adam_step(&mut p, &g, &mut opt), Err(Error::NonFinite(_))));
        assert_eq!(p, before);
        assert_eq!(opt, snapshot);
    }
}
