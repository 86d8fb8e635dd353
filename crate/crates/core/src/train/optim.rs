use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One Adam update of a single tensor at step `t` (1-based).
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    m: &mut Tensor<T>,
    v: &mut Tensor<T>,
    t: u64,
    lr: f64,
    config: &AdamConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || m.shape() != param.shape() || v.shape() != param.shape() {
        return Err(Error::shape("adam_step", param.shape(), grad.shape()));
    }
    if t == 0 {
        return Err(Error::InvalidArgument("adam step counter starts at 1".into()));
    }
    let (b1, b2) = (T::lit(config.beta1), T::lit(config.beta2));
    let one = T::one();
    let c1 = one - T::lit(config.beta1.powi(t.min(i32::MAX as u64) as i32));
    let c2 = one - T::lit(config.beta2.powi(t.min(i32::MAX as u64) as i32));
    let (lr, eps, wd) = (T::lit(lr), T::lit(config.eps), T::lit(config.weight_decay));
    let p = param.data_mut();
    let (md, vd) = (m.data_mut(), v.data_mut());
    for i in 0..p.len() {
        let g = grad.data()[i];
        md[i] = b1 * md[i] + (one - b1) * g;
        vd[i] = b2 * vd[i] + (one - b2) * g * g;
        let m_hat = md[i] / c1;
        let v_hat = vd[i] / c2;
        p[i] -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * p[i]);
    }
    Ok(())
}

/// First and second moments for every parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = || {
            let mut z = ParamSet::new();
            for (name, p) in params.iter() {
                z.insert(name, Tensor::zeros(p.shape().to_vec()));
            }
            z
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Updates every tensor of `params` that has a gradient in `grads`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, lr: f64, config: &AdamConfig) -> Result<()> {
        self.t += 1;
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self
                .m
                .get_mut(name)
                .ok_or_else(|| Error::WeightMismatch(vec![format!("no optimizer state for `{name}`")]))?;
            let v = self.v.get_mut(name).expect("m and v share names");
            adam_step(p, g, m, v, self.t, lr, config)?;
        }
        Ok(())
    }
}

/// Number of warmup steps: `ceil(warmup_proportion · total)`.
pub fn warmup_steps(total_steps: u64, warmup_proportion: f64) -> u64 {
    ((warmup_proportion * total_steps as f64) - 1e-9).ceil().max(0.0) as u64
}

/// Linear ramp from 0 to `lr_base` over the warmup steps, then linear decay
/// to 0 at `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, lr_base: f64, warmup_proportion: f64) -> f64 {
    let total = total_steps.max(1);
    let step = step.min(total);
    let warmup = warmup_steps(total, warmup_proportion).min(total);
    if warmup > 0 && step <= warmup {
        lr_base * step as f64 / warmup as f64
    } else if warmup == total {
        lr_base
    } else {
        lr_base * (total - step) as f64 / (total - warmup) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor<f64> {
        Tensor::new([1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_bias_correction() {
        let (mut p, mut m, mut v) = (one(0.0), one(0.0), one(0.0));
        adam_step(&mut p, &one(1.0), &mut m, &mut v, 1, 1e-4, &AdamConfig::default()).unwrap();
        // m̂ = v̂ = 1, update = −lr / (1 + eps)
        assert!((p.data()[0] + 1e-4 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_no_op_and_sign_is_odd() {
        let (mut p, mut m, mut v) = (one(0.5), one(0.0), one(0.0));
        adam_step(&mut p, &one(0.0), &mut m, &mut v, 1, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p.data(), &[0.5]);

        let run = |g: f64| {
            let (mut p, mut m, mut v) = (one(0.0), one(0.0), one(0.0));
            for t in 1..=5 {
                adam_step(&mut p, &one(g), &mut m, &mut v, t, 1e-3, &AdamConfig::default()).unwrap();
            }
            p.data()[0]
        };
        assert_eq!(run(1.0), -run(-1.0));
    }

    #[test]
    fn schedule_shape() {
        let total = 100;
        assert_eq!(warmup_steps(total, 0.1), 10);
        assert_eq!(lr_schedule(0, total, 1e-4, 0.1), 0.0);
        assert_eq!(lr_schedule(10, total, 1e-4, 0.1), 1e-4);
        assert_eq!(lr_schedule(total, total, 1e-4, 0.1), 0.0);
        assert!((lr_schedule(5, total, 1e-4, 0.1) - 5e-5).abs() < 1e-18);
        assert!((lr_schedule(55, total, 1e-4, 0.1) - 5e-5).abs() < 1e-18);
        let peak = (0..=total)
            .filter(|&s| lr_schedule(s, total, 1e-4, 0.1) == 1e-4)
            .count();
        assert_eq!(peak, 1);
        assert_eq!(warmup_steps(451, 0.1), 46);
    }
}
