use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

/// Encoder parameters whose names and shapes match a config exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    config: EncoderConfig,
    params: ParamSet<T>,
}

impl<T: Scalar> EncoderWeights<T> {
    /// Validates `params` against `config`; every missing, unexpected or
    /// mis-shaped tensor is listed in the error.
    pub fn new(config: EncoderConfig, params: ParamSet<T>) -> Result<Self> {
        config.validate()?;
        let mut problems = Vec::new();
        let expected = config.expected_shapes();
        for (name, shape) in &expected {
            match params.get(name) {
                None => problems.push(format!("missing tensor `{name}` {shape:?}")),
                Some(t) if t.shape() != shape.as_slice() => {
                    problems.push(format!("tensor `{name}` has shape {:?}, expected {shape:?}", t.shape()))
                }
                Some(_) => {}
            }
        }
        for name in params.names() {
            if !expected.iter().any(|(n, _)| n == name) {
                problems.push(format!("unexpected tensor `{name}`"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::WeightMismatch(problems));
        }
        // canonical order regardless of input order
        let mut ordered = ParamSet::new();
        for (name, _) in expected {
            let t = params.get(&name).cloned().expect("checked above");
            ordered.insert(name, t);
        }
        Ok(EncoderWeights {
            config,
            params: ordered,
        })
    }

    /// Truncated-normal matrices (std 0.02, redrawn beyond two standard
    /// deviations), unit layer-norm gains, zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape) in config.expected_shapes() {
            let t = if name.ends_with(".gamma") {
                Tensor::ones(shape)
            } else if name.ends_with(".beta") || name.ends_with(".bias") {
                Tensor::zeros(shape)
            } else {
                let n: usize = shape.iter().product();
                let data = truncated_normal(&mut rng, n, INIT_STD);
                Tensor::new(shape, data)?
            };
            params.insert(name, t);
        }
        Ok(EncoderWeights { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn numel(&self) -> usize {
        self.params.numel()
    }

    pub fn cast<U: Scalar>(&self) -> EncoderWeights<U> {
        let mut params = ParamSet::new();
        for (name, t) in self.params.iter() {
            params.insert(name, t.cast());
        }
        EncoderWeights {
            config: self.config.clone(),
            params,
        }
    }
}

/// `n` draws from N(0, std²) restricted to [-2·std, 2·std].
pub fn truncated_normal<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break T::lit(v);
            }
        })
        .collect()
}
