//! Central finite-difference oracle for analytic gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AttentionLayout, Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    pub max_relative_error: T,
    /// `(input, flat element)` of the worst component.
    pub worst: (usize, usize),
    pub analytic: T,
    pub numeric: T,
    pub checked: usize,
    /// Largest relative error after discounting the rounding-noise budget:
    /// `max(0, |a − n| − noise) / max(|a|, |n|, 1e-8)`.
    pub max_relative_error_above_noise: T,
    /// Components whose noise budget exceeds 1% of their magnitude.
    pub noise_limited: usize,
}

/// Noise floor of a central difference, in units of machine epsilon times
/// the loss magnitude: `NOISE_ULPS · ε · max(1, |f|) / (2·step)`.
pub const NOISE_ULPS: f64 = 8.0;

/// Compares the autodiff gradient of a scalar function with central
/// differences and returns the largest relative error
/// `|a − n| / max(|a|, |n|, 1e-8)`.
///
/// The step for element `j` is `eps · max(1, |x_j|)`.
pub fn finite_difference_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, NodeId) -> Result<NodeId>,
{
    let report = finite_difference_check_many(|g, ids| f(g, ids[0]), std::slice::from_ref(x), eps)?;
    Ok(report.max_relative_error)
}

/// Multi-input variant: every input is a trainable leaf and every element of
/// every input is perturbed.
pub fn finite_difference_check_many<T, F>(f: F, inputs: &[Tensor<T>], eps: T) -> Result<GradCheckReport<T>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId>,
{
    if eps <= T::zero() {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let mut graph = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| graph.param(t.clone())).collect();
    let root = f(&mut graph, &ids)?;
    graph.backward(root)?;
    let analytic: Vec<Tensor<T>> = ids.iter().map(|&id| graph.grad(id)).collect();

    let eval = |perturbed: &[Tensor<T>]| -> Result<T> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        let root = f(&mut g, &ids)?;
        Ok(g.value(root).data()[0])
    };

    let floor = T::lit(1e-8);
    let mut report = GradCheckReport {
        max_relative_error: T::zero(),
        worst: (0, 0),
        analytic: T::zero(),
        numeric: T::zero(),
        checked: 0,
        max_relative_error_above_noise: T::zero(),
        noise_limited: 0,
    };
    let base = eval(inputs)?.abs().max(T::one());
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let x0 = input.data()[j];
            let step = eps * x0.abs().max(T::one());
            work[i].data_mut()[j] = x0 + step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x0 - step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x0;

            let numeric = (plus - minus) / (step + step);
            let a = analytic[i].data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            let scale = base.max(plus.abs()).max(minus.abs());
            let noise = T::lit(NOISE_ULPS) * T::epsilon() * scale / (step + step);
            let magnitude = a.abs().max(numeric.abs()).max(floor);
            if noise > T::lit(1e-2) * magnitude {
                report.noise_limited += 1;
            }
            let excess = ((a - numeric).abs() - noise).max(T::zero()) / magnitude;
            if excess > report.max_relative_error_above_noise {
                report.max_relative_error_above_noise = excess;
            }
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = (i, j);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// [`finite_difference_check_many`] over a named parameter set, for models
/// that look tensors up by name.
pub fn check_params<T, F>(f: F, params: &ParamSet<T>, eps: T) -> Result<GradCheckReport<T>>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &BoundParams) -> Result<NodeId>,
{
    let names: Vec<String> = params.names().map(String::from).collect();
    let tensors: Vec<Tensor<T>> = params.iter().map(|(_, t)| t.clone()).collect();
    finite_difference_check_many(
        |g, ids| {
            let bound = BoundParams::from_ids(names.iter().cloned().zip(ids.iter().copied()));
            f(g, &bound)
        },
        &tensors,
        eps,
    )
}

pub type OpFn<T> = Box<dyn Fn(&mut Graph<T>, &[NodeId]) -> Result<NodeId>>;

/// One differentiable op reduced to a scalar, with its inputs.
pub struct OpCase<T: Scalar> {
    pub name: &'static str,
    pub inputs: Vec<Tensor<T>>,
    pub f: OpFn<T>,
}

fn random<T: Scalar>(shape: &[usize], seed: u64, scale: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::lit(scale * rng.random_range(-1.0..1.0)))
}

fn away_from_zero<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(0.2..1.0);
        T::lit(if rng.random_bool(0.5) { m } else { -m })
    })
}

/// Sums `y` against a fixed random weight so every element contributes.
fn project<T: Scalar>(g: &mut Graph<T>, y: NodeId, seed: u64) -> Result<NodeId> {
    let w = g.constant(random(g.value(y).shape(), seed, 1.0));
    let prod = g.mul(y, w)?;
    Ok(g.sum(prod))
}

/// Every differentiable op on small random inputs, each reduced to a
/// scalar. Kinked ops get inputs bounded away from the kink.
pub fn op_suite<T: Scalar>() -> Vec<OpCase<T>> {
    let case = |name, inputs, f: OpFn<T>| OpCase { name, inputs, f };
    let layout = Arc::new(AttentionLayout {
        segments: vec![(0, 3), (3, 2)],
        key_mask: vec![true, true, false, true, true],
        heads: 2,
    });
    let labels = [2usize, 0, 1];
    vec![
        case(
            "matmul",
            vec![random(&[3, 4], 1, 1.0), random(&[4, 2], 2, 1.0)],
            Box::new(|g, x| {
                let y = g.matmul(x[0], x[1])?;
                project(g, y, 3)
            }),
        ),
        case(
            "transpose",
            vec![random(&[3, 5], 4, 1.0)],
            Box::new(|g, x| {
                let y = g.transpose(x[0])?;
                project(g, y, 5)
            }),
        ),
        case(
            "linear",
            vec![random(&[4, 3], 6, 1.0), random(&[2, 3], 7, 1.0), random(&[2], 8, 1.0)],
            Box::new(|g, x| {
                let y = g.linear(x[0], x[1], Some(x[2]))?;
                project(g, y, 9)
            }),
        ),
        case(
            "linear_no_bias",
            vec![random(&[4, 3], 10, 1.0), random(&[2, 3], 11, 1.0)],
            Box::new(|g, x| {
                let y = g.linear(x[0], x[1], None)?;
                project(g, y, 12)
            }),
        ),
        case(
            "add",
            vec![random(&[2, 3], 13, 1.0), random(&[2, 3], 14, 1.0)],
            Box::new(|g, x| {
                let y = g.add(x[0], x[1])?;
                project(g, y, 15)
            }),
        ),
        case(
            "mul",
            vec![random(&[2, 3], 16, 1.0), random(&[2, 3], 17, 1.0)],
            Box::new(|g, x| {
                let y = g.mul(x[0], x[1])?;
                project(g, y, 18)
            }),
        ),
        case(
            "scale",
            vec![random(&[2, 3], 19, 1.0)],
            Box::new(|g, x| {
                let y = g.scale(x[0], T::lit(-2.5));
                project(g, y, 20)
            }),
        ),
        case(
            "add_bias",
            vec![random(&[4, 3], 21, 1.0), random(&[3], 22, 1.0)],
            Box::new(|g, x| {
                let y = g.add_bias(x[0], x[1])?;
                project(g, y, 23)
            }),
        ),
        case(
            "sum",
            vec![random(&[3, 3], 24, 1.0)],
            Box::new(|g, x| {
                let y = g.tanh(x[0]);
                Ok(g.sum(y))
            }),
        ),
        case(
            "mean",
            vec![random(&[3, 3], 25, 1.0)],
            Box::new(|g, x| {
                let y = g.tanh(x[0]);
                Ok(g.mean(y))
            }),
        ),
        case(
            "tanh",
            vec![random(&[3, 4], 26, 2.0)],
            Box::new(|g, x| {
                let y = g.tanh(x[0]);
                project(g, y, 27)
            }),
        ),
        case(
            "gelu",
            vec![random(&[3, 4], 28, 2.0)],
            Box::new(|g, x| {
                let y = g.gelu(x[0]);
                project(g, y, 29)
            }),
        ),
        case(
            "relu",
            vec![away_from_zero(&[3, 4], 30)],
            Box::new(|g, x| {
                let y = g.relu(x[0]);
                project(g, y, 31)
            }),
        ),
        case(
            "softmax_rows",
            vec![random(&[3, 4], 32, 1.0)],
            Box::new(|g, x| {
                let y = g.softmax(x[0], 1)?;
                project(g, y, 33)
            }),
        ),
        case(
            "softmax_columns",
            vec![random(&[3, 4], 34, 1.0)],
            Box::new(|g, x| {
                let y = g.softmax(x[0], 0)?;
                project(g, y, 35)
            }),
        ),
        case(
            "layer_norm",
            vec![random(&[3, 5], 36, 3.0), random(&[5], 37, 1.0), random(&[5], 38, 1.0)],
            Box::new(|g, x| {
                let y = g.layer_norm(x[0], x[1], x[2], T::lit(1e-12))?;
                project(g, y, 39)
            }),
        ),
        case(
            "gather",
            vec![random(&[4, 3], 40, 1.0)],
            Box::new(|g, x| {
                let y = g.gather(x[0], Arc::new(vec![2, 0, 2, 3]))?;
                project(g, y, 41)
            }),
        ),
        case(
            "segment_mean",
            vec![random(&[5, 3], 42, 1.0)],
            Box::new(|g, x| {
                let y = g.segment_mean(x[0], Arc::new(vec![vec![0, 1], vec![2, 3, 4]]))?;
                project(g, y, 43)
            }),
        ),
        case(
            "dropout",
            vec![random(&[2, 3], 44, 1.0)],
            Box::new(|g, x| {
                let mask = [1.25, 0.0, 1.25, 1.25, 0.0, 1.25].map(T::lit).to_vec();
                let y = g.dropout_with_mask(x[0], mask)?;
                project(g, y, 45)
            }),
        ),
        case(
            "attention",
            vec![
                random(&[5, 4], 46, 1.0),
                random(&[5, 4], 47, 1.0),
                random(&[5, 4], 48, 1.0),
            ],
            Box::new(move |g, x| {
                let y = g.attention(x[0], x[1], x[2], layout.clone())?;
                project(g, y, 49)
            }),
        ),
        case(
            "softmax_cross_entropy",
            vec![random(&[3, 4], 50, 1.0)],
            Box::new(move |g, x| g.softmax_cross_entropy(x[0], &labels)),
        ),
        case(
            "softmax_cross_entropy_weighted",
            vec![random(&[3, 4], 51, 1.0)],
            Box::new(move |g, x| g.softmax_cross_entropy_weighted(x[0], &labels, T::lit(0.25))),
        ),
        case(
            "cross_entropy",
            vec![random(&[3, 4], 52, 1.0)],
            Box::new(move |g, x| {
                let p = g.softmax(x[0], 1)?;
                g.cross_entropy(p, &labels)
            }),
        ),
        case(
            "matmul_softmax_cross_entropy",
            vec![random(&[3, 5], 53, 1.0), random(&[5, 4], 54, 1.0)],
            Box::new(|g, x| {
                let logits = g.matmul(x[0], x[1])?;
                let p = g.softmax(logits, 1)?;
                g.cross_entropy(p, &[1, 3, 0])
            }),
        ),
    ]
}
