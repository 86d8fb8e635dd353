use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softmax_in_place, Graph, NodeId};
use crate::encoder::{truncated_normal, INIT_STD};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SOFTMAX_WEIGHT: &str = "classifier.weight";
pub const SOFTMAX_BIAS: &str = "classifier.bias";
pub const MLP_HIDDEN_WEIGHT: &str = "mlp.hidden.weight";
pub const MLP_HIDDEN_BIAS: &str = "mlp.hidden.bias";
pub const MLP_OUTPUT_WEIGHT: &str = "mlp.output.weight";
pub const MLP_OUTPUT_BIAS: &str = "mlp.output.bias";

pub const DEFAULT_MLP_HIDDEN: usize = 64;

fn take<T: Scalar>(params: &ParamSet<T>, name: &str) -> Result<Tensor<T>> {
    params
        .get(name)
        .cloned()
        .ok_or_else(|| Error::WeightMismatch(vec![format!("missing tensor `{name}`")]))
}

fn expect_shape<T: Scalar>(t: &Tensor<T>, name: &str, shape: &[usize]) -> Result<()> {
    if t.shape() == shape {
        Ok(())
    } else {
        Err(Error::WeightMismatch(vec![format!(
            "tensor `{name}` has shape {:?}, expected {shape:?}",
            t.shape()
        )]))
    }
}

/// `softmax(W·h + b)` over the pooled `[CLS]` state. Without a bias it is
/// the literal `softmax(W·h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxHead<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> SoftmaxHead<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::shape("softmax_head", weight.shape(), &[0, 0]));
        }
        if let Some(b) = &bias {
            expect_shape(b, SOFTMAX_BIAS, &[weight.shape()[0]])?;
        }
        Ok(SoftmaxHead { weight, bias })
    }

    pub fn init(classes: usize, hidden: usize, bias: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = Tensor::new(
            [classes, hidden],
            truncated_normal(&mut rng, classes * hidden, INIT_STD),
        )
        .expect("sized by construction");
        SoftmaxHead {
            weight,
            bias: bias.then(|| Tensor::zeros([classes])),
        }
    }

    pub fn classes(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn params(&self) -> ParamSet<T> {
        let mut p = ParamSet::new();
        p.insert(SOFTMAX_WEIGHT, self.weight.clone());
        if let Some(b) = &self.bias {
            p.insert(SOFTMAX_BIAS, b.clone());
        }
        p
    }

    pub fn from_params(params: &ParamSet<T>) -> Result<Self> {
        let bias = params.get(SOFTMAX_BIAS).cloned();
        SoftmaxHead::new(take(params, SOFTMAX_WEIGHT)?, bias)
    }

    /// Records `x·Wᵀ + b` for `x: [n, H]`.
    pub fn logits(g: &mut Graph<T>, params: &BoundParams, x: NodeId) -> Result<NodeId> {
        let w = params.id(SOFTMAX_WEIGHT)?;
        let b = params.id(SOFTMAX_BIAS).ok();
        g.linear(x, w, b)
    }
}

/// Class probabilities for one pooled vector.
pub fn classify_cls<T: Scalar>(pooled: &Tensor<T>, head: &SoftmaxHead<T>) -> Result<Tensor<T>> {
    let h = head.hidden();
    if pooled.shape() != [h] {
        return Err(Error::shape("classify_cls", pooled.shape(), &[h]));
    }
    let mut logits: Vec<T> = (0..head.classes())
        .map(|c| {
            let w = head.weight.row(c);
            let dot = w.iter().zip(pooled.data()).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            dot + head.bias.as_ref().map_or(T::zero(), |b| b.data()[c])
        })
        .collect();
    softmax_in_place(&mut logits);
    Tensor::new([head.classes()], logits)
}

/// One ReLU hidden layer followed by a softmax output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

impl<T: Scalar> MlpHead<T> {
    pub fn new(w1: Tensor<T>, b1: Tensor<T>, w2: Tensor<T>, b2: Tensor<T>) -> Result<Self> {
        if w1.rank() != 2 || w2.rank() != 2 {
            return Err(Error::shape("mlp_head", w1.shape(), w2.shape()));
        }
        let (hidden, classes) = (w1.shape()[0], w2.shape()[0]);
        expect_shape(&b1, MLP_HIDDEN_BIAS, &[hidden])?;
        expect_shape(&w2, MLP_OUTPUT_WEIGHT, &[classes, hidden])?;
        expect_shape(&b2, MLP_OUTPUT_BIAS, &[classes])?;
        Ok(MlpHead { w1, b1, w2, b2 })
    }

    /// Glorot-uniform matrices, zero biases.
    pub fn init(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Tensor::from_fn([rows, cols], |_| T::lit(rng.random_range(-limit..limit)))
        };
        let w1 = glorot(hidden, input);
        let w2 = glorot(classes, hidden);
        MlpHead {
            w1,
            b1: Tensor::zeros([hidden]),
            w2,
            b2: Tensor::zeros([classes]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn classes(&self) -> usize {
        self.w2.shape()[0]
    }

    pub fn params(&self) -> ParamSet<T> {
        let mut p = ParamSet::new();
        p.insert(MLP_HIDDEN_WEIGHT, self.w1.clone());
        p.insert(MLP_HIDDEN_BIAS, self.b1.clone());
        p.insert(MLP_OUTPUT_WEIGHT, self.w2.clone());
        p.insert(MLP_OUTPUT_BIAS, self.b2.clone());
        p
    }

    pub fn from_params(params: &ParamSet<T>) -> Result<Self> {
        MlpHead::new(
            take(params, MLP_HIDDEN_WEIGHT)?,
            take(params, MLP_HIDDEN_BIAS)?,
            take(params, MLP_OUTPUT_WEIGHT)?,
            take(params, MLP_OUTPUT_BIAS)?,
        )
    }

    pub fn logits(g: &mut Graph<T>, params: &BoundParams, x: NodeId) -> Result<NodeId> {
        let h = g.linear(x, params.id(MLP_HIDDEN_WEIGHT)?, Some(params.id(MLP_HIDDEN_BIAS)?))?;
        let h = g.relu(h);
        g.linear(h, params.id(MLP_OUTPUT_WEIGHT)?, Some(params.id(MLP_OUTPUT_BIAS)?))
    }

    /// Row-wise class probabilities for `x: [n, D]`.
    pub fn probabilities(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.rank() != 2 || x.shape()[1] != self.input_dim() {
            return Err(Error::shape("mlp_head", x.shape(), &[x.shape()[0], self.input_dim()]));
        }
        let mut g = Graph::new();
        let bound = self.params().bind(&mut g, false);
        let xi = g.constant(x.clone());
        let logits = Self::logits(&mut g, &bound, xi)?;
        let probs = g.softmax(logits, 1)?;
        Ok(g.value(probs).clone())
    }
}

/// Mean of the rows of `token_states: [seq, H]` whose mask bit is 1.
pub fn sentence_embed<T: Scalar>(token_states: &Tensor<T>, mask: &[u8]) -> Result<Tensor<T>> {
    if token_states.rank() != 2 || token_states.shape()[0] != mask.len() {
        return Err(Error::shape("sentence_embed", token_states.shape(), &[mask.len()]));
    }
    let h = token_states.shape()[1];
    let mut acc = vec![T::zero(); h];
    let mut n = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m == 1) {
        for (a, &v) in acc.iter_mut().zip(token_states.row(i)) {
            *a += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sentence_embed: every position is masked".into(),
        ));
    }
    let n = T::lit(n as f64);
    acc.iter_mut().for_each(|a| *a /= n);
    Tensor::new([h], acc)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
