mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use annopipe::autodiff::Graph;
use annopipe::params::ParamSet;
use annopipe::pipeline::{chunk_bounds, parallel_gradients, GradientTask, NoFaults, PartitionFaults};
use annopipe::tensor::Tensor;
use annopipe::tokenize::encode_sequence;
use annopipe::train::{FineTuneExample, FineTuneTask, SoftmaxHead};
use annopipe::{Error, Result};

/// Least squares `½(w·x + b − y)²` through the autodiff graph.
struct LeastSquares;

#[derive(Clone)]
struct Point {
    x: [f64; 3],
    y: f64,
}

impl GradientTask<f64> for LeastSquares {
    type Example = Point;

    fn weighted_loss_grads(
        &self,
        params: &ParamSet<f64>,
        examples: &[Point],
        weight: f64,
    ) -> Result<(f64, ParamSet<f64>)> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let xs: Vec<f64> = examples.iter().flat_map(|p| p.x).collect();
        let ys: Vec<f64> = examples.iter().map(|p| p.y).collect();
        let x = g.constant(Tensor::new([examples.len(), 3], xs)?);
        let y = g.constant(Tensor::new([examples.len(), 1], ys)?);
        let pred = g.linear(x, bound.id("w")?, Some(bound.id("b")?))?;
        let neg = g.scale(y, -1.0);
        let r = g.add(pred, neg)?;
        let sq = g.mul(r, r)?;
        let s = g.sum(sq);
        let loss = g.scale(s, 0.5 * weight);
        g.backward(loss)?;
        Ok((g.value(loss).data()[0], bound.grads(&g)))
    }
}

fn params() -> ParamSet<f64> {
    let mut p = ParamSet::new();
    p.insert("w", Tensor::new([1, 3], vec![0.3, -0.7, 1.1]).unwrap());
    p.insert("b", Tensor::new([1], vec![0.05]).unwrap());
    p
}

fn points(n: usize) -> Vec<Point> {
    (0..n)
        .map(|i| {
            let t = i as f64;
            Point {
                x: [(t * 0.37).sin(), (t * 0.11).cos(), t / n as f64],
                y: (t * 0.5).sin() + 0.25,
            }
        })
        .collect()
}

/// Closed-form mean-loss gradient.
fn oracle(batch: &[Point]) -> (f64, [f64; 3], f64) {
    let (w, b) = ([0.3, -0.7, 1.1], 0.05);
    let n = batch.len() as f64;
    let (mut loss, mut gw, mut gb) = (0.0, [0.0; 3], 0.0);
    for p in batch {
        let r = w[0] * p.x[0] + w[1] * p.x[1] + w[2] * p.x[2] + b - p.y;
        loss += 0.5 * r * r / n;
        for (g, x) in gw.iter_mut().zip(&p.x) {
            *g += r * x / n;
        }
        gb += r / n;
    }
    (loss, gw, gb)
}

#[test]
fn matches_closed_form_for_every_partition_count() {
    let batch = points(37);
    let (loss, gw, gb) = oracle(&batch);
    for p in [1, 2, 3, 4, 8, 64] {
        let r = parallel_gradients(&LeastSquares, &params(), &batch, p, &NoFaults).unwrap();
        assert!((r.loss - loss).abs() < 1e-12, "P={p}");
        for (got, want) in r.grads.get("w").unwrap().data().iter().zip(&gw) {
            assert!((got - want).abs() < 1e-12, "P={p}");
        }
        assert!((r.grads.get("b").unwrap().data()[0] - gb).abs() < 1e-12);
        assert_eq!(r.retries, 0);
    }
}

#[test]
fn duplicated_example_gives_the_single_example_gradient() {
    let one = points(1);
    let two = vec![one[0].clone(), one[0].clone()];
    let single = parallel_gradients(&LeastSquares, &params(), &one, 1, &NoFaults).unwrap();
    let split = parallel_gradients(&LeastSquares, &params(), &two, 2, &NoFaults).unwrap();
    assert_eq!(single.grads, split.grads);
    assert_eq!(single.loss, split.loss);
}

#[test]
fn reduction_is_deterministic() {
    let batch = points(50);
    let a = parallel_gradients(&LeastSquares, &params(), &batch, 4, &NoFaults).unwrap();
    for _ in 0..5 {
        let b = parallel_gradients(&LeastSquares, &params(), &batch, 4, &NoFaults).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn chunks_are_contiguous_and_cover_the_batch() {
    assert_eq!(chunk_bounds(10, 3), [(0, 3), (3, 6), (6, 10)]);
    assert_eq!(chunk_bounds(2, 2), [(0, 1), (1, 2)]);
}

/// Fails the first `times` attempts of one partition.
struct FailPartition {
    partition: usize,
    times: usize,
    seen: AtomicUsize,
    panic: bool,
}

impl PartitionFaults for FailPartition {
    fn before_attempt(&self, partition: usize, attempt: usize) -> Result<()> {
        if partition == self.partition && attempt < self.times {
            self.seen.fetch_add(1, Ordering::SeqCst);
            if self.panic {
                panic!("simulated worker crash");
            }
            return Err(Error::InvalidArgument("simulated worker failure".into()));
        }
        Ok(())
    }
}

#[test]
fn a_failed_partition_is_retried_once() {
    let batch = points(20);
    let clean = parallel_gradients(&LeastSquares, &params(), &batch, 4, &NoFaults).unwrap();
    for panic in [false, true] {
        let faults = FailPartition {
            partition: 2,
            times: 1,
            seen: AtomicUsize::new(0),
            panic,
        };
        let r = parallel_gradients(&LeastSquares, &params(), &batch, 4, &faults).unwrap();
        assert_eq!(r.retries, 1);
        assert_eq!(faults.seen.load(Ordering::SeqCst), 1);
        assert_eq!(r.grads, clean.grads);
        assert_eq!(r.loss, clean.loss);
    }
}

#[test]
fn a_repeatedly_failing_partition_is_an_error() {
    let batch = points(20);
    let faults = FailPartition {
        partition: 3,
        times: 2,
        seen: AtomicUsize::new(0),
        panic: false,
    };
    match parallel_gradients(&LeastSquares, &params(), &batch, 4, &faults) {
        Err(Error::Partition {
            partition,
            start,
            end,
            message,
        }) => {
            assert_eq!(partition, 3);
            assert_eq!((start, end), (15, 20));
            assert!(message.contains("simulated worker failure"));
        }
        other => panic!("expected a partition error, got {other:?}"),
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(matches!(
        parallel_gradients(&LeastSquares, &params(), &[], 2, &NoFaults),
        Err(Error::InvalidArgument(_))
    ));
    assert!(matches!(
        parallel_gradients(&LeastSquares, &params(), &points(3), 0, &NoFaults),
        Err(Error::Config(_))
    ));
}

#[test]
fn encoder_gradients_agree_across_partition_counts() {
    let vocab = common::fixture_vocab();
    let encoder = common::tiny_encoder(&vocab, 11);
    let config = encoder.config().clone();
    let mut params = encoder.params().clone();
    params.extend(SoftmaxHead::<f32>::init(4, config.hidden, true, 12).params());
    let examples: Vec<FineTuneExample> = common::fixture_csv("test.csv")
        .into_iter()
        .take(12)
        .enumerate()
        .map(|(i, e)| FineTuneExample {
            seq: Arc::new(encode_sequence(&e.text, &vocab, 32).unwrap()),
            label: e.label,
            dropout_seed: 100 + i as u64,
        })
        .collect();
    let task = FineTuneTask { config };
    let reference = parallel_gradients(&task, &params, &examples, 1, &NoFaults).unwrap();
    for p in [2, 3, 4] {
        let r = parallel_gradients(&task, &params, &examples, p, &NoFaults).unwrap();
        assert!((r.loss - reference.loss).abs() < 1e-5);
        for ((name, a), (_, b)) in r.grads.iter().zip(reference.grads.iter()) {
            let diff = a.max_abs_diff(b).unwrap();
            let scale = b.data().iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-3);
            assert!(diff / scale < 1e-4, "{name} at P={p}: {diff} vs {scale}");
        }
    }
}
