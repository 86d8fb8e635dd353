use std::panic::{self, AssertUnwindSafe};
use std::thread;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

/// Something that can compute a loss and its parameter gradients on a
/// slice of examples.
pub trait GradientTask<T: Scalar>: Sync {
    type Example: Sync;

    /// `weight · Σ loss(example)` and its gradient for every trainable
    /// parameter, in `params` order.
    fn weighted_loss_grads(
        &self,
        params: &ParamSet<T>,
        examples: &[Self::Example],
        weight: T,
    ) -> Result<(T, ParamSet<T>)>;
}

/// Hook consulted before each worker attempt; returning an error simulates
/// a worker failure.
pub trait PartitionFaults: Sync {
    fn before_attempt(&self, partition: usize, attempt: usize) -> Result<()>;
}

pub struct NoFaults;

impl PartitionFaults for NoFaults {
    fn before_attempt(&self, _: usize, _: usize) -> Result<()> {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedGradients<T> {
    /// Mean loss over the batch.
    pub loss: T,
    /// Gradient of the mean loss.
    pub grads: ParamSet<T>,
    /// Worker attempts that failed and were recomputed.
    pub retries: usize,
}

/// One partition's `(loss, gradients)` and its attempt count.
type PartitionOutcome<T> = (Result<(T, ParamSet<T>)>, usize);

/// Contiguous chunk boundaries of `len` items over `parts` partitions.
pub fn chunk_bounds(len: usize, parts: usize) -> Vec<(usize, usize)> {
    (0..parts).map(|p| (p * len / parts, (p + 1) * len / parts)).collect()
}

/// Splits `batch` into up to `partitions` contiguous micro-batches, computes
/// each one's gradient on its own thread against the shared read-only
/// `params`, and sums the results with a pairwise tree in partition order.
/// Each micro-batch loss is pre-scaled by `1/len(batch)`, so the sum is the
/// batch mean. A failed micro-batch is recomputed once.
pub fn parallel_gradients<T, G>(
    task: &G,
    params: &ParamSet<T>,
    batch: &[G::Example],
    partitions: usize,
    faults: &dyn PartitionFaults,
) -> Result<ReducedGradients<T>>
where
    T: Scalar,
    G: GradientTask<T>,
{
    if partitions == 0 {
        return Err(Error::Config("partition count must be at least 1".into()));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot compute gradients of an empty batch".into(),
        ));
    }
    let parts = partitions.min(batch.len());
    let bounds = chunk_bounds(batch.len(), parts);
    let weight = T::one() / T::lit(batch.len() as f64);

    let work = |p: usize| -> (Result<(T, ParamSet<T>)>, usize) {
        let (start, end) = bounds[p];
        let mut last = String::new();
        for attempt in 0..2 {
            let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
                faults.before_attempt(p, attempt)?;
                task.weighted_loss_grads(params, &batch[start..end], weight)
            }));
            match outcome {
                Ok(Ok(v)) => return (Ok(v), attempt),
                Ok(Err(e)) => last = e.to_string(),
                Err(payload) => {
                    last = payload
                        .downcast_ref::<&str>()
                        .map(|s| s.to_string())
                        .or_else(|| payload.downcast_ref::<String>().cloned())
                        .unwrap_or_else(|| "worker panicked".into())
                }
            }
        }
        (
            Err(Error::Partition {
                partition: p,
                start,
                end,
                message: format!("failed after retry: {last}"),
            }),
            2,
        )
    };

    let results: Vec<PartitionOutcome<T>> = if parts == 1 {
        vec![work(0)]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = (0..parts).map(|p| s.spawn(move || work(p))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panics are caught inside the worker"))
                .collect()
        })
    };

    let mut retries = 0;
    let mut level = Vec::with_capacity(parts);
    for (result, failed_attempts) in results {
        retries += failed_attempts.min(1);
        level.push(result?);
    }
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some((la, mut ga)) = it.next() {
            if let Some((lb, gb)) = it.next() {
                ga.add_assign(&gb)?;
                next.push((la + lb, ga));
            } else {
                next.push((la, ga));
            }
        }
        level = next;
    }
    let (loss, grads) = level.pop().expect("at least one partition");
    Ok(ReducedGradients { loss, grads, retries })
}
