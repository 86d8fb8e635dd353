//! Staged annotation pipeline with partitioned, data-parallel execution.

mod parallel;
mod stages;

pub use parallel::{chunk_bounds, parallel_gradients, GradientTask, NoFaults, PartitionFaults, ReducedGradients};
pub use stages::{
    build_classification_pipeline, build_embedding_pipeline, BertEmbeddings, CategoryClassifier, DocumentAssembler,
    SentenceDetector, SentenceEmbeddings, Tokenizer, DEFAULT_INFERENCE_BATCH,
};

use std::panic::{self, AssertUnwindSafe};
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::telemetry::collect_telemetry;
use crate::tokenize::{AnnotatedRecord, Annotation, TEXT};

/// A pipeline step: reads its declared input columns and produces exactly
/// one new column per record.
pub trait Stage: Send + Sync {
    fn name(&self) -> &str;
    fn inputs(&self) -> Vec<String>;
    fn output(&self) -> String;
    /// The new column for each record, in input order.
    fn transform_batch(&self, records: &[&AnnotatedRecord]) -> Result<Vec<Vec<Annotation>>>;
}

/// Ordered stages whose column dependencies were checked at construction.
pub struct Pipeline {
    stages: Vec<Box<dyn Stage>>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.stages.iter().map(|s| s.name())).finish()
    }
}

impl Pipeline {
    /// Validates that every input column is either the raw `text` source or
    /// the output of an earlier stage, and that no column is produced twice.
    pub fn new(stages: Vec<Box<dyn Stage>>) -> Result<Self> {
        let mut available = vec![TEXT.to_string()];
        for stage in &stages {
            for input in stage.inputs() {
                if !available.contains(&input) {
                    return Err(Error::MissingColumn {
                        stage: stage.name().to_string(),
                        column: input,
                    });
                }
            }
            let out = stage.output();
            if available.contains(&out) {
                return Err(Error::Config(format!(
                    "stage `{}` would overwrite existing column `{out}`",
                    stage.name()
                )));
            }
            available.push(out);
        }
        Ok(Pipeline { stages })
    }

    pub fn stages(&self) -> impl Iterator<Item = &dyn Stage> {
        self.stages.iter().map(|s| s.as_ref())
    }

    pub fn stage_names(&self) -> Vec<String> {
        self.stages.iter().map(|s| s.name().to_string()).collect()
    }

    /// Sequential run on one batch.
    pub fn transform(&self, records: Vec<AnnotatedRecord>) -> Result<Vec<AnnotatedRecord>> {
        let mut records = records;
        for stage in &self.stages {
            apply_stage(stage.as_ref(), &mut records)?;
        }
        Ok(records)
    }

    pub fn transform_one(&self, text: &str) -> Result<AnnotatedRecord> {
        Ok(self.transform(vec![AnnotatedRecord::from_text(text)])?.remove(0))
    }
}

fn apply_stage(stage: &dyn Stage, records: &mut [AnnotatedRecord]) -> Result<()> {
    if records.is_empty() {
        return Ok(());
    }
    let refs: Vec<&AnnotatedRecord> = records.iter().collect();
    let columns = stage.transform_batch(&refs)?;
    if columns.len() != records.len() {
        return Err(Error::InvalidArgument(format!(
            "stage `{}` returned {} columns for {} records",
            stage.name(),
            columns.len(),
            records.len()
        )));
    }
    let out = stage.output();
    for (record, column) in records.iter_mut().zip(columns) {
        record.columns.insert(out.clone(), column);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub wall_seconds: f64,
    pub records_per_sec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub stages: Vec<StageReport>,
    pub peak_memory_bytes: Option<u64>,
    pub num_partitions: usize,
    pub records: usize,
    pub total_wall_seconds: f64,
}

/// Record indices of partition `p` under round-robin assignment.
pub fn partition_indices(len: usize, partitions: usize, p: usize) -> impl Iterator<Item = usize> {
    (p..len).step_by(partitions.max(1))
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "worker panicked".to_string())
}

fn partition_error(partition: usize, indices: &[usize], message: String) -> Error {
    Error::Partition {
        partition,
        start: indices.first().copied().unwrap_or(0),
        end: indices.last().map_or(0, |&i| i + 1),
        message,
    }
}

/// Maps `f` over round-robin partitions on up to `partitions` threads and
/// merges the outputs back into input order. A worker error or panic fails
/// the whole call.
pub fn partitioned_map<I, O, F>(items: &[I], partitions: usize, f: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(&[&I]) -> Result<Vec<O>> + Sync,
{
    if partitions == 0 {
        return Err(Error::Config("partition count must be at least 1".into()));
    }
    let groups: Vec<Vec<usize>> = (0..partitions)
        .map(|p| partition_indices(items.len(), partitions, p).collect())
        .collect();
    let results: Vec<Result<Vec<O>>> = if partitions == 1 {
        let refs: Vec<&I> = items.iter().collect();
        vec![run_guarded(0, &groups[0], || f(&refs))]
    } else {
        thread::scope(|scope| {
            let handles: Vec<_> = groups
                .iter()
                .enumerate()
                .map(|(p, idx)| {
                    let f = &f;
                    scope.spawn(move || {
                        let refs: Vec<&I> = idx.iter().map(|&i| &items[i]).collect();
                        run_guarded(p, idx, || f(&refs))
                    })
                })
                .collect();
            handles
                .into_iter()
                .enumerate()
                .map(|(p, h)| {
                    h.join()
                        .unwrap_or_else(|e| Err(partition_error(p, &groups[p], panic_message(e))))
                })
                .collect()
        })
    };
    let mut slots: Vec<Option<O>> = (0..items.len()).map(|_| None).collect();
    for (p, result) in results.into_iter().enumerate() {
        let outputs = result?;
        if outputs.len() != groups[p].len() {
            return Err(partition_error(
                p,
                &groups[p],
                format!("produced {} outputs for {} inputs", outputs.len(), groups[p].len()),
            ));
        }
        for (&i, o) in groups[p].iter().zip(outputs) {
            slots[i] = Some(o);
        }
    }
    Ok(slots
        .into_iter()
        .map(|o| o.expect("every index assigned once"))
        .collect())
}

fn run_guarded<O>(p: usize, idx: &[usize], f: impl FnOnce() -> Result<Vec<O>>) -> Result<Vec<O>> {
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(partition_error(p, idx, e.to_string())),
        Err(payload) => Err(partition_error(p, idx, panic_message(payload))),
    }
}

/// Runs `pipeline` stage by stage over `partitions` workers. Every stage
/// finishes on all partitions before the next begins; the output keeps the
/// input order and does not depend on the partition count.
pub fn run_partitioned(
    pipeline: &Pipeline,
    records: Vec<AnnotatedRecord>,
    partitions: usize,
) -> Result<(Vec<AnnotatedRecord>, ExecutionReport)> {
    if partitions == 0 {
        return Err(Error::Config("partition count must be at least 1".into()));
    }
    let n = records.len();
    let (result, telemetry) = collect_telemetry(|| -> Result<_> {
        let mut records = records;
        let mut reports = Vec::with_capacity(pipeline.stages.len());
        for stage in &pipeline.stages {
            let start = Instant::now();
            let columns = partitioned_map(&records, partitions, |part| {
                let cols = stage.transform_batch(part)?;
                if cols.len() != part.len() {
                    return Err(Error::InvalidArgument(format!(
                        "stage `{}` returned {} columns for {} records",
                        stage.name(),
                        cols.len(),
                        part.len()
                    )));
                }
                Ok(cols)
            })?;
            let out = stage.output();
            for (record, column) in records.iter_mut().zip(columns) {
                record.columns.insert(out.clone(), column);
            }
            let wall_seconds = start.elapsed().as_secs_f64();
            reports.push(StageReport {
                name: stage.name().to_string(),
                wall_seconds,
                records_per_sec: if wall_seconds > 0.0 {
                    n as f64 / wall_seconds
                } else {
                    0.0
                },
            });
        }
        Ok((records, reports))
    });
    let (records, stages) = result?;
    Ok((
        records,
        ExecutionReport {
            stages,
            peak_memory_bytes: telemetry.peak_memory_bytes,
            num_partitions: partitions,
            records: n,
            total_wall_seconds: telemetry.wall_seconds,
        },
    ))
}
