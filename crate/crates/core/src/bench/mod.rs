//! Regime comparison harness and report rendering.

mod report;

pub use report::{
    compute_decreases, emit_report, format_hms, render_report, ComparisonReport, ComparisonRow, ReportEnvironment,
    ReportFormat, RowMemory, SCHEMA_VERSION,
};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::encoder::{EncoderWeights, Preset};
use crate::error::{Error, Result};
use crate::telemetry::{collect_telemetry, Telemetry};
use crate::tokenize::Vocab;
use crate::train::{evaluate, train, Evaluation, Regime, TrainConfig, TrainLog};

/// One regime trained and evaluated on one preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub preset: Preset,
    pub regime: Regime,
    pub log: TrainLog,
    pub evaluation: Evaluation,
    pub telemetry: Telemetry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub report: ComparisonReport,
    pub runs: Vec<RunRecord>,
}

/// Trains and evaluates both regimes on each preset, timing each run
/// (training plus test evaluation) under [`collect_telemetry`].
/// `initial_weights` supplies the starting encoder for a preset.
pub fn run_comparison(
    presets: &[Preset],
    split: &DatasetSplit,
    vocab: Arc<Vocab>,
    config: &TrainConfig,
    initial_weights: impl Fn(Preset) -> Result<EncoderWeights<f32>>,
) -> Result<BenchOutcome> {
    if presets.is_empty() {
        return Err(Error::Config("no presets selected".into()));
    }
    if split.test.is_empty() {
        return Err(Error::InvalidArgument("test set is empty".into()));
    }
    let mut rows = Vec::with_capacity(presets.len());
    let mut memory = Vec::with_capacity(presets.len());
    let mut runs = Vec::with_capacity(2 * presets.len());
    for &preset in presets {
        let mut per_regime = Vec::with_capacity(2);
        for regime in [Regime::FineTune, Regime::FrozenPipeline] {
            let weights = initial_weights(preset)?;
            let (result, telemetry) = collect_telemetry(|| -> Result<_> {
                let (model, log) = train(regime, split, vocab.clone(), weights, config)?;
                let evaluation = evaluate(&model, &split.test, config.classes)?;
                Ok((log, evaluation))
            });
            let (log, evaluation) = result?;
            per_regime.push((evaluation.accuracy, telemetry));
            runs.push(RunRecord {
                preset,
                regime,
                log,
                evaluation,
                telemetry,
            });
        }
        let (acc_a, tel_a) = per_regime[0];
        let (acc_b, tel_b) = per_regime[1];
        rows.push(ComparisonRow::new(
            preset.display_name(),
            acc_a,
            tel_a.wall_seconds,
            acc_b,
            tel_b.wall_seconds,
        )?);
        memory.push(RowMemory {
            model: preset.display_name().to_string(),
            peak_memory_a_bytes: tel_a.peak_memory_bytes,
            peak_memory_b_bytes: tel_b.peak_memory_bytes,
        });
    }
    let environment = ReportEnvironment {
        threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        partitions: config.partitions,
        seed: config.seed,
        train_examples: split.train.len(),
        validation_examples: split.validation.len(),
        test_examples: split.test.len(),
        epochs: config.epochs,
        device: None,
    };
    let mut report = ComparisonReport::new(rows, environment)?;
    report.memory = memory;
    Ok(BenchOutcome { report, runs })
}
