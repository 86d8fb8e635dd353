//! Dataset ingestion, stratified splitting and the binary weight format.

mod csv_loader;
mod model_dir;
mod split;
mod weight_file;

pub use csv_loader::{load_agnews_csv, load_agnews_csv_report, CsvLoad, CsvOptions, SkippedRow};
pub use model_dir::{load_model, save_model, ModelConfig, ENCODER_FILE, HEAD_FILE, MODEL_CONFIG, VOCAB_FILE};
pub use split::{stratified_split, DatasetSplit};
pub use weight_file::{
    load_encoder_weights, load_weights, read_weights, save_weights, write_weights, ManifestEntry, MAGIC,
};

use serde::{Deserialize, Serialize};

/// Conventional AG News class order.
pub const AG_CLASS_NAMES: [&str; 4] = ["World", "Sports", "Business", "Sci/Tech"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub text: String,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(text: impl Into<String>, label: usize) -> Self {
        LabeledExample {
            text: text.into(),
            label,
        }
    }
}

/// Examples per class index, `classes` entries long.
pub fn class_counts(examples: &[LabeledExample], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for e in examples {
        if e.label < classes {
            counts[e.label] += 1;
        }
    }
    counts
}
