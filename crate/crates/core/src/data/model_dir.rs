use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::weight_file::{load_weights, save_weights};
use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tokenize::Vocab;
use crate::train::{Head, MlpHead, Regime, SoftmaxHead, TrainedModel};

pub const MODEL_CONFIG: &str = "config.json";
pub const ENCODER_FILE: &str = "encoder.ngw";
pub const HEAD_FILE: &str = "head.ngw";
pub const VOCAB_FILE: &str = "vocab.txt";

/// Contents of `config.json` in a saved model directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub regime: Regime,
    pub encoder: EncoderConfig,
    pub max_len: usize,
    pub classes: usize,
    pub class_names: Vec<String>,
}

/// Writes `config.json`, `encoder.ngw`, `head.ngw` and `vocab.txt`.
pub fn save_model<T: Scalar>(dir: impl AsRef<Path>, model: &TrainedModel<T>, class_names: &[String]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let classes = match &model.head {
        Head::Softmax(h) => h.classes(),
        Head::Mlp(h) => h.classes(),
    };
    let config = ModelConfig {
        regime: model.regime,
        encoder: model.encoder.config().clone(),
        max_len: model.max_len,
        classes,
        class_names: class_names.to_vec(),
    };
    let path = dir.join(MODEL_CONFIG);
    fs::write(&path, serde_json::to_string_pretty(&config)? + "\n").map_err(|e| Error::io(&path, e))?;
    save_weights(model.encoder.params(), dir.join(ENCODER_FILE))?;
    save_weights(&model.head.params(), dir.join(HEAD_FILE))?;
    let path = dir.join(VOCAB_FILE);
    let mut text = model.vocab.tokens().join("\n");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load_model<T: Scalar>(dir: impl AsRef<Path>, partitions: usize) -> Result<(TrainedModel<T>, ModelConfig)> {
    let dir = dir.as_ref();
    let path = dir.join(MODEL_CONFIG);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let config: ModelConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let encoder = EncoderWeights::new(config.encoder.clone(), load_weights(dir.join(ENCODER_FILE))?)?;
    let head_params = load_weights(dir.join(HEAD_FILE))?;
    let head = match config.regime {
        Regime::FineTune => Head::Softmax(SoftmaxHead::from_params(&head_params)?),
        Regime::FrozenPipeline => Head::Mlp(MlpHead::from_params(&head_params)?),
    };
    let vocab = Vocab::from_file(dir.join(VOCAB_FILE))?;
    Ok((
        TrainedModel {
            regime: config.regime,
            encoder: Arc::new(encoder),
            head,
            vocab: Arc::new(vocab),
            max_len: config.max_len,
            partitions,
        },
        config,
    ))
}
