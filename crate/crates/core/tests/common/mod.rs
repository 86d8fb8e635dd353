#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use annopipe::data::{load_agnews_csv, CsvOptions, LabeledExample};
use annopipe::encoder::{EncoderConfig, EncoderWeights, Preset};
use annopipe::tokenize::Vocab;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/fixture")
}

pub fn fixture_vocab() -> Arc<Vocab> {
    Arc::new(Vocab::from_file(fixture_dir().join("vocab.txt")).unwrap())
}

pub fn fixture_csv(name: &str) -> Vec<LabeledExample> {
    load_agnews_csv(fixture_dir().join(name), &CsvOptions::default()).unwrap()
}

pub fn tiny_encoder(vocab: &Vocab, seed: u64) -> Arc<EncoderWeights<f32>> {
    let config = EncoderConfig::preset(Preset::Tiny).with_vocab_size(vocab.len());
    Arc::new(EncoderWeights::init(config, seed).unwrap())
}
