mod common;

use std::fs;
use std::io::Cursor;

use annopipe::data::{
    class_counts, load_agnews_csv, load_encoder_weights, load_model, read_weights, save_model, save_weights,
    stratified_split, write_weights, CsvOptions, AG_CLASS_NAMES,
};
use annopipe::encoder::{EncoderConfig, EncoderWeights, Preset};
use annopipe::train::{evaluate, train, Predictor, Regime, TrainConfig};
use annopipe::{Error, Tensor};

fn tiny() -> EncoderWeights<f32> {
    EncoderWeights::init(EncoderConfig::preset(Preset::Tiny), 21).unwrap()
}

#[test]
fn tiny_weights_round_trip_bit_identically() {
    let w = tiny();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.ngw");
    save_weights(w.params(), &path).unwrap();
    let back = load_encoder_weights::<f32>(&path, w.config().clone()).unwrap();
    assert_eq!(back.numel(), w.config().count_params());
    for ((na, a), (nb, b)) in back.params().iter().zip(w.params().iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.shape(), b.shape());
        assert!(
            a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()),
            "{na}"
        );
    }
    // writing twice gives the same bytes
    let (mut x, mut y) = (Vec::new(), Vec::new());
    write_weights(w.params(), &mut x).unwrap();
    write_weights(back.params(), &mut y).unwrap();
    assert_eq!(x, y);
}

#[test]
fn bad_magic_is_a_format_error() {
    let mut bytes = Vec::new();
    write_weights(tiny().params(), &mut bytes).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    assert!(matches!(read_weights::<f32>(Cursor::new(bytes)), Err(Error::Format(_))));
}

#[test]
fn truncated_payload_is_a_format_error() {
    let mut bytes = Vec::new();
    write_weights(tiny().params(), &mut bytes).unwrap();
    bytes.truncate(bytes.len() - 10);
    match read_weights::<f32>(Cursor::new(bytes)) {
        Err(Error::Format(m)) => assert!(m.contains("truncated"), "{m}"),
        other => panic!("expected a format error, got {:?}", other.map(|p| p.len())),
    }
}

#[test]
fn shape_mismatch_names_the_tensor() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.ngw");
    save_weights(tiny().params(), &path).unwrap();
    let mini = EncoderConfig::preset(Preset::Mini);
    match load_encoder_weights::<f32>(&path, mini) {
        Err(Error::WeightMismatch(problems)) => {
            let all = problems.join("\n");
            assert!(all.contains("encoder.layer.0.attention.query.weight"), "{all}");
            assert!(all.contains("[128, 128]") && all.contains("[256, 256]"), "{all}");
            // missing layers 2 and 3 are listed in the same error
            assert!(all.contains("encoder.layer.3."), "{all}");
        }
        other => panic!("expected a weight mismatch, got {:?}", other.map(|w| w.numel())),
    }
}

#[test]
fn unknown_tensor_is_reported() {
    let mut params = tiny().into_params();
    params.insert("extra.weight", Tensor::zeros([2]));
    match EncoderWeights::new(EncoderConfig::preset(Preset::Tiny), params) {
        Err(Error::WeightMismatch(p)) => assert!(p.iter().any(|m| m.contains("extra.weight"))),
        other => panic!("{:?}", other.map(|w| w.numel())),
    }
}

#[test]
fn fixture_matches_its_manifest() {
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(common::fixture_dir().join("manifest.json")).unwrap()).unwrap();
    for name in ["train", "test"] {
        let examples = common::fixture_csv(&format!("{name}.csv"));
        assert_eq!(examples.len() as u64, manifest[name]["rows"].as_u64().unwrap());
        let counts = class_counts(&examples, 4);
        for (c, n) in counts.iter().enumerate() {
            let expected = manifest[name]["per_class"][(c + 1).to_string()].as_u64().unwrap();
            assert_eq!(*n as u64, expected);
        }
    }
    assert_eq!(
        common::fixture_vocab().len() as u64,
        manifest["vocab_size"].as_u64().unwrap()
    );
    let names: Vec<&str> = manifest["classes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(names, AG_CLASS_NAMES);
}

#[test]
fn loader_is_deterministic() {
    let path = common::fixture_dir().join("test.csv");
    let a = load_agnews_csv(&path, &CsvOptions::default()).unwrap();
    let b = load_agnews_csv(&path, &CsvOptions::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn split_of_the_fixture_is_proportional() {
    let examples: Vec<_> = common::fixture_csv("train.csv").into_iter().take(1000).collect();
    let counts = class_counts(&examples, 4);
    let split = stratified_split(&examples, 0.1, 7).unwrap();
    let val = class_counts(&split.validation, 4);
    for c in 0..4 {
        assert_eq!(val[c], counts[c] / 10);
    }
    assert_eq!(split.train.len() + split.validation.len(), 1000);
}

#[test]
fn saved_models_predict_identically_after_reload() {
    let vocab = common::fixture_vocab();
    let examples: Vec<_> = common::fixture_csv("train.csv").into_iter().take(100).collect();
    let mut split = stratified_split(&examples, 0.2, 1).unwrap();
    split.test = common::fixture_csv("test.csv").into_iter().take(40).collect();
    let config = TrainConfig {
        epochs: 1,
        batch_size: 16,
        max_len: 24,
        ..TrainConfig::default()
    };
    let enc = EncoderWeights::<f32>::init(EncoderConfig::custom(1, 32, 2, vocab.len(), 32), 2).unwrap();
    let names: Vec<String> = AG_CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    for regime in [Regime::FineTune, Regime::FrozenPipeline] {
        let (model, _) = train(regime, &split, vocab.clone(), enc.clone(), &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_model(dir.path(), &model, &names).unwrap();
        let (back, cfg) = load_model::<f32>(dir.path(), 1).unwrap();
        assert_eq!(cfg.regime, regime);
        assert_eq!(cfg.class_names, names);
        let texts: Vec<&str> = split.test.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(model.predict(&texts).unwrap(), back.predict(&texts).unwrap());
        assert_eq!(
            evaluate(&model, &split.test, 4).unwrap(),
            evaluate(&back, &split.test, 4).unwrap()
        );
    }
}
