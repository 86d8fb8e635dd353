use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::heads::{argmax, classify_cls, MlpHead, SoftmaxHead, DEFAULT_MLP_HIDDEN};
use super::mix_seed;
use super::optim::{lr_schedule, AdamConfig, AdamState};
use crate::autodiff::Graph;
use crate::data::{DatasetSplit, LabeledExample};
use crate::encoder::{encode, forward_batch, EncoderConfig, EncoderWeights, PackedBatch};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::pipeline::{
    build_classification_pipeline, build_embedding_pipeline, parallel_gradients, partitioned_map, run_partitioned,
    GradientTask, NoFaults, DEFAULT_INFERENCE_BATCH,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenize::{
    encode_sequence, AnnotatedRecord, EncodedSequence, Vocab, CATEGORY, DEFAULT_MAX_LEN, SENTENCE_EMBEDDING,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Softmax head on the pooled `[CLS]` state; every parameter trains.
    FineTune,
    /// Encoder fixed; mean-pooled sentence embeddings feed an MLP head.
    FrozenPipeline,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::FineTune => "fine_tune",
            Regime::FrozenPipeline => "frozen_pipeline",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fine_tune" | "finetune" | "a" => Ok(Regime::FineTune),
            "frozen" | "frozen_pipeline" | "pipeline" | "b" => Ok(Regime::FrozenPipeline),
            _ => Err(Error::Config(format!("unknown regime `{s}` (fine-tune, frozen)"))),
        }
    }
}

pub const DEFAULT_FROZEN_LR: f64 = 5e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Peak learning rate of the fine-tuning regime.
    pub lr_base: f64,
    /// Peak learning rate of the frozen regime's MLP head.
    pub frozen_lr: f64,
    pub adam: AdamConfig,
    pub warmup_proportion: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Workers for gradient micro-batches and pipeline inference.
    pub partitions: usize,
    pub max_len: usize,
    pub classes: usize,
    /// Bias term in the softmax head.
    pub head_bias: bool,
    pub mlp_hidden: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_base: 1e-4,
            frozen_lr: DEFAULT_FROZEN_LR,
            adam: AdamConfig::default(),
            warmup_proportion: 0.1,
            epochs: 4,
            batch_size: 32,
            seed: 42,
            validation_fraction: 0.1,
            partitions: 1,
            max_len: DEFAULT_MAX_LEN,
            classes: 4,
            head_bias: true,
            mlp_hidden: DEFAULT_MLP_HIDDEN,
            max_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.warmup_proportion > 0.0 && self.warmup_proportion < 1.0) {
            return fail(format!("warmup proportion {} outside (0, 1)", self.warmup_proportion));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.partitions == 0 {
            return fail("batch size, epochs and partitions must be at least 1".into());
        }
        for lr in [self.lr_base, self.frozen_lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("learning rate {lr} must be positive"));
            }
        }
        let wd = self.adam.weight_decay;
        if wd < 0.0 || !wd.is_finite() {
            return fail(format!("weight decay {wd} must be finite and non-negative"));
        }
        if self.classes < 2 || self.mlp_hidden == 0 || self.max_len < 2 {
            return fail("need at least 2 classes, a non-empty MLP layer and max_len >= 2".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub regime: Regime,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    /// Time spent before the first epoch (frozen embedding extraction).
    pub setup_seconds: f64,
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct") + "\n")
            .collect()
    }

    /// Same records with every wall time zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> TrainLog {
        let mut log = self.clone();
        log.setup_seconds = 0.0;
        log.epochs.iter_mut().for_each(|e| e.wall_seconds = 0.0);
        log
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.checked_sub(1)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head<T> {
    Softmax(SoftmaxHead<T>),
    Mlp(MlpHead<T>),
}

impl<T: Scalar> Head<T> {
    pub fn params(&self) -> ParamSet<T> {
        match self {
            Head::Softmax(h) => h.params(),
            Head::Mlp(h) => h.params(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel<T: Scalar> {
    pub regime: Regime,
    pub encoder: Arc<EncoderWeights<T>>,
    pub head: Head<T>,
    pub vocab: Arc<Vocab>,
    pub max_len: usize,
    pub partitions: usize,
}

/// Anything that maps texts to class indices.
pub trait Predictor {
    fn predict(&self, texts: &[&str]) -> Result<Vec<usize>>;
}

impl<T: Scalar> Predictor for TrainedModel<T> {
    fn predict(&self, texts: &[&str]) -> Result<Vec<usize>> {
        match &self.head {
            Head::Softmax(head) => {
                let seqs = texts
                    .iter()
                    .map(|t| encode_sequence(t, &self.vocab, self.max_len))
                    .collect::<Result<Vec<_>>>()?;
                let probs = finetune_probabilities(&self.encoder, head, &seqs, self.partitions)?;
                Ok(probs.iter().map(|p| argmax(p.data())).collect())
            }
            Head::Mlp(head) => {
                let pipeline = build_classification_pipeline(
                    self.encoder.clone(),
                    self.vocab.clone(),
                    self.max_len,
                    Arc::new(head.clone()),
                    None,
                )?;
                let records = texts.iter().map(|t| AnnotatedRecord::from_text(*t)).collect();
                let (out, _) = run_partitioned(&pipeline, records, self.partitions)?;
                out.iter()
                    .map(|r| {
                        r.column(CATEGORY)
                            .and_then(|c| c.first())
                            .and_then(|a| a.metadata.get("class"))
                            .and_then(|c| c.parse().ok())
                            .ok_or_else(|| Error::InvalidArgument("record lacks a category".into()))
                    })
                    .collect()
            }
        }
    }
}

fn finetune_probabilities<T: Scalar>(
    encoder: &EncoderWeights<T>,
    head: &SoftmaxHead<T>,
    seqs: &[EncodedSequence],
    partitions: usize,
) -> Result<Vec<Tensor<T>>> {
    partitioned_map(seqs, partitions, |part| {
        let mut out = Vec::with_capacity(part.len());
        for chunk in part.chunks(DEFAULT_INFERENCE_BATCH) {
            for o in forward_batch(chunk, encoder)? {
                out.push(classify_cls(&o.pooled, head)?);
            }
        }
        Ok(out)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate_predictions(predicted: &[usize], labels: &[usize], classes: usize) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty set".into()));
    }
    if predicted.len() != labels.len() {
        return Err(Error::shape("evaluate", &[predicted.len()], &[labels.len()]));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for (&p, &l) in predicted.iter().zip(labels) {
        if p >= classes || l >= classes {
            return Err(Error::InvalidArgument(format!(
                "class index {} outside {classes}",
                p.max(l)
            )));
        }
        confusion[l][p] += 1;
        correct += usize::from(p == l);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / labels.len() as f64,
        correct,
        total: labels.len(),
        confusion,
    })
}

pub fn evaluate(model: &impl Predictor, examples: &[LabeledExample], classes: usize) -> Result<Evaluation> {
    let texts: Vec<&str> = examples.iter().map(|e| e.text.as_str()).collect();
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    if texts.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate on an empty set".into()));
    }
    evaluate_predictions(&model.predict(&texts)?, &labels, classes)
}

/// Fine-tuning example: a framed sequence, its label and its dropout seed.
pub struct FineTuneExample {
    pub seq: Arc<EncodedSequence>,
    pub label: usize,
    pub dropout_seed: u64,
}

pub struct FineTuneTask {
    pub config: EncoderConfig,
}

impl<T: Scalar> GradientTask<T> for FineTuneTask {
    type Example = FineTuneExample;

    fn weighted_loss_grads(
        &self,
        params: &ParamSet<T>,
        examples: &[FineTuneExample],
        weight: T,
    ) -> Result<(T, ParamSet<T>)> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let seqs: Vec<&EncodedSequence> = examples.iter().map(|e| e.seq.as_ref()).collect();
        let batch = PackedBatch::new(&seqs, &self.config, true)?;
        let seeds: Vec<u64> = examples.iter().map(|e| e.dropout_seed).collect();
        let nodes = encode(&mut g, &bound, &self.config, &batch, Some(&seeds))?;
        let logits = SoftmaxHead::logits(&mut g, &bound, nodes.pooled)?;
        let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
        let loss = g.softmax_cross_entropy_weighted(logits, &labels, weight)?;
        g.backward(loss)?;
        Ok((g.value(loss).data()[0], bound.grads(&g)))
    }
}

pub struct FrozenExample<T> {
    pub embedding: Arc<Vec<T>>,
    pub label: usize,
}

pub struct FrozenTask {
    pub dim: usize,
}

impl<T: Scalar> GradientTask<T> for FrozenTask {
    type Example = FrozenExample<T>;

    fn weighted_loss_grads(
        &self,
        params: &ParamSet<T>,
        examples: &[FrozenExample<T>],
        weight: T,
    ) -> Result<(T, ParamSet<T>)> {
        let mut data = Vec::with_capacity(examples.len() * self.dim);
        for e in examples {
            data.extend_from_slice(&e.embedding);
        }
        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let x = g.constant(Tensor::new([examples.len(), self.dim], data)?);
        let logits = MlpHead::logits(&mut g, &bound, x)?;
        let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
        let loss = g.softmax_cross_entropy_weighted(logits, &labels, weight)?;
        g.backward(loss)?;
        Ok((g.value(loss).data()[0], bound.grads(&g)))
    }
}

struct Fit<'a> {
    config: &'a TrainConfig,
    n_train: usize,
    lr: f64,
}

impl Fit<'_> {
    /// Mini-batch Adam with warmup/decay and best-epoch selection.
    fn run<T, G>(
        &self,
        task: &G,
        mut params: ParamSet<T>,
        make_batch: impl Fn(&[usize], usize) -> Vec<G::Example>,
        validate: impl Fn(&ParamSet<T>) -> Result<f64>,
        regime: Regime,
    ) -> Result<(ParamSet<T>, TrainLog)>
    where
        T: Scalar,
        G: GradientTask<T>,
    {
        let cfg = self.config;
        let steps_per_epoch = self.n_train.div_ceil(cfg.batch_size);
        let total_steps = (cfg.epochs * steps_per_epoch) as u64;
        let mut adam = AdamState::new(&params);
        let mut best: Option<(f64, usize, ParamSet<T>)> = None;
        let mut log = TrainLog {
            regime,
            epochs: Vec::with_capacity(cfg.epochs),
            best_epoch: 0,
            setup_seconds: 0.0,
        };
        let mut step = 0u64;
        for epoch in 0..cfg.epochs {
            let started = Instant::now();
            let mut order: Vec<usize> = (0..self.n_train).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64 + 1)));
            let mut loss_sum = 0.0;
            for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
                let batch = make_batch(idx, epoch);
                let reduced = parallel_gradients(task, &params, &batch, cfg.partitions, &NoFaults)?;
                let loss = reduced.loss.to_f64_lossy();
                if !loss.is_finite() || !reduced.grads.is_finite() {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        step: b + 1,
                        loss,
                    });
                }
                let mut grads = reduced.grads;
                if let Some(max) = cfg.max_grad_norm {
                    let norm = grads.l2_norm();
                    if norm > max {
                        let s = T::lit(max / norm);
                        grads
                            .iter_mut()
                            .for_each(|(_, t)| t.data_mut().iter_mut().for_each(|v| *v *= s));
                    }
                }
                let lr = lr_schedule(step, total_steps, self.lr, cfg.warmup_proportion);
                adam.step(&mut params, &grads, lr, &cfg.adam)?;
                loss_sum += loss * idx.len() as f64;
                step += 1;
            }
            let val_accuracy = validate(&params)?;
            log.epochs.push(EpochRecord {
                epoch: epoch + 1,
                mean_loss: loss_sum / self.n_train as f64,
                val_accuracy,
                wall_seconds: started.elapsed().as_secs_f64(),
            });
            if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
                best = Some((val_accuracy, epoch + 1, params.clone()));
            }
        }
        let (_, best_epoch, snapshot) = best.expect("at least one epoch");
        log.best_epoch = best_epoch;
        Ok((snapshot, log))
    }
}

fn check_split(split: &DatasetSplit, classes: usize) -> Result<()> {
    if split.train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if split.validation.is_empty() {
        return Err(Error::InvalidArgument("validation set is empty".into()));
    }
    if let Some(e) = split.train.iter().chain(&split.validation).find(|e| e.label >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {} outside {classes} classes",
            e.label
        )));
    }
    for (name, set) in [("training", &split.train), ("validation", &split.validation)] {
        let counts = crate::data::class_counts(set, classes);
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArgument(format!(
                "{name} set has no example of class {c}"
            )));
        }
    }
    Ok(())
}

fn is_head_param(name: &str) -> bool {
    name.starts_with("classifier.")
}

/// Trains one regime and returns the best-validation snapshot with its log.
pub fn train<T: Scalar>(
    regime: Regime,
    split: &DatasetSplit,
    vocab: Arc<Vocab>,
    encoder: EncoderWeights<T>,
    config: &TrainConfig,
) -> Result<(TrainedModel<T>, TrainLog)> {
    config.validate()?;
    check_split(split, config.classes)?;
    let enc_config = encoder.config().clone();
    if vocab.len() > enc_config.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary has {} entries but the encoder embeds only {}",
            vocab.len(),
            enc_config.vocab_size
        )));
    }
    let fit = Fit {
        config,
        n_train: split.train.len(),
        lr: match regime {
            Regime::FineTune => config.lr_base,
            Regime::FrozenPipeline => config.frozen_lr,
        },
    };
    let val_labels: Vec<usize> = split.validation.iter().map(|e| e.label).collect();
    match regime {
        Regime::FineTune => {
            let encode_all = |examples: &[LabeledExample]| -> Result<Vec<Arc<EncodedSequence>>> {
                examples
                    .iter()
                    .map(|e| encode_sequence(&e.text, &vocab, config.max_len).map(Arc::new))
                    .collect()
            };
            let train_seqs = encode_all(&split.train)?;
            let val_seqs: Vec<EncodedSequence> = encode_all(&split.validation)?
                .into_iter()
                .map(Arc::unwrap_or_clone)
                .collect();
            let head = SoftmaxHead::<T>::init(
                config.classes,
                enc_config.hidden,
                config.head_bias,
                mix_seed(config.seed, 0xC1A5),
            );
            let mut params = encoder.into_params();
            params.extend(head.params());
            let task = FineTuneTask {
                config: enc_config.clone(),
            };
            let split_params = |p: &ParamSet<T>| -> Result<(EncoderWeights<T>, SoftmaxHead<T>)> {
                let (head, enc) = p.clone().partition(is_head_param);
                Ok((
                    EncoderWeights::new(enc_config.clone(), enc)?,
                    SoftmaxHead::from_params(&head)?,
                ))
            };
            let make_batch = |idx: &[usize], epoch: usize| {
                idx.iter()
                    .map(|&i| FineTuneExample {
                        seq: train_seqs[i].clone(),
                        label: split.train[i].label,
                        dropout_seed: mix_seed(mix_seed(config.seed, epoch as u64), i as u64),
                    })
                    .collect()
            };
            let validate = |p: &ParamSet<T>| -> Result<f64> {
                let (enc, head) = split_params(p)?;
                let probs = finetune_probabilities(&enc, &head, &val_seqs, config.partitions)?;
                let preds: Vec<usize> = probs.iter().map(|p| argmax(p.data())).collect();
                Ok(evaluate_predictions(&preds, &val_labels, config.classes)?.accuracy)
            };
            let (best, log) = fit.run(&task, params, make_batch, validate, regime)?;
            let (enc, head) = split_params(&best)?;
            Ok((
                TrainedModel {
                    regime,
                    encoder: Arc::new(enc),
                    head: Head::Softmax(head),
                    vocab,
                    max_len: config.max_len,
                    partitions: config.partitions,
                },
                log,
            ))
        }
        Regime::FrozenPipeline => {
            let setup = Instant::now();
            let encoder = Arc::new(encoder);
            let pipeline = build_embedding_pipeline(encoder.clone(), vocab.clone(), config.max_len)?;
            let records: Vec<AnnotatedRecord> = split
                .train
                .iter()
                .chain(&split.validation)
                .map(|e| AnnotatedRecord::from_text(e.text.clone()))
                .collect();
            let (annotated, _) = run_partitioned(&pipeline, records, config.partitions)?;
            let embeddings = annotated
                .iter()
                .map(|r| {
                    r.column(SENTENCE_EMBEDDING)
                        .and_then(|c| c.first())
                        .map(|a| Arc::new(a.embeddings.iter().map(|&v| T::lit(v as f64)).collect::<Vec<T>>()))
                        .ok_or_else(|| Error::InvalidArgument("record lacks a sentence embedding".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            drop(annotated);
            let (train_emb, val_emb) = embeddings.split_at(split.train.len());
            let train_labels: Vec<usize> = split.train.iter().map(|e| e.label).collect();
            let setup_seconds = setup.elapsed().as_secs_f64();
            let (head, mut log) = train_mlp_head(train_emb, &train_labels, val_emb, &val_labels, config)?;
            log.setup_seconds = setup_seconds;
            Ok((
                TrainedModel {
                    regime,
                    encoder,
                    head: Head::Mlp(head),
                    vocab,
                    max_len: config.max_len,
                    partitions: config.partitions,
                },
                log,
            ))
        }
    }
}

/// Fits the frozen regime's MLP head on precomputed embeddings with the
/// same loop as [`train`]: seeded shuffles, warmup/decay Adam at
/// `frozen_lr`, and the best-validation snapshot.
pub fn train_mlp_head<T: Scalar>(
    train_x: &[Arc<Vec<T>>],
    train_labels: &[usize],
    val_x: &[Arc<Vec<T>>],
    val_labels: &[usize],
    config: &TrainConfig,
) -> Result<(MlpHead<T>, TrainLog)> {
    config.validate()?;
    if train_x.is_empty() || val_x.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if train_x.len() != train_labels.len() || val_x.len() != val_labels.len() {
        return Err(Error::InvalidArgument("embeddings and labels differ in length".into()));
    }
    let dim = train_x[0].len();
    if train_x.iter().chain(val_x).any(|e| e.len() != dim) {
        return Err(Error::InvalidArgument("embeddings differ in dimension".into()));
    }
    if let Some(&l) = train_labels.iter().chain(val_labels).find(|&&l| l >= config.classes) {
        return Err(Error::InvalidArgument(format!(
            "label {l} outside {} classes",
            config.classes
        )));
    }
    let fit = Fit {
        config,
        n_train: train_x.len(),
        lr: config.frozen_lr,
    };
    let head = MlpHead::<T>::init(dim, config.mlp_hidden, config.classes, mix_seed(config.seed, 0xC1A5));
    let task = FrozenTask { dim };
    let val_tensor = {
        let mut data = Vec::with_capacity(val_x.len() * dim);
        val_x.iter().for_each(|e| data.extend_from_slice(e));
        Tensor::new([val_x.len(), dim], data)?
    };
    let make_batch = |idx: &[usize], _epoch: usize| {
        idx.iter()
            .map(|&i| FrozenExample {
                embedding: train_x[i].clone(),
                label: train_labels[i],
            })
            .collect()
    };
    let validate = |p: &ParamSet<T>| -> Result<f64> {
        let probs = MlpHead::from_params(p)?.probabilities(&val_tensor)?;
        let preds: Vec<usize> = (0..val_x.len()).map(|i| argmax(probs.row(i))).collect();
        Ok(evaluate_predictions(&preds, val_labels, config.classes)?.accuracy)
    };
    let (best, log) = fit.run(&task, head.params(), make_batch, validate, Regime::FrozenPipeline)?;
    Ok((MlpHead::from_params(&best)?, log))
}
