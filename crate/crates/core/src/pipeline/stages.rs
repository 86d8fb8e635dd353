use std::sync::Arc;

use super::{Pipeline, Stage};
use crate::encoder::{forward_batch, EncoderWeights};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenize::{
    self, encode_tokens, AnnotatedRecord, Annotation, AnnotatorType, SentenceSplitter, Vocab, CATEGORY, DOCUMENT,
    EMBEDDING, SENTENCE, SENTENCE_EMBEDDING, TEXT, TOKEN,
};
use crate::train::{argmax, MlpHead};

/// Sequences per encoder call inside the embedding stage.
pub const DEFAULT_INFERENCE_BATCH: usize = 32;

fn column<'a>(record: &'a AnnotatedRecord, name: &str, stage: &str) -> Result<&'a [Annotation]> {
    record.column(name).ok_or_else(|| Error::MissingColumn {
        stage: stage.to_string(),
        column: name.to_string(),
    })
}

pub struct DocumentAssembler;

impl Stage for DocumentAssembler {
    fn name(&self) -> &str {
        "document_assembler"
    }

    fn inputs(&self) -> Vec<String> {
        vec![TEXT.into()]
    }

    fn output(&self) -> String {
        DOCUMENT.into()
    }

    fn transform_batch(&self, records: &[&AnnotatedRecord]) -> Result<Vec<Vec<Annotation>>> {
        Ok(records.iter().map(|r| tokenize::document_column(&r.text)).collect())
    }
}

#[derive(Default)]
pub struct SentenceDetector {
    pub splitter: SentenceSplitter,
}

impl Stage for SentenceDetector {
    fn name(&self) -> &str {
        "sentence_detector"
    }

    fn inputs(&self) -> Vec<String> {
        vec![DOCUMENT.into()]
    }

    fn output(&self) -> String {
        SENTENCE.into()
    }

    fn transform_batch(&self, records: &[&AnnotatedRecord]) -> Result<Vec<Vec<Annotation>>> {
        records
            .iter()
            .map(|r| tokenize::sentence_column(r, &self.splitter))
            .collect()
    }
}

pub struct Tokenizer;

impl Stage for Tokenizer {
    fn name(&self) -> &str {
        "tokenizer"
    }

    fn inputs(&self) -> Vec<String> {
        vec![DOCUMENT.into(), SENTENCE.into()]
    }

    fn output(&self) -> String {
        TOKEN.into()
    }

    fn transform_batch(&self, records: &[&AnnotatedRecord]) -> Result<Vec<Vec<Annotation>>> {
        records.iter().map(|r| tokenize::token_column(r)).collect()
    }
}

/// Encoder forward over each record's WordPiece sequence. Emits one
/// annotation per unmasked sequence position carrying its hidden state.
pub struct BertEmbeddings<T: Scalar> {
    pub encoder: Arc<EncoderWeights<T>>,
    pub vocab: Arc<Vocab>,
    pub max_len: usize,
    pub batch_size: usize,
}

impl<T: Scalar> BertEmbeddings<T> {
    pub fn new(encoder: Arc<EncoderWeights<T>>, vocab: Arc<Vocab>, max_len: usize) -> Result<Self> {
        if vocab.len() > encoder.config().vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} entries but the encoder embeds only {}",
                vocab.len(),
                encoder.config().vocab_size
            )));
        }
        if max_len < 2 || max_len > encoder.config().max_positions {
            return Err(Error::Config(format!(
                "max_len {max_len} outside [2, {}]",
                encoder.config().max_positions
            )));
        }
        Ok(BertEmbeddings {
            encoder,
            vocab,
            max_len,
            batch_size: DEFAULT_INFERENCE_BATCH,
        })
    }
}

impl<T: Scalar> Stage for BertEmbeddings<T> {
    fn name(&self) -> &str {
        "bert_embeddings"
    }

    fn inputs(&self) -> Vec<String> {
        vec![DOCUMENT.into(), TOKEN.into()]
    }

    fn output(&self) -> String {
        EMBEDDING.into()
    }

    fn transform_batch(&self, records: &[&AnnotatedRecord]) -> Result<Vec<Vec<Annotation>>> {
        let mut seqs = Vec::with_capacity(records.len());
        for r in records {
            let tokens = column(r, TOKEN, self.name())?;
            let words: Vec<&str> = tokens.iter().map(|a| a.result.as_str()).collect();
            seqs.push(encode_tokens(&words, &self.vocab, self.max_len)?);
        }
        let mut out = Vec::with_capacity(records.len());
        for (chunk_start, chunk) in (0..seqs.len()).step_by(self.batch_size.max(1)).map(|s| {
            let end = (s + self.batch_size.max(1)).min(seqs.len());
            (s, &seqs[s..end])
        }) {
            let refs: Vec<_> = chunk.iter().collect();
            let states = forward_batch(&refs, &self.encoder)?;
            for (k, (seq, state)) in chunk.iter().zip(states).enumerate() {
                let record = records[chunk_start + k];
                let tokens = column(record, TOKEN, self.name())?;
                let doc_len = column(record, DOCUMENT, self.name())?.first().map_or(0, |d| d.end);
                let mut owner = vec![None; seq.max_len()];
                for (t, &(b, e)) in seq.token_spans.iter().enumerate() {
                    for slot in &mut owner[b..e] {
                        *slot = Some(t);
                    }
                }
                let real = seq.real_len();
                let annotations = (0..real)
                    .map(|pos| {
                        let (begin, end) = match owner[pos] {
                            Some(t) => (tokens[t].begin, tokens[t].end),
                            None if pos == 0 => (0, 0),
                            None => (doc_len, doc_len),
                        };
                        let piece = self.vocab.token(seq.ids[pos]).unwrap_or(tokenize::UNK);
                        let row: Vec<f32> = state
                            .token_states
                            .row(pos)
                            .iter()
                            .map(|v| v.to_f64_lossy() as f32)
                            .collect();
                        let mut a = Annotation::new(AnnotatorType::Embedding, begin, end, piece)
                            .with_meta("position", pos)
                            .with_embeddings(row);
                        if let Some(t) = owner[pos] {
                            a = a.with_meta("token", t);
                        }
                        a
                    })
                    .collect();
                out.push(annotations);
            }
        }
        Ok(out)
    }
}

/// Mean of a record's embedding vectors.
pub struct SentenceEmbeddings;

impl Stage for SentenceEmbeddings {
    fn name(&self) -> &str {
        "sentence_embeddings"
    }

    fn inputs(&self) -> Vec<String> {
        vec![DOCUMENT.into(), EMBEDDING.into()]
    }

    fn output(&self) -> String {
        SENTENCE_EMBEDDING.into()
    }

    fn transform_batch(&self, records: &[&AnnotatedRecord]) -> Result<Vec<Vec<Annotation>>> {
        records
            .iter()
            .map(|r| {
                let emb = column(r, EMBEDDING, self.name())?;
                let doc = column(r, DOCUMENT, self.name())?.first();
                let first = emb
                    .first()
                    .ok_or_else(|| Error::InvalidArgument("record has no embeddings to pool".into()))?;
                let dim = first.embeddings.len();
                let mut acc = vec![0f32; dim];
                for a in emb {
                    if a.embeddings.len() != dim {
                        return Err(Error::shape("sentence_embeddings", &[dim], &[a.embeddings.len()]));
                    }
                    acc.iter_mut().zip(&a.embeddings).for_each(|(s, &v)| *s += v);
                }
                let n = emb.len() as f32;
                acc.iter_mut().for_each(|s| *s /= n);
                let (end, text) = doc.map_or((0, String::new()), |d| (d.end, d.result.clone()));
                Ok(vec![Annotation::new(AnnotatorType::SentenceEmbedding, 0, end, text)
                    .with_meta("pooled", emb.len())
                    .with_embeddings(acc)])
            })
            .collect()
    }
}

/// Feed-forward classifier over the sentence embedding.
pub struct CategoryClassifier<T: Scalar> {
    pub head: Arc<MlpHead<T>>,
    pub labels: Option<Vec<String>>,
}

impl<T: Scalar> Stage for CategoryClassifier<T> {
    fn name(&self) -> &str {
        "classifier_dl"
    }

    fn inputs(&self) -> Vec<String> {
        vec![SENTENCE_EMBEDDING.into()]
    }

    fn output(&self) -> String {
        CATEGORY.into()
    }

    fn transform_batch(&self, records: &[&AnnotatedRecord]) -> Result<Vec<Vec<Annotation>>> {
        let d = self.head.input_dim();
        let mut data = Vec::with_capacity(records.len() * d);
        for r in records {
            let e = column(r, SENTENCE_EMBEDDING, self.name())?
                .first()
                .ok_or_else(|| Error::InvalidArgument("record has no sentence embedding".into()))?;
            if e.embeddings.len() != d {
                return Err(Error::shape("classifier_dl", &[d], &[e.embeddings.len()]));
            }
            data.extend(e.embeddings.iter().map(|&v| T::lit(v as f64)));
        }
        let probs = self.head.probabilities(&Tensor::new([records.len(), d], data)?)?;
        Ok(records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let row = probs.row(i);
                let class = argmax(row);
                let result = self
                    .labels
                    .as_ref()
                    .and_then(|l| l.get(class).cloned())
                    .unwrap_or_else(|| class.to_string());
                let end = r
                    .column(SENTENCE_EMBEDDING)
                    .and_then(|c| c.first())
                    .map_or(0, |a| a.end);
                let mut a = Annotation::new(AnnotatorType::Category, 0, end, result).with_meta("class", class);
                for (c, p) in row.iter().enumerate() {
                    a = a.with_meta(&format!("p{c}"), p.to_f64_lossy());
                }
                vec![a]
            })
            .collect())
    }
}

/// document → sentence → token → embedding → sentence_embedding.
pub fn build_embedding_pipeline<T: Scalar>(
    encoder: Arc<EncoderWeights<T>>,
    vocab: Arc<Vocab>,
    max_len: usize,
) -> Result<Pipeline> {
    Pipeline::new(vec![
        Box::new(DocumentAssembler),
        Box::new(SentenceDetector::default()),
        Box::new(Tokenizer),
        Box::new(BertEmbeddings::new(encoder, vocab, max_len)?),
        Box::new(SentenceEmbeddings),
    ])
}

/// The embedding pipeline followed by the category classifier.
pub fn build_classification_pipeline<T: Scalar>(
    encoder: Arc<EncoderWeights<T>>,
    vocab: Arc<Vocab>,
    max_len: usize,
    head: Arc<MlpHead<T>>,
    labels: Option<Vec<String>>,
) -> Result<Pipeline> {
    if head.input_dim() != encoder.config().hidden {
        return Err(Error::Config(format!(
            "classifier expects {}-dim embeddings, encoder produces {}",
            head.input_dim(),
            encoder.config().hidden
        )));
    }
    Pipeline::new(vec![
        Box::new(DocumentAssembler),
        Box::new(SentenceDetector::default()),
        Box::new(Tokenizer),
        Box::new(BertEmbeddings::new(encoder, vocab, max_len)?),
        Box::new(SentenceEmbeddings),
        Box::new(CategoryClassifier { head, labels }),
    ])
}
