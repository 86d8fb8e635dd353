use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use super::wordpiece::{wordpiece_ids, DEFAULT_MAX_CHARS};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 128;

/// `[CLS] pieces… [SEP] [PAD]…` packed to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    /// For each input token, the half-open range of sequence positions
    /// holding its pieces; empty when truncated away.
    pub token_spans: Vec<(usize, usize)>,
}

impl EncodedSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Number of non-pad positions, `[CLS]` and `[SEP]` included.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Frames already-split word tokens (lowercased) into a sequence.
pub fn encode_tokens<S: AsRef<str>>(tokens: &[S], vocab: &Vocab, max_len: usize) -> Result<EncodedSequence> {
    if max_len < 2 {
        return Err(Error::Config(format!("max_len must be at least 2, got {max_len}")));
    }
    let budget = max_len - 2;
    let mut ids = Vec::with_capacity(max_len);
    ids.push(vocab.cls);
    let mut token_spans = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let start = ids.len();
        for id in wordpiece_ids(tok.as_ref(), vocab, DEFAULT_MAX_CHARS) {
            if ids.len() > budget {
                break;
            }
            ids.push(id);
        }
        token_spans.push((start, ids.len()));
    }
    ids.push(vocab.sep);
    let real = ids.len();
    ids.resize(max_len, vocab.pad);
    let mut attention_mask = vec![0u8; max_len];
    attention_mask[..real].fill(1);
    Ok(EncodedSequence {
        ids,
        attention_mask,
        token_spans,
    })
}

/// Runs document normalization, sentence splitting, word splitting and
/// WordPiece on raw text, then frames the result.
pub fn encode_sequence(text: &str, vocab: &Vocab, max_len: usize) -> Result<EncodedSequence> {
    let tokens = super::word_tokens(text);
    encode_tokens(&tokens, vocab, max_len)
}
