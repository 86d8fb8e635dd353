//! Text-side annotators: document assembly, sentence detection, word
//! tokenization, WordPiece and sequence framing.

mod annotation;
mod sequence;
mod text;
mod vocab;
mod wordpiece;

pub use annotation::{AnnotatedRecord, Annotation, AnnotatorType};
pub use sequence::{encode_sequence, encode_tokens, EncodedSequence, DEFAULT_MAX_LEN};
pub use text::{is_punctuation, normalize_text, split_words, SentenceSplitter, DEFAULT_ABBREVIATIONS};
pub use vocab::{Vocab, CLS, MASK, PAD, SEP, UNK};
pub use wordpiece::{wordpiece, wordpiece_ids, DEFAULT_MAX_CHARS};

use crate::error::{Error, Result};

pub const TEXT: &str = "text";
pub const DOCUMENT: &str = "document";
pub const SENTENCE: &str = "sentence";
pub const TOKEN: &str = "token";
pub const EMBEDDING: &str = "embedding";
pub const SENTENCE_EMBEDDING: &str = "sentence_embedding";
pub const CATEGORY: &str = "category";

/// Document column for raw text: one annotation over the normalized text.
pub fn document_column(text: &str) -> Vec<Annotation> {
    let doc = normalize_text(text);
    let len = doc.chars().count();
    vec![Annotation::new(AnnotatorType::Document, 0, len, doc)]
}

pub fn assemble_document(text: &str) -> AnnotatedRecord {
    let mut record = AnnotatedRecord::from_text(text);
    record.columns.insert(DOCUMENT.to_string(), document_column(text));
    record
}

/// Byte-level entry point; rejects input that is not valid UTF-8.
pub fn assemble_document_bytes(bytes: &[u8]) -> Result<AnnotatedRecord> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Encoding(format!("input is not valid UTF-8: {e}")))?;
    Ok(assemble_document(text))
}

fn require<'a>(record: &'a AnnotatedRecord, column: &str, stage: &str) -> Result<&'a [Annotation]> {
    record.column(column).ok_or_else(|| Error::MissingColumn {
        stage: stage.to_string(),
        column: column.to_string(),
    })
}

pub fn sentence_column(record: &AnnotatedRecord, splitter: &SentenceSplitter) -> Result<Vec<Annotation>> {
    let docs = require(record, DOCUMENT, "sentence_detector")?;
    let mut out = Vec::new();
    for doc in docs {
        let chars: Vec<char> = doc.result.chars().collect();
        for (b, e) in splitter.split(&chars) {
            let text: String = chars[b..e].iter().collect();
            out.push(
                Annotation::new(AnnotatorType::Sentence, doc.begin + b, doc.begin + e, text)
                    .with_meta("sentence", out.len()),
            );
        }
    }
    Ok(out)
}

pub fn detect_sentences(record: &AnnotatedRecord) -> Result<AnnotatedRecord> {
    let column = sentence_column(record, &SentenceSplitter::default())?;
    let mut out = record.clone();
    out.columns.insert(SENTENCE.to_string(), column);
    Ok(out)
}

pub fn token_column(record: &AnnotatedRecord) -> Result<Vec<Annotation>> {
    let sentences = require(record, SENTENCE, "tokenizer")?;
    let doc = require(record, DOCUMENT, "tokenizer")?;
    let chars: Vec<char> = doc.first().map(|d| d.result.chars().collect()).unwrap_or_default();
    let mut out = Vec::new();
    for (idx, sentence) in sentences.iter().enumerate() {
        for (b, e) in split_words(&chars, sentence.begin, sentence.end) {
            out.push(
                Annotation::new(AnnotatorType::Token, b, e, text::lowercase(&chars[b..e])).with_meta("sentence", idx),
            );
        }
    }
    Ok(out)
}

pub fn tokenize_basic(record: &AnnotatedRecord) -> Result<AnnotatedRecord> {
    let column = token_column(record)?;
    let mut out = record.clone();
    out.columns.insert(TOKEN.to_string(), column);
    Ok(out)
}

/// Lowercased word tokens of raw text, identical to the token column the
/// document → sentence → token stages would produce.
pub fn word_tokens(text: &str) -> Vec<String> {
    let record = assemble_document(text);
    let record = detect_sentences(&record).expect("document column present");
    token_column(&record)
        .expect("sentence column present")
        .into_iter()
        .map(|a| a.result)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_examples() {
        let r = assemble_document("");
        let d = &r.column(DOCUMENT).unwrap()[0];
        assert_eq!((d.begin, d.end, d.result.as_str()), (0, 0, ""));

        let r = assemble_document("  Hello.  ");
        let d = &r.column(DOCUMENT).unwrap()[0];
        assert_eq!((d.begin, d.end, d.result.as_str()), (0, 6, "Hello."));

        let r = assemble_document("tab\there\nnewline");
        let col = r.column(DOCUMENT).unwrap();
        assert_eq!(col.len(), 1);
        assert_eq!(col[0].result, "tab here newline");
    }

    #[test]
    fn invalid_utf8_is_an_ingestion_error() {
        assert!(matches!(
            assemble_document_bytes(&[0x66, 0xff, 0x66]),
            Err(Error::Encoding(_))
        ));
    }

    #[test]
    fn stage_order_is_enforced() {
        let bare = AnnotatedRecord::from_text("One. Two!");
        assert!(matches!(detect_sentences(&bare), Err(Error::MissingColumn { .. })));
        let doc = assemble_document("One. Two!");
        assert!(matches!(tokenize_basic(&doc), Err(Error::MissingColumn { .. })));
    }

    #[test]
    fn sentence_and_token_offsets() {
        let r = tokenize_basic(&detect_sentences(&assemble_document("One. Two!")).unwrap()).unwrap();
        let sents: Vec<_> = r
            .column(SENTENCE)
            .unwrap()
            .iter()
            .map(|a| (a.begin, a.end, a.result.clone()))
            .collect();
        assert_eq!(sents, [(0, 4, "One.".to_string()), (5, 9, "Two!".to_string())]);
        let toks: Vec<_> = r.column(TOKEN).unwrap().iter().map(|a| a.result.as_str()).collect();
        assert_eq!(toks, ["one", ".", "two", "!"]);
        assert!(detect_sentences(&assemble_document(""))
            .unwrap()
            .column(SENTENCE)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn offsets_index_unicode_scalars() {
        let r = tokenize_basic(&detect_sentences(&assemble_document("Café über, naïve.")).unwrap()).unwrap();
        let doc: Vec<char> = r.document().unwrap().chars().collect();
        for t in r.column(TOKEN).unwrap() {
            let surface: String = doc[t.begin..t.end].iter().collect();
            assert_eq!(surface.to_lowercase(), t.result);
        }
        assert_eq!(word_tokens("Café über, naïve."), ["café", "über", ",", "naïve", "."]);
    }
}
