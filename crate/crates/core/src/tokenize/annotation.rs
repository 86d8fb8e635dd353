use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorType {
    Document,
    Sentence,
    Token,
    Wordpiece,
    Embedding,
    SentenceEmbedding,
    Category,
}

/// One span-level result produced by a stage.
///
/// `begin`/`end` are character offsets (Unicode scalar values) into the
/// document text, end exclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotator_type: AnnotatorType,
    pub begin: usize,
    pub end: usize,
    pub result: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embeddings: Vec<f32>,
}

impl Annotation {
    pub fn new(annotator_type: AnnotatorType, begin: usize, end: usize, result: impl Into<String>) -> Self {
        Annotation {
            annotator_type,
            begin,
            end,
            result: result.into(),
            metadata: BTreeMap::new(),
            embeddings: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn with_embeddings(mut self, embeddings: Vec<f32>) -> Self {
        self.embeddings = embeddings;
        self
    }
}

/// Columnar record flowing through the pipeline: the raw source text plus
/// one named column of annotations per applied stage, in stage order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    pub text: String,
    pub columns: IndexMap<String, Vec<Annotation>>,
}

impl AnnotatedRecord {
    pub fn from_text(text: impl Into<String>) -> Self {
        AnnotatedRecord {
            text: text.into(),
            columns: IndexMap::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<&[Annotation]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    /// Text of the document column, when present.
    pub fn document(&self) -> Option<&str> {
        self.column(crate::tokenize::DOCUMENT)
            .and_then(|c| c.first())
            .map(|a| a.result.as_str())
    }
}
