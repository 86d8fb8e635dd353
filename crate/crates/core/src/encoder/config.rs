use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five compact-to-base model shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Tiny,
    Mini,
    Small,
    Medium,
    Base,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Tiny, Preset::Mini, Preset::Small, Preset::Medium, Preset::Base];

    /// `(layers, hidden)`.
    pub fn shape(self) -> (usize, usize) {
        match self {
            Preset::Tiny => (2, 128),
            Preset::Mini => (4, 256),
            Preset::Small => (4, 512),
            Preset::Medium => (8, 512),
            Preset::Base => (12, 768),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Tiny => "tiny",
            Preset::Mini => "mini",
            Preset::Small => "small",
            Preset::Medium => "medium",
            Preset::Base => "base",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Preset::Tiny => "BERT-Tiny",
            Preset::Mini => "BERT-Mini",
            Preset::Small => "BERT-Small",
            Preset::Medium => "BERT-Medium",
            Preset::Base => "BERT-Base",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s) || p.display_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown preset `{s}` (tiny, mini, small, medium, base)")))
    }
}

pub const DEFAULT_VOCAB_SIZE: usize = 30_522;
pub const DEFAULT_MAX_POSITIONS: usize = 512;
pub const DEFAULT_TYPE_VOCAB: usize = 2;
pub const DEFAULT_DROPOUT: f64 = 0.1;
pub const HEAD_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub type_vocab: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// Preset shape with heads = H/64, intermediate = 4H and the standard
    /// 30522-token vocabulary.
    pub fn preset(preset: Preset) -> Self {
        let (layers, hidden) = preset.shape();
        EncoderConfig {
            layers,
            hidden,
            heads: hidden / HEAD_SIZE,
            intermediate: 4 * hidden,
            vocab_size: DEFAULT_VOCAB_SIZE,
            max_positions: DEFAULT_MAX_POSITIONS,
            type_vocab: DEFAULT_TYPE_VOCAB,
            dropout: DEFAULT_DROPOUT,
            layer_norm_eps: 1e-12,
        }
    }

    /// Arbitrary small shape, mostly for tests.
    pub fn custom(layers: usize, hidden: usize, heads: usize, vocab_size: usize, max_positions: usize) -> Self {
        EncoderConfig {
            layers,
            hidden,
            heads,
            intermediate: 4 * hidden,
            vocab_size,
            max_positions,
            type_vocab: DEFAULT_TYPE_VOCAB,
            dropout: DEFAULT_DROPOUT,
            layer_norm_eps: 1e-12,
        }
    }

    pub fn with_vocab_size(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn with_dropout(mut self, dropout: f64) -> Self {
        self.dropout = dropout;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.layers == 0 {
            return fail("encoder needs at least one layer".into());
        }
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden size {} must be a positive multiple of the head count {}",
                self.hidden, self.heads
            ));
        }
        if self.intermediate == 0 || self.vocab_size == 0 || self.max_positions < 2 || self.type_vocab == 0 {
            return fail(format!("degenerate encoder dimensions: {self:?}"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Every tensor name with its shape, in canonical order.
    pub fn expected_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, i) = (self.hidden, self.intermediate);
        let mut out: Vec<(String, Vec<usize>)> = vec![
            (names::WORD_EMB.into(), vec![self.vocab_size, h]),
            (names::POS_EMB.into(), vec![self.max_positions, h]),
            (names::TYPE_EMB.into(), vec![self.type_vocab, h]),
            (names::EMB_LN_GAMMA.into(), vec![h]),
            (names::EMB_LN_BETA.into(), vec![h]),
        ];
        for l in 0..self.layers {
            let p = |s: &str| names::layer(l, s);
            out.extend([
                (p(names::Q_W), vec![h, h]),
                (p(names::Q_B), vec![h]),
                (p(names::K_W), vec![h, h]),
                (p(names::K_B), vec![h]),
                (p(names::V_W), vec![h, h]),
                (p(names::V_B), vec![h]),
                (p(names::ATTN_OUT_W), vec![h, h]),
                (p(names::ATTN_OUT_B), vec![h]),
                (p(names::ATTN_LN_GAMMA), vec![h]),
                (p(names::ATTN_LN_BETA), vec![h]),
                (p(names::FFN_IN_W), vec![i, h]),
                (p(names::FFN_IN_B), vec![i]),
                (p(names::FFN_OUT_W), vec![h, i]),
                (p(names::FFN_OUT_B), vec![h]),
                (p(names::FFN_LN_GAMMA), vec![h]),
                (p(names::FFN_LN_BETA), vec![h]),
            ]);
        }
        out.push((names::POOLER_W.into(), vec![h, h]));
        out.push((names::POOLER_B.into(), vec![h]));
        out
    }

    /// Exact parameter count: the element total of [`Self::expected_shapes`].
    pub fn count_params(&self) -> usize {
        self.expected_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Canonical tensor names.
pub mod names {
    pub const WORD_EMB: &str = "embeddings.word_embeddings";
    pub const POS_EMB: &str = "embeddings.position_embeddings";
    pub const TYPE_EMB: &str = "embeddings.token_type_embeddings";
    pub const EMB_LN_GAMMA: &str = "embeddings.layer_norm.gamma";
    pub const EMB_LN_BETA: &str = "embeddings.layer_norm.beta";

    pub const Q_W: &str = "attention.query.weight";
    pub const Q_B: &str = "attention.query.bias";
    pub const K_W: &str = "attention.key.weight";
    pub const K_B: &str = "attention.key.bias";
    pub const V_W: &str = "attention.value.weight";
    pub const V_B: &str = "attention.value.bias";
    pub const ATTN_OUT_W: &str = "attention.output.weight";
    pub const ATTN_OUT_B: &str = "attention.output.bias";
    pub const ATTN_LN_GAMMA: &str = "attention.layer_norm.gamma";
    pub const ATTN_LN_BETA: &str = "attention.layer_norm.beta";
    pub const FFN_IN_W: &str = "intermediate.weight";
    pub const FFN_IN_B: &str = "intermediate.bias";
    pub const FFN_OUT_W: &str = "output.weight";
    pub const FFN_OUT_B: &str = "output.bias";
    pub const FFN_LN_GAMMA: &str = "output.layer_norm.gamma";
    pub const FFN_LN_BETA: &str = "output.layer_norm.beta";

    pub const POOLER_W: &str = "pooler.weight";
    pub const POOLER_B: &str = "pooler.bias";

    pub fn layer(index: usize, suffix: &str) -> String {
        format!("encoder.layer.{index}.{suffix}")
    }
}
