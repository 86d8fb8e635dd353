use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{names, EncoderConfig};
use super::weights::EncoderWeights;
use crate::autodiff::{dropout_mask, AttentionLayout, Graph, NodeId};
use crate::error::{Error, Result};
use crate::params::BoundParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::tokenize::EncodedSequence;

/// Inference or training (dropout on, seeded per example).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Several sequences stacked row-wise for one encoder pass.
///
/// Trimmed batches keep only positions whose attention-mask bit is set;
/// padded batches keep every position and mask the pads as keys. Both give
/// identical values at real positions.
#[derive(Clone, Debug)]
pub struct PackedBatch {
    pub ids: Arc<Vec<usize>>,
    pub positions: Arc<Vec<usize>>,
    pub types: Arc<Vec<usize>>,
    pub layout: Arc<AttentionLayout>,
}

impl PackedBatch {
    pub fn new(seqs: &[&EncodedSequence], config: &EncoderConfig, trim: bool) -> Result<Self> {
        if seqs.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut key_mask = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for seq in seqs {
            if seq.ids.len() != seq.attention_mask.len() {
                return Err(Error::InvalidArgument(format!(
                    "sequence has {} ids but {} mask bits",
                    seq.ids.len(),
                    seq.attention_mask.len()
                )));
            }
            if seq.ids.len() > config.max_positions {
                return Err(Error::InvalidArgument(format!(
                    "sequence length {} exceeds {} positions",
                    seq.ids.len(),
                    config.max_positions
                )));
            }
            if !seq.attention_mask.contains(&1) {
                return Err(Error::InvalidArgument("sequence has no unmasked position".into()));
            }
            let start = ids.len();
            for (pos, (&id, &m)) in seq.ids.iter().zip(&seq.attention_mask).enumerate() {
                if trim && m == 0 {
                    continue;
                }
                if id as usize >= config.vocab_size {
                    return Err(Error::InvalidArgument(format!(
                        "token id {id} outside vocabulary of {}",
                        config.vocab_size
                    )));
                }
                ids.push(id as usize);
                positions.push(pos);
                key_mask.push(m == 1);
            }
            segments.push((start, ids.len() - start));
        }
        let rows = ids.len();
        Ok(PackedBatch {
            ids: Arc::new(ids),
            positions: Arc::new(positions),
            types: Arc::new(vec![0; rows]),
            layout: Arc::new(AttentionLayout {
                segments,
                key_mask,
                heads: config.heads,
            }),
        })
    }

    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn len(&self) -> usize {
        self.layout.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.segments.is_empty()
    }

    /// First row of each sequence (the `[CLS]` position).
    pub fn cls_rows(&self) -> Vec<usize> {
        self.layout.segments.iter().map(|&(s, _)| s).collect()
    }
}

/// Graph handles produced by one encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderNodes {
    /// `[rows, H]` final hidden states.
    pub token_states: NodeId,
    /// `[batch, H]` tanh pooler over each `[CLS]` state.
    pub pooled: NodeId,
    /// One attention node per layer.
    pub attention: Vec<NodeId>,
}

struct Dropout<'a> {
    p: f64,
    seeds: &'a [u64],
    layout: &'a AttentionLayout,
}

impl Dropout<'_> {
    fn apply<T: Scalar>(&self, g: &mut Graph<T>, x: NodeId, site: u64) -> Result<NodeId> {
        let h = g.value(x).shape()[1];
        let mut mask = Vec::with_capacity(g.value(x).numel());
        for (&(_, len), &seed) in self.layout.segments.iter().zip(self.seeds) {
            let mut rng = ChaCha8Rng::seed_from_u64(site_seed(seed, site));
            mask.extend(dropout_mask::<T>(len * h, self.p, &mut rng));
        }
        g.dropout_with_mask(x, mask)
    }
}

fn site_seed(seed: u64, site: u64) -> u64 {
    seed ^ site.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Records an encoder pass on `g`. `dropout_seeds` (one per sequence)
/// enables dropout; each sequence draws its masks from its own seed, so a
/// sequence sees the same masks whatever batch it lands in.
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    params: &BoundParams,
    config: &EncoderConfig,
    batch: &PackedBatch,
    dropout_seeds: Option<&[u64]>,
) -> Result<EncoderNodes> {
    let dropout = match dropout_seeds {
        Some(seeds) if config.dropout > 0.0 => {
            if seeds.len() != batch.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} dropout seeds for {} sequences",
                    seeds.len(),
                    batch.len()
                )));
            }
            Some(Dropout {
                p: config.dropout,
                seeds,
                layout: &batch.layout,
            })
        }
        _ => None,
    };
    let mut site = 0u64;
    let mut drop = |g: &mut Graph<T>, x: NodeId| -> Result<NodeId> {
        site += 1;
        match &dropout {
            Some(d) => d.apply(g, x, site),
            None => Ok(x),
        }
    };
    let eps = T::lit(config.layer_norm_eps);
    let p = |name: &str| params.id(name);

    let word = g.gather(p(names::WORD_EMB)?, batch.ids.clone())?;
    let pos = g.gather(p(names::POS_EMB)?, batch.positions.clone())?;
    let typ = g.gather(p(names::TYPE_EMB)?, batch.types.clone())?;
    let x = g.add(word, pos)?;
    let x = g.add(x, typ)?;
    let x = g.layer_norm(x, p(names::EMB_LN_GAMMA)?, p(names::EMB_LN_BETA)?, eps)?;
    let mut x = drop(g, x)?;

    let mut attention = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let lp = |s: &str| params.id(&names::layer(l, s));
        let q = g.linear(x, lp(names::Q_W)?, Some(lp(names::Q_B)?))?;
        let k = g.linear(x, lp(names::K_W)?, Some(lp(names::K_B)?))?;
        let v = g.linear(x, lp(names::V_W)?, Some(lp(names::V_B)?))?;
        let ctx = g.attention(q, k, v, batch.layout.clone())?;
        attention.push(ctx);
        let a = g.linear(ctx, lp(names::ATTN_OUT_W)?, Some(lp(names::ATTN_OUT_B)?))?;
        let a = drop(g, a)?;
        let r = g.add(x, a)?;
        x = g.layer_norm(r, lp(names::ATTN_LN_GAMMA)?, lp(names::ATTN_LN_BETA)?, eps)?;

        let f = g.linear(x, lp(names::FFN_IN_W)?, Some(lp(names::FFN_IN_B)?))?;
        let f = g.gelu(f);
        let f = g.linear(f, lp(names::FFN_OUT_W)?, Some(lp(names::FFN_OUT_B)?))?;
        let f = drop(g, f)?;
        let r = g.add(x, f)?;
        x = g.layer_norm(r, lp(names::FFN_LN_GAMMA)?, lp(names::FFN_LN_BETA)?, eps)?;
    }

    let cls = g.gather(x, Arc::new(batch.cls_rows()))?;
    let pooled = g.linear(cls, p(names::POOLER_W)?, Some(p(names::POOLER_B)?))?;
    let pooled = g.tanh(pooled);
    Ok(EncoderNodes {
        token_states: x,
        pooled,
        attention,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput<T> {
    /// `[rows, H]` hidden states.
    pub token_states: Tensor<T>,
    /// `[H]` pooled `[CLS]` representation.
    pub pooled: Tensor<T>,
}

/// Encodes one sequence at its full framed length. Pad rows are computed
/// but never attended to.
pub fn forward<T: Scalar>(seq: &EncodedSequence, weights: &EncoderWeights<T>, mode: Mode) -> Result<EncoderOutput<T>> {
    let config = weights.config();
    let batch = PackedBatch::new(&[seq], config, false)?;
    let mut g = Graph::new();
    let bound = weights.params().bind(&mut g, false);
    let seeds = match mode {
        Mode::Eval => None,
        Mode::Train { seed } => Some([seed]),
    };
    let nodes = encode(&mut g, &bound, config, &batch, seeds.as_ref().map(|s| s.as_slice()))?;
    let h = config.hidden;
    Ok(EncoderOutput {
        token_states: g.value(nodes.token_states).clone(),
        pooled: g.value(nodes.pooled).reshape([h])?,
    })
}

/// Inference over several sequences packed without padding. Each output
/// holds `real_len` rows, one per unmasked position.
pub fn forward_batch<T: Scalar>(
    seqs: &[&EncodedSequence],
    weights: &EncoderWeights<T>,
) -> Result<Vec<EncoderOutput<T>>> {
    let config = weights.config();
    let batch = PackedBatch::new(seqs, config, true)?;
    let mut g = Graph::new();
    let bound = weights.params().bind(&mut g, false);
    let nodes = encode(&mut g, &bound, config, &batch, None)?;
    let h = config.hidden;
    let states = g.value(nodes.token_states).data();
    let pooled = g.value(nodes.pooled).data();
    batch
        .layout
        .segments
        .iter()
        .enumerate()
        .map(|(i, &(start, len))| {
            Ok(EncoderOutput {
                token_states: Tensor::new([len, h], states[start * h..(start + len) * h].to_vec())?,
                pooled: Tensor::new([h], pooled[i * h..(i + 1) * h].to_vec())?,
            })
        })
        .collect()
}

/// One layer's self-attention block on `[n, H]` states: Q/K/V projections,
/// masked multi-head attention and the output projection. Returns the
/// projected output and the `[n, n]` weights of each head.
pub fn multi_head_attention<T: Scalar>(
    states: &Tensor<T>,
    mask: &[u8],
    weights: &EncoderWeights<T>,
    layer: usize,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let config = weights.config();
    if layer >= config.layers {
        return Err(Error::InvalidArgument(format!("layer {layer} of {}", config.layers)));
    }
    if states.rank() != 2 || states.shape()[1] != config.hidden || states.shape()[0] != mask.len() {
        return Err(Error::shape(
            "multi_head_attention",
            states.shape(),
            &[mask.len(), config.hidden],
        ));
    }
    let layout = Arc::new(AttentionLayout {
        segments: vec![(0, mask.len())],
        key_mask: mask.iter().map(|&m| m == 1).collect(),
        heads: config.heads,
    });
    let mut g = Graph::new();
    let w = |g: &mut Graph<T>, s: &str| -> Result<NodeId> {
        let name = names::layer(layer, s);
        let t = weights
            .params()
            .get(&name)
            .ok_or_else(|| Error::WeightMismatch(vec![format!("missing tensor `{name}`")]))?;
        Ok(g.constant(t.clone()))
    };
    let x = g.constant(states.clone());
    let (qw, qb, kw, kb, vw, vb, ow, ob) = (
        w(&mut g, names::Q_W)?,
        w(&mut g, names::Q_B)?,
        w(&mut g, names::K_W)?,
        w(&mut g, names::K_B)?,
        w(&mut g, names::V_W)?,
        w(&mut g, names::V_B)?,
        w(&mut g, names::ATTN_OUT_W)?,
        w(&mut g, names::ATTN_OUT_B)?,
    );
    let q = g.linear(x, qw, Some(qb))?;
    let k = g.linear(x, kw, Some(kb))?;
    let v = g.linear(x, vw, Some(vb))?;
    let ctx = g.attention(q, k, v, layout)?;
    let out = g.linear(ctx, ow, Some(ob))?;
    let probs = g.attention_weights(ctx).expect("attention node");
    Ok((g.value(out).clone(), probs))
}
