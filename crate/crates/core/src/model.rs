//! Post-norm transformer encoder plus the two decoder layer variants.
//!
//! * [`EncoderLayerParams`]: self-attention, FFN.
//! * [`CustomDecoderLayerParams`]: self-attention, FFN1, cross-attention,
//!   FFN2, each sub-block followed by residual add and its own layer norm.
//! * [`NormalDecoderLayerParams`]: self-attention, cross-attention, FFN.
//!
//! Encoder and decoder read the same token/position embedding, and the
//! output projection is the token embedding matrix itself.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::special::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::grafting::{self, DecoderLayout, GraftOptions};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamInit, ParamStore};
use crate::tensor::Tensor;

pub type TokenId = u32;

/// Attention logits at masked positions.
const MASK_FILL: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_encoder_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    /// Custom decoder layers between consecutive normal layers.
    pub insert_every_x: usize,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_encoder_layers: 4,
            d_model: 128,
            n_heads: 4,
            d_ff: 256,
            vocab_size: 128,
            max_seq_len: 256,
            insert_every_x: 3,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_encoder_layers == 0 {
            return bad("n_encoder_layers must be >= 1".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 || self.vocab_size == 0 {
            return bad("d_ff and vocab_size must be >= 1".into());
        }
        if self.insert_every_x == 0 {
            return bad("insert_every_x must be >= 1".into());
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be >= 1".into());
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return bad("layer_norm_eps must be > 0".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

// ---- parameter groups ----------------------------------------------------

/// Anything that owns a fixed set of named parameters.
pub trait ParamGroup {
    /// Calls `f` with `(suffix, id)` for each parameter, in registration order.
    fn visit(&self, f: &mut dyn FnMut(&str, ParamId));

    fn ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        self.visit(&mut |_, id| out.push(id));
        out
    }

    fn named(&self, prefix: &str) -> Vec<(String, ParamId)> {
        let mut out = Vec::new();
        self.visit(&mut |name, id| out.push((format!("{prefix}.{name}"), id)));
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    fn register(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.add(&format!("{prefix}.weight"), &[d_in, d_out], ParamInit::Normal)?,
            bias: store.add(&format!("{prefix}.bias"), &[d_out], ParamInit::Zeros)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul_rows(x, w, false)?;
        g.add_bias(y, b)
    }
}

impl ParamGroup for Linear {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamId)) {
        f("weight", self.weight);
        f("bias", self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNormParams {
    fn register(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(&format!("{prefix}.gain"), &[d], ParamInit::Ones)?,
            bias: store.add(&format!("{prefix}.bias"), &[d], ParamInit::Zeros)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, eps: f64) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, eps)
    }
}

impl ParamGroup for LayerNormParams {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamId)) {
        f("gain", self.gain);
        f("bias", self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl AttentionParams {
    fn register(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::register(store, &format!("{prefix}.q"), d, d)?,
            k: Linear::register(store, &format!("{prefix}.k"), d, d)?,
            v: Linear::register(store, &format!("{prefix}.v"), d, d)?,
            o: Linear::register(store, &format!("{prefix}.o"), d, d)?,
        })
    }

    /// Multi-head scaled dot-product attention of `q_in[b, t, d]` over
    /// `kv_in[b, s, d]`; `mask` is `[b·h, t, s]`, `true` = blocked.
    pub fn forward(&self, g: &mut Graph, ctx: &LayerCtx, q_in: Var, kv_in: Var, mask: &Rc<[bool]>) -> Result<Var> {
        let q = self.q.forward(g, q_in)?;
        let k = self.k.forward(g, kv_in)?;
        let v = self.v.forward(g, kv_in)?;
        let qh = g.split_heads(q, ctx.heads)?;
        let kh = g.split_heads(k, ctx.heads)?;
        let vh = g.split_heads(v, ctx.heads)?;
        let scores = g.bmm(qh, kh, true)?;
        let scores = g.scale(scores, 1.0 / (ctx.head_dim as f64).sqrt())?;
        let scores = g.masked_fill(scores, mask.clone(), MASK_FILL)?;
        let probs = g.softmax(scores)?;
        let mixed = g.bmm(probs, vh, false)?;
        let merged = g.merge_heads(mixed, ctx.heads)?;
        self.o.forward(g, merged)
    }
}

impl ParamGroup for AttentionParams {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamId)) {
        for (name, lin) in [("q", &self.q), ("k", &self.k), ("v", &self.v), ("o", &self.o)] {
            lin.visit(&mut |s, id| f(&format!("{name}.{s}"), id));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForwardParams {
    fn register(store: &mut ParamStore, prefix: &str, d: usize, d_ff: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::register(store, &format!("{prefix}.up"), d, d_ff)?,
            down: Linear::register(store, &format!("{prefix}.down"), d_ff, d)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, h)
    }
}

impl ParamGroup for FeedForwardParams {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamId)) {
        self.up.visit(&mut |s, id| f(&format!("up.{s}"), id));
        self.down.visit(&mut |s, id| f(&format!("down.{s}"), id));
    }
}

/// Per-forward constants shared by every layer.
pub struct LayerCtx {
    pub heads: usize,
    pub head_dim: usize,
    pub eps: f64,
    /// `[b·h, t, t]` causal + padding mask for decoder self-attention, or
    /// `[b·h, s, s]` padding mask for encoder self-attention.
    pub self_mask: Rc<[bool]>,
    /// `[b·h, t, s]` source padding mask; unused by the encoder.
    pub cross_mask: Option<Rc<[bool]>>,
}

impl LayerCtx {
    fn cross(&self) -> Result<&Rc<[bool]>> {
        self.cross_mask
            .as_ref()
            .ok_or_else(|| Error::Shape("decoder layer needs a cross-attention mask".into()))
    }
}

fn sublayer_norm(g: &mut Graph, x: Var, sub: Var, norm: &LayerNormParams, eps: f64) -> Result<Var> {
    let sum = g.add(x, sub)?;
    norm.forward(g, sum, eps)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams {
    pub self_attn: AttentionParams,
    pub self_attn_norm: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub ffn_norm: LayerNormParams,
}

impl EncoderLayerParams {
    pub(crate) fn register(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            self_attn: AttentionParams::register(store, &format!("{prefix}.self_attn"), d)?,
            self_attn_norm: LayerNormParams::register(store, &format!("{prefix}.self_attn_norm"), d)?,
            ffn: FeedForwardParams::register(store, &format!("{prefix}.ffn"), d, cfg.d_ff)?,
            ffn_norm: LayerNormParams::register(store, &format!("{prefix}.ffn_norm"), d)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ctx: &LayerCtx, x: Var) -> Result<Var> {
        let a = self.self_attn.forward(g, ctx, x, x, &ctx.self_mask)?;
        let x = sublayer_norm(g, x, a, &self.self_attn_norm, ctx.eps)?;
        let f = self.ffn.forward(g, x)?;
        sublayer_norm(g, x, f, &self.ffn_norm, ctx.eps)
    }
}

impl ParamGroup for EncoderLayerParams {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamId)) {
        self.self_attn.visit(&mut |s, id| f(&format!("self_attn.{s}"), id));
        self.self_attn_norm.visit(&mut |s, id| f(&format!("self_attn_norm.{s}"), id));
        self.ffn.visit(&mut |s, id| f(&format!("ffn.{s}"), id));
        self.ffn_norm.visit(&mut |s, id| f(&format!("ffn_norm.{s}"), id));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CustomDecoderLayerParams {
    pub self_attn: AttentionParams,
    pub self_attn_norm: LayerNormParams,
    pub ffn1: FeedForwardParams,
    pub ffn1_norm: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub cross_attn_norm: LayerNormParams,
    pub ffn2: FeedForwardParams,
    pub ffn2_norm: LayerNormParams,
}

impl CustomDecoderLayerParams {
    pub(crate) fn register(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            self_attn: AttentionParams::register(store, &format!("{prefix}.self_attn"), d)?,
            self_attn_norm: LayerNormParams::register(store, &format!("{prefix}.self_attn_norm"), d)?,
            ffn1: FeedForwardParams::register(store, &format!("{prefix}.ffn1"), d, cfg.d_ff)?,
            ffn1_norm: LayerNormParams::register(store, &format!("{prefix}.ffn1_norm"), d)?,
            cross_attn: AttentionParams::register(store, &format!("{prefix}.cross_attn"), d)?,
            cross_attn_norm: LayerNormParams::register(store, &format!("{prefix}.cross_attn_norm"), d)?,
            ffn2: FeedForwardParams::register(store, &format!("{prefix}.ffn2"), d, cfg.d_ff)?,
            ffn2_norm: LayerNormParams::register(store, &format!("{prefix}.ffn2_norm"), d)?,
        })
    }

    /// The same layer viewed through an encoder layer's parameters, used
    /// when decoder weights stay tied to the encoder.
    pub(crate) fn tied_to(enc: &EncoderLayerParams) -> Self {
        Self {
            self_attn: enc.self_attn.clone(),
            self_attn_norm: enc.self_attn_norm.clone(),
            ffn1: enc.ffn.clone(),
            ffn1_norm: enc.ffn_norm.clone(),
            cross_attn: enc.self_attn.clone(),
            cross_attn_norm: enc.self_attn_norm.clone(),
            ffn2: enc.ffn.clone(),
            ffn2_norm: enc.ffn_norm.clone(),
        }
    }

    pub fn forward(&self, g: &mut Graph, ctx: &LayerCtx, x: Var, enc: Var) -> Result<Var> {
        let a = self.self_attn.forward(g, ctx, x, x, &ctx.self_mask)?;
        let x = sublayer_norm(g, x, a, &self.self_attn_norm, ctx.eps)?;
        let f = self.ffn1.forward(g, x)?;
        let x = sublayer_norm(g, x, f, &self.ffn1_norm, ctx.eps)?;
        let c = self.cross_attn.forward(g, ctx, x, enc, ctx.cross()?)?;
        let x = sublayer_norm(g, x, c, &self.cross_attn_norm, ctx.eps)?;
        let f = self.ffn2.forward(g, x)?;
        sublayer_norm(g, x, f, &self.ffn2_norm, ctx.eps)
    }
}

impl ParamGroup for CustomDecoderLayerParams {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamId)) {
        self.self_attn.visit(&mut |s, id| f(&format!("self_attn.{s}"), id));
        self.self_attn_norm.visit(&mut |s, id| f(&format!("self_attn_norm.{s}"), id));
        self.ffn1.visit(&mut |s, id| f(&format!("ffn1.{s}"), id));
        self.ffn1_norm.visit(&mut |s, id| f(&format!("ffn1_norm.{s}"), id));
        self.cross_attn.visit(&mut |s, id| f(&format!("cross_attn.{s}"), id));
        self.cross_attn_norm.visit(&mut |s, id| f(&format!("cross_attn_norm.{s}"), id));
        self.ffn2.visit(&mut |s, id| f(&format!("ffn2.{s}"), id));
        self.ffn2_norm.visit(&mut |s, id| f(&format!("ffn2_norm.{s}"), id));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalDecoderLayerParams {
    pub self_attn: AttentionParams,
    pub self_attn_norm: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub cross_attn_norm: LayerNormParams,
    pub ffn: FeedForwardParams,
    pub ffn_norm: LayerNormParams,
}

impl NormalDecoderLayerParams {
    pub(crate) fn register(store: &mut ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            self_attn: AttentionParams::register(store, &format!("{prefix}.self_attn"), d)?,
            self_attn_norm: LayerNormParams::register(store, &format!("{prefix}.self_attn_norm"), d)?,
            cross_attn: AttentionParams::register(store, &format!("{prefix}.cross_attn"), d)?,
            cross_attn_norm: LayerNormParams::register(store, &format!("{prefix}.cross_attn_norm"), d)?,
            ffn: FeedForwardParams::register(store, &format!("{prefix}.ffn"), d, cfg.d_ff)?,
            ffn_norm: LayerNormParams::register(store, &format!("{prefix}.ffn_norm"), d)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ctx: &LayerCtx, x: Var, enc: Var) -> Result<Var> {
        let a = self.self_attn.forward(g, ctx, x, x, &ctx.self_mask)?;
        let x = sublayer_norm(g, x, a, &self.self_attn_norm, ctx.eps)?;
        let c = self.cross_attn.forward(g, ctx, x, enc, ctx.cross()?)?;
        let x = sublayer_norm(g, x, c, &self.cross_attn_norm, ctx.eps)?;
        let f = self.ffn.forward(g, x)?;
        sublayer_norm(g, x, f, &self.ffn_norm, ctx.eps)
    }
}

impl ParamGroup for NormalDecoderLayerParams {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamId)) {
        self.self_attn.visit(&mut |s, id| f(&format!("self_attn.{s}"), id));
        self.self_attn_norm.visit(&mut |s, id| f(&format!("self_attn_norm.{s}"), id));
        self.cross_attn.visit(&mut |s, id| f(&format!("cross_attn.{s}"), id));
        self.cross_attn_norm.visit(&mut |s, id| f(&format!("cross_attn_norm.{s}"), id));
        self.ffn.visit(&mut |s, id| f(&format!("ffn.{s}"), id));
        self.ffn_norm.visit(&mut |s, id| f(&format!("ffn_norm.{s}"), id));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DecoderLayer {
    Custom(CustomDecoderLayerParams),
    Normal(NormalDecoderLayerParams),
}

impl DecoderLayer {
    pub fn forward(&self, g: &mut Graph, ctx: &LayerCtx, x: Var, enc: Var) -> Result<Var> {
        match self {
            DecoderLayer::Custom(l) => l.forward(g, ctx, x, enc),
            DecoderLayer::Normal(l) => l.forward(g, ctx, x, enc),
        }
    }

    pub fn as_custom(&self) -> Option<&CustomDecoderLayerParams> {
        match self {
            DecoderLayer::Custom(l) => Some(l),
            DecoderLayer::Normal(_) => None,
        }
    }
}

impl ParamGroup for DecoderLayer {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamId)) {
        match self {
            DecoderLayer::Custom(l) => l.visit(f),
            DecoderLayer::Normal(l) => l.visit(f),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub norm: LayerNormParams,
}

impl Embeddings {
    fn register(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            tokens: store.add("embeddings.tokens", &[cfg.vocab_size, cfg.d_model], ParamInit::Normal)?,
            positions: store.add(
                "embeddings.positions",
                &[cfg.max_seq_len, cfg.d_model],
                ParamInit::Normal,
            )?,
            norm: LayerNormParams::register(store, "embeddings.norm", cfg.d_model)?,
        })
    }
}

impl ParamGroup for Embeddings {
    fn visit(&self, f: &mut dyn FnMut(&str, ParamId)) {
        f("tokens", self.tokens);
        f("positions", self.positions);
        self.norm.visit(&mut |s, id| f(&format!("norm.{s}"), id));
    }
}

// ---- batches -------------------------------------------------------------

/// A padded `[batch, len]` block of token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<TokenId>,
    pub batch: usize,
    pub len: usize,
    /// `true` where the position is padding.
    pub pad: Vec<bool>,
}

impl TokenBatch {
    /// Right-pads every sequence with `<pad>` to the longest length.
    pub fn from_sequences(seqs: &[Vec<TokenId>]) -> Result<Self> {
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        if seqs.is_empty() || len == 0 {
            return Err(Error::Shape("empty token batch".into()));
        }
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut pad = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            ids.extend_from_slice(s);
            pad.extend(std::iter::repeat_n(false, s.len()));
            ids.extend(std::iter::repeat_n(PAD, len - s.len()));
            pad.extend(std::iter::repeat_n(true, len - s.len()));
        }
        Ok(Self {
            ids,
            batch: seqs.len(),
            len,
            pad,
        })
    }

    pub fn row(&self, b: usize) -> &[TokenId] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }

    /// Unpadded tokens of row `b`.
    pub fn sequence(&self, b: usize) -> Vec<TokenId> {
        self.row(b)
            .iter()
            .zip(&self.pad[b * self.len..(b + 1) * self.len])
            .filter(|(_, &p)| !p)
            .map(|(&t, _)| t)
            .collect()
    }
}

/// Builds a `[b·h, q_len, k_len]` blocking mask from key padding and,
/// optionally, causality.
pub fn attention_mask(batch: usize, heads: usize, q_len: usize, k_len: usize, key_pad: &[bool], causal: bool) -> Rc<[bool]> {
    let mut mask = Vec::with_capacity(batch * heads * q_len * k_len);
    for b in 0..batch {
        let kp = &key_pad[b * k_len..(b + 1) * k_len];
        for _ in 0..heads {
            for i in 0..q_len {
                for (j, &p) in kp.iter().enumerate() {
                    mask.push(p || (causal && j > i));
                }
            }
        }
    }
    mask.into()
}

// ---- the model -------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SharedWeightModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embeddings: Embeddings,
    pub encoder: Vec<EncoderLayerParams>,
    pub decoder: Vec<DecoderLayer>,
    pub layout: DecoderLayout,
    pub graft: GraftOptions,
}

pub const OUTPUT_PROJECTION: &str = "output_projection.weight";

/// Which encoder the assembled model starts from.
pub enum EncoderInit<'a> {
    Random,
    Pretrained(&'a SharedWeightModel),
}

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) const STREAM_EMBEDDINGS: u64 = 1_000;
pub(crate) const STREAM_ENCODER: u64 = 2_000;
pub(crate) const STREAM_DECODER: u64 = 3_000;

impl SharedWeightModel {
    /// Registers every parameter (zero-filled) for the given structure.
    /// Used both for fresh models and for loading checkpoints.
    pub fn skeleton(config: ModelConfig, layout: DecoderLayout, graft: GraftOptions) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let embeddings = Embeddings::register(&mut store, &config)?;
        store.alias(OUTPUT_PROJECTION, embeddings.tokens)?;
        let encoder = (0..config.n_encoder_layers)
            .map(|i| EncoderLayerParams::register(&mut store, &format!("encoder.layers.{i}"), &config))
            .collect::<Result<Vec<_>>>()?;
        let decoder = grafting::register_decoder(&mut store, &config, &layout, &graft, &encoder)?;
        Ok(Self {
            config,
            store,
            embeddings,
            encoder,
            decoder,
            layout,
            graft,
        })
    }

    /// A randomly initialized model with no decoder, i.e. a bare encoder.
    pub fn encoder_only(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::skeleton(config, DecoderLayout::empty(), GraftOptions::default())?;
        m.init_encoder_random(seed);
        Ok(m)
    }

    pub fn is_encoder_only(&self) -> bool {
        self.decoder.is_empty()
    }

    pub(crate) fn init_encoder_random(&mut self, seed: u64) {
        let ids = self.embeddings.ids();
        self.store.initialize(&ids, &mut rng_stream(seed, STREAM_EMBEDDINGS));
        for (i, layer) in self.encoder.iter().enumerate() {
            let ids = layer.ids();
            self.store
                .initialize(&ids, &mut rng_stream(seed, STREAM_ENCODER + i as u64));
        }
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Distinct scalar parameters reachable from the decoder layers.
    pub fn decoder_param_count(&self) -> usize {
        let mut ids: Vec<ParamId> = self.decoder.iter().flat_map(ParamGroup::ids).collect();
        ids.sort();
        ids.dedup();
        ids.iter().map(|&id| self.store.get(id).numel()).sum()
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder
            .iter()
            .flat_map(ParamGroup::ids)
            .map(|id| self.store.get(id).numel())
            .sum()
    }

    fn check_len(&self, batch: &TokenBatch) -> Result<()> {
        if batch.len > self.config.max_seq_len {
            return Err(Error::Shape(format!(
                "sequence length {} exceeds max_seq_len {}",
                batch.len, self.config.max_seq_len
            )));
        }
        Ok(())
    }

    fn embed(&self, g: &mut Graph, batch: &TokenBatch) -> Result<Var> {
        self.check_len(batch)?;
        let shape = [batch.batch, batch.len];
        let tok_table = g.param(self.embeddings.tokens);
        let tok = g.embedding(tok_table, &batch.ids, &shape)?;
        let positions: Vec<TokenId> = (0..batch.batch)
            .flat_map(|_| 0..batch.len as TokenId)
            .collect();
        let pos_table = g.param(self.embeddings.positions);
        let pos = g.embedding(pos_table, &positions, &shape)?;
        let x = g.add(tok, pos)?;
        self.embeddings.norm.forward(g, x, self.config.layer_norm_eps)
    }

    fn ctx(&self, self_mask: Rc<[bool]>, cross_mask: Option<Rc<[bool]>>) -> LayerCtx {
        LayerCtx {
            heads: self.config.n_heads,
            head_dim: self.config.head_dim(),
            eps: self.config.layer_norm_eps,
            self_mask,
            cross_mask,
        }
    }

    /// Contextual source representations, `[b, s, d_model]`.
    pub fn encode(&self, g: &mut Graph, src: &TokenBatch) -> Result<Var> {
        let mut x = self.embed(g, src)?;
        let mask = attention_mask(src.batch, self.config.n_heads, src.len, src.len, &src.pad, false);
        let ctx = self.ctx(mask, None);
        for layer in &self.encoder {
            x = layer.forward(g, &ctx, x)?;
        }
        Ok(x)
    }

    /// Final decoder hidden states, `[b, t, d_model]`.
    pub fn decode_hidden(&self, g: &mut Graph, dec: &TokenBatch, enc_out: Var, src_pad: &[bool]) -> Result<Var> {
        let es = g.shape(enc_out).to_vec();
        if es.len() != 3 || es[0] != dec.batch || src_pad.len() != es[0] * es[1] {
            return Err(Error::Shape(format!(
                "encoder output {es:?} does not match decoder batch {} / source mask {}",
                dec.batch,
                src_pad.len()
            )));
        }
        let heads = self.config.n_heads;
        let self_mask = attention_mask(dec.batch, heads, dec.len, dec.len, &dec.pad, true);
        let cross_mask = attention_mask(dec.batch, heads, dec.len, es[1], src_pad, false);
        let ctx = self.ctx(self_mask, Some(cross_mask));
        let mut x = self.embed(g, dec)?;
        for layer in &self.decoder {
            x = layer.forward(g, &ctx, x, enc_out)?;
        }
        Ok(x)
    }

    /// Decoder logits `[b, t, vocab]` through the tied output projection.
    pub fn decode(&self, g: &mut Graph, dec: &TokenBatch, enc_out: Var, src_pad: &[bool]) -> Result<Var> {
        let h = self.decode_hidden(g, dec, enc_out, src_pad)?;
        let table = g.param(self.embeddings.tokens);
        g.matmul_rows(h, table, true)
    }

    /// Encoder-side token logits through the tied projection (masked-LM head).
    pub fn encoder_logits(&self, g: &mut Graph, src: &TokenBatch) -> Result<Var> {
        let h = self.encode(g, src)?;
        let table = g.param(self.embeddings.tokens);
        g.matmul_rows(h, table, true)
    }

    /// Teacher-forced loss with explicit decoder inputs and labels (both
    /// `[b, t]`); labels equal to `<pad>` are ignored.
    pub fn loss_with_inputs(&self, g: &mut Graph, src: &TokenBatch, dec_in: &TokenBatch, labels: &[TokenId]) -> Result<Var> {
        if dec_in.batch != src.batch || labels.len() != dec_in.ids.len() {
            return Err(Error::Shape("decoder inputs / labels do not match the source batch".into()));
        }
        if self.decoder.is_empty() {
            return Err(Error::Config("model has no decoder".into()));
        }
        let enc = self.encode(g, src)?;
        let logits = self.decode(g, dec_in, enc, &src.pad)?;
        let v = self.config.vocab_size;
        let flat = g.reshape(logits, &[dec_in.batch * dec_in.len, v])?;
        g.softmax_cross_entropy(flat, labels, PAD)
    }

    /// Shifted teacher-forced cross-entropy for framed targets
    /// `<s> <lang> body </s>`. The language token is given to the decoder,
    /// never predicted, so its label is ignored.
    pub fn seq2seq_loss(&self, g: &mut Graph, src: &TokenBatch, tgt: &TokenBatch) -> Result<Var> {
        let (dec_in, labels) = shift_targets(tgt)?;
        self.loss_with_inputs(g, src, &dec_in, &labels)
    }

    /// Greedy decoding for a batch of framed sources. Each output starts
    /// with `<s> lang` and ends at `</s>` or after `max_new` new tokens.
    pub fn generate_greedy_batch(&self, srcs: &[Vec<TokenId>], langs: &[TokenId], max_new: usize) -> Result<Vec<Vec<TokenId>>> {
        if max_new == 0 {
            return Err(Error::Config("max_new must be >= 1".into()));
        }
        if srcs.len() != langs.len() {
            return Err(Error::Shape("one language per source required".into()));
        }
        let src = TokenBatch::from_sequences(srcs)?;
        let enc = {
            let mut g = Graph::inference(&self.store);
            let e = self.encode(&mut g, &src)?;
            g.value(e).clone()
        };
        let mut outs: Vec<Vec<TokenId>> = langs.iter().map(|&l| vec![BOS, l]).collect();
        let mut done = vec![false; outs.len()];
        let v = self.config.vocab_size;
        for _ in 0..max_new {
            if done.iter().all(|&d| d) || outs[0].len() >= self.config.max_seq_len {
                break;
            }
            let dec = TokenBatch::from_sequences(&outs)?;
            let mut g = Graph::inference(&self.store);
            let e = g.constant(enc.clone());
            let logits = self.decode(&mut g, &dec, e, &src.pad)?;
            let data = g.value(logits).data();
            for (b, out) in outs.iter_mut().enumerate() {
                if done[b] {
                    continue;
                }
                let row = &data[(b * dec.len + dec.len - 1) * v..(b * dec.len + dec.len) * v];
                let tok = argmax(row) as TokenId;
                out.push(tok);
                done[b] = tok == EOS;
            }
        }
        Ok(outs)
    }

    pub fn generate_greedy(&self, src: &[TokenId], lang: TokenId, max_new: usize) -> Result<Vec<TokenId>> {
        let mut out = self.generate_greedy_batch(&[src.to_vec()], &[lang], max_new)?;
        Ok(out.remove(0))
    }
}

/// Splits framed targets into decoder inputs (`tgt[..-1]`) and labels
/// (`tgt[1..]`) with the language-token label and padding set to `<pad>`.
pub fn shift_targets(tgt: &TokenBatch) -> Result<(TokenBatch, Vec<TokenId>)> {
    if tgt.len < 2 {
        return Err(Error::EmptyLoss);
    }
    let t = tgt.len - 1;
    let mut ids = Vec::with_capacity(tgt.batch * t);
    let mut pad = Vec::with_capacity(tgt.batch * t);
    let mut labels = Vec::with_capacity(tgt.batch * t);
    for b in 0..tgt.batch {
        let row = tgt.row(b);
        let prow = &tgt.pad[b * tgt.len..(b + 1) * tgt.len];
        ids.extend_from_slice(&row[..t]);
        pad.extend_from_slice(&prow[..t]);
        for j in 1..tgt.len {
            labels.push(if j == 1 || prow[j] { PAD } else { row[j] });
        }
    }
    Ok((
        TokenBatch {
            ids,
            batch: tgt.batch,
            len: t,
            pad,
        },
        labels,
    ))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Convenience for tests: a tensor copy of one parameter by name.
pub fn param_by_name<'a>(model: &'a SharedWeightModel, name: &str) -> Option<&'a Tensor> {
    model.store.lookup(name).map(|id| model.store.get(id))
}
