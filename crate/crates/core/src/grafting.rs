//! Decoder layout and encoder-to-decoder weight transfer.
//!
//! An encoder with `n` layers yields a decoder of `n + ⌊n/X⌋` layers: one
//! custom layer per encoder layer, in order, with a freshly initialized
//! normal layer after every complete group of `X` custom layers.
//!
//! A custom layer takes its weights from its source encoder layer:
//!
//! | decoder           | encoder          |
//! |-------------------|------------------|
//! | `self_attn`       | `self_attn`      |
//! | `cross_attn`      | `self_attn`      |
//! | `ffn1`, `ffn2`    | `ffn`            |
//! | `self_attn_norm`  | `self_attn_norm` |
//! | `cross_attn_norm` | `self_attn_norm` |
//! | `ffn1_norm`, `ffn2_norm` | `ffn_norm` |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    rng_stream, CustomDecoderLayerParams, DecoderLayer, EncoderInit, EncoderLayerParams, ModelConfig,
    NormalDecoderLayerParams, ParamGroup, SharedWeightModel, STREAM_DECODER,
};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Custom,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub kind: LayerKind,
    /// Encoder layer the weights come from; `None` for normal layers.
    pub source_encoder_layer: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderLayout {
    pub entries: Vec<LayoutEntry>,
}

/// What occupies the slot after each complete group of `X` custom layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalLayerMode {
    /// A randomly initialized normal layer.
    #[default]
    Insert,
    /// Nothing: the decoder has exactly `n` custom layers.
    None,
    /// A copy of the preceding custom layer.
    Duplicate,
}

impl FromStr for NormalLayerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "insert" => Ok(Self::Insert),
            "none" => Ok(Self::None),
            "duplicate" => Ok(Self::Duplicate),
            other => Err(Error::Config(format!(
                "normal_layer_mode must be insert|none|duplicate, got {other}"
            ))),
        }
    }
}

impl fmt::Display for NormalLayerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Insert => "insert",
            Self::None => "none",
            Self::Duplicate => "duplicate",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraftOptions {
    /// Copy encoder weights into custom layers; when false every decoder
    /// layer is randomly initialized with the same shapes.
    pub weight_sharing: bool,
    pub normal_layer_mode: NormalLayerMode,
    /// Keep custom layers tied to encoder storage instead of copying.
    pub tie_decoder: bool,
}

impl Default for GraftOptions {
    fn default() -> Self {
        Self {
            weight_sharing: true,
            normal_layer_mode: NormalLayerMode::Insert,
            tie_decoder: false,
        }
    }
}

pub fn build_decoder_layout(n_encoder_layers: usize, x: usize) -> Result<DecoderLayout> {
    DecoderLayout::for_mode(n_encoder_layers, x, NormalLayerMode::Insert)
}

impl DecoderLayout {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn for_mode(n: usize, x: usize, mode: NormalLayerMode) -> Result<Self> {
        if n < 1 || x < 1 {
            return Err(Error::Config(format!(
                "decoder layout needs n >= 1 and x >= 1, got n={n}, x={x}"
            )));
        }
        let mut entries = Vec::with_capacity(n + n / x);
        for i in 0..n {
            entries.push(LayoutEntry {
                kind: LayerKind::Custom,
                source_encoder_layer: Some(i),
            });
            if (i + 1) % x == 0 {
                match mode {
                    NormalLayerMode::Insert => entries.push(LayoutEntry {
                        kind: LayerKind::Normal,
                        source_encoder_layer: None,
                    }),
                    NormalLayerMode::Duplicate => entries.push(LayoutEntry {
                        kind: LayerKind::Custom,
                        source_encoder_layer: Some(i),
                    }),
                    NormalLayerMode::None => {}
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn custom_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == LayerKind::Custom)
            .count()
    }

    pub fn normal_count(&self) -> usize {
        self.len() - self.custom_count()
    }

    /// Checks the insert-mode invariants for an `n`-layer encoder and `x`.
    pub fn validate(&self, n: usize, x: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("invalid layout: {m}")));
        if x == 0 {
            return fail("x must be >= 1".into());
        }
        if self.len() != n + n / x {
            return fail(format!("length {} != {n} + {n}/{x}", self.len()));
        }
        let mut next_source = 0;
        let mut run = 0;
        for (j, e) in self.entries.iter().enumerate() {
            match e.kind {
                LayerKind::Custom => {
                    if e.source_encoder_layer != Some(next_source) {
                        return fail(format!("entry {j} has source {:?}, expected {next_source}", e.source_encoder_layer));
                    }
                    next_source += 1;
                    run += 1;
                }
                LayerKind::Normal => {
                    if e.source_encoder_layer.is_some() || run != x {
                        return fail(format!("normal entry {j} follows {run} custom layers"));
                    }
                    run = 0;
                }
            }
            if run > x {
                return fail(format!("more than {x} consecutive custom layers at {j}"));
            }
        }
        if next_source != n {
            return fail(format!("{next_source} custom layers for {n} encoder layers"));
        }
        Ok(())
    }

    /// `C C C N C`-style rendering.
    pub fn summary(&self) -> String {
        self.entries
            .iter()
            .map(|e| match e.kind {
                LayerKind::Custom => "C",
                LayerKind::Normal => "N",
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Registers decoder parameters for `layout`. With tied grafting, custom
/// layers become aliases of their source encoder layer.
pub(crate) fn register_decoder(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    layout: &DecoderLayout,
    opts: &GraftOptions,
    encoder: &[EncoderLayerParams],
) -> Result<Vec<DecoderLayer>> {
    let mut layers = Vec::with_capacity(layout.len());
    for (j, entry) in layout.entries.iter().enumerate() {
        let prefix = format!("decoder.layers.{j}");
        let layer = match entry.kind {
            LayerKind::Custom if opts.tie_decoder && opts.weight_sharing => {
                let src = source_of(entry, j, encoder.len())?;
                let tied = CustomDecoderLayerParams::tied_to(&encoder[src]);
                for (name, id) in tied.named(&prefix) {
                    store.alias(&name, id)?;
                }
                DecoderLayer::Custom(tied)
            }
            LayerKind::Custom => DecoderLayer::Custom(CustomDecoderLayerParams::register(store, &prefix, cfg)?),
            LayerKind::Normal => DecoderLayer::Normal(NormalDecoderLayerParams::register(store, &prefix, cfg)?),
        };
        layers.push(layer);
    }
    Ok(layers)
}

fn source_of(entry: &LayoutEntry, j: usize, n: usize) -> Result<usize> {
    match entry.source_encoder_layer {
        Some(s) if s < n => Ok(s),
        other => Err(Error::Graft(format!(
            "decoder layer {j} refers to encoder layer {other:?}, encoder has {n} layers"
        ))),
    }
}

/// Copies an encoder layer into a custom decoder layer.
pub fn copy_encoder_into_custom(store: &mut ParamStore, enc: &EncoderLayerParams, dec: &CustomDecoderLayerParams) -> Result<()> {
    let pairs = [
        (enc.self_attn.ids(), dec.self_attn.ids()),
        (enc.self_attn.ids(), dec.cross_attn.ids()),
        (enc.ffn.ids(), dec.ffn1.ids()),
        (enc.ffn.ids(), dec.ffn2.ids()),
        (enc.self_attn_norm.ids(), dec.self_attn_norm.ids()),
        (enc.self_attn_norm.ids(), dec.cross_attn_norm.ids()),
        (enc.ffn_norm.ids(), dec.ffn1_norm.ids()),
        (enc.ffn_norm.ids(), dec.ffn2_norm.ids()),
    ];
    for (src, dst) in pairs {
        for (s, d) in src.into_iter().zip(dst) {
            store.copy_values(s, d)?;
        }
    }
    Ok(())
}

/// Fills already-registered decoder layers: custom layers from their
/// source encoder layer (when weight sharing is on), everything else from
/// the truncated-normal initializer on a per-layer stream of `seed`.
pub fn fill_decoder(
    store: &mut ParamStore,
    encoder: &[EncoderLayerParams],
    layout: &DecoderLayout,
    decoder: &[DecoderLayer],
    opts: &GraftOptions,
    seed: u64,
) -> Result<()> {
    if layout.len() != decoder.len() {
        return Err(Error::Graft(format!(
            "layout has {} entries but decoder has {} layers",
            layout.len(),
            decoder.len()
        )));
    }
    for (j, (entry, layer)) in layout.entries.iter().zip(decoder).enumerate() {
        match (entry.kind, layer) {
            (LayerKind::Custom, DecoderLayer::Custom(dec)) if opts.weight_sharing => {
                let src = source_of(entry, j, encoder.len())?;
                if !opts.tie_decoder {
                    copy_encoder_into_custom(store, &encoder[src], dec)?;
                }
            }
            (LayerKind::Custom, DecoderLayer::Custom(_)) | (LayerKind::Normal, DecoderLayer::Normal(_)) => {
                let ids = layer.ids();
                store.initialize(&ids, &mut rng_stream(seed, STREAM_DECODER + j as u64));
            }
            _ => {
                return Err(Error::Graft(format!(
                    "decoder layer {j} does not match layout kind {:?}",
                    entry.kind
                )))
            }
        }
    }
    Ok(())
}

/// Registers and initializes a decoder for `layout` on top of `encoder`.
pub fn graft_weights(
    store: &mut ParamStore,
    cfg: &ModelConfig,
    encoder: &[EncoderLayerParams],
    layout: &DecoderLayout,
    opts: &GraftOptions,
    seed: u64,
) -> Result<Vec<DecoderLayer>> {
    let expected = layout
        .entries
        .iter()
        .filter_map(|e| e.source_encoder_layer)
        .max()
        .map_or(0, |m| m + 1);
    if expected > encoder.len() {
        return Err(Error::Graft(format!(
            "layout needs {expected} encoder layers, encoder has {}",
            encoder.len()
        )));
    }
    let decoder = register_decoder(store, cfg, layout, opts, encoder)?;
    fill_decoder(store, encoder, layout, &decoder, opts, seed)?;
    Ok(decoder)
}

/// Re-copies every custom layer of `model` from its source encoder layer.
pub fn regraft(model: &mut SharedWeightModel) -> Result<()> {
    for (j, (entry, layer)) in model.layout.entries.iter().zip(&model.decoder).enumerate() {
        if let DecoderLayer::Custom(dec) = layer {
            let src = source_of(entry, j, model.encoder.len())?;
            copy_encoder_into_custom(&mut model.store, &model.encoder[src], dec)?;
        }
    }
    Ok(())
}

/// Builds a full encoder-decoder model. The encoder is either randomly
/// initialized from `seed` or copied from a pretrained (encoder-only or
/// full) model with matching dimensions.
pub fn assemble_model(config: ModelConfig, encoder_init: EncoderInit<'_>, opts: GraftOptions, seed: u64) -> Result<SharedWeightModel> {
    config.validate()?;
    let layout = DecoderLayout::for_mode(config.n_encoder_layers, config.insert_every_x, opts.normal_layer_mode)?;
    let mut model = SharedWeightModel::skeleton(config, layout, opts)?;
    match encoder_init {
        EncoderInit::Random => model.init_encoder_random(seed),
        EncoderInit::Pretrained(src) => copy_encoder_from(&mut model, src)?,
    }
    fill_decoder(
        &mut model.store,
        &model.encoder,
        &model.layout,
        &model.decoder,
        &model.graft,
        seed,
    )?;
    Ok(model)
}

fn copy_encoder_from(dst: &mut SharedWeightModel, src: &SharedWeightModel) -> Result<()> {
    let (a, b) = (&dst.config, &src.config);
    let same = a.n_encoder_layers == b.n_encoder_layers
        && a.d_model == b.d_model
        && a.n_heads == b.n_heads
        && a.d_ff == b.d_ff
        && a.vocab_size == b.vocab_size
        && a.max_seq_len == b.max_seq_len;
    if !same {
        return Err(Error::Graft(format!(
            "pretrained encoder config {b:?} does not match target {a:?}"
        )));
    }
    let mut pairs = Vec::new();
    pairs.extend(src.embeddings.named("embeddings").into_iter().zip(dst.embeddings.ids()));
    for (i, (s, d)) in src.encoder.iter().zip(&dst.encoder).enumerate() {
        pairs.extend(s.named(&format!("encoder.layers.{i}")).into_iter().zip(d.ids()));
    }
    for ((_, sid), did) in pairs {
        let data = src.store.get(sid).data();
        dst.store.get_mut(did).data_mut().copy_from_slice(data);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(l: &DecoderLayout) -> String {
        l.summary()
    }

    #[test]
    fn twelve_layers_x3() {
        let l = build_decoder_layout(12, 3).unwrap();
        assert_eq!(kinds(&l), "C C C N C C C N C C C N C C C N");
        assert_eq!(l.len(), 16);
        l.validate(12, 3).unwrap();
    }

    #[test]
    fn trailing_partial_group_gets_no_normal() {
        let l = build_decoder_layout(4, 3).unwrap();
        assert_eq!(kinds(&l), "C C C N C");
        assert_eq!(l.len(), 5);
    }

    #[test]
    fn x1_alternates() {
        let l = build_decoder_layout(3, 1).unwrap();
        assert_eq!(kinds(&l), "C N C N C N");
    }

    #[test]
    fn zero_arguments_are_config_errors() {
        assert!(matches!(build_decoder_layout(0, 3), Err(Error::Config(_))));
        assert!(matches!(build_decoder_layout(3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn ablation_modes() {
        let none = DecoderLayout::for_mode(4, 3, NormalLayerMode::None).unwrap();
        assert_eq!(kinds(&none), "C C C C");
        let dup = DecoderLayout::for_mode(4, 3, NormalLayerMode::Duplicate).unwrap();
        assert_eq!(kinds(&dup), "C C C C C");
        assert_eq!(dup.entries[3].source_encoder_layer, Some(2));
    }

    #[test]
    fn validate_catches_misplaced_normal() {
        let mut l = build_decoder_layout(4, 2).unwrap();
        l.entries.swap(1, 2);
        assert!(l.validate(4, 2).is_err());
    }

    #[test]
    fn mode_parses() {
        assert_eq!("duplicate".parse::<NormalLayerMode>().unwrap(), NormalLayerMode::Duplicate);
        assert!("sometimes".parse::<NormalLayerMode>().is_err());
    }
}
