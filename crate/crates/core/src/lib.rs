//! Shared-weight sequence-to-sequence modelling at desk scale.
//!
//! A pretrained transformer encoder is turned into an encoder-decoder
//! generator by grafting: every decoder layer that corresponds to an encoder
//! layer is initialized from that layer's weights (self-attention feeds both
//! decoder attentions, the FFN feeds both decoder FFNs), and a randomly
//! initialized conventional decoder layer is inserted after every `X`
//! grafted ones.
//!
//! ```text
//! encoder (n layers)         decoder (n + n/X layers, X = 3)
//!   E0 ───────────────────▶  Custom(E0)
//!   E1 ───────────────────▶  Custom(E1)
//!   E2 ───────────────────▶  Custom(E2)
//!                            Normal (random)
//!   E3 ───────────────────▶  Custom(E3)
//! ```
//!
//! Gradients come from a small reverse-mode tape in [`graph`]. Training
//! mixes denoising with translation under balanced language sampling.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grafting;
pub mod graph;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, OpKind, Var};
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tensor::Tensor;
