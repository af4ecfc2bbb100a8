//! Tokenization, framing, denoising corruption, language sampling and the
//! synthetic multilingual corpora used for desk-scale experiments.

mod corpus;
mod noise;
mod sampling;
mod synthetic;
mod vocab;

pub use corpus::{read_mono_tsv, read_parallel_tsv, write_mono_tsv, write_parallel_tsv, MonoExample, ParallelExample};
pub use noise::{dae_noise, dae_noise_with, NoiseConfig, NoisedExample};
pub use sampling::{sample_language, sampling_weights, SamplingWeights};
pub use synthetic::{gen_synthetic_corpus, LanguageSpec, SyntheticCorpus, SyntheticSpec};
pub use vocab::{frame_sequence, frame_truncated, unframe, LanguageId, Vocab};

/// Reserved token ids. Language tokens follow immediately after these.
pub mod special {
    use crate::model::TokenId;

    pub const PAD: TokenId = 0;
    pub const BOS: TokenId = 1;
    pub const EOS: TokenId = 2;
    pub const UNK: TokenId = 3;
    pub const MASK: TokenId = 4;
    /// Id of the first language token.
    pub const FIRST_LANGUAGE: TokenId = 5;

    pub const SYMBOLS: [&str; 5] = ["<pad>", "<s>", "</s>", "<unk>", "<mask>"];

    /// Languages registered by default, in id order.
    pub const DEFAULT_LANGUAGES: [&str; 5] = ["bo", "kk", "mn", "ug", "zh"];
}
