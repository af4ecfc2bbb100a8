//! Desk-scale ablation harness.
//!
//! One synthetic corpus and one masked-LM-pretrained encoder are shared by
//! every arm; an arm then assembles a decoder on top of that encoder
//! (grafted or not), pretrains the full model for a fixed step budget and
//! reports the token-weighted denoising loss on held-out sentences.

use std::fmt;

use crate::data::{dae_noise_with, frame_truncated, gen_synthetic_corpus, NoiseConfig, SyntheticCorpus, SyntheticSpec, Vocab};
use crate::error::Result;
use crate::grafting::{assemble_model, GraftOptions, NormalLayerMode};
use crate::model::{rng_stream, EncoderInit, ModelConfig, SharedWeightModel};
use crate::train::{evaluate_loss, pretrain, pretrain_mlm, MlmData, PreparedBatch, PretrainData, StepRecord, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arm {
    /// Grafted decoder, denoising and translation.
    Full,
    /// Same-shape randomly initialized decoder.
    NoWeightSharing,
    NoMt,
    NoDae,
    /// No normal layers.
    BaseA,
    /// Normal-layer slots filled by duplicating the preceding custom layer.
    BaseB,
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Full => "full",
            Arm::NoWeightSharing => "no-ws",
            Arm::NoMt => "no-mt",
            Arm::NoDae => "no-dae",
            Arm::BaseA => "base-a",
            Arm::BaseB => "base-b",
        })
    }
}

impl Arm {
    pub fn graft_options(self) -> GraftOptions {
        let mut g = GraftOptions::default();
        match self {
            Arm::NoWeightSharing => g.weight_sharing = false,
            Arm::BaseA => g.normal_layer_mode = NormalLayerMode::None,
            Arm::BaseB => g.normal_layer_mode = NormalLayerMode::Duplicate,
            _ => {}
        }
        g
    }

    pub fn train_config(self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            use_mt: base.use_mt && self != Arm::NoMt,
            use_dae: base.use_dae && self != Arm::NoDae,
            seed,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationSetup {
    pub corpus: SyntheticSpec,
    /// `vocab_size` is replaced by the corpus vocabulary size.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub noise: NoiseConfig,
    pub mlm: TrainConfig,
    pub encoder_seed: u64,
    pub heldout_batch: usize,
}

impl AblationSetup {
    /// Two languages (18k + 2k sentences, 2k parallel pairs), n = 4,
    /// X = 3, d = 128, 2000 pretraining steps.
    pub fn desk_scale() -> Self {
        let mut corpus = SyntheticSpec::new(&[("zh", 18_000), ("bo", 2_000)], 2_000, 11);
        corpus.heldout = 100;
        Self {
            corpus,
            model: ModelConfig {
                n_encoder_layers: 4,
                d_model: 128,
                n_heads: 4,
                d_ff: 256,
                vocab_size: 0,
                max_seq_len: 64,
                insert_every_x: 3,
                layer_norm_eps: 1e-5,
            },
            train: TrainConfig {
                epochs: 8,
                steps_per_epoch: 250,
                global_batch: 8,
                scheduled_sampling: false,
                ..TrainConfig::default()
            },
            noise: NoiseConfig::default(),
            mlm: TrainConfig {
                epochs: 1,
                steps_per_epoch: 1_000,
                global_batch: 16,
                peak_lr: 5e-4,
                scheduled_sampling: false,
                seed: 1,
                ..TrainConfig::default()
            },
            encoder_seed: 1,
            heldout_batch: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ArmResult {
    pub arm: Arm,
    pub seed: u64,
    pub initial_heldout_loss: f64,
    pub heldout_loss: f64,
    pub log: Vec<StepRecord>,
}

/// Shared state for a family of ablation runs.
pub struct Workbench {
    pub setup: AblationSetup,
    pub corpus: SyntheticCorpus,
    pub vocab: Vocab,
    pub model_config: ModelConfig,
    pub encoder: SharedWeightModel,
    pub mlm_log: Vec<StepRecord>,
    pub heldout: Vec<PreparedBatch>,
}

impl Workbench {
    pub fn prepare(setup: AblationSetup) -> Result<Self> {
        let corpus = gen_synthetic_corpus(&setup.corpus)?;
        let vocab = corpus.vocab()?;
        let model_config = ModelConfig {
            vocab_size: vocab.len(),
            ..setup.model.clone()
        };
        let mut encoder = SharedWeightModel::encoder_only(model_config.clone(), setup.encoder_seed)?;
        let mlm_log = if setup.mlm.total_steps() > 0 {
            let data = MlmData::new(&vocab, &corpus.mono, model_config.max_seq_len)?;
            pretrain_mlm(&mut encoder, &data, &setup.mlm)?
        } else {
            Vec::new()
        };
        let heldout = heldout_dae_batches(&vocab, &corpus, &setup.noise, model_config.max_seq_len, setup.heldout_batch)?;
        Ok(Self {
            setup,
            corpus,
            vocab,
            model_config,
            encoder,
            mlm_log,
            heldout,
        })
    }

    /// Builds the arm's model from the shared encoder, without training.
    pub fn assemble(&self, arm: Arm, seed: u64) -> Result<SharedWeightModel> {
        assemble_model(self.model_config.clone(), EncoderInit::Pretrained(&self.encoder), arm.graft_options(), seed)
    }

    pub fn run_arm(&self, arm: Arm, seed: u64) -> Result<ArmResult> {
        let mut model = self.assemble(arm, seed)?;
        let initial_heldout_loss = evaluate_loss(&model, &self.heldout)?;
        let cfg = arm.train_config(&self.setup.train, seed);
        let data = PretrainData::new(
            &self.vocab,
            &self.corpus.mono,
            &self.corpus.parallel,
            &cfg,
            &self.setup.noise,
            self.model_config.max_seq_len,
        )?;
        let log = pretrain(&mut model, &data, &cfg)?;
        Ok(ArmResult {
            arm,
            seed,
            initial_heldout_loss,
            heldout_loss: evaluate_loss(&model, &self.heldout)?,
            log,
        })
    }
}

/// Fixed denoising examples built from the held-out sentences; noise for
/// sentence `i` comes from stream `i` of `noise.seed`.
pub fn heldout_dae_batches(
    vocab: &Vocab,
    corpus: &SyntheticCorpus,
    noise: &NoiseConfig,
    max_seq_len: usize,
    batch: usize,
) -> Result<Vec<PreparedBatch>> {
    let mut srcs = Vec::new();
    let mut tgts = Vec::new();
    for (i, e) in corpus.heldout_mono.iter().enumerate() {
        let lang = vocab.language(&e.lang)?;
        let framed = frame_truncated(&vocab.tokenize(&e.text), &lang, max_seq_len)?;
        let ex = dae_noise_with(&framed, noise, &mut rng_stream(noise.seed, i as u64))?;
        srcs.push(ex.input);
        tgts.push(ex.target);
    }
    srcs.chunks(batch.max(1))
        .zip(tgts.chunks(batch.max(1)))
        .map(|(s, t)| PreparedBatch::seq2seq(s, t))
        .collect()
}
