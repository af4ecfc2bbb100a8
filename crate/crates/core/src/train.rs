//! Optimization: learning-rate schedule, AdamW, gradient clipping,
//! scheduled sampling, batch sources and the training step.
//!
//! Every step draws its randomness from a generator keyed by
//! `(seed, step)`, so a run resumed from a checkpoint at step `k` sees
//! exactly the batches and noise an uninterrupted run would have seen.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::special::{MASK, PAD};
use crate::data::{
    dae_noise_with, frame_truncated, sample_language, unframe, LanguageId, MonoExample, NoiseConfig,
    ParallelExample, SamplingWeights, Vocab,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::model::{argmax, shift_targets, SharedWeightModel, TokenBatch, TokenId};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupMode {
    /// Warm up over `ceil(warmup_proportion · total_steps)` steps.
    #[default]
    Proportion,
    /// Warm up over the whole first epoch.
    FirstEpoch,
}

/// Whether the pretraining task and language are drawn once per example
/// or once per step (shared by the whole batch).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingGranularity {
    #[default]
    Example,
    Step,
}

macro_rules! keyword_enum {
    ($ty:ty { $($variant:ident => $kw:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($kw => Ok(<$ty>::$variant),)+
                    other => Err(Error::Config(format!(
                        concat!("expected one of ", $($kw, " "),+, "got {}"), other
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(<$ty>::$variant => $kw,)+ })
            }
        }
    };
}

keyword_enum!(WarmupMode { Proportion => "proportion", FirstEpoch => "first_epoch" });
keyword_enum!(SamplingGranularity { Example => "example", Step => "step" });

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_proportion: f64,
    pub warmup_mode: WarmupMode,
    /// Learning rate at step 0.
    pub warmup_floor_lr: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Examples per optimizer step, split across `grad_accum_steps`
    /// micro-batches.
    pub global_batch: usize,
    pub grad_accum_steps: usize,
    pub grad_clip_norm: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Decoupled decay, applied to matrices only.
    pub weight_decay: f64,
    /// Teacher-forcing ratio reached at the final epoch.
    pub tf_final_ratio: f64,
    pub scheduled_sampling: bool,
    pub sampling_alpha: f64,
    pub sampling_granularity: SamplingGranularity,
    pub use_dae: bool,
    pub use_mt: bool,
    /// Parameter-name prefixes excluded from updates.
    pub freeze: Vec<String>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-4,
            warmup_proportion: 0.1,
            warmup_mode: WarmupMode::Proportion,
            warmup_floor_lr: 1e-5,
            epochs: 8,
            steps_per_epoch: 250,
            global_batch: 8,
            grad_accum_steps: 1,
            grad_clip_norm: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.01,
            tf_final_ratio: 0.5,
            scheduled_sampling: true,
            sampling_alpha: 0.3,
            sampling_granularity: SamplingGranularity::Example,
            use_dae: true,
            use_mt: true,
            freeze: Vec::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.warmup_proportion > 0.0 && self.warmup_proportion < 1.0) {
            return bad("warmup_proportion must lie in (0, 1)");
        }
        if !(self.grad_clip_norm > 0.0) {
            return bad("grad_clip_norm must be > 0");
        }
        if !(0.0..=1.0).contains(&self.tf_final_ratio) {
            return bad("tf_final_ratio must lie in [0, 1]");
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return bad("epochs and steps_per_epoch must be >= 1");
        }
        if self.global_batch == 0 || self.grad_accum_steps == 0 || self.grad_accum_steps > self.global_batch {
            return bad("need 1 <= grad_accum_steps <= global_batch");
        }
        if !(self.peak_lr >= 0.0 && self.warmup_floor_lr >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be > 0");
        }
        if !(self.weight_decay >= 0.0) || !(self.sampling_alpha >= 0.0) {
            return bad("weight_decay and sampling_alpha must be non-negative");
        }
        if !self.use_dae && !self.use_mt {
            return bad("at least one of use_dae and use_mt must be enabled");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// Linear warmup from `warmup_floor_lr` to `peak_lr`, then linear decay
/// to zero at `total_steps`.
pub fn lr_schedule(step: u64, total_steps: u64, cfg: &TrainConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("total_steps must be >= 1".into()));
    }
    if step > total_steps {
        return Err(Error::Config(format!("step {step} beyond total {total_steps}")));
    }
    if step == total_steps {
        return Ok(0.0);
    }
    let warm = match cfg.warmup_mode {
        WarmupMode::Proportion => (cfg.warmup_proportion * total_steps as f64).ceil() as u64,
        WarmupMode::FirstEpoch => total_steps.div_ceil(cfg.epochs.max(1) as u64),
    };
    if step <= warm {
        let frac = if warm == 0 { 1.0 } else { step as f64 / warm as f64 };
        return Ok(cfg.warmup_floor_lr + (cfg.peak_lr - cfg.warmup_floor_lr) * frac);
    }
    Ok(cfg.peak_lr * (total_steps - step) as f64 / (total_steps - warm) as f64)
}

/// 1 during the first epoch, then linear down to `tf_final_ratio` at the
/// last epoch.
pub fn teacher_forcing_ratio(epoch: usize, total_epochs: usize, cfg: &TrainConfig) -> f64 {
    if epoch <= 1 || total_epochs <= 1 {
        return 1.0;
    }
    let t = (epoch.min(total_epochs) - 1) as f64 / (total_epochs - 1) as f64;
    1.0 + (cfg.tf_final_ratio - 1.0) * t
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moments per parameter, indexed like the store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
        Self {
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected AdamW update over every parameter that holds a
/// gradient. Nothing is modified if any gradient is non-finite.
pub fn adamw_step(store: &mut ParamStore, state: &mut OptimizerState, opt: &AdamW, lr: f64) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Config(format!(
            "optimizer state has {} slots for {} parameters",
            state.m.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        if let Some(g) = store.get(id).grad() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", store.name(id))));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for id in ids {
        let p = store.get_mut(id);
        if !p.requires_grad() {
            continue;
        }
        let decay = if p.shape().len() >= 2 { opt.weight_decay } else { 0.0 };
        let (data, grad) = p.data_and_grad_mut();
        let Some(g) = grad else {
            continue;
        };
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        for (((w, gi), mi), vi) in data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = opt.beta1 * *mi + (1.0 - opt.beta1) * gi;
            *vi = opt.beta2 * *vi + (1.0 - opt.beta2) * gi * gi;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + opt.eps);
            *w -= lr * (update + decay * *w);
        }
    }
    Ok(())
}

/// Rescales gradient buffers so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_slices(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= s));
    }
    norm
}

/// [`clip_grad_slices`] over every gradient held by `store`, in place.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) -> f64 {
    let ids: Vec<_> = store.ids().collect();
    let norm = ids
        .iter()
        .filter_map(|&id| store.get(id).grad())
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for id in ids {
            if let Some(g) = store.get_mut(id).grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    norm
}

/// Replaces each gold decoder input past `<s> lang` by the model's own
/// greedy prediction for that position with probability `1 - ratio`.
pub fn scheduled_sampling_inputs<R: Rng>(
    model: &SharedWeightModel,
    src: &TokenBatch,
    dec_in: &TokenBatch,
    ratio: f64,
    rng: &mut R,
) -> Result<TokenBatch> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("teacher-forcing ratio {ratio} outside [0, 1]")));
    }
    if ratio >= 1.0 {
        return Ok(dec_in.clone());
    }
    let mut g = Graph::inference(&model.store);
    let enc = model.encode(&mut g, src)?;
    let logits = model.decode(&mut g, dec_in, enc, &src.pad)?;
    let v = model.config.vocab_size;
    let data = g.value(logits).data();
    let mut out = dec_in.clone();
    for b in 0..dec_in.batch {
        for j in 2..dec_in.len {
            let at = b * dec_in.len + j;
            if dec_in.pad[at] {
                continue;
            }
            if rng.random::<f64>() >= ratio {
                let prev = at - 1;
                out.ids[at] = argmax(&data[prev * v..(prev + 1) * v]) as TokenId;
            }
        }
    }
    Ok(out)
}

// ---- examples and batch sources ------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Dae,
    Mt,
    /// Plain supervised sequence-to-sequence pairs.
    Seq2Seq,
    /// Masked-token prediction on the encoder alone.
    Mlm,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Dae => "dae",
            Task::Mt => "mt",
            Task::Seq2Seq => "task",
            Task::Mlm => "mlm",
        })
    }
}

/// One framed training example. For [`Task::Mlm`] `tgt` holds per-position
/// labels aligned with `src`, `<pad>` where nothing is predicted.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub task: Task,
    pub lang: String,
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
}

pub trait BatchSource {
    fn draw(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Example>>;

    /// Whether decoder inputs may be replaced by model predictions.
    fn scheduled_sampling(&self) -> bool {
        false
    }
}

/// Framed monolingual sentences grouped by language.
#[derive(Clone, Debug)]
struct MonoPool {
    langs: Vec<LanguageId>,
    sentences: Vec<Vec<Vec<TokenId>>>,
}

impl MonoPool {
    fn new(vocab: &Vocab, mono: &[MonoExample], max_len: usize) -> Result<Self> {
        let mut langs: Vec<LanguageId> = Vec::new();
        let mut sentences: Vec<Vec<Vec<TokenId>>> = Vec::new();
        for e in mono {
            let lang = vocab.language(&e.lang)?;
            let slot = match langs.iter().position(|l| l == &lang) {
                Some(i) => i,
                None => {
                    langs.push(lang.clone());
                    sentences.push(Vec::new());
                    langs.len() - 1
                }
            };
            sentences[slot].push(frame_truncated(&vocab.tokenize(&e.text), &lang, max_len)?);
        }
        Ok(Self { langs, sentences })
    }

    fn total(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

#[derive(Clone, Debug)]
struct PairPool {
    /// `(src_lang, tgt_lang, src, tgt)`, framed.
    pairs: Vec<(LanguageId, LanguageId, Vec<TokenId>, Vec<TokenId>)>,
}

impl PairPool {
    fn new(vocab: &Vocab, pairs: &[ParallelExample], max_len: usize) -> Result<Self> {
        let pairs = pairs
            .iter()
            .map(|p| {
                let (sl, tl) = (vocab.language(&p.src_lang)?, vocab.language(&p.tgt_lang)?);
                let s = frame_truncated(&vocab.tokenize(&p.src), &sl, max_len)?;
                let t = frame_truncated(&vocab.tokenize(&p.tgt), &tl, max_len)?;
                Ok((sl, tl, s, t))
            })
            .collect::<Result<_>>()?;
        Ok(Self { pairs })
    }
}

/// Multi-task pretraining data: span-denoising over monolingual text with
/// balanced language sampling, plus translation pairs in both directions.
#[derive(Clone, Debug)]
pub struct PretrainData {
    mono: MonoPool,
    parallel: PairPool,
    weights: Option<SamplingWeights>,
    noise: NoiseConfig,
    use_dae: bool,
    use_mt: bool,
    /// Probability that an example is a translation example.
    mt_share: f64,
    granularity: SamplingGranularity,
}

impl PretrainData {
    pub fn new(
        vocab: &Vocab,
        mono: &[MonoExample],
        parallel: &[ParallelExample],
        cfg: &TrainConfig,
        noise: &NoiseConfig,
        max_seq_len: usize,
    ) -> Result<Self> {
        noise.validate()?;
        let mono = MonoPool::new(vocab, mono, max_seq_len)?;
        let parallel = PairPool::new(vocab, parallel, max_seq_len)?;
        let use_dae = cfg.use_dae && mono.total() > 0;
        let use_mt = cfg.use_mt && !parallel.pairs.is_empty();
        if !use_dae && !use_mt {
            return Err(Error::Config(
                "no usable pretraining task: enable use_dae with monolingual data or use_mt with parallel data".into(),
            ));
        }
        let weights = if use_dae {
            let counts: Vec<usize> = mono.sentences.iter().map(Vec::len).collect();
            Some(SamplingWeights::from_counts(&counts, cfg.sampling_alpha)?)
        } else {
            None
        };
        let mt_share = match (use_dae, use_mt) {
            (true, true) => parallel.pairs.len() as f64 / (parallel.pairs.len() + mono.total()) as f64,
            (false, true) => 1.0,
            _ => 0.0,
        };
        Ok(Self {
            mono,
            parallel,
            weights,
            noise: noise.clone(),
            use_dae,
            use_mt,
            mt_share,
            granularity: cfg.sampling_granularity,
        })
    }

    pub fn sampling_weights(&self) -> Option<&SamplingWeights> {
        self.weights.as_ref()
    }

    pub fn languages(&self) -> &[LanguageId] {
        &self.mono.langs
    }

    fn draw_task<R: Rng>(&self, rng: &mut R) -> Task {
        match (self.use_dae, self.use_mt) {
            (true, true) if rng.random::<f64>() < self.mt_share => Task::Mt,
            (true, _) => Task::Dae,
            _ => Task::Mt,
        }
    }

    fn dae_example<R: Rng>(&self, lang: usize, rng: &mut R) -> Result<Example> {
        let pool = &self.mono.sentences[lang];
        let framed = &pool[rng.random_range(0..pool.len())];
        let noised = dae_noise_with(framed, &self.noise, rng)?;
        Ok(Example {
            task: Task::Dae,
            lang: self.mono.langs[lang].code().to_string(),
            src: noised.input,
            tgt: noised.target,
        })
    }

    fn mt_example<R: Rng>(&self, rng: &mut R) -> Example {
        let (sl, tl, s, t) = &self.parallel.pairs[rng.random_range(0..self.parallel.pairs.len())];
        let (lang, src, tgt) = if rng.random::<bool>() { (sl, t, s) } else { (tl, s, t) };
        Example {
            task: Task::Mt,
            lang: lang.code().to_string(),
            src: src.clone(),
            tgt: tgt.clone(),
        }
    }
}

impl BatchSource for PretrainData {
    fn draw(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Example>> {
        let shared = match self.granularity {
            SamplingGranularity::Step => {
                let task = self.draw_task(rng);
                let lang = self.weights.as_ref().map(|w| sample_language(w, rng));
                Some((task, lang))
            }
            SamplingGranularity::Example => None,
        };
        (0..batch)
            .map(|_| {
                let (task, lang) = match shared {
                    Some(s) => s,
                    None => {
                        let task = self.draw_task(rng);
                        let lang = match task {
                            Task::Dae => self.weights.as_ref().map(|w| sample_language(w, rng)),
                            _ => None,
                        };
                        (task, lang)
                    }
                };
                match task {
                    Task::Dae => self.dae_example(lang.expect("dae implies weights"), rng),
                    _ => Ok(self.mt_example(rng)),
                }
            })
            .collect()
    }

    fn scheduled_sampling(&self) -> bool {
        true
    }
}

/// Supervised pairs for finetuning, drawn uniformly with replacement.
#[derive(Clone, Debug)]
pub struct FinetuneData {
    pairs: PairPool,
}

impl FinetuneData {
    pub fn new(vocab: &Vocab, pairs: &[ParallelExample], max_seq_len: usize) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Config("finetuning corpus is empty".into()));
        }
        Ok(Self {
            pairs: PairPool::new(vocab, pairs, max_seq_len)?,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.pairs.is_empty()
    }
}

impl BatchSource for FinetuneData {
    fn draw(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Example>> {
        Ok((0..batch)
            .map(|_| {
                let (_, tl, s, t) = &self.pairs.pairs[rng.random_range(0..self.pairs.pairs.len())];
                Example {
                    task: Task::Seq2Seq,
                    lang: tl.code().to_string(),
                    src: s.clone(),
                    tgt: t.clone(),
                }
            })
            .collect())
    }
}

/// Masked-token prediction data for pretraining a bare encoder.
#[derive(Clone, Debug)]
pub struct MlmData {
    mono: MonoPool,
    pub mask_prob: f64,
}

impl MlmData {
    pub fn new(vocab: &Vocab, mono: &[MonoExample], max_seq_len: usize) -> Result<Self> {
        let mono = MonoPool::new(vocab, mono, max_seq_len)?;
        if mono.total() == 0 {
            return Err(Error::Config("masked-LM corpus is empty".into()));
        }
        Ok(Self { mono, mask_prob: 0.15 })
    }
}

impl BatchSource for MlmData {
    fn draw(&self, batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Example>> {
        let flat: Vec<(usize, usize)> = self
            .mono
            .sentences
            .iter()
            .enumerate()
            .flat_map(|(l, s)| (0..s.len()).map(move |i| (l, i)))
            .collect();
        (0..batch)
            .map(|_| {
                let (l, i) = flat[rng.random_range(0..flat.len())];
                let framed = &self.mono.sentences[l][i];
                let (_, body) = unframe(framed)?;
                let mut src = framed.clone();
                let mut tgt = vec![PAD; framed.len()];
                let mut picked: Vec<usize> = (0..body.len()).filter(|_| rng.random::<f64>() < self.mask_prob).collect();
                if picked.is_empty() && !body.is_empty() {
                    picked.push(rng.random_range(0..body.len()));
                }
                for j in picked {
                    tgt[j + 2] = src[j + 2];
                    src[j + 2] = MASK;
                }
                Ok(Example {
                    task: Task::Mlm,
                    lang: self.mono.langs[l].code().to_string(),
                    src,
                    tgt,
                })
            })
            .collect()
    }
}

// ---- prepared batches and gradients ---------------------------------------

/// A padded batch ready for a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum PreparedBatch {
    Seq2Seq {
        src: TokenBatch,
        dec_in: TokenBatch,
        labels: Vec<TokenId>,
    },
    Mlm {
        input: TokenBatch,
        labels: Vec<TokenId>,
    },
}

impl PreparedBatch {
    /// Teacher-forced batch from framed sources and targets.
    pub fn seq2seq(srcs: &[Vec<TokenId>], tgts: &[Vec<TokenId>]) -> Result<Self> {
        let src = TokenBatch::from_sequences(srcs)?;
        let tgt = TokenBatch::from_sequences(tgts)?;
        let (dec_in, labels) = shift_targets(&tgt)?;
        Ok(Self::Seq2Seq { src, dec_in, labels })
    }

    pub fn mlm(inputs: &[Vec<TokenId>], labels: &[Vec<TokenId>]) -> Result<Self> {
        let input = TokenBatch::from_sequences(inputs)?;
        let lab = TokenBatch::from_sequences(labels)?;
        if lab.len != input.len {
            return Err(Error::Shape("masked-LM labels must align with inputs".into()));
        }
        Ok(Self::Mlm { input, labels: lab.ids })
    }

    fn from_examples(examples: &[Example]) -> Result<Self> {
        let srcs: Vec<_> = examples.iter().map(|e| e.src.clone()).collect();
        let tgts: Vec<_> = examples.iter().map(|e| e.tgt.clone()).collect();
        let mlm = examples.iter().filter(|e| e.task == Task::Mlm).count();
        match mlm {
            0 => Self::seq2seq(&srcs, &tgts),
            n if n == examples.len() => Self::mlm(&srcs, &tgts),
            _ => Err(Error::Config("cannot mix masked-LM and seq2seq examples in one batch".into())),
        }
    }

    /// Number of labels that contribute to the loss.
    pub fn tokens(&self) -> usize {
        let labels = match self {
            Self::Seq2Seq { labels, .. } | Self::Mlm { labels, .. } => labels,
        };
        labels.iter().filter(|&&t| t != PAD).count()
    }

    pub fn loss(&self, model: &SharedWeightModel, g: &mut Graph) -> Result<Var> {
        match self {
            Self::Seq2Seq { src, dec_in, labels } => model.loss_with_inputs(g, src, dec_in, labels),
            Self::Mlm { input, labels } => {
                let logits = model.encoder_logits(g, input)?;
                let flat = g.reshape(logits, &[input.batch * input.len, model.config.vocab_size])?;
                g.softmax_cross_entropy(flat, labels, PAD)
            }
        }
    }
}

/// Backpropagates the token-weighted mean loss over `batches` into the
/// store's gradient buffers and returns that loss. Splitting a batch into
/// micro-batches yields the same gradients as processing it whole.
pub fn accumulate_gradients(model: &mut SharedWeightModel, batches: &[PreparedBatch]) -> Result<f64> {
    let total: usize = batches.iter().map(PreparedBatch::tokens).sum();
    if total == 0 {
        return Err(Error::EmptyLoss);
    }
    let mut loss_sum = 0.0;
    for b in batches.iter().filter(|b| b.tokens() > 0) {
        let grads = {
            let mut g = Graph::new(&model.store);
            let loss = b.loss(model, &mut g)?;
            let weighted = g.scale(loss, b.tokens() as f64 / total as f64)?;
            loss_sum += g.value(weighted).item()?;
            g.backward(weighted)?
        };
        model.store.accumulate(grads)?;
    }
    if !loss_sum.is_finite() {
        return Err(Error::NonFinite(format!("loss {loss_sum}")));
    }
    Ok(loss_sum)
}

/// Token-weighted mean loss without gradients.
pub fn evaluate_loss(model: &SharedWeightModel, batches: &[PreparedBatch]) -> Result<f64> {
    let mut sum = 0.0;
    let mut tokens = 0;
    for b in batches.iter().filter(|b| b.tokens() > 0) {
        let mut g = Graph::inference(&model.store);
        let loss = b.loss(model, &mut g)?;
        sum += g.value(loss).item()? * b.tokens() as f64;
        tokens += b.tokens();
    }
    if tokens == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(sum / tokens as f64)
}

// ---- the loop ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed optimizer steps.
    pub step: u64,
    pub optimizer: OptimizerState,
}

impl TrainState {
    pub fn new(model: &SharedWeightModel) -> Self {
        Self {
            step: 0,
            optimizer: OptimizerState::new(&model.store),
        }
    }
}

/// One line of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub task: String,
    pub lang: String,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

impl StepRecord {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.17e}\t{:.17e}\t{:.17e}",
            self.step, self.epoch, self.task, self.lang, self.loss, self.lr, self.grad_norm
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || Error::Parse(format!("malformed loss-log line {line:?}"));
        if f.len() != 7 {
            return Err(bad());
        }
        Ok(Self {
            step: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            task: f[2].to_string(),
            lang: f[3].to_string(),
            loss: f[4].parse().map_err(|_| bad())?,
            lr: f[5].parse().map_err(|_| bad())?,
            grad_norm: f[6].parse().map_err(|_| bad())?,
        })
    }
}

const STEP_SALT: u64 = 0x7374_6570_5f72_6e67;

/// The generator for training step `step`.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STEP_SALT);
    rng.set_stream(step);
    rng
}

fn common<'a>(mut items: impl Iterator<Item = &'a str>) -> String {
    let first = items.next().unwrap_or("none");
    if items.all(|x| x == first) {
        first.to_string()
    } else {
        "mixed".to_string()
    }
}

/// Runs one optimizer step: draw, (optionally) scheduled sampling,
/// forward/backward over micro-batches, clip, AdamW.
pub fn train_step(model: &mut SharedWeightModel, data: &dyn BatchSource, cfg: &TrainConfig, state: &mut TrainState) -> Result<StepRecord> {
    let total = cfg.total_steps();
    let step = state.step;
    if step >= total {
        return Err(Error::Config(format!("training already finished ({step} of {total} steps)")));
    }
    let mut rng = step_rng(cfg.seed, step);
    let examples = data.draw(cfg.global_batch, &mut rng)?;
    let epoch = (step / cfg.steps_per_epoch as u64) as usize + 1;
    let ratio = if cfg.scheduled_sampling && data.scheduled_sampling() {
        teacher_forcing_ratio(epoch, cfg.epochs, cfg)
    } else {
        1.0
    };
    let chunk = examples.len().div_ceil(cfg.grad_accum_steps);
    let mut batches = Vec::with_capacity(cfg.grad_accum_steps);
    for part in examples.chunks(chunk) {
        let mut b = PreparedBatch::from_examples(part)?;
        if let PreparedBatch::Seq2Seq { src, dec_in, .. } = &mut b {
            if ratio < 1.0 {
                *dec_in = scheduled_sampling_inputs(model, src, dec_in, ratio, &mut rng)?;
            }
        }
        batches.push(b);
    }
    let loss = accumulate_gradients(model, &batches).inspect_err(|_| model.store.zero_grads())?;
    let grad_norm = clip_gradients(&mut model.store, cfg.grad_clip_norm);
    let lr = lr_schedule(step, total, cfg)?;
    let updated = adamw_step(&mut model.store, &mut state.optimizer, &cfg.adamw(), lr);
    model.store.zero_grads();
    updated?;
    state.step += 1;
    Ok(StepRecord {
        step,
        epoch,
        task: common(examples.iter().map(|e| match e.task {
            Task::Dae => "dae",
            Task::Mt => "mt",
            Task::Seq2Seq => "task",
            Task::Mlm => "mlm",
        })),
        lang: common(examples.iter().map(|e| e.lang.as_str())),
        loss,
        lr,
        grad_norm,
    })
}

/// Trains until `state.step == until`, calling `on_step` after each step
/// (for logging and periodic checkpoints).
pub fn train_until(
    model: &mut SharedWeightModel,
    data: &dyn BatchSource,
    cfg: &TrainConfig,
    state: &mut TrainState,
    until: u64,
    on_step: &mut dyn FnMut(&SharedWeightModel, &TrainState, &StepRecord) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if until > cfg.total_steps() {
        return Err(Error::Config(format!("cannot train to step {until}, schedule ends at {}", cfg.total_steps())));
    }
    model.store.set_frozen(&cfg.freeze, true);
    while state.step < until {
        let rec = train_step(model, data, cfg, state)?;
        on_step(model, state, &rec)?;
    }
    Ok(())
}

/// Full multi-task pretraining run; returns the loss log.
pub fn pretrain(model: &mut SharedWeightModel, data: &PretrainData, cfg: &TrainConfig) -> Result<Vec<StepRecord>> {
    run_all(model, data, cfg)
}

/// Full finetuning run (no task mixing, no scheduled sampling).
pub fn finetune(model: &mut SharedWeightModel, data: &FinetuneData, cfg: &TrainConfig) -> Result<Vec<StepRecord>> {
    run_all(model, data, cfg)
}

/// Masked-token pretraining of a bare encoder (stands in for an
/// off-the-shelf pretrained encoder at desk scale).
pub fn pretrain_mlm(model: &mut SharedWeightModel, data: &MlmData, cfg: &TrainConfig) -> Result<Vec<StepRecord>> {
    run_all(model, data, cfg)
}

fn run_all(model: &mut SharedWeightModel, data: &dyn BatchSource, cfg: &TrainConfig) -> Result<Vec<StepRecord>> {
    let mut state = TrainState::new(model);
    let mut log = Vec::new();
    train_until(model, data, cfg, &mut state, cfg.total_steps(), &mut |_, _, r| {
        log.push(r.clone());
        Ok(())
    })?;
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(total_epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs: total_epochs,
            steps_per_epoch: 10,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        let c = cfg(10);
        assert_eq!(lr_schedule(0, 100, &c).unwrap(), 1e-5);
        assert_eq!(lr_schedule(10, 100, &c).unwrap(), 1e-4);
        assert_eq!(lr_schedule(100, 100, &c).unwrap(), 0.0);
        assert!((lr_schedule(55, 100, &c).unwrap() - 5e-5).abs() < 1e-18);
        assert!(lr_schedule(0, 0, &c).is_err());
    }

    #[test]
    fn first_epoch_warmup_mode() {
        let c = TrainConfig {
            warmup_mode: WarmupMode::FirstEpoch,
            ..cfg(8)
        };
        assert_eq!(lr_schedule(10, 80, &c).unwrap(), 1e-4);
        assert!(lr_schedule(8, 80, &c).unwrap() < 1e-4);
    }

    #[test]
    fn teacher_forcing_decay() {
        let c = cfg(5);
        assert_eq!(teacher_forcing_ratio(1, 5, &c), 1.0);
        assert_eq!(teacher_forcing_ratio(5, 5, &c), 0.5);
        assert!((teacher_forcing_ratio(3, 5, &c) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let mut a = vec![2.0, 0.0];
        let n = clip_grad_slices(&mut [a.as_mut_slice()], 1.0);
        assert_eq!(n, 2.0);
        assert!((a[0] - 1.0).abs() < 1e-12);
        let mut b = vec![0.3, 0.4];
        assert_eq!(clip_grad_slices(&mut [b.as_mut_slice()], 1.0), 0.5);
        assert_eq!(b, vec![0.3, 0.4]);
        let mut z = vec![0.0; 3];
        assert_eq!(clip_grad_slices(&mut [z.as_mut_slice()], 1.0), 0.0);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", &[1], crate::params::ParamInit::Zeros).unwrap();
        store.get_mut(id).accumulate_grad(&[1.0]).unwrap();
        let mut st = OptimizerState::new(&store);
        let opt = TrainConfig::default().adamw();
        adamw_step(&mut store, &mut st, &opt, 1e-3).unwrap();
        let w = store.get(id).data()[0];
        assert!((w + 1e-3).abs() < 1e-11, "{w}");
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adamw_rejects_non_finite_without_mutating() {
        let mut store = ParamStore::new();
        let id = store.add("w", &[2], crate::params::ParamInit::Ones).unwrap();
        store.get_mut(id).accumulate_grad(&[1.0, f64::NAN]).unwrap();
        let mut st = OptimizerState::new(&store);
        let before = store.clone();
        let r = adamw_step(&mut store, &mut st, &TrainConfig::default().adamw(), 1e-3);
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert_eq!(store.get(id).data(), before.get(id).data());
        assert_eq!(st.t, 0);
    }

    #[test]
    fn record_round_trip() {
        let r = StepRecord {
            step: 3,
            epoch: 1,
            task: "dae".into(),
            lang: "zh".into(),
            loss: 1.0 / 3.0,
            lr: 1e-5,
            grad_norm: 0.7,
        };
        assert_eq!(StepRecord::parse(&r.to_tsv()).unwrap(), r);
    }

    #[test]
    fn keywords_parse() {
        assert_eq!("first_epoch".parse::<WarmupMode>().unwrap(), WarmupMode::FirstEpoch);
        assert_eq!(SamplingGranularity::Step.to_string(), "step");
        assert!("weekly".parse::<WarmupMode>().is_err());
    }
}
