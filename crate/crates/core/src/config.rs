//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown and
//! repeated keys are errors. [`RunConfig::to_text`] emits every key with
//! its resolved value, and parsing that text reproduces the config.
//! Relative paths are resolved against the config file's directory.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::NoiseConfig;
use crate::error::{Error, Result};
use crate::grafting::GraftOptions;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `vocab_size = 0` means "take it from the vocabulary".
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub noise: NoiseConfig,
    pub graft: GraftOptions,
    pub vocab: Option<PathBuf>,
    pub mono_corpus: Option<PathBuf>,
    pub parallel_corpus: Option<PathBuf>,
    pub task_corpus: Option<PathBuf>,
    /// Use only the first this many task pairs (0 = all).
    pub task_limit: usize,
    pub eval_corpus: Option<PathBuf>,
    pub encoder_ckpt: Option<PathBuf>,
    pub init_ckpt: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Save a resumable checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub max_new_tokens: usize,
    /// Masked-LM steps used by `init-encoder` (0 = random encoder).
    pub mlm_steps: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                vocab_size: 0,
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            noise: NoiseConfig::default(),
            graft: GraftOptions::default(),
            vocab: None,
            mono_corpus: None,
            parallel_corpus: None,
            task_corpus: None,
            task_limit: 0,
            eval_corpus: None,
            encoder_ckpt: None,
            init_ckpt: None,
            out_dir: None,
            checkpoint_every: 0,
            max_new_tokens: 64,
            mlm_steps: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn path_opt(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Every key with its current value, in documentation order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (m, t, n, g) = (&self.model, &self.train, &self.noise, &self.graft);
        vec![
            ("n_encoder_layers", m.n_encoder_layers.to_string()),
            ("d_model", m.d_model.to_string()),
            ("n_heads", m.n_heads.to_string()),
            ("d_ff", m.d_ff.to_string()),
            ("vocab_size", m.vocab_size.to_string()),
            ("max_seq_len", m.max_seq_len.to_string()),
            ("insert_every_x", m.insert_every_x.to_string()),
            ("layer_norm_eps", m.layer_norm_eps.to_string()),
            ("peak_lr", t.peak_lr.to_string()),
            ("warmup_proportion", t.warmup_proportion.to_string()),
            ("warmup_mode", t.warmup_mode.to_string()),
            ("warmup_floor_lr", t.warmup_floor_lr.to_string()),
            ("epochs", t.epochs.to_string()),
            ("steps_per_epoch", t.steps_per_epoch.to_string()),
            ("global_batch", t.global_batch.to_string()),
            ("grad_accum_steps", t.grad_accum_steps.to_string()),
            ("grad_clip_norm", t.grad_clip_norm.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("tf_final_ratio", t.tf_final_ratio.to_string()),
            ("scheduled_sampling", t.scheduled_sampling.to_string()),
            ("sampling_alpha", t.sampling_alpha.to_string()),
            ("sampling_granularity", t.sampling_granularity.to_string()),
            ("use_dae", t.use_dae.to_string()),
            ("use_mt", t.use_mt.to_string()),
            ("freeze", t.freeze.join(",")),
            ("seed", t.seed.to_string()),
            ("mask_ratio", n.mask_ratio.to_string()),
            ("span_lambda", n.span_lambda.to_string()),
            ("noise_seed", n.seed.to_string()),
            ("use_weight_sharing", g.weight_sharing.to_string()),
            ("normal_layer_mode", g.normal_layer_mode.to_string()),
            ("tie_decoder", g.tie_decoder.to_string()),
            ("vocab", show_path(&self.vocab)),
            ("mono_corpus", show_path(&self.mono_corpus)),
            ("parallel_corpus", show_path(&self.parallel_corpus)),
            ("task_corpus", show_path(&self.task_corpus)),
            ("task_limit", self.task_limit.to_string()),
            ("eval_corpus", show_path(&self.eval_corpus)),
            ("encoder_ckpt", show_path(&self.encoder_ckpt)),
            ("init_ckpt", show_path(&self.init_ckpt)),
            ("out_dir", show_path(&self.out_dir)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("max_new_tokens", self.max_new_tokens.to_string()),
            ("mlm_steps", self.mlm_steps.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        let (m, t, n, g) = (&mut self.model, &mut self.train, &mut self.noise, &mut self.graft);
        match key {
            "n_encoder_layers" => m.n_encoder_layers = parse(key, v)?,
            "d_model" => m.d_model = parse(key, v)?,
            "n_heads" => m.n_heads = parse(key, v)?,
            "d_ff" => m.d_ff = parse(key, v)?,
            "vocab_size" => m.vocab_size = parse(key, v)?,
            "max_seq_len" => m.max_seq_len = parse(key, v)?,
            "insert_every_x" => m.insert_every_x = parse(key, v)?,
            "layer_norm_eps" => m.layer_norm_eps = parse(key, v)?,
            "peak_lr" => t.peak_lr = parse(key, v)?,
            "warmup_proportion" => t.warmup_proportion = parse(key, v)?,
            "warmup_mode" => t.warmup_mode = v.parse()?,
            "warmup_floor_lr" => t.warmup_floor_lr = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "steps_per_epoch" => t.steps_per_epoch = parse(key, v)?,
            "global_batch" => t.global_batch = parse(key, v)?,
            "grad_accum_steps" => t.grad_accum_steps = parse(key, v)?,
            "grad_clip_norm" => t.grad_clip_norm = parse(key, v)?,
            "adam_beta1" => t.adam_beta1 = parse(key, v)?,
            "adam_beta2" => t.adam_beta2 = parse(key, v)?,
            "adam_eps" => t.adam_eps = parse(key, v)?,
            "weight_decay" => t.weight_decay = parse(key, v)?,
            "tf_final_ratio" => t.tf_final_ratio = parse(key, v)?,
            "scheduled_sampling" => t.scheduled_sampling = parse(key, v)?,
            "sampling_alpha" => t.sampling_alpha = parse(key, v)?,
            "sampling_granularity" => t.sampling_granularity = v.parse()?,
            "use_dae" => t.use_dae = parse(key, v)?,
            "use_mt" => t.use_mt = parse(key, v)?,
            "freeze" => {
                t.freeze = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(String::from)
                    .collect()
            }
            "seed" => t.seed = parse(key, v)?,
            "mask_ratio" => n.mask_ratio = parse(key, v)?,
            "span_lambda" => n.span_lambda = parse(key, v)?,
            "noise_seed" => n.seed = parse(key, v)?,
            "use_weight_sharing" => g.weight_sharing = parse(key, v)?,
            "normal_layer_mode" => g.normal_layer_mode = v.parse()?,
            "tie_decoder" => g.tie_decoder = parse(key, v)?,
            "vocab" => self.vocab = path_opt(v),
            "mono_corpus" => self.mono_corpus = path_opt(v),
            "parallel_corpus" => self.parallel_corpus = path_opt(v),
            "task_corpus" => self.task_corpus = path_opt(v),
            "task_limit" => self.task_limit = parse(key, v)?,
            "eval_corpus" => self.eval_corpus = path_opt(v),
            "encoder_ckpt" => self.encoder_ckpt = path_opt(v),
            "init_ckpt" => self.init_ckpt = path_opt(v),
            "out_dir" => self.out_dir = path_opt(v),
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "max_new_tokens" => self.max_new_tokens = parse(key, v)?,
            "mlm_steps" => self.mlm_steps = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: key {k:?} given twice", i + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_prefix(e))))?;
        }
        Ok(cfg)
    }

    /// Reads a config file; relative paths become relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.vocab,
            &mut cfg.mono_corpus,
            &mut cfg.parallel_corpus,
            &mut cfg.task_corpus,
            &mut cfg.eval_corpus,
            &mut cfg.encoder_ckpt,
            &mut cfg.init_ckpt,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Writes the fully resolved config into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_text())?;
        Ok(path)
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
