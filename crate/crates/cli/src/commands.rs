use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use swcm_core::checkpoint::{self, Checkpoint};
use swcm_core::config::RunConfig;
use swcm_core::data::{
    frame_truncated, gen_synthetic_corpus, read_mono_tsv, read_parallel_tsv, write_mono_tsv, write_parallel_tsv, SyntheticSpec, Vocab,
};
use swcm_core::eval::{evaluate_corpus, EvalExample};
use swcm_core::grafting::{assemble_model, GraftOptions};
use swcm_core::model::{EncoderInit, ModelConfig, SharedWeightModel};
use swcm_core::train::{
    finetune, pretrain_mlm, train_until, BatchSource, FinetuneData, MlmData, PretrainData, StepRecord, TrainConfig, TrainState,
};
use swcm_core::{Error, Result};

use crate::Command;

pub const SEED_ENV: &str = "SWCM_SEED";
const CHECKPOINT_FILE: &str = "checkpoint.swcm";
const MODEL_FILE: &str = "model.swcm";
const LOSS_FILE: &str = "loss.tsv";
const GENERATE_BATCH: usize = 16;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenCorpus {
            out_dir,
            languages,
            sizes,
            parallel,
            heldout,
            seed,
        } => gen_corpus(&out_dir, &languages, &sizes, parallel, heldout, seed_or(seed)?),
        Command::InitEncoder { config, out } => init_encoder(&config, &out),
        Command::Graft {
            encoder_ckpt,
            x,
            out,
            seed,
            normal_layer_mode,
            no_weight_sharing,
            tie_decoder,
        } => {
            let opts = GraftOptions {
                weight_sharing: !no_weight_sharing,
                normal_layer_mode,
                tie_decoder,
            };
            graft(&encoder_ckpt, x, &out, seed_or(seed)?, opts)
        }
        Command::Pretrain {
            config,
            resume,
            stop_at_step,
        } => train_command(&config, Stage::Pretrain, resume, stop_at_step),
        Command::Finetune {
            config,
            resume,
            stop_at_step,
        } => train_command(&config, Stage::Finetune, resume, stop_at_step),
        Command::Evaluate {
            ckpt,
            corpus,
            out,
            max_new_tokens,
            batch,
        } => evaluate(&ckpt, &corpus, &out, max_new_tokens, batch),
        Command::Generate {
            ckpt,
            input,
            out,
            lang,
            src_lang,
            max_new_tokens,
        } => generate(&ckpt, &input, &out, &lang, src_lang.as_deref(), max_new_tokens),
        Command::SweepX { config, x_list, sizes } => sweep_x(&config, &x_list, &sizes),
        Command::InspectCkpt { ckpt } => inspect(&ckpt),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| Error::Config(format!("{SEED_ENV}={v:?}: {e}"))),
        Err(_) => Ok(None),
    }
}

fn seed_or(flag: u64) -> Result<u64> {
    Ok(env_seed()?.unwrap_or(flag))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = env_seed()? {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("config key {key} is required")))
}

fn load_ckpt(path: &Path) -> Result<Checkpoint> {
    checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Checkpoint(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn ckpt_vocab(ckpt: &Checkpoint, path: &Path) -> Result<Vocab> {
    ckpt.vocab
        .clone()
        .ok_or_else(|| Error::Checkpoint(format!("{} carries no vocabulary", path.display())))
}

fn sha256_hex(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{what}: cannot parse {x:?}")))
        })
        .collect()
}

fn gen_corpus(out: &Path, languages: &str, sizes: &str, parallel: usize, heldout: usize, seed: u64) -> Result<()> {
    let codes: Vec<String> = parse_list(languages, "languages")?;
    let sizes: Vec<usize> = parse_list(sizes, "sizes")?;
    if codes.len() != sizes.len() {
        return Err(Error::Config(format!("{} languages but {} sizes", codes.len(), sizes.len())));
    }
    let pairs: Vec<(&str, usize)> = codes.iter().map(String::as_str).zip(sizes).collect();
    let mut spec = SyntheticSpec::new(&pairs, parallel, seed);
    spec.heldout = heldout;
    let corpus = gen_synthetic_corpus(&spec)?;
    fs::create_dir_all(out)?;
    write_mono_tsv(&out.join("mono.tsv"), &corpus.mono)?;
    write_parallel_tsv(&out.join("parallel.tsv"), &corpus.parallel)?;
    write_mono_tsv(&out.join("heldout_mono.tsv"), &corpus.heldout_mono)?;
    write_parallel_tsv(&out.join("heldout_parallel.tsv"), &corpus.heldout_parallel)?;
    let vocab = corpus.vocab()?;
    vocab.save(&out.join("vocab.json"))?;
    println!(
        "wrote {} monolingual and {} parallel sentences ({} held out), vocabulary of {} tokens, to {}",
        corpus.mono.len(),
        corpus.parallel.len(),
        corpus.heldout_mono.len() + corpus.heldout_parallel.len(),
        vocab.len(),
        out.display()
    );
    Ok(())
}

/// The config's model shape with `vocab_size` filled in from `vocab`.
fn model_config_for(cfg: &RunConfig, vocab: &Vocab) -> Result<ModelConfig> {
    let mut m = cfg.model.clone();
    if m.vocab_size == 0 {
        m.vocab_size = vocab.len();
    } else if m.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "vocab_size {} does not match the vocabulary ({} tokens)",
            m.vocab_size,
            vocab.len()
        )));
    }
    Ok(m)
}

fn init_encoder(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let vocab = Vocab::load(require(&cfg.vocab, "vocab")?)?;
    let mc = model_config_for(&cfg, &vocab)?;
    let mut model = SharedWeightModel::encoder_only(mc.clone(), cfg.train.seed)?;
    if cfg.mlm_steps > 0 {
        let mono = read_mono_tsv(require(&cfg.mono_corpus, "mono_corpus")?)?;
        let data = MlmData::new(&vocab, &mono, mc.max_seq_len)?;
        let tc = TrainConfig {
            epochs: 1,
            steps_per_epoch: cfg.mlm_steps as usize,
            ..cfg.train.clone()
        };
        let log = pretrain_mlm(&mut model, &data, &tc)?;
        if let (Some(first), Some(last)) = (log.first(), log.last()) {
            println!("masked-LM loss {:.4} -> {:.4} over {} steps", first.loss, last.loss, log.len());
        }
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    checkpoint::save(out, &model, Some(&vocab), None)?;
    let resolved = RunConfig { model: mc, ..cfg };
    fs::write(out.with_extension("config.txt"), resolved.to_text())?;
    println!("encoder: {} layers, {} parameters -> {}", model.config.n_encoder_layers, model.num_params(), out.display());
    Ok(())
}

fn print_model_summary(model: &SharedWeightModel) {
    let l = &model.layout;
    println!(
        "{} decoder layers ({} custom, {} normal) over {} encoder layers",
        l.len(),
        l.custom_count(),
        l.normal_count(),
        model.config.n_encoder_layers
    );
    println!("layout: {}", l.summary());
    println!(
        "parameters: total {}, encoder {}, decoder {}",
        model.num_params(),
        model.encoder_param_count(),
        model.decoder_param_count()
    );
}

fn graft(encoder_ckpt: &Path, x: usize, out: &Path, seed: u64, opts: GraftOptions) -> Result<()> {
    let ckpt = load_ckpt(encoder_ckpt)?;
    let config = ModelConfig {
        insert_every_x: x,
        ..ckpt.model.config.clone()
    };
    let model = assemble_model(config, EncoderInit::Pretrained(&ckpt.model), opts, seed)?;
    checkpoint::save(out, &model, ckpt.vocab.as_ref(), None)?;
    print_model_summary(&model);
    println!("sha256: {}", sha256_hex(out)?);
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    Pretrain,
    Finetune,
}

/// Vocabulary from the config if given, else from the checkpoint.
fn resolve_vocab(cfg: &RunConfig, ckpt: Option<&Checkpoint>) -> Result<Vocab> {
    match (&cfg.vocab, ckpt.and_then(|c| c.vocab.clone())) {
        (Some(p), _) => Vocab::load(p),
        (None, Some(v)) => Ok(v),
        (None, None) => Err(Error::Config("config key vocab is required".into())),
    }
}

/// Fresh starting model: `init_ckpt` as is, else `encoder_ckpt` grafted
/// with the config's options, else a randomly initialized model.
fn initial_model(cfg: &RunConfig) -> Result<(SharedWeightModel, Vocab)> {
    if let Some(p) = &cfg.init_ckpt {
        let ckpt = load_ckpt(p)?;
        let vocab = resolve_vocab(cfg, Some(&ckpt))?;
        if ckpt.model.is_encoder_only() {
            return Err(Error::Config(format!("{} is an encoder-only checkpoint; use encoder_ckpt", p.display())));
        }
        return Ok((ckpt.model, vocab));
    }
    if let Some(p) = &cfg.encoder_ckpt {
        let ckpt = load_ckpt(p)?;
        let vocab = resolve_vocab(cfg, Some(&ckpt))?;
        let mc = ModelConfig {
            insert_every_x: cfg.model.insert_every_x,
            ..ckpt.model.config.clone()
        };
        let model = assemble_model(mc, EncoderInit::Pretrained(&ckpt.model), cfg.graft.clone(), cfg.train.seed)?;
        return Ok((model, vocab));
    }
    let vocab = resolve_vocab(cfg, None)?;
    let mc = model_config_for(cfg, &vocab)?;
    let model = assemble_model(mc, EncoderInit::Random, cfg.graft.clone(), cfg.train.seed)?;
    Ok((model, vocab))
}

fn task_pairs(cfg: &RunConfig) -> Result<Vec<swcm_core::data::ParallelExample>> {
    let mut pairs = read_parallel_tsv(require(&cfg.task_corpus, "task_corpus")?)?;
    if cfg.task_limit > 0 {
        if cfg.task_limit > pairs.len() {
            return Err(Error::Config(format!(
                "task_limit {} exceeds the {} pairs in the task corpus",
                cfg.task_limit,
                pairs.len()
            )));
        }
        pairs.truncate(cfg.task_limit);
    }
    Ok(pairs)
}

fn data_source(cfg: &RunConfig, stage: Stage, vocab: &Vocab, max_len: usize) -> Result<Box<dyn BatchSource>> {
    Ok(match stage {
        Stage::Pretrain => {
            let mono = match (&cfg.mono_corpus, cfg.train.use_dae) {
                (Some(p), true) => read_mono_tsv(p)?,
                (None, true) => return Err(Error::Config("config key mono_corpus is required when use_dae = true".into())),
                (_, false) => Vec::new(),
            };
            let parallel = match (&cfg.parallel_corpus, cfg.train.use_mt) {
                (Some(p), true) => read_parallel_tsv(p)?,
                (None, true) => return Err(Error::Config("config key parallel_corpus is required when use_mt = true".into())),
                (_, false) => Vec::new(),
            };
            Box::new(PretrainData::new(vocab, &mono, &parallel, &cfg.train, &cfg.noise, max_len)?)
        }
        Stage::Finetune => Box::new(FinetuneData::new(vocab, &task_pairs(cfg)?, max_len)?),
    })
}

/// Keeps only log lines for steps before `step` (a resumed run rewrites
/// anything logged after its checkpoint).
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    let mut kept = String::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        if StepRecord::parse(line)?.step < step {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept)?;
    Ok(())
}

fn train_command(config: &Path, stage: Stage, resume: bool, stop_at: Option<u64>) -> Result<()> {
    let cfg = load_config(config)?;
    cfg.train.validate()?;
    let out_dir = require(&cfg.out_dir, "out_dir")?.to_path_buf();
    fs::create_dir_all(&out_dir)?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOSS_FILE);

    let (mut model, vocab, mut state) = if resume && ckpt_path.exists() {
        let ckpt = load_ckpt(&ckpt_path)?;
        let vocab = ckpt_vocab(&ckpt, &ckpt_path)?;
        let state = ckpt
            .train_state
            .ok_or_else(|| Error::Checkpoint(format!("{} has no training state", ckpt_path.display())))?;
        truncate_log(&log_path, state.step)?;
        println!("resuming from step {}", state.step);
        (ckpt.model, vocab, state)
    } else {
        let (model, vocab) = initial_model(&cfg)?;
        let state = TrainState::new(&model);
        fs::write(&log_path, "")?;
        (model, vocab, state)
    };
    if model.config.vocab_size != vocab.len() {
        return Err(Error::Config(format!(
            "model expects {} tokens, vocabulary has {}",
            model.config.vocab_size,
            vocab.len()
        )));
    }
    RunConfig {
        model: model.config.clone(),
        ..cfg.clone()
    }
    .write_resolved(&out_dir)?;

    let data = data_source(&cfg, stage, &vocab, model.config.max_seq_len)?;
    let total = cfg.train.total_steps();
    let until = stop_at.map_or(total, |s| s.min(total));
    let mut log = BufWriter::new(fs::OpenOptions::new().append(true).open(&log_path)?);
    let every = cfg.checkpoint_every;
    let mut last: Option<StepRecord> = None;
    train_until(&mut model, data.as_ref(), &cfg.train, &mut state, until, &mut |m, st, rec| {
        writeln!(log, "{}", rec.to_tsv())?;
        log.flush()?;
        if every > 0 && st.step % every == 0 && st.step < until {
            checkpoint::save(&ckpt_path, m, Some(&vocab), Some(st))?;
        }
        last = Some(rec.clone());
        Ok(())
    })?;
    drop(log);
    checkpoint::save(&ckpt_path, &model, Some(&vocab), Some(&state))?;
    if state.step == total {
        checkpoint::save(&out_dir.join(MODEL_FILE), &model, Some(&vocab), None)?;
    }
    match last {
        Some(r) => println!("step {}/{total}: loss {:.4}, lr {:.3e}", state.step, r.loss, r.lr),
        None => println!("nothing to do: already at step {}/{total}", state.step),
    }
    Ok(())
}

fn evaluate(ckpt_path: &Path, corpus: &Path, out: &Path, max_new: usize, batch: usize) -> Result<()> {
    let ckpt = load_ckpt(ckpt_path)?;
    let vocab = ckpt_vocab(&ckpt, ckpt_path)?;
    let pairs = read_parallel_tsv(corpus)?;
    let examples = EvalExample::from_parallel(&vocab, &pairs, ckpt.model.config.max_seq_len)?;
    let report = evaluate_corpus(&ckpt.model, &examples, max_new, batch)?;
    report.write_tsv(out)?;
    let m = report.mean;
    println!("ROUGE-L over {} examples: F={:.4} P={:.4} R={:.4}", report.records.len(), m.f, m.p, m.r);
    Ok(())
}

fn generate(ckpt_path: &Path, input: &Path, out: &Path, lang: &str, src_lang: Option<&str>, max_new: usize) -> Result<()> {
    let ckpt = load_ckpt(ckpt_path)?;
    let vocab = ckpt_vocab(&ckpt, ckpt_path)?;
    let tgt = vocab.language(lang)?;
    let src = vocab.language(src_lang.unwrap_or(lang))?;
    let text = fs::read_to_string(input)?;
    let max_len = ckpt.model.config.max_seq_len;
    let srcs = text
        .lines()
        .map(|l| frame_truncated(&vocab.tokenize(l), &src, max_len))
        .collect::<Result<Vec<_>>>()?;
    let mut w = BufWriter::new(fs::File::create(out)?);
    for chunk in srcs.chunks(GENERATE_BATCH) {
        let langs = vec![tgt.token(); chunk.len()];
        for g in ckpt.model.generate_greedy_batch(chunk, &langs, max_new)? {
            writeln!(w, "{}", vocab.detokenize(&g))?;
        }
    }
    w.flush()?;
    println!("generated {} lines -> {}", srcs.len(), out.display());
    Ok(())
}

fn sweep_x(config: &Path, x_list: &[usize], sizes: &[usize]) -> Result<()> {
    let cfg = load_config(config)?;
    cfg.train.validate()?;
    let out_dir = require(&cfg.out_dir, "out_dir")?.to_path_buf();
    let enc_path = require(&cfg.encoder_ckpt, "encoder_ckpt")?;
    let enc = load_ckpt(enc_path)?;
    let vocab = resolve_vocab(&cfg, Some(&enc))?;
    let eval_pairs = read_parallel_tsv(require(&cfg.eval_corpus, "eval_corpus")?)?;
    fs::create_dir_all(&out_dir)?;
    let mut grid = String::from("x\tsize\tf\tp\tr\n");
    for &x in x_list {
        for &size in sizes {
            let cell = RunConfig {
                model: ModelConfig {
                    insert_every_x: x,
                    ..enc.model.config.clone()
                },
                task_limit: size,
                encoder_ckpt: Some(enc_path.to_path_buf()),
                init_ckpt: None,
                out_dir: Some(out_dir.join(format!("x{x}_n{size}"))),
                ..cfg.clone()
            };
            let dir = require(&cell.out_dir, "out_dir")?;
            cell.write_resolved(dir)?;
            let (mut model, _) = initial_model(&cell)?;
            let data = FinetuneData::new(&vocab, &task_pairs(&cell)?, model.config.max_seq_len)?;
            let log = finetune(&mut model, &data, &cell.train)?;
            fs::write(dir.join(LOSS_FILE), log.iter().map(|r| r.to_tsv() + "\n").collect::<String>())?;
            let examples = EvalExample::from_parallel(&vocab, &eval_pairs, model.config.max_seq_len)?;
            let report = evaluate_corpus(&model, &examples, cell.max_new_tokens, GENERATE_BATCH)?;
            report.write_tsv(&dir.join("rouge.tsv"))?;
            let m = report.mean;
            println!("x={x} size={size}: F={:.4}", m.f);
            grid.push_str(&format!("{x}\t{size}\t{}\t{}\t{}\n", m.f, m.p, m.r));
        }
    }
    let path = out_dir.join("grid.tsv");
    fs::write(&path, grid)?;
    println!("grid -> {}", path.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let m = checkpoint::read_manifest(path).map_err(|e| match e {
        Error::Io(io) => Error::Checkpoint(format!("{}: {io}", path.display())),
        other => other,
    })?;
    let ckpt = load_ckpt(path)?;
    let c = &m.model_config;
    println!("format version {}", m.format_version);
    println!(
        "model: n={} d={} heads={} ff={} vocab={} max_len={} x={}",
        c.n_encoder_layers, c.d_model, c.n_heads, c.d_ff, c.vocab_size, c.max_seq_len, c.insert_every_x
    );
    println!(
        "graft: weight_sharing={} normal_layer_mode={} tie_decoder={}",
        m.graft.weight_sharing, m.graft.normal_layer_mode, m.graft.tie_decoder
    );
    if ckpt.model.is_encoder_only() {
        println!("encoder-only, {} parameters", ckpt.model.num_params());
    } else {
        print_model_summary(&ckpt.model);
    }
    println!("tensors: {}", m.tensors.len());
    for (alias, target) in &m.tying_map {
        println!("tied: {alias} -> {target}");
    }
    if let Some(v) = &m.vocab {
        println!("vocabulary: {} tokens, languages {}", v.len(), v.languages().iter().map(|l| l.code()).collect::<Vec<_>>().join(","));
    }
    if let Some(t) = &m.train {
        println!("training state at step {}", t.step);
    }
    Ok(())
}
