#![allow(dead_code)]

pub mod sampling_oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swcm_core::data::{frame_sequence, ParallelExample, Vocab};
use swcm_core::grafting::{assemble_model, GraftOptions};
use swcm_core::model::{EncoderInit, ModelConfig, ParamGroup, SharedWeightModel, TokenBatch, TokenId};
use swcm_core::{Graph, ParamId};

pub fn config(n: usize, d: usize, h: usize, ff: usize, vocab: usize, max_len: usize, x: usize) -> ModelConfig {
    ModelConfig {
        n_encoder_layers: n,
        d_model: d,
        n_heads: h,
        d_ff: ff,
        vocab_size: vocab,
        max_seq_len: max_len,
        insert_every_x: x,
        layer_norm_eps: 1e-5,
    }
}

pub fn grafted(cfg: ModelConfig, seed: u64) -> SharedWeightModel {
    assemble_model(cfg, EncoderInit::Random, GraftOptions::default(), seed).unwrap()
}

/// Parameter values of a group, in visiting order.
pub fn values(model: &SharedWeightModel, group: &impl ParamGroup) -> Vec<Vec<f64>> {
    group
        .ids()
        .into_iter()
        .map(|id| model.store.get(id).data().to_vec())
        .collect()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// Framed random sequences over the symbol range of `vocab_size`.
pub fn random_framed(rng: &mut ChaCha8Rng, n: usize, len: std::ops::RangeInclusive<usize>, lang: TokenId, vocab_size: usize) -> Vec<Vec<TokenId>> {
    let first_symbol = lang + 1;
    (0..n)
        .map(|_| {
            let k = rng.random_range(len.clone());
            let mut s = vec![swcm_core::data::special::BOS, lang];
            s.extend((0..k).map(|_| rng.random_range(first_symbol..vocab_size as TokenId)));
            s.push(swcm_core::data::special::EOS);
            s
        })
        .collect()
}

pub fn loss_value(model: &SharedWeightModel, src: &TokenBatch, tgt: &TokenBatch) -> f64 {
    let mut g = Graph::inference(&model.store);
    let l = model.seq2seq_loss(&mut g, src, tgt).unwrap();
    g.value(l).data()[0]
}

#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst: String,
    pub checked: usize,
}

/// Denominator floor for the relative error, so gradients that are zero
/// up to rounding are compared by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Central finite differences for every scalar of every stored parameter.
pub fn grad_check(model: &mut SharedWeightModel, src: &TokenBatch, tgt: &TokenBatch, h: f64) -> GradCheck {
    let analytic = {
        let mut g = Graph::new(&model.store);
        let l = model.seq2seq_loss(&mut g, src, tgt).unwrap();
        g.backward(l).unwrap()
    };
    let ids: Vec<ParamId> = model.store.ids().collect();
    let mut out = GradCheck {
        max_rel_err: 0.0,
        worst: String::new(),
        checked: 0,
    };
    for id in ids {
        let n = model.store.get(id).numel();
        let grad = analytic.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for k in 0..n {
            let orig = model.store.get(id).data()[k];
            model.store.get_mut(id).data_mut()[k] = orig + h;
            let plus = loss_value(model, src, tgt);
            model.store.get_mut(id).data_mut()[k] = orig - h;
            let minus = loss_value(model, src, tgt);
            model.store.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let e = rel_err(grad[k], numeric);
            if e > out.max_rel_err {
                out.max_rel_err = e;
                out.worst = format!("{}[{k}] analytic {:e} numeric {:e}", model.store.name(id), grad[k], numeric);
            }
            out.checked += 1;
        }
    }
    out
}

/// Single-language vocabulary over lowercase letters.
pub fn letter_vocab() -> Vocab {
    Vocab::new(&["en"], 'a'..='p').unwrap()
}

/// Pairs whose target is the source itself.
pub fn copy_corpus(n: usize, seed: u64) -> Vec<ParallelExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let letters: Vec<char> = ('a'..='p').collect();
    (0..n)
        .map(|_| {
            let k = rng.random_range(3..=8);
            let s: String = (0..k).map(|_| letters[rng.random_range(0..letters.len())]).collect();
            ParallelExample {
                src_lang: "en".into(),
                tgt_lang: "en".into(),
                src: s.clone(),
                tgt: s,
            }
        })
        .collect()
}

pub fn framed_text(vocab: &Vocab, lang: &str, text: &str) -> Vec<TokenId> {
    frame_sequence(&vocab.tokenize(text), &vocab.language(lang).unwrap())
}
