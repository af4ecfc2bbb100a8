//! ROUGE-L scoring and corpus evaluation.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{frame_sequence, unframe, ParallelExample, Vocab};
use crate::error::{Error, Result};
use crate::model::{SharedWeightModel, TokenId};

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) memory.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RougeL {
    pub f: f64,
    pub p: f64,
    pub r: f64,
}

/// ROUGE-L of `candidate` against `reference`. `beta` weights recall
/// (`beta = 1` is the plain harmonic mean).
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T], beta: f64) -> Result<RougeL> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("beta {beta} must be positive")));
    }
    if candidate.is_empty() || reference.is_empty() {
        return Ok(RougeL::default());
    }
    let lcs = lcs_length(candidate, reference) as f64;
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = beta * beta;
    let denom = r + b2 * p;
    let f = if denom > 0.0 { (1.0 + b2) * p * r / denom } else { 0.0 };
    Ok(RougeL { f, p, r })
}

/// One source with its reference body and the language to generate in.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalExample {
    pub id: String,
    /// Framed source sequence.
    pub src: Vec<TokenId>,
    /// Unframed reference tokens.
    pub reference: Vec<TokenId>,
    pub lang: TokenId,
}

impl EvalExample {
    /// Converts parallel-corpus lines; ids are line indices.
    pub fn from_parallel(vocab: &Vocab, pairs: &[ParallelExample], max_seq_len: usize) -> Result<Vec<Self>> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let sl = vocab.language(&p.src_lang)?;
                let tl = vocab.language(&p.tgt_lang)?;
                let mut body = vocab.tokenize(&p.src);
                body.truncate(max_seq_len.saturating_sub(3));
                Ok(Self {
                    id: i.to_string(),
                    src: frame_sequence(&body, &sl),
                    reference: vocab.tokenize(&p.tgt),
                    lang: tl.token(),
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub candidate: Vec<TokenId>,
    pub score: RougeL,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mean: RougeL,
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    /// Builds a report, averaging F/P/R over the records.
    pub fn from_records(records: Vec<EvalRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyEvaluation);
        }
        let n = records.len() as f64;
        let sum = records.iter().fold(RougeL::default(), |acc, r| RougeL {
            f: acc.f + r.score.f,
            p: acc.p + r.score.p,
            r: acc.r + r.score.r,
        });
        Ok(Self {
            mean: RougeL {
                f: sum.f / n,
                p: sum.p / n,
                r: sum.r / n,
            },
            records,
        })
    }

    /// Exact-match rate of candidates against the given references.
    pub fn exact_match(&self, examples: &[EvalExample]) -> f64 {
        let hits = self
            .records
            .iter()
            .zip(examples)
            .filter(|(r, e)| r.candidate == e.reference)
            .count();
        hits as f64 / self.records.len().max(1) as f64
    }

    /// `id<TAB>f<TAB>p<TAB>r` per example, then `mean<TAB>f<TAB>p<TAB>r`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(s, "{}\t{:.17e}\t{:.17e}\t{:.17e}", r.id, r.score.f, r.score.p, r.score.r);
        }
        let m = &self.mean;
        let _ = writeln!(s, "mean\t{:.17e}\t{:.17e}\t{:.17e}", m.f, m.p, m.r);
        s
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// Greedy-decodes every example (in chunks of `batch`) and scores the
/// generated body against the reference with ROUGE-L (β = 1).
pub fn evaluate_corpus(model: &SharedWeightModel, examples: &[EvalExample], max_new: usize, batch: usize) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut records = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch.max(1)) {
        let srcs: Vec<_> = chunk.iter().map(|e| e.src.clone()).collect();
        let langs: Vec<_> = chunk.iter().map(|e| e.lang).collect();
        let outs = model.generate_greedy_batch(&srcs, &langs, max_new)?;
        for (e, out) in chunk.iter().zip(outs) {
            let (_, body) = unframe(&out)?;
            records.push(EvalRecord {
                id: e.id.clone(),
                score: rouge_l(body, &e.reference, 1.0)?,
                candidate: body.to_vec(),
            });
        }
    }
    EvalReport::from_records(records)
}
