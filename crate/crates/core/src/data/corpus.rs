//! Tab-separated corpus files, one example per line.
//!
//! Monolingual: `lang<TAB>text`. Parallel: `src_lang<TAB>tgt_lang<TAB>src<TAB>tgt`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonoExample {
    pub lang: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelExample {
    pub src_lang: String,
    pub tgt_lang: String,
    pub src: String,
    pub tgt: String,
}

fn fields<'a>(path: &Path, n: usize, line_no: usize, line: &'a str) -> Result<Vec<&'a str>> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != n {
        return Err(Error::Parse(format!(
            "{}:{}: expected {n} tab-separated fields, found {}",
            path.display(),
            line_no + 1,
            f.len()
        )));
    }
    Ok(f)
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
}

fn check_field(s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::Parse(format!("field {s:?} contains a tab or newline")));
    }
    Ok(())
}

pub fn read_mono_tsv(path: &Path) -> Result<Vec<MonoExample>> {
    let text = fs::read_to_string(path)?;
    lines(&text)
        .map(|(i, l)| {
            let f = fields(path, 2, i, l)?;
            Ok(MonoExample {
                lang: f[0].to_string(),
                text: f[1].to_string(),
            })
        })
        .collect()
}

pub fn read_parallel_tsv(path: &Path) -> Result<Vec<ParallelExample>> {
    let text = fs::read_to_string(path)?;
    lines(&text)
        .map(|(i, l)| {
            let f = fields(path, 4, i, l)?;
            Ok(ParallelExample {
                src_lang: f[0].to_string(),
                tgt_lang: f[1].to_string(),
                src: f[2].to_string(),
                tgt: f[3].to_string(),
            })
        })
        .collect()
}

pub fn write_mono_tsv(path: &Path, examples: &[MonoExample]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in examples {
        check_field(&e.lang)?;
        check_field(&e.text)?;
        writeln!(w, "{}\t{}", e.lang, e.text)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_parallel_tsv(path: &Path, examples: &[ParallelExample]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in examples {
        for s in [&e.src_lang, &e.tgt_lang, &e.src, &e.tgt] {
            check_field(s)?;
        }
        writeln!(w, "{}\t{}\t{}\t{}", e.src_lang, e.tgt_lang, e.src, e.tgt)?;
    }
    w.flush()?;
    Ok(())
}
