use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::special::{BOS, EOS, FIRST_LANGUAGE, PAD, SYMBOLS, UNK};
use crate::error::{Error, Result};
use crate::model::TokenId;

/// Character-level vocabulary: reserved tokens, then one contiguous block
/// of language tokens, then single-character symbols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    languages: Vec<String>,
    symbols: Vec<char>,
    chars: HashMap<char, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    languages: Vec<String>,
    symbols: String,
}

impl TryFrom<VocabFile> for Vocab {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        Vocab::new(&f.languages, f.symbols.chars())
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        Self {
            languages: v.languages,
            symbols: v.symbols.into_iter().collect(),
        }
    }
}

/// A registered language: its code and its token id.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LanguageId {
    code: String,
    token: TokenId,
}

impl LanguageId {
    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn token(&self) -> TokenId {
        self.token
    }
}

impl Vocab {
    pub fn new<S: AsRef<str>>(languages: &[S], symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut langs: Vec<String> = Vec::with_capacity(languages.len());
        for code in languages {
            let code = code.as_ref();
            if code.is_empty() || code.contains(['<', '>', '\t', '\n']) {
                return Err(Error::Config(format!("invalid language code {code:?}")));
            }
            if langs.iter().any(|l| l == code) {
                return Err(Error::Config(format!("language {code} registered twice")));
            }
            langs.push(code.to_string());
        }
        let base = FIRST_LANGUAGE as usize + langs.len();
        let mut syms = Vec::new();
        let mut chars = HashMap::new();
        for c in symbols {
            if chars.contains_key(&c) {
                return Err(Error::Config(format!("symbol {c:?} registered twice")));
            }
            chars.insert(c, (base + syms.len()) as TokenId);
            syms.push(c);
        }
        Ok(Self {
            languages: langs,
            symbols: syms,
            chars,
        })
    }

    /// Builds a vocabulary whose symbols are every distinct character of
    /// `texts`, in code-point order.
    pub fn from_texts<'a, S: AsRef<str>>(languages: &[S], texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let set: BTreeSet<char> = texts.into_iter().flat_map(str::chars).collect();
        Self::new(languages, set)
    }

    pub fn len(&self) -> usize {
        FIRST_LANGUAGE as usize + self.languages.len() + self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Printable form of a token id, `None` when out of range.
    pub fn token(&self, id: TokenId) -> Option<String> {
        let i = id as usize;
        let first_symbol = FIRST_LANGUAGE as usize + self.languages.len();
        if i < SYMBOLS.len() {
            Some(SYMBOLS[i].to_string())
        } else if i < first_symbol {
            Some(format!("<{}>", self.languages[i - FIRST_LANGUAGE as usize]))
        } else {
            self.symbols.get(i - first_symbol).map(|c| c.to_string())
        }
    }

    pub fn language(&self, code: &str) -> Result<LanguageId> {
        self.languages
            .iter()
            .position(|l| l == code)
            .map(|i| LanguageId {
                code: code.to_string(),
                token: FIRST_LANGUAGE + i as TokenId,
            })
            .ok_or_else(|| Error::Config(format!("language {code} is not registered")))
    }

    pub fn languages(&self) -> Vec<LanguageId> {
        self.languages
            .iter()
            .enumerate()
            .map(|(i, code)| LanguageId {
                code: code.clone(),
                token: FIRST_LANGUAGE + i as TokenId,
            })
            .collect()
    }

    pub fn language_of_token(&self, id: TokenId) -> Option<LanguageId> {
        let i = id.checked_sub(FIRST_LANGUAGE)? as usize;
        self.languages.get(i).map(|code| LanguageId {
            code: code.clone(),
            token: id,
        })
    }

    pub fn is_language_token(&self, id: TokenId) -> bool {
        self.language_of_token(id).is_some()
    }

    /// Writes the vocabulary as JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// One token per character; unknown characters become `<unk>`.
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        text.chars()
            .map(|c| self.chars.get(&c).copied().unwrap_or(UNK))
            .collect()
    }

    /// Inverse of [`Vocab::tokenize`]. Reserved and language tokens are
    /// rendered by name; padding is dropped.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id == PAD {
                continue;
            }
            match self.token(id) {
                Some(t) => out.push_str(&t),
                None => out.push_str(SYMBOLS[UNK as usize]),
            }
        }
        out
    }
}

/// `<s> lang ids… </s>`.
pub fn frame_sequence(ids: &[TokenId], lang: &LanguageId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(ids.len() + 3);
    out.push(BOS);
    out.push(lang.token);
    out.extend_from_slice(ids);
    out.push(EOS);
    out
}

/// Frames `ids`, dropping body tokens so the result fits in `max_len`.
/// The end token is always kept.
pub fn frame_truncated(ids: &[TokenId], lang: &LanguageId, max_len: usize) -> Result<Vec<TokenId>> {
    if max_len < 3 {
        return Err(Error::Config(format!("max_len {max_len} cannot hold a framed sequence")));
    }
    let keep = ids.len().min(max_len - 3);
    Ok(frame_sequence(&ids[..keep], lang))
}

/// Splits a framed sequence into its language token and body. Anything
/// from the first `</s>` on is dropped; a missing end token is tolerated
/// because generation can stop on its length budget.
pub fn unframe(framed: &[TokenId]) -> Result<(TokenId, &[TokenId])> {
    if framed.len() < 2 || framed[0] != BOS || framed[1] < FIRST_LANGUAGE {
        return Err(Error::Shape(format!(
            "not a framed sequence: {:?}",
            &framed[..framed.len().min(4)]
        )));
    }
    let body = &framed[2..];
    let end = body.iter().position(|&t| t == EOS).unwrap_or(body.len());
    Ok((framed[1], &body[..end]))
}
