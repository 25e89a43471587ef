//! Vocabularies, token sequences and the two built-in tokenizers.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Surface string used for the end-of-sequence token when a vocabulary is
/// built from a corpus.
pub const DEFAULT_EOS: &str = "<eos>";

/// Ordered, duplicate-free token list with a designated end-of-sequence token.
///
/// Token order is part of the model: the inverse-transform sampler walks the
/// cumulative distribution in this order, so it must never change once a
/// model has been trained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    eos: TokenId,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos: TokenId) -> Result<Self> {
        if eos >= tokens.len() {
            return Err(Error::domain(format!(
                "eos index {eos} out of range for {} tokens",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::domain(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, eos, index })
    }

    /// Builds a vocabulary from tokenized text: distinct tokens sorted by
    /// their surface string, followed by [`DEFAULT_EOS`].
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let distinct: BTreeSet<&str> = tokens.into_iter().collect();
        if distinct.contains(DEFAULT_EOS) {
            return Err(Error::domain(format!(
                "corpus contains the reserved token {DEFAULT_EOS}"
            )));
        }
        let mut list: Vec<String> = distinct.into_iter().map(str::to_owned).collect();
        list.push(DEFAULT_EOS.to_owned());
        let eos = list.len() - 1;
        Self::new(list, eos)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn check(&self, id: TokenId) -> Result<()> {
        if id < self.tokens.len() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "token index {id} out of range for vocabulary of size {}",
                self.tokens.len()
            )))
        }
    }

    /// Writes the line-delimited format: `eos <index>` followed by one
    /// escaped token per line.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "eos {}", self.eos)?;
        for t in &self.tokens {
            writeln!(w, "{}", escape_token(t))?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("empty vocabulary file"))??;
        let eos = parse_eos_header(&header)?;
        let mut tokens = Vec::new();
        for line in lines {
            tokens.push(unescape_token(&line?)?);
        }
        Self::new(tokens, eos).map_err(|e| Error::format(e.to_string()))
    }
}

fn parse_eos_header(line: &str) -> Result<TokenId> {
    line.strip_prefix("eos ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::format(format!("bad vocabulary header {line:?}")))
}

/// Escapes a token so that it fits on one line. Backslash, newline, carriage
/// return and tab are written as `\\`, `\n`, `\r` and `\t`.
pub fn escape_token(t: &str) -> String {
    let mut out = String::with_capacity(t.len());
    for c in t.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_token(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('t') => out.push('\t'),
            other => {
                return Err(Error::format(format!(
                    "bad escape sequence \\{} in token {s:?}",
                    other.map(String::from).unwrap_or_default()
                )))
            }
        }
    }
    Ok(out)
}

/// A sequence of token indices. The end-of-sequence token may only appear
/// as the last element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>) -> Self {
        Self(tokens)
    }

    pub fn validate(&self, vocab: &Vocabulary, max_len: Option<usize>) -> Result<()> {
        if let Some(k) = max_len {
            if self.0.len() > k {
                return Err(Error::domain(format!(
                    "sequence of length {} exceeds the maximum {k}",
                    self.0.len()
                )));
            }
        }
        for (pos, &t) in self.0.iter().enumerate() {
            vocab.check(t)?;
            if t == vocab.eos() && pos + 1 != self.0.len() {
                return Err(Error::domain(format!(
                    "end-of-sequence token at interior position {pos}"
                )));
            }
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn last(&self) -> Option<TokenId> {
        self.0.last().copied()
    }

    pub fn into_inner(self) -> Vec<TokenId> {
        self.0
    }
}

impl From<Vec<TokenId>> for TokenSequence {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

impl AsRef<[TokenId]> for TokenSequence {
    fn as_ref(&self) -> &[TokenId] {
        &self.0
    }
}

/// How text is split into tokens.
///
/// `Chars` makes every Unicode scalar value a token. `Words` splits on
/// spaces and tabs and keeps each newline as a token of its own, so that
/// line structure survives a round trip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    #[default]
    Chars,
    Words,
}

impl Tokenizer {
    pub fn split(self, text: &str) -> Vec<String> {
        match self {
            Tokenizer::Chars => text.chars().map(String::from).collect(),
            Tokenizer::Words => {
                let mut out = Vec::new();
                for (i, line) in text.split('\n').enumerate() {
                    if i > 0 {
                        out.push("\n".to_owned());
                    }
                    out.extend(
                        line.split([' ', '\t', '\r'])
                            .filter(|w| !w.is_empty())
                            .map(str::to_owned),
                    );
                }
                out
            }
        }
    }

    pub fn encode(self, text: &str, vocab: &Vocabulary) -> Result<Vec<TokenId>> {
        self.split(text)
            .into_iter()
            .map(|t| {
                vocab
                    .id(&t)
                    .ok_or_else(|| Error::domain(format!("token {t:?} not in vocabulary")))
            })
            .collect()
    }

    /// Renders token indices back to text. The end-of-sequence token is
    /// dropped.
    pub fn render(self, tokens: &[TokenId], vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for &t in tokens {
            if t == vocab.eos() {
                continue;
            }
            let s = vocab.token(t).unwrap_or("\u{fffd}");
            match self {
                Tokenizer::Chars => out.push_str(s),
                Tokenizer::Words => {
                    if s != "\n" && !out.is_empty() && !out.ends_with('\n') {
                        out.push(' ');
                    }
                    out.push_str(s);
                }
            }
        }
        out
    }
}

impl fmt::Display for Tokenizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tokenizer::Chars => "chars",
            Tokenizer::Words => "words",
        })
    }
}

impl std::str::FromStr for Tokenizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chars" => Ok(Tokenizer::Chars),
            "words" => Ok(Tokenizer::Words),
            other => Err(Error::domain(format!("unknown tokenizer {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Vocabulary {
        Vocabulary::new(vec!["a".into(), "b".into(), "<eos>".into()], 2).unwrap()
    }

    #[test]
    fn rejects_duplicates_and_bad_eos() {
        assert!(Vocabulary::new(vec!["a".into(), "a".into()], 0).is_err());
        assert!(Vocabulary::new(vec!["a".into()], 1).is_err());
    }

    #[test]
    fn eos_only_at_end() {
        let v = abc();
        assert!(TokenSequence::new(vec![0, 1, 2]).validate(&v, None).is_ok());
        assert!(TokenSequence::new(vec![0, 2, 1]).validate(&v, None).is_err());
        assert!(TokenSequence::new(vec![0, 5]).validate(&v, None).is_err());
        assert!(TokenSequence::new(vec![0, 1, 0]).validate(&v, Some(2)).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = Vocabulary::new(
            vec!["a".into(), "\n".into(), "\\".into(), " ".into(), "<eos>".into()],
            4,
        )
        .unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("eos 4\n"));
        assert_eq!(Vocabulary::read_from(&buf[..]).unwrap(), v);
    }

    #[test]
    fn words_keep_newlines() {
        let toks = Tokenizer::Words.split("sex: male\nincome: 100");
        assert_eq!(toks, ["sex:", "male", "\n", "income:", "100"]);
        let v = Vocabulary::from_tokens(toks.iter().map(String::as_str)).unwrap();
        let ids = Tokenizer::Words.encode("sex: male\nincome: 100", &v).unwrap();
        assert_eq!(Tokenizer::Words.render(&ids, &v), "sex: male\nincome: 100");
    }

    #[test]
    fn chars_round_trip() {
        let v = Vocabulary::from_tokens(["h", "i", " "]).unwrap();
        let ids = Tokenizer::Chars.encode("hi hi", &v).unwrap();
        assert_eq!(Tokenizer::Chars.render(&ids, &v), "hi hi");
        assert!(Tokenizer::Chars.encode("x", &v).is_err());
    }
}
