//! Add-alpha smoothed n-gram model.
//!
//! Training sequences are padded with `order - 1` end-of-sequence tokens on
//! the left and terminated by one, so the end-of-sequence token doubles as
//! the sequence-start marker. Contexts shorter than `order - 1` are padded the
//! same way at query time.
//!
//! # File format
//!
//! UTF-8 text, one record per line:
//!
//! ```text
//! cf-engine-ngram 1
//! order 3
//! alpha 0.1
//! tokenizer chars
//! vocab 4 eos 3
//! a
//! b
//! \n
//! <eos>
//! contexts 2
//! 3 3<TAB>0:2 1:1
//! 0 1<TAB>3:1
//! ```
//!
//! Tokens are escaped as in the vocabulary file. Each context line lists the
//! context's token indices, a tab, and `token:count` pairs in ascending token
//! order. Contexts are sorted, so a model always serializes to the same bytes.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use super::{check_tokens, DistributionProvider};
use crate::error::{Error, Result};
use crate::vocab::{escape_token, unescape_token, TokenId, Tokenizer, Vocabulary};

pub const NGRAM_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "cf-engine-ngram";

/// How a training text is cut into independent sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusSplit {
    /// Every non-empty line is a sequence.
    #[default]
    Lines,
    /// Blocks separated by blank lines are sequences; their newlines are kept.
    Paragraphs,
}

impl std::str::FromStr for CorpusSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lines" => Ok(CorpusSplit::Lines),
            "paragraphs" => Ok(CorpusSplit::Paragraphs),
            other => Err(Error::domain(format!("unknown corpus split {other:?}"))),
        }
    }
}

impl CorpusSplit {
    pub fn split(self, text: &str) -> Vec<String> {
        match self {
            CorpusSplit::Lines => text
                .lines()
                .map(str::trim_end)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect(),
            CorpusSplit::Paragraphs => {
                let mut out = Vec::new();
                let mut cur: Vec<&str> = Vec::new();
                for line in text.lines().map(str::trim_end) {
                    if line.is_empty() {
                        if !cur.is_empty() {
                            out.push(cur.join("\n"));
                            cur.clear();
                        }
                    } else {
                        cur.push(line);
                    }
                }
                if !cur.is_empty() {
                    out.push(cur.join("\n"));
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Counts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    alpha: f64,
    tokenizer: Tokenizer,
    vocab: Vocabulary,
    counts: HashMap<Vec<TokenId>, Counts>,
    id: String,
}

impl NGramModel {
    /// Counts every n-gram of the padded training sequences exactly once.
    pub fn train(
        sequences: &[Vec<TokenId>],
        vocab: Vocabulary,
        tokenizer: Tokenizer,
        order: usize,
        alpha: f64,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::domain("n-gram order must be at least 1"));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::domain(format!(
                "smoothing alpha must be positive, got {alpha}"
            )));
        }
        let total_tokens: usize = sequences.iter().map(Vec::len).sum();
        if total_tokens < order {
            return Err(Error::domain(format!(
                "corpus has {total_tokens} tokens, fewer than the order {order}"
            )));
        }
        let eos = vocab.eos();
        let mut counts: HashMap<Vec<TokenId>, Counts> = HashMap::new();
        for seq in sequences {
            check_tokens(&vocab, seq)?;
            let mut padded = vec![eos; order - 1];
            padded.extend_from_slice(seq);
            if seq.last() != Some(&eos) {
                padded.push(eos);
            }
            for window in padded.windows(order) {
                let (ctx, next) = window.split_at(order - 1);
                let c = counts.entry(ctx.to_vec()).or_default();
                c.total += 1;
                *c.next.entry(next[0]).or_default() += 1;
            }
        }
        Ok(Self {
            order,
            alpha,
            tokenizer,
            vocab,
            counts,
            id: String::new(),
        }
        .with_id())
    }

    /// Builds the vocabulary from `text` and trains on it.
    pub fn train_text(
        text: &str,
        tokenizer: Tokenizer,
        split: CorpusSplit,
        order: usize,
        alpha: f64,
    ) -> Result<Self> {
        let pieces: Vec<Vec<String>> = split
            .split(text)
            .iter()
            .map(|s| tokenizer.split(s))
            .collect();
        let vocab = Vocabulary::from_tokens(pieces.iter().flatten().map(String::as_str))?;
        let sequences = pieces
            .iter()
            .map(|p| p.iter().map(|t| vocab.id(t).expect("built from corpus")).collect())
            .collect::<Vec<Vec<TokenId>>>();
        Self::train(&sequences, vocab, tokenizer, order, alpha)
    }

    fn with_id(mut self) -> Self {
        let digest = Sha256::digest(self.to_bytes());
        self.id = format!("ngram{}-{}", self.order, hex::encode(&digest[..6]));
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    /// Raw count of `next` after `context`, where `context` has exactly
    /// `order - 1` tokens.
    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.counts
            .get(context)
            .and_then(|c| c.next.get(&next))
            .copied()
            .unwrap_or(0)
    }

    pub fn context_count(&self) -> usize {
        self.counts.len()
    }

    fn key(&self, context: &[TokenId]) -> Vec<TokenId> {
        let n = self.order - 1;
        let tail = &context[context.len().saturating_sub(n)..];
        let mut key = vec![self.vocab.eos(); n - tail.len()];
        key.extend_from_slice(tail);
        key
    }

    /// Smoothed probabilities `(count + alpha) / (total + alpha |V|)`.
    pub fn probabilities(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        check_tokens(&self.vocab, context)?;
        let v = self.vocab.len() as f64;
        let key = self.key(context);
        let (total, next) = match self.counts.get(&key) {
            Some(c) => (c.total as f64, Some(&c.next)),
            None => (0.0, None),
        };
        let denom = total + self.alpha * v;
        let mut probs = vec![self.alpha / denom; self.vocab.len()];
        if let Some(next) = next {
            for (&t, &c) in next {
                probs[t] = (c as f64 + self.alpha) / denom;
            }
        }
        Ok(probs)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{MAGIC} {NGRAM_FORMAT_VERSION}")?;
        writeln!(w, "order {}", self.order)?;
        writeln!(w, "alpha {}", self.alpha)?;
        writeln!(w, "tokenizer {}", self.tokenizer)?;
        writeln!(w, "vocab {} eos {}", self.vocab.len(), self.vocab.eos())?;
        for t in self.vocab.tokens() {
            writeln!(w, "{}", escape_token(t))?;
        }
        writeln!(w, "contexts {}", self.counts.len())?;
        let mut contexts: Vec<&Vec<TokenId>> = self.counts.keys().collect();
        contexts.sort();
        for ctx in contexts {
            let c = &self.counts[ctx];
            let ctx_str: Vec<String> = ctx.iter().map(|t| t.to_string()).collect();
            let next_str: Vec<String> = c.next.iter().map(|(t, n)| format!("{t}:{n}")).collect();
            writeln!(w, "{}\t{}", ctx_str.join(" "), next_str.join(" "))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let mut next_line = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::format("unexpected end of model file"))?
                .map_err(Error::from)
        };
        let header = next_line()?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == NGRAM_FORMAT_VERSION.to_string() => {}
            _ => return Err(Error::format(format!("unsupported model header {header:?}"))),
        }
        let order: usize = field(&next_line()?, "order")?;
        let alpha: f64 = field(&next_line()?, "alpha")?;
        let tokenizer: Tokenizer = field::<String>(&next_line()?, "tokenizer")?
            .parse()
            .map_err(|e: Error| Error::format(e.to_string()))?;
        let vocab_line = next_line()?;
        let parts: Vec<&str> = vocab_line.split_whitespace().collect();
        let (size, eos) = match parts.as_slice() {
            ["vocab", n, "eos", e] => (parse(n)?, parse(e)?),
            _ => return Err(Error::format(format!("bad vocab line {vocab_line:?}"))),
        };
        let mut tokens = Vec::with_capacity(size);
        for _ in 0..size {
            tokens.push(unescape_token(&next_line()?)?);
        }
        let vocab = Vocabulary::new(tokens, eos).map_err(|e| Error::format(e.to_string()))?;
        let n_contexts: usize = field(&next_line()?, "contexts")?;
        let mut counts = HashMap::with_capacity(n_contexts);
        for _ in 0..n_contexts {
            let line = next_line()?;
            let (ctx, next) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(format!("bad context line {line:?}")))?;
            let ctx: Vec<TokenId> = ctx
                .split_whitespace()
                .map(parse)
                .collect::<Result<_>>()?;
            if ctx.len() + 1 != order {
                return Err(Error::format(format!("context {ctx:?} does not match order {order}")));
            }
            let mut c = Counts::default();
            for pair in next.split_whitespace() {
                let (t, n) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::format(format!("bad count {pair:?}")))?;
                let (t, n): (TokenId, u64) = (parse(t)?, parse(n)?);
                if t >= vocab.len() {
                    return Err(Error::format(format!("token {t} out of range")));
                }
                c.total += n;
                c.next.insert(t, n);
            }
            counts.insert(ctx, c);
        }
        if order == 0 || !(alpha > 0.0) {
            return Err(Error::format("order and alpha must be positive"));
        }
        Ok(Self {
            order,
            alpha,
            tokenizer,
            vocab,
            counts,
            id: String::new(),
        }
        .with_id())
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::format(format!("cannot parse {s:?}")))
}

fn field<T: std::str::FromStr>(line: &str, name: &str) -> Result<T> {
    match line.split_once(' ') {
        Some((n, v)) if n == name => parse(v),
        _ => Err(Error::format(format!("expected `{name} ...`, got {line:?}"))),
    }
}

impl DistributionProvider for NGramModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context_limit(&self) -> Option<usize> {
        Some(self.order - 1)
    }

    fn model_id(&self) -> String {
        self.id.clone()
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self
            .probabilities(context)?
            .into_iter()
            .map(f64::ln)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::EPSILON;
    use proptest::prelude::*;

    fn chars(text: &str, order: usize, alpha: f64) -> NGramModel {
        NGramModel::train_text(text, Tokenizer::Chars, CorpusSplit::Lines, order, alpha).unwrap()
    }

    #[test]
    fn bigram_counts_by_hand() {
        let m = chars("aaaa", 2, 0.1);
        let a = m.vocabulary().id("a").unwrap();
        assert_eq!(m.count(&[a], a), 3);

        let m = chars("abab", 2, 1e-12);
        let a = m.vocabulary().id("a").unwrap();
        let b = m.vocabulary().id("b").unwrap();
        assert_eq!(m.count(&[a], b), 2);
        let p = m.probabilities(&[a]).unwrap();
        assert!((p[b] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unseen_context_is_uniform() {
        let m = chars("abab", 3, 0.5);
        let b = m.vocabulary().id("b").unwrap();
        let p = m.probabilities(&[b, b]).unwrap();
        let u = 1.0 / m.vocabulary().len() as f64;
        assert!(p.iter().all(|x| (x - u).abs() < 1e-15));
    }

    #[test]
    fn short_context_is_padded_with_eos() {
        let m = chars("ab\nab", 3, 0.1);
        let eos = m.vocabulary().eos();
        assert_eq!(m.probabilities(&[]).unwrap(), m.probabilities(&[eos, eos]).unwrap());
        let a = m.vocabulary().id("a").unwrap();
        assert_eq!(m.count(&[eos, eos], a), 2);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NGramModel::train_text("abc", Tokenizer::Chars, CorpusSplit::Lines, 2, 0.0).is_err());
        assert!(NGramModel::train_text("abc", Tokenizer::Chars, CorpusSplit::Lines, 0, 0.1).is_err());
        assert!(NGramModel::train_text("ab", Tokenizer::Chars, CorpusSplit::Lines, 3, 0.1).is_err());
        let m = chars("abc", 2, 0.1);
        assert!(m.next_logits(&[99]).is_err());
    }

    #[test]
    fn training_is_reproducible() {
        let a = chars("the cat sat\non the mat", 3, 0.1);
        let b = chars("the cat sat\non the mat", 3, 0.1);
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.model_id(), b.model_id());
    }

    #[test]
    fn file_round_trip() {
        let m = NGramModel::train_text(
            "x: 1\ny: 2\n\nx: 3\ny: 2",
            Tokenizer::Words,
            CorpusSplit::Paragraphs,
            3,
            0.25,
        )
        .unwrap();
        let bytes = m.to_bytes();
        let back = NGramModel::read_from(&bytes[..]).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        assert!(String::from_utf8(bytes).unwrap().starts_with("cf-engine-ngram 1\norder 3\n"));
        assert!(NGramModel::read_from(&b"cf-engine-ngram 9\n"[..]).is_err());
    }

    #[test]
    fn paragraph_split_keeps_newlines() {
        let docs = CorpusSplit::Paragraphs.split("a\nb\n\n\nc\n");
        assert_eq!(docs, ["a\nb", "c"]);
        assert_eq!(CorpusSplit::Lines.split("a\n\nb \n"), ["a", "b"]);
    }

    proptest! {
        #[test]
        fn probabilities_sum_to_one(text in "[abc \n]{3,60}", order in 1usize..5, ctx in prop::collection::vec(0usize..3, 0..6)) {
            prop_assume!(text.lines().map(|l| l.trim_end().chars().count()).sum::<usize>() >= order);
            let m = chars(&text, order, 0.1);
            let ctx: Vec<TokenId> = ctx.into_iter().filter(|t| *t < m.vocabulary().len()).collect();
            let p = m.probabilities(&ctx).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < EPSILON);
            prop_assert!(p.iter().all(|x| *x > 0.0));
        }
    }
}
