//! The bundled tiny corpus, produced by a small stochastic grammar.
//!
//! Each line is a paragraph of sentences shaped
//! `det adj noun verb det adj object.`, with one more sentence following
//! with probability 0.8. Within a word class the weights fall off as
//! 1/rank, and the previous word doubles the weight of one partner word
//! of the next class. The text is a fixed function of [`TINY_SEED`].

use std::sync::OnceLock;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::backend::{CorpusSplit, NGramModel};
use crate::error::Result;
use crate::vocab::{TokenId, Tokenizer};

pub const TINY_LINES: usize = 30_000;
pub const TINY_SEED: u64 = 20_240_917;

/// Default order and smoothing of the word model of the tiny corpus.
pub const TINY_ORDER: usize = 4;
pub const TINY_ALPHA: f64 = 1e-4;

const CONTINUE_P: f64 = 0.8;
const PARTNER_BOOST: f64 = 2.0;

const DET: &[&str] = &["the", "a", "every", "one", "that", "my"];
const ADJ: &[&str] = &[
    "old", "little", "quiet", "bright", "strange", "brave", "tired", "clever", "dark", "happy", "lonely", "young",
    "gentle", "proud", "silent", "wild", "kind", "clumsy", "curious", "grey", "hungry", "patient", "polite",
    "restless", "shy", "stern", "tall", "wise", "busy", "calm", "cheerful", "eager",
];
const NOUN: &[&str] = &[
    "cat", "man", "dog", "woman", "boy", "girl", "bird", "sailor", "teacher", "doctor", "king", "farmer", "child",
    "captain", "soldier", "fox", "baker", "queen", "miller", "painter", "poet", "hunter", "widow", "priest",
    "merchant", "thief", "student", "nurse", "judge", "guard", "pilot", "singer",
];
const OBJ: &[&str] = &[
    "house", "road", "door", "river", "letter", "song", "map", "boat", "garden", "window", "hill", "story", "city",
    "bridge", "field", "storm", "tower", "forest", "village", "wall", "lamp", "book", "coat", "ship", "well",
    "market", "church", "mountain", "lake", "castle", "shop", "gate",
];
const VERB: &[&str] = &[
    "saw", "found", "left", "crossed", "painted", "watched", "built", "opened", "wrote", "followed", "carried",
    "remembered", "climbed", "closed", "visited", "sold", "bought", "cleaned", "guarded", "described", "missed",
    "reached", "passed", "burned", "fixed", "drew", "kept", "lost", "named", "shared", "hid", "loved",
];

fn pick(rng: &mut ChaCha8Rng, class: &[&'static str], prev: &str) -> &'static str {
    let h = prev.bytes().fold(7usize, |h, b| h.wrapping_mul(31).wrapping_add(b as usize));
    let partner = h % class.len();
    let weights = (0..class.len()).map(|r| {
        let w = 1.0 / (r + 1) as f64;
        if r == partner {
            w * PARTNER_BOOST
        } else {
            w
        }
    });
    class[WeightedIndex::new(weights).expect("positive weights").sample(rng)]
}

fn sentence(rng: &mut ChaCha8Rng, prev: &'static str, out: &mut Vec<&'static str>) {
    let mut last = prev;
    for class in [DET, ADJ, NOUN, VERB, DET, ADJ, OBJ] {
        last = pick(rng, class, last);
        out.push(last);
    }
}

/// Generates `lines` paragraphs from `seed`.
pub fn generate_tiny_corpus(lines: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for _ in 0..lines {
        let mut prev = ".";
        let mut sentences = Vec::new();
        loop {
            let mut words = Vec::new();
            sentence(&mut rng, prev, &mut words);
            prev = words[words.len() - 1];
            sentences.push(format!("{}.", words.join(" ")));
            if !rng.random_bool(CONTINUE_P) {
                break;
            }
        }
        text.push_str(&sentences.join(" "));
        text.push('\n');
    }
    text
}

/// The bundled corpus text ([`TINY_LINES`] lines), built once.
pub fn tiny_corpus() -> &'static str {
    static TEXT: OnceLock<String> = OnceLock::new();
    TEXT.get_or_init(|| generate_tiny_corpus(TINY_LINES, TINY_SEED))
}

/// Word-level n-gram model of the tiny corpus, one training sequence per
/// line.
pub fn tiny_model(order: usize, alpha: f64) -> Result<NGramModel> {
    NGramModel::train_text(tiny_corpus(), Tokenizer::Words, CorpusSplit::Lines, order, alpha)
}

/// `count` prompts cut from the tiny corpus: the first `words` words of
/// every k-th line, followed by a space.
pub fn prompts(model: &NGramModel, count: usize, words: usize) -> Result<Vec<Vec<TokenId>>> {
    prompts_from(tiny_corpus(), model, count, words)
}

/// Like [`prompts`], cut from the lines of `text`.
pub fn prompts_from(text: &str, model: &NGramModel, count: usize, words: usize) -> Result<Vec<Vec<TokenId>>> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
    let stride = (lines.len() / count.max(1)).max(1);
    lines
        .iter()
        .step_by(stride)
        .take(count)
        .map(|line| {
            let head: Vec<&str> = line.split(' ').take(words).collect();
            let text = format!("{} ", head.join(" "));
            model.tokenizer().encode(&text, crate::DistributionProvider::vocabulary(model))
        })
        .collect()
}
