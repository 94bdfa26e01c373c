//! Synthetic POS-tagged corpora over the twelve universal tags.
//!
//! Tags follow a fixed first-order Markov chain; each tag emits words from
//! its own Zipf-distributed vocabulary with a tag-specific ending. A share of
//! adjective and noun slots instead draw from a common pool of words, and
//! those tokens get a second gold label that disagrees with the first half
//! of the time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, LabelSet, Token};
use crate::error::{Error, Result};

pub const UNIVERSAL_TAGS: [&str; 12] =
    ["ADJ", "ADP", "ADV", "CONJ", "DET", "NOUN", "NUM", "PRON", "PRT", "VERB", "X", "."];

const ADJ: usize = 0;
const NOUN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub n_sequences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub vocab_per_tag: usize,
    /// Chance that an ADJ or NOUN slot uses the shared, ambiguous pool.
    pub shared_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { n_sequences: 500, min_len: 6, max_len: 18, vocab_per_tag: 40, shared_rate: 0.15, seed: 1 }
    }
}

const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "be", "du", "fa", "gi", "ho", "ju", "pe", "zo"];
const ENDINGS: [&str; 12] = ["ish", "at", "ly", "und", "e", "on", "", "em", "up", "ed", "qx", ""];

fn word(tag: usize, i: usize) -> String {
    match tag {
        6 => format!("{}", 3 * i + 1),
        11 => [".", ",", "!", "?", ";", ":"][i % 6].to_string(),
        _ => format!(
            "{}{}{}",
            SYLLABLES[i % 16],
            SYLLABLES[(i / 16 + tag) % 16],
            ENDINGS[tag]
        ),
    }
}

fn shared_word(i: usize) -> String {
    format!("{}{}al", SYLLABLES[(i * 5) % 16], SYLLABLES[(i + 3) % 16])
}

fn zipf(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let total: f64 = (1..=n).map(|r| 1.0 / r as f64).sum();
    let mut u = rng.random::<f64>() * total;
    for r in 0..n {
        u -= 1.0 / (r + 1) as f64;
        if u <= 0.0 {
            return r;
        }
    }
    n - 1
}

/// Tag bigram weights: a fixed random matrix with a few hand-set preferences
/// (determiners and adjectives lead into nouns, pronouns into verbs).
fn transitions() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut m: Vec<Vec<f64>> = (0..12)
        .map(|_| (0..12).map(|_| -(rng.random::<f64>()).ln()).collect())
        .collect();
    let boost = [(4, NOUN, 8.0), (4, ADJ, 4.0), (ADJ, NOUN, 6.0), (7, 9, 6.0), (NOUN, 9, 3.0), (9, 4, 3.0), (1, 4, 4.0), (NOUN, 11, 2.0)];
    for (a, b, w) in boost {
        m[a][b] += w;
    }
    m
}

fn draw(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// A doubly-gold synthetic corpus and its tag set.
pub fn synthetic_pos_corpus(cfg: &SyntheticConfig) -> Result<(Corpus, LabelSet)> {
    if cfg.n_sequences == 0 || cfg.min_len == 0 || cfg.max_len < cfg.min_len || cfg.vocab_per_tag == 0 {
        return Err(Error::Config("synthetic corpus needs sequences of positive length".into()));
    }
    if !(0.0..=1.0).contains(&cfg.shared_rate) {
        return Err(Error::Config("shared rate must lie in [0, 1]".into()));
    }
    let labels = LabelSet::new(UNIVERSAL_TAGS)?;
    let trans = transitions();
    let start: Vec<f64> = (0..12).map(|t| if t == 4 || t == 7 || t == NOUN { 4.0 } else { 1.0 }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sequences = Vec::with_capacity(cfg.n_sequences);
    for _ in 0..cfg.n_sequences {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut tag = draw(&mut rng, &start);
        let mut seq = Vec::with_capacity(len);
        for _ in 0..len {
            let (surface, second) = if (tag == ADJ || tag == NOUN) && rng.random::<f64>() < cfg.shared_rate {
                let other = if tag == ADJ { NOUN } else { ADJ };
                let second = if rng.random::<bool>() { other } else { tag };
                (shared_word(zipf(&mut rng, cfg.vocab_per_tag / 2 + 1)), second)
            } else {
                (word(tag, zipf(&mut rng, cfg.vocab_per_tag)), tag)
            };
            seq.push(Token::new(surface, vec![tag, second]));
            tag = draw(&mut rng, &trans[tag]);
        }
        sequences.push(seq);
    }
    Ok((Corpus::new(sequences, &labels)?, labels))
}
