//! Synthetic preference data: the single-token and edit-distance-1 setups and
//! four sentiment-style response templates over a whole-word vocabulary.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LanguageModel;

/// Reference-model log-probabilities of the two responses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLogps {
    pub chosen: f64,
    pub rejected: f64,
}

/// One `(x, y_w, y_l)` preference example as token ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub prompt: Vec<usize>,
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
    pub style: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceLogps>,
}

impl PreferenceTriple {
    pub fn new(prompt: Vec<usize>, chosen: Vec<usize>, rejected: Vec<usize>, style: &str) -> Result<Self> {
        if chosen.is_empty() || rejected.is_empty() {
            return Err(Error::InvalidArgument("responses must be non-empty".into()));
        }
        if chosen == rejected {
            return Err(Error::InvalidArgument(
                "chosen and rejected responses are identical".into(),
            ));
        }
        Ok(Self {
            prompt,
            chosen,
            rejected,
            style: style.to_string(),
            reference: None,
        })
    }

    /// Attaches the reference log-probabilities computed by `reference`.
    pub fn with_reference<M: LanguageModel>(mut self, reference: &M) -> Result<Self> {
        self.reference = Some(ReferenceLogps {
            chosen: reference.logprob(&self.prompt, &self.chosen)?,
            rejected: reference.logprob(&self.prompt, &self.rejected)?,
        });
        Ok(self)
    }

    /// Positions where the responses differ. Positions past the end of the
    /// shorter response count as differing.
    pub fn differing_positions(&self) -> Vec<usize> {
        let n = self.chosen.len().max(self.rejected.len());
        (0..n).filter(|&i| self.chosen.get(i) != self.rejected.get(i)).collect()
    }
}

/// Response template families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    SingleToken,
    ShortSuffix,
    LongSuffix,
    PrefixSuffix,
}

impl Style {
    pub const ALL: [Style; 4] = [
        Style::SingleToken,
        Style::ShortSuffix,
        Style::LongSuffix,
        Style::PrefixSuffix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Style::SingleToken => "single_token",
            Style::ShortSuffix => "short_suffix",
            Style::LongSuffix => "long_suffix",
            Style::PrefixSuffix => "prefix_suffix",
        }
    }

    /// `(positive, negative)` word sequences. They differ in exactly one word.
    pub fn template(self) -> (Vec<&'static str>, Vec<&'static str>) {
        let suffix = ["sentiment", "based", "on", "my", "judgement"];
        match self {
            Style::SingleToken => (vec!["Positive"], vec!["Negative"]),
            Style::ShortSuffix => (vec!["Positive", "sentiment"], vec!["Negative", "sentiment"]),
            Style::LongSuffix => (
                [&["Positive"][..], &suffix].concat(),
                [&["Negative"][..], &suffix].concat(),
            ),
            Style::PrefixSuffix => (
                [&["It", "has", "a", "positive"][..], &suffix].concat(),
                [&["It", "has", "a", "negative"][..], &suffix].concat(),
            ),
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Style {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Style::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown dataset style `{s}`")))
    }
}

/// Every distinct template word, in id order. Ids after these are prompt filler.
pub const TEMPLATE_WORDS: [&str; 12] = [
    "Positive",
    "Negative",
    "sentiment",
    "based",
    "on",
    "my",
    "judgement",
    "It",
    "has",
    "a",
    "positive",
    "negative",
];

/// Whole-word vocabulary: template words first, then `w<k>` prompt filler words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentimentVocab {
    size: usize,
}

impl SentimentVocab {
    pub fn new(size: usize) -> Result<Self> {
        if size <= TEMPLATE_WORDS.len() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of size {size} cannot hold the {} template words plus prompt words",
                TEMPLATE_WORDS.len()
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        TEMPLATE_WORDS.iter().position(|w| *w == word).or_else(|| {
            word.strip_prefix('w')
                .and_then(|k| k.parse::<usize>().ok())
                .map(|k| k + TEMPLATE_WORDS.len())
                .filter(|&id| id < self.size)
        })
    }

    pub fn word(&self, id: usize) -> Option<String> {
        if id < TEMPLATE_WORDS.len() {
            Some(TEMPLATE_WORDS[id].to_string())
        } else if id < self.size {
            Some(format!("w{}", id - TEMPLATE_WORDS.len()))
        } else {
            None
        }
    }

    fn encode(&self, words: &[&str]) -> Vec<usize> {
        words.iter().map(|w| self.id(w).expect("template word")).collect()
    }

    /// Plain-text sidecar: one `id<TAB>word` line per token.
    pub fn write_sidecar<W: Write>(&self, mut out: W) -> Result<()> {
        for id in 0..self.size {
            writeln!(out, "{id}\t{}", self.word(id).unwrap_or_default())?;
        }
        Ok(())
    }
}

/// Options for [`build_sentiment_dataset_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentimentOptions {
    pub vocab_size: usize,
    pub prompt_len: usize,
}

impl Default for SentimentOptions {
    fn default() -> Self {
        Self {
            vocab_size: 32,
            prompt_len: 8,
        }
    }
}

/// Sentiment-style dataset with default vocabulary (32) and prompt length (8).
pub fn build_sentiment_dataset(style: Style, n_prompts: usize, seed: u64) -> Result<Vec<PreferenceTriple>> {
    build_sentiment_dataset_with(style, n_prompts, seed, &SentimentOptions::default())
}

/// Random filler-word prompts, each with a coin-flip sentiment label deciding
/// which template is chosen.
pub fn build_sentiment_dataset_with(
    style: Style,
    n_prompts: usize,
    seed: u64,
    options: &SentimentOptions,
) -> Result<Vec<PreferenceTriple>> {
    if n_prompts == 0 {
        return Err(Error::InvalidArgument("n_prompts must be >= 1".into()));
    }
    let vocab = SentimentVocab::new(options.vocab_size)?;
    let (positive, negative) = style.template();
    let (positive, negative) = (vocab.encode(&positive), vocab.encode(&negative));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_prompts)
        .map(|_| {
            let prompt = (0..options.prompt_len)
                .map(|_| rng.gen_range(TEMPLATE_WORDS.len()..vocab.size()))
                .collect();
            let (chosen, rejected) = if rng.gen_bool(0.5) {
                (positive.clone(), negative.clone())
            } else {
                (negative.clone(), positive.clone())
            };
            PreferenceTriple::new(prompt, chosen, rejected, style.name())
        })
        .collect()
}

fn random_prompt(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..vocab)).collect()
}

fn distinct_pair(rng: &mut ChaCha8Rng, tokens: &[usize]) -> (usize, usize) {
    let picked: Vec<usize> = tokens.choose_multiple(rng, 2).copied().collect();
    (picked[0], picked[1])
}

/// Single-token chosen and rejected responses drawn from `tokens`.
pub fn build_single_token_triple(
    tokens: &[usize],
    vocab: usize,
    prompt_len: usize,
    seed: u64,
) -> Result<PreferenceTriple> {
    if tokens.len() < 2 {
        return Err(Error::InvalidArgument("need at least two candidate tokens".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompt = random_prompt(&mut rng, vocab, prompt_len);
    let (w, l) = distinct_pair(&mut rng, tokens);
    PreferenceTriple::new(prompt, vec![w], vec![l], "single_token")
}

/// Length-`len` responses from `tokens` that share the first `len − 1` tokens.
pub fn build_last_token_triple(
    len: usize,
    tokens: &[usize],
    vocab: usize,
    prompt_len: usize,
    seed: u64,
) -> Result<PreferenceTriple> {
    if len < 2 || tokens.len() < 2 {
        return Err(Error::InvalidArgument(
            "need len >= 2 and at least two candidate tokens".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prompt = random_prompt(&mut rng, vocab, prompt_len);
    let prefix: Vec<usize> = (0..len - 1).map(|_| *tokens.choose(&mut rng).unwrap()).collect();
    let (w, l) = distinct_pair(&mut rng, tokens);
    let mut chosen = prefix.clone();
    chosen.push(w);
    let mut rejected = prefix;
    rejected.push(l);
    PreferenceTriple::new(prompt, chosen, rejected, "last_token")
}

/// Edit-distance-1 pair of length `len` differing at the 1-based position `m`,
/// with `1 ≤ m < len`. The prompt is empty.
pub fn build_edit1_triple(len: usize, m: usize, vocab: usize, seed: u64) -> Result<PreferenceTriple> {
    if m < 1 || m >= len {
        return Err(Error::InvalidArgument(format!(
            "differing position m = {m} must satisfy 1 <= m < L = {len}"
        )));
    }
    if vocab < 2 {
        return Err(Error::InvalidArgument(
            "vocabulary must hold at least two tokens".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
    let mut rejected = chosen.clone();
    let shift = rng.gen_range(1..vocab);
    rejected[m - 1] = (chosen[m - 1] + shift) % vocab;
    PreferenceTriple::new(Vec::new(), chosen, rejected, "edit1")
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(triples: &[PreferenceTriple], mut out: W) -> Result<()> {
    for t in triples {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<PreferenceTriple>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
