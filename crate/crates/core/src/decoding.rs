//! Tokenization, prompt templates and prefix-constrained beam search over a
//! pluggable score model.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::TokenId;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const PAD: TokenId = 2;

/// Stand-in for log(0).
pub const LOG_ZERO: f64 = -1e9;

/// Whitespace tokenizer over a closed word list. Ids 0..3 are reserved for
/// BOS, EOS and PAD.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let words: Vec<String> = ["<s>", "</s>", "<pad>"].iter().map(|s| s.to_string()).collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        Self { words, index }
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from words in order of first appearance.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for w in words {
            v.intern(w.as_ref());
        }
        v
    }

    pub fn intern(&mut self, word: &str) -> TokenId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as TokenId;
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| Error::UnknownToken(w.to_string())))
            .collect()
    }

    /// Joins words with single spaces.
    pub fn detokenize(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            out.push(self.word(id).ok_or_else(|| Error::UnknownToken(format!("#{id}")))?);
        }
        Ok(out.join(" "))
    }
}

/// Adapted speech features plus the number of encoder frames they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSpeech {
    pub features: FeatureMatrix,
    pub source_frames: usize,
}

impl EncodedSpeech {
    pub fn new(features: FeatureMatrix, source_frames: usize) -> Self {
        Self {
            features,
            source_frames,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marker {
    User,
    Assistant,
}

impl Marker {
    pub fn text(self) -> &'static str {
        match self {
            Marker::User => "USER:",
            Marker::Assistant => "ASSISTANT:",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment<'a> {
    SystemPrompt(&'a [TokenId]),
    Marker(Marker),
    Speech(&'a EncodedSpeech),
    TargetPrefix(&'a [TokenId]),
}

/// `<system> USER: <speech> ASSISTANT: <target prefix>`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PromptSequence<'a> {
    segments: [Segment<'a>; 5],
}

impl<'a> PromptSequence<'a> {
    pub fn segments(&self) -> &[Segment<'a>; 5] {
        &self.segments
    }

    pub fn system_prompt(&self) -> &'a [TokenId] {
        match self.segments[0] {
            Segment::SystemPrompt(p) => p,
            _ => unreachable!("segment 0 is the system prompt"),
        }
    }

    pub fn speech(&self) -> &'a EncodedSpeech {
        match self.segments[2] {
            Segment::Speech(s) => s,
            _ => unreachable!("segment 2 is the speech embedding"),
        }
    }

    pub fn target_prefix(&self) -> &'a [TokenId] {
        match self.segments[4] {
            Segment::TargetPrefix(p) => p,
            _ => unreachable!("segment 4 is the target prefix"),
        }
    }

    /// Human-readable rendering, with speech shown as `<S:rows>`.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        let ids = |ids: &[TokenId]| {
            ids.iter()
                .map(|&i| vocab.word(i).map_or_else(|| format!("#{i}"), str::to_string))
                .collect::<Vec<_>>()
        };
        let mut parts = ids(self.system_prompt());
        parts.push(Marker::User.text().to_string());
        parts.push(format!("<S:{}>", self.speech().features.rows()));
        parts.push(Marker::Assistant.text().to_string());
        parts.extend(ids(self.target_prefix()));
        parts.join(" ")
    }
}

pub fn compose_template<'a>(
    system_prompt: &'a [TokenId],
    speech: &'a EncodedSpeech,
    target_prefix: &'a [TokenId],
) -> PromptSequence<'a> {
    PromptSequence {
        segments: [
            Segment::SystemPrompt(system_prompt),
            Segment::Marker(Marker::User),
            Segment::Speech(speech),
            Segment::Marker(Marker::Assistant),
            Segment::TargetPrefix(target_prefix),
        ],
    }
}

/// Next-token distribution given a composed prompt.
pub trait ScoreModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn eos(&self) -> TokenId {
        EOS
    }

    fn system_prompt(&self) -> &[TokenId] {
        &[]
    }

    /// Log-probabilities over the whole vocabulary for the token following
    /// the prompt's target prefix.
    fn next_logprobs(&self, prompt: &PromptSequence<'_>) -> Vec<f64>;
}

/// Normalizes logits into log-probabilities, flooring at [`LOG_ZERO`].
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|x| (x - lse).max(LOG_ZERO)).collect()
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Deterministic model that emits `target[i]` once `reveal[i]` encoder frames
/// have arrived, and EOS otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableModel {
    target: Vec<TokenId>,
    reveal: Vec<usize>,
    vocab_size: usize,
}

impl TableModel {
    pub fn new(target: Vec<TokenId>, reveal: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if target.len() != reveal.len() {
            return Err(Error::InvalidConfig(format!(
                "table model has {} target tokens but {} reveal frames",
                target.len(),
                reveal.len()
            )));
        }
        if reveal.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("reveal frames must be non-decreasing".into()));
        }
        if let Some(&t) = target.iter().find(|&&t| t as usize >= vocab_size || t == EOS) {
            return Err(Error::InvalidConfig(format!(
                "target token {t} is EOS or outside a vocabulary of {vocab_size}"
            )));
        }
        Ok(Self {
            target,
            reveal,
            vocab_size,
        })
    }

    pub fn target(&self) -> &[TokenId] {
        &self.target
    }

    pub fn reveal(&self) -> &[usize] {
        &self.reveal
    }

    /// Distribution after `prefix` when `frames` encoder frames are known.
    pub fn next(&self, frames: usize, prefix: &[TokenId]) -> Vec<f64> {
        let mut lp = vec![LOG_ZERO; self.vocab_size];
        let i = prefix.len();
        let next = if i < self.target.len() && self.reveal[i] <= frames {
            self.target[i]
        } else {
            EOS
        };
        lp[next as usize] = 0.0;
        lp
    }
}

impl ScoreModel for TableModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(&self, prompt: &PromptSequence<'_>) -> Vec<f64> {
        self.next(prompt.speech().source_frames, prompt.target_prefix())
    }
}

pub fn table_model_next(model: &TableModel, frames: usize, prefix: &[TokenId]) -> Vec<f64> {
    model.next(frames, prefix)
}

/// Small seeded linear readout over pooled speech features: a toy decoder
/// for feature-file inputs with no scripted target.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureModel {
    vocab_size: usize,
    dim: usize,
    /// `vocab_size x dim`
    readout: Vec<f64>,
    /// `vocab_size x vocab_size`, row = previous token.
    transition: Vec<f64>,
    /// Expected output tokens per adapted speech row.
    tokens_per_row: f64,
}

impl FeatureModel {
    pub fn seeded(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let readout = (0..vocab_size * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let transition = (0..vocab_size * vocab_size).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self {
            vocab_size,
            dim,
            readout,
            transition,
            tokens_per_row: 0.25,
        }
    }
}

impl ScoreModel for FeatureModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(&self, prompt: &PromptSequence<'_>) -> Vec<f64> {
        let speech = &prompt.speech().features;
        let prefix = prompt.target_prefix();
        let pooled = if speech.dim() == self.dim {
            speech.mean_row()
        } else {
            vec![0.0; self.dim]
        };
        let prev = prefix.last().copied().unwrap_or(BOS) as usize % self.vocab_size;
        let mut logits: Vec<f64> = (0..self.vocab_size)
            .map(|v| {
                let w = &self.readout[v * self.dim..(v + 1) * self.dim];
                w.iter().zip(&pooled).map(|(a, b)| a * b).sum::<f64>() + self.transition[prev * self.vocab_size + v]
            })
            .collect();
        let budget = speech.rows() as f64 * self.tokens_per_row;
        logits[EOS as usize] += 4.0 * (prefix.len() as f64 - budget);
        logits[BOS as usize] = f64::NEG_INFINITY;
        logits[PAD as usize] = f64::NEG_INFINITY;
        if let Some(&last) = prefix.last() {
            // discourage immediate repeats
            logits[last as usize] -= 2.0;
        }
        log_softmax(&logits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Emitted tokens, EOS excluded.
    pub tokens: Vec<TokenId>,
    /// Sum of the log-probabilities of every step taken, EOS included.
    pub score: f64,
    /// Whether the last step emitted EOS.
    pub finished: bool,
}

impl Hypothesis {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Ranking order: higher score, then shorter, then smaller ids, then finished.
pub fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
        .then_with(|| b.finished.cmp(&a.finished))
}

/// Length-synchronous beam search whose first `forced_prefix.len()` steps
/// are pinned to `forced_prefix`.
///
/// `max_len` caps the token count (EOS excluded); a hypothesis reaching it is
/// frozen unfinished. Finished hypotheses keep their beam slot and compete by
/// raw score. The result is sorted best first.
pub fn beam_search(
    model: &dyn ScoreModel,
    speech: &EncodedSpeech,
    beam: usize,
    max_len: usize,
    forced_prefix: &[TokenId],
) -> Result<Vec<Hypothesis>> {
    if beam == 0 {
        return Err(Error::InvalidConfig("beam must be >= 1".into()));
    }
    if forced_prefix.len() > max_len {
        return Err(Error::InvalidConfig(format!(
            "forced prefix of {} tokens exceeds max_len {max_len}",
            forced_prefix.len()
        )));
    }
    let vocab = model.vocab_size();
    let eos = model.eos();
    if let Some(&t) = forced_prefix.iter().find(|&&t| t == eos || t as usize >= vocab) {
        return Err(Error::InvalidConfig(format!(
            "forced token {t} is EOS or outside the vocabulary"
        )));
    }

    let system = model.system_prompt();
    let frozen = |h: &Hypothesis| h.finished || h.tokens.len() >= max_len;
    let mut pool = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
    }];

    while !pool.iter().all(frozen) {
        let mut candidates = Vec::with_capacity(pool.len() * vocab);
        for hyp in pool.drain(..) {
            if frozen(&hyp) {
                candidates.push(hyp);
                continue;
            }
            let prompt = compose_template(system, speech, &hyp.tokens);
            let logprobs = model.next_logprobs(&prompt);
            if logprobs.len() != vocab {
                return Err(Error::Contract(format!(
                    "model returned {} log-probs for a vocabulary of {vocab}",
                    logprobs.len()
                )));
            }
            let step = hyp.tokens.len();
            if let Some(&forced) = forced_prefix.get(step) {
                let mut tokens = hyp.tokens;
                tokens.push(forced);
                candidates.push(Hypothesis {
                    tokens,
                    score: hyp.score + logprobs[forced as usize],
                    finished: false,
                });
                continue;
            }
            for (id, lp) in logprobs.iter().enumerate() {
                let id = id as TokenId;
                let mut next = Hypothesis {
                    tokens: hyp.tokens.clone(),
                    score: hyp.score + lp,
                    finished: id == eos,
                };
                if id != eos {
                    next.tokens.push(id);
                }
                candidates.push(next);
            }
        }
        candidates.sort_by(rank_order);
        candidates.truncate(beam);
        pool = candidates;
    }
    pool.sort_by(rank_order);
    Ok(pool)
}
