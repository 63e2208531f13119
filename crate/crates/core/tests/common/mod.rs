#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use simulst::adapter::{adapt, AdapterConfig, Encoder, MockEncoder, DEFAULT_ENCODER_DIM};
use simulst::decoding::{log_softmax, EncodedSpeech, PromptSequence, ScoreModel, TableModel};
use simulst::policy::PolicyConfig;
use simulst::stream::SpeechStream;
use simulst::TokenId;

/// Line-by-line transcription of the selective-output pseudocode for one
/// chunk. Returns `None` for Read.
pub fn literal_selective_output(w: &[TokenId], n: usize, source_finished: bool) -> Option<Vec<TokenId>> {
    let l = w.len();
    let pruned;
    if source_finished {
        pruned = w.to_vec();
    } else {
        let n_prime = if n < l { n } else { l };
        let mut w_prefix = Vec::new();
        let mut idx = 0;
        while idx < l - n_prime {
            w_prefix.push(w[idx]);
            idx += 1;
        }
        if !w_prefix.is_empty() {
            pruned = w_prefix;
        } else {
            return None;
        }
    }
    Some(pruned)
}

pub struct TableCase {
    pub stream: SpeechStream,
    pub model: TableModel,
    pub config: PolicyConfig,
    pub target_words: Vec<String>,
}

/// A random scripted utterance with a random (valid) policy config.
pub fn random_table_case(rng: &mut ChaCha8Rng, idx: usize) -> TableCase {
    let duration_ms = rng.gen_range(800..12_000u64);
    let stream = SpeechStream::synthetic(format!("utt{idx}"), duration_ms, 50, DEFAULT_ENCODER_DIM).unwrap();
    let total = stream.total_frames();
    let len = rng.gen_range(1..=12usize);
    let vocab_size = 3 + rng.gen_range(1..=10usize);
    let target: Vec<TokenId> = (0..len).map(|_| rng.gen_range(3..vocab_size as TokenId)).collect();
    let mut reveal: Vec<usize> = (0..len).map(|_| rng.gen_range(0..=total + total / 10)).collect();
    reveal.sort_unstable();
    let model = TableModel::new(target.clone(), reveal, vocab_size).unwrap();
    let config = PolicyConfig {
        start_ms: rng.gen_range(200..4000),
        chunk_ms: rng.gen_range(200..4000),
        hold_n: rng.gen_range(0..=10),
        beam: rng.gen_range(1..=5),
        max_len: 64,
    };
    TableCase {
        stream,
        model,
        config,
        target_words: target.iter().map(|t| format!("w{t}")).collect(),
    }
}

/// Top hypothesis of an offline decode over the whole stream.
pub fn offline_decode(
    stream: &SpeechStream,
    adapter: &AdapterConfig,
    model: &dyn ScoreModel,
    beam: usize,
    max_len: usize,
) -> Vec<TokenId> {
    let encoder = MockEncoder::new(stream.feature_dim());
    let frames = stream.total_frames();
    let feats = adapt(&encoder.encode(stream, frames).unwrap(), adapter).unwrap();
    simulst::beam_search(model, &EncodedSpeech::new(feats, frames), beam, max_len, &[])
        .unwrap()
        .remove(0)
        .tokens
}

/// Random but fixed distribution for every (prefix) context.
pub struct RandomModel {
    pub vocab: usize,
    pub eos: TokenId,
    pub seed: u64,
}

impl ScoreModel for RandomModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn eos(&self) -> TokenId {
        self.eos
    }

    fn next_logprobs(&self, prompt: &PromptSequence<'_>) -> Vec<f64> {
        let key = prompt.target_prefix().iter().fold(self.seed, |h, &t| {
            h.wrapping_mul(1_000_003).wrapping_add(u64::from(t) + 1)
        });
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let logits: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-3.0..3.0)).collect();
        log_softmax(&logits)
    }
}

/// Every complete candidate of a max_len-bounded decode, scored directly.
pub fn exhaustive_best(model: &dyn ScoreModel, speech: &EncodedSpeech, max_len: usize) -> (Vec<TokenId>, f64) {
    let eos = model.eos();
    let vocab = model.vocab_size() as TokenId;
    let words: Vec<TokenId> = (0..vocab).filter(|&t| t != eos).collect();
    let mut best: Option<(Vec<TokenId>, f64)> = None;
    let mut consider = |tokens: Vec<TokenId>, score: f64| {
        let better = match &best {
            None => true,
            Some((bt, bs)) => score > *bs || (score == *bs && (tokens.len(), &tokens) < (bt.len(), bt)),
        };
        if better {
            best = Some((tokens, score));
        }
    };
    let mut frontier: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    for depth in 0..=max_len {
        let mut next = Vec::new();
        for (seq, score) in frontier {
            if depth == max_len {
                consider(seq, score);
                continue;
            }
            let lp = model.next_logprobs(&simulst::compose_template(&[], speech, &seq));
            consider(seq.clone(), score + lp[eos as usize]);
            for &w in &words {
                let mut s = seq.clone();
                s.push(w);
                next.push((s, score + lp[w as usize]));
            }
        }
        frontier = next;
    }
    best.unwrap()
}
