//! Latency (AL, LAAL, computation-aware LAAL) and corpus BLEU.
//!
//! Latency follows the SimulEval speech convention: with `T` the source
//! duration, `tau` the index of the first token emitted once the whole source
//! was consumed, and `d_i` the delay of token `i`,
//!
//! ```text
//! AL = 1/tau * sum_{i=1..tau} (d_i - (i - 1) * T / ref_len)
//! ```
//!
//! LAAL swaps `ref_len` for `max(hyp_len, ref_len)`; the computation-aware
//! variant sums elapsed clock stamps instead of delays, keeping `tau`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stream::CommitLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySeries {
    pub delays_ms: Vec<f64>,
    pub elapsed_ms: Vec<f64>,
    pub source_duration_ms: f64,
    pub ref_len: usize,
}

impl DelaySeries {
    pub fn new(delays_ms: Vec<f64>, source_duration_ms: f64, ref_len: usize) -> Self {
        Self {
            elapsed_ms: delays_ms.clone(),
            delays_ms,
            source_duration_ms,
            ref_len,
        }
    }

    pub fn with_elapsed(mut self, elapsed_ms: Vec<f64>) -> Self {
        self.elapsed_ms = elapsed_ms;
        self
    }

    pub fn from_log(log: &CommitLog, source_duration_ms: u64, ref_len: usize) -> Self {
        Self {
            delays_ms: log.delays_ms().into_iter().map(|d| d as f64).collect(),
            elapsed_ms: log.elapsed_ms().into_iter().map(|d| d as f64).collect(),
            source_duration_ms: source_duration_ms as f64,
            ref_len,
        }
    }

    pub fn hyp_len(&self) -> usize {
        self.delays_ms.len()
    }

    fn check(&self) -> Result<()> {
        if self.delays_ms.is_empty() {
            return Err(Error::EmptyHypothesis);
        }
        if self.ref_len == 0 {
            return Err(Error::Input("reference length must be >= 1".into()));
        }
        if self.elapsed_ms.len() != self.delays_ms.len() {
            return Err(Error::Input(format!(
                "{} elapsed stamps for {} delays",
                self.elapsed_ms.len(),
                self.delays_ms.len()
            )));
        }
        Ok(())
    }

    /// Number of tokens that enter the average.
    fn tau(&self) -> usize {
        self.delays_ms
            .iter()
            .position(|&d| d >= self.source_duration_ms)
            .map_or(self.delays_ms.len(), |i| i + 1)
    }

    fn lagging(&self, stamps: &[f64], denominator: usize) -> f64 {
        let tau = self.tau();
        let rate = self.source_duration_ms / denominator as f64;
        let sum: f64 = stamps[..tau].iter().enumerate().map(|(i, d)| d - i as f64 * rate).sum();
        sum / tau as f64
    }
}

pub fn average_lagging(series: &DelaySeries) -> Result<f64> {
    series.check()?;
    Ok(series.lagging(&series.delays_ms, series.ref_len))
}

pub fn laal(series: &DelaySeries) -> Result<f64> {
    series.check()?;
    Ok(series.lagging(&series.delays_ms, series.ref_len.max(series.hyp_len())))
}

pub fn laal_ca(series: &DelaySeries) -> Result<f64> {
    series.check()?;
    Ok(series.lagging(&series.elapsed_ms, series.ref_len.max(series.hyp_len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub al_ms: f64,
    pub laal_ms: f64,
    pub laal_ca_ms: f64,
}

impl LatencyReport {
    pub fn compute(series: &DelaySeries) -> Result<Self> {
        Ok(Self {
            al_ms: average_lagging(series)?,
            laal_ms: laal(series)?,
            laal_ca_ms: laal_ca(series)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub score: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

/// Splits `.,!?` off as separate tokens, then splits on whitespace.
pub fn bleu_tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for ch in text.chars() {
        if matches!(ch, '.' | ',' | '!' | '?') {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.push(ch);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level 4-gram BLEU on a 0..100 scale, single reference, no smoothing.
pub fn corpus_bleu<H, R>(hypotheses: &[H], references: &[R]) -> Result<BleuReport>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    if hypotheses.len() != references.len() {
        return Err(Error::Input(format!(
            "{} hypotheses for {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Input("BLEU needs at least one sentence pair".into()));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = bleu_tokenize(h.as_ref());
        let r = bleu_tokenize(r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            matches[n - 1] += hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; 4];
    for n in 0..4 {
        if totals[n] > 0 {
            precisions[n] = matches[n] as f64 / totals[n] as f64;
        }
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if precisions.iter().all(|&p| p > 0.0) {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0;
        100.0 * brevity_penalty * log_mean.exp()
    } else {
        0.0
    };
    Ok(BleuReport {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// One utterance's inputs to corpus aggregation. `latency` is `None` when
/// the utterance emitted nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceResult {
    pub latency: Option<LatencyReport>,
    pub hypothesis: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub count: usize,
    /// Utterances with defined latency.
    pub latency_count: usize,
    /// Unweighted mean over utterances with defined latency.
    pub latency: Option<LatencyReport>,
    pub bleu: BleuReport,
}

impl CorpusReport {
    pub fn al_s(&self) -> Option<f64> {
        self.latency.map(|l| round_to(l.al_ms / 1000.0, 2))
    }

    pub fn laal_s(&self) -> Option<f64> {
        self.latency.map(|l| round_to(l.laal_ms / 1000.0, 2))
    }

    pub fn laal_ca_s(&self) -> Option<f64> {
        self.latency.map(|l| round_to(l.laal_ca_ms / 1000.0, 2))
    }

    pub fn bleu_display(&self) -> f64 {
        round_to(self.bleu.score, 1)
    }
}

pub fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

/// Unweighted mean latency over utterances; BLEU over the whole corpus.
pub fn aggregate(results: &[UtteranceResult]) -> Result<CorpusReport> {
    if results.is_empty() {
        return Err(Error::Input("aggregation needs at least one utterance".into()));
    }
    let timed: Vec<&LatencyReport> = results.iter().filter_map(|r| r.latency.as_ref()).collect();
    let latency = (!timed.is_empty()).then(|| {
        let n = timed.len() as f64;
        let mean = |f: fn(&LatencyReport) -> f64| timed.iter().map(|l| f(l)).sum::<f64>() / n;
        LatencyReport {
            al_ms: mean(|l| l.al_ms),
            laal_ms: mean(|l| l.laal_ms),
            laal_ca_ms: mean(|l| l.laal_ca_ms),
        }
    });
    let hyps: Vec<&str> = results.iter().map(|r| r.hypothesis.as_str()).collect();
    let refs: Vec<&str> = results.iter().map(|r| r.reference.as_str()).collect();
    Ok(CorpusReport {
        count: results.len(),
        latency_count: timed.len(),
        latency,
        bleu: corpus_bleu(&hyps, &refs)?,
    })
}
