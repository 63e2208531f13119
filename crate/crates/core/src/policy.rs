//! The hold-n streaming policy.
//!
//! At every decision point the whole received prefix is re-encoded and
//! re-decoded with the already committed tokens forced as a prefix. The last
//! `hold_n` tokens of the resulting hypothesis are withheld until the source
//! is finished, and whatever extends the commit log is written.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapter::{adapt, AdapterConfig, Encoder};
use crate::decoding::{beam_search, EncodedSpeech, Hypothesis, ScoreModel};
use crate::error::{Error, Result};
use crate::stream::{build_schedule, AgentAction, ChunkSchedule, CommitLog, SpeechStream};
use crate::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub start_ms: u64,
    pub chunk_ms: u64,
    pub hold_n: usize,
    pub beam: usize,
    pub max_len: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            start_ms: 2000,
            chunk_ms: 2500,
            hold_n: 7,
            beam: 4,
            max_len: 256,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.start_ms == 0 || self.chunk_ms == 0 {
            return Err(Error::InvalidConfig("start_ms and chunk_ms must be >= 1".into()));
        }
        if self.beam == 0 {
            return Err(Error::InvalidConfig("beam must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectiveResult {
    PrunedPrefix(Vec<TokenId>),
    Read,
}

/// Withholds the last `min(n, l)` tokens of an unfinished-source hypothesis;
/// an empty remainder means Read.
pub fn selective_output(hypothesis: &Hypothesis, n: usize, source_finished: bool) -> SelectiveResult {
    let tokens = &hypothesis.tokens;
    if source_finished {
        return SelectiveResult::PrunedPrefix(tokens.clone());
    }
    let withheld = n.min(tokens.len());
    let prefix = &tokens[..tokens.len() - withheld];
    if prefix.is_empty() {
        SelectiveResult::Read
    } else {
        SelectiveResult::PrunedPrefix(prefix.to_vec())
    }
}

/// How per-decision computation time is charged to the simulated clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeCost {
    /// A constant number of milliseconds per decision.
    Fixed(u64),
    /// Measured wall time of encoding plus decoding.
    Wall,
}

impl Default for ComputeCost {
    fn default() -> Self {
        ComputeCost::Fixed(0)
    }
}

/// What happened at one decision point.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub time_ms: u64,
    pub frames: usize,
    pub source_finished: bool,
    pub committed_before: Vec<TokenId>,
    pub hypothesis: Hypothesis,
    pub action: AgentAction,
    pub compute_ms: u64,
}

/// Per-stream state of the agent loop.
#[derive(Debug, Clone)]
pub struct StreamSession<'a> {
    stream: &'a SpeechStream,
    schedule: ChunkSchedule,
    committed: CommitLog,
    next_decision: usize,
    compute_total_ms: u64,
    trace: Vec<DecisionRecord>,
}

impl<'a> StreamSession<'a> {
    pub fn new(stream: &'a SpeechStream, config: &PolicyConfig) -> Result<Self> {
        config.validate()?;
        let schedule = build_schedule(stream.duration_ms(), config.start_ms, config.chunk_ms)?;
        Ok(Self {
            stream,
            schedule,
            committed: CommitLog::new(),
            next_decision: 0,
            compute_total_ms: 0,
            trace: Vec::new(),
        })
    }

    pub fn stream(&self) -> &SpeechStream {
        self.stream
    }

    pub fn schedule(&self) -> &ChunkSchedule {
        &self.schedule
    }

    pub fn committed(&self) -> &CommitLog {
        &self.committed
    }

    /// Index of the next decision (0-based).
    pub fn chunk_index(&self) -> usize {
        self.next_decision
    }

    pub fn pending_time_ms(&self) -> Option<u64> {
        self.schedule.decision_times_ms().get(self.next_decision).copied()
    }

    pub fn is_done(&self) -> bool {
        self.pending_time_ms().is_none()
    }

    pub fn trace(&self) -> &[DecisionRecord] {
        &self.trace
    }

    pub fn into_log(self) -> CommitLog {
        self.committed
    }
}

/// The encoder, adapter and decoder used by the policy, plus its settings.
#[derive(Clone, Copy)]
pub struct HoldNAgent<'a> {
    pub encoder: &'a dyn Encoder,
    pub adapter: &'a AdapterConfig,
    pub model: &'a dyn ScoreModel,
    pub config: PolicyConfig,
    pub compute_cost: ComputeCost,
}

impl<'a> HoldNAgent<'a> {
    pub fn new(
        encoder: &'a dyn Encoder,
        adapter: &'a AdapterConfig,
        model: &'a dyn ScoreModel,
        config: PolicyConfig,
    ) -> Self {
        Self {
            encoder,
            adapter,
            model,
            config,
            compute_cost: ComputeCost::default(),
        }
    }

    pub fn with_compute_cost(mut self, cost: ComputeCost) -> Self {
        self.compute_cost = cost;
        self
    }

    /// Runs the session's pending decision.
    pub fn step(&self, session: &mut StreamSession<'_>) -> Result<AgentAction> {
        let t = session
            .pending_time_ms()
            .ok_or_else(|| Error::Contract("step called on a finished session".into()))?;
        let finished = session.schedule.is_finished_at(t);
        let frames = session.stream.frames_available(t)?;

        let started = Instant::now();
        let encoded = self.encoder.encode(session.stream, frames)?;
        let speech = EncodedSpeech::new(adapt(&encoded, self.adapter)?, frames);
        let committed = session.committed.tokens();
        let top = beam_search(self.model, &speech, self.config.beam, self.config.max_len, &committed)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Contract("beam search returned nothing".into()))?;
        let compute_ms = match self.compute_cost {
            ComputeCost::Fixed(ms) => ms,
            ComputeCost::Wall => started.elapsed().as_millis() as u64,
        };

        if !top.tokens.starts_with(&committed) {
            return Err(Error::Contract(format!(
                "hypothesis {:?} does not extend committed {:?}",
                top.tokens, committed
            )));
        }
        session.compute_total_ms += compute_ms;

        let action = match selective_output(&top, self.config.hold_n, finished) {
            SelectiveResult::PrunedPrefix(prefix) if prefix.len() > committed.len() => {
                let delta = prefix[committed.len()..].to_vec();
                session.committed.commit(&delta, t, t + session.compute_total_ms)?;
                AgentAction::Write(delta)
            }
            _ => AgentAction::Read,
        };

        session.trace.push(DecisionRecord {
            time_ms: t,
            frames,
            source_finished: finished,
            committed_before: committed,
            hypothesis: top,
            action: action.clone(),
            compute_ms,
        });
        session.next_decision += 1;
        Ok(action)
    }

    /// Runs every decision of `stream` and returns the finished session.
    pub fn run_session<'s>(&self, stream: &'s SpeechStream) -> Result<StreamSession<'s>> {
        let mut session = StreamSession::new(stream, &self.config)?;
        while !session.is_done() {
            self.step(&mut session)?;
        }
        Ok(session)
    }

    pub fn run_stream(&self, stream: &SpeechStream) -> Result<CommitLog> {
        self.run_session(stream).map(StreamSession::into_log)
    }
}

pub fn run_stream(
    stream: &SpeechStream,
    encoder: &dyn Encoder,
    adapter: &AdapterConfig,
    model: &dyn ScoreModel,
    config: PolicyConfig,
) -> Result<CommitLog> {
    HoldNAgent::new(encoder, adapter, model, config).run_stream(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::{MockEncoder, DEFAULT_ENCODER_DIM};
    use crate::decoding::TableModel;

    fn hyp(tokens: Vec<TokenId>) -> Hypothesis {
        Hypothesis {
            tokens,
            score: 0.0,
            finished: true,
        }
    }

    #[test]
    fn selective_output_examples() {
        let h = hyp((10..20).collect());
        assert_eq!(
            selective_output(&h, 7, false),
            SelectiveResult::PrunedPrefix(vec![10, 11, 12])
        );
        assert_eq!(
            selective_output(&hyp((10..15).collect()), 7, false),
            SelectiveResult::Read
        );
        assert_eq!(
            selective_output(&h, 7, true),
            SelectiveResult::PrunedPrefix(h.tokens.clone())
        );
        assert_eq!(
            selective_output(&h, 0, false),
            SelectiveResult::PrunedPrefix(h.tokens.clone())
        );
        assert_eq!(selective_output(&hyp(vec![]), 0, false), SelectiveResult::Read);
        assert_eq!(
            selective_output(&hyp(vec![]), 3, true),
            SelectiveResult::PrunedPrefix(vec![])
        );
    }

    fn golden() -> (SpeechStream, TableModel, PolicyConfig) {
        let stream = SpeechStream::synthetic("golden", 6000, 50, DEFAULT_ENCODER_DIM).unwrap();
        let model = TableModel::new(vec![3, 4, 5, 6], vec![50, 100, 200, 250], 7).unwrap();
        let config = PolicyConfig {
            hold_n: 2,
            beam: 1,
            ..PolicyConfig::default()
        };
        (stream, model, config)
    }

    #[test]
    fn golden_steps() {
        let (stream, model, config) = golden();
        let encoder = MockEncoder::new(DEFAULT_ENCODER_DIM);
        let adapter = AdapterConfig::default();
        let agent = HoldNAgent::new(&encoder, &adapter, &model, config);
        let mut session = StreamSession::new(&stream, &config).unwrap();

        assert_eq!(agent.step(&mut session).unwrap(), AgentAction::Read);
        assert_eq!(session.trace()[0].frames, 100);
        assert_eq!(session.trace()[0].hypothesis.tokens, vec![3, 4]);

        assert_eq!(agent.step(&mut session).unwrap(), AgentAction::Write(vec![3]));
        assert_eq!(session.trace()[1].frames, 225);
        assert_eq!(session.trace()[1].hypothesis.tokens, vec![3, 4, 5]);
        assert_eq!(session.committed().delays_ms(), vec![4500]);

        assert_eq!(agent.step(&mut session).unwrap(), AgentAction::Write(vec![4, 5, 6]));
        assert!(session.trace()[2].source_finished);
        assert_eq!(session.committed().delays_ms(), vec![4500, 6000, 6000, 6000]);
        assert!(session.is_done());
        assert!(matches!(agent.step(&mut session), Err(Error::Contract(_))));
        assert_eq!(encoder.calls(), 3);
    }

    #[test]
    fn fixed_compute_cost_accumulates() {
        let (stream, model, config) = golden();
        let encoder = MockEncoder::new(DEFAULT_ENCODER_DIM);
        let adapter = AdapterConfig::default();
        let log = HoldNAgent::new(&encoder, &adapter, &model, config)
            .with_compute_cost(ComputeCost::Fixed(100))
            .run_stream(&stream)
            .unwrap();
        assert_eq!(log.elapsed_ms(), vec![4700, 6300, 6300, 6300]);
    }

    #[test]
    fn hold_zero_emits_everything_at_first_decision() {
        let stream = SpeechStream::synthetic("h0", 6000, 50, DEFAULT_ENCODER_DIM).unwrap();
        let model = TableModel::new(vec![3, 4, 5], vec![10, 20, 30], 6).unwrap();
        let encoder = MockEncoder::new(DEFAULT_ENCODER_DIM);
        let adapter = AdapterConfig::default();
        let config = PolicyConfig {
            hold_n: 0,
            ..PolicyConfig::default()
        };
        let log = run_stream(&stream, &encoder, &adapter, &model, config).unwrap();
        assert_eq!(log.tokens(), vec![3, 4, 5]);
        assert_eq!(log.delays_ms(), vec![2000; 3]);
    }

    #[test]
    fn rejects_bad_config() {
        let stream = SpeechStream::synthetic("bad", 1000, 50, 2).unwrap();
        let config = PolicyConfig {
            beam: 0,
            ..PolicyConfig::default()
        };
        assert!(StreamSession::new(&stream, &config).is_err());
    }
}
