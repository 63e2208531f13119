//! Time arithmetic for chunked streaming: sources, decision schedules, agent
//! actions and the append-only commit log.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::TokenId;

pub const DEFAULT_FRAME_RATE_HZ: u32 = 50;

/// Where a stream's per-frame features come from.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameSource {
    /// Precomputed rows, one per frame.
    Stored(FeatureMatrix),
    /// Deterministic pseudo-features generated on demand.
    Synthetic { dim: usize, seed: u64 },
}

/// A timed source signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechStream {
    id: String,
    duration_ms: u64,
    frame_rate_hz: u32,
    frames: FrameSource,
}

impl SpeechStream {
    pub fn new(id: impl Into<String>, duration_ms: u64, frame_rate_hz: u32, frames: FrameSource) -> Result<Self> {
        if duration_ms == 0 {
            return Err(Error::InvalidConfig("duration_ms must be > 0".into()));
        }
        if frame_rate_hz == 0 {
            return Err(Error::InvalidConfig("frame_rate_hz must be > 0".into()));
        }
        let stream = Self {
            id: id.into(),
            duration_ms,
            frame_rate_hz,
            frames,
        };
        if let FrameSource::Stored(m) = &stream.frames {
            if m.rows() != stream.total_frames() {
                return Err(Error::Shape(format!(
                    "stream `{}` declares {} frames but stores {}",
                    stream.id,
                    stream.total_frames(),
                    m.rows()
                )));
            }
        }
        Ok(stream)
    }

    pub fn synthetic(id: impl Into<String>, duration_ms: u64, frame_rate_hz: u32, dim: usize) -> Result<Self> {
        let id = id.into();
        let seed = id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
        });
        Self::new(id, duration_ms, frame_rate_hz, FrameSource::Synthetic { dim, seed })
    }

    /// Wraps stored rows; the duration is the shortest whole-millisecond span
    /// that holds every row.
    pub fn from_features(id: impl Into<String>, frame_rate_hz: u32, features: FeatureMatrix) -> Result<Self> {
        if frame_rate_hz == 0 || frame_rate_hz > 1000 {
            return Err(Error::InvalidConfig(format!(
                "frame_rate_hz must be in 1..=1000, got {frame_rate_hz}"
            )));
        }
        let duration_ms = (features.rows() as u64 * 1000).div_ceil(u64::from(frame_rate_hz));
        Self::new(id, duration_ms, frame_rate_hz, FrameSource::Stored(features))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_ms
    }

    pub fn frame_rate_hz(&self) -> u32 {
        self.frame_rate_hz
    }

    pub fn frames(&self) -> &FrameSource {
        &self.frames
    }

    pub fn feature_dim(&self) -> usize {
        match &self.frames {
            FrameSource::Stored(m) => m.dim(),
            FrameSource::Synthetic { dim, .. } => *dim,
        }
    }

    pub fn total_frames(&self) -> usize {
        (self.duration_ms * u64::from(self.frame_rate_hz) / 1000) as usize
    }

    /// Frames fully received after `t_ms` of audio.
    pub fn frames_available(&self, t_ms: u64) -> Result<usize> {
        if t_ms > self.duration_ms {
            return Err(Error::OutOfRange {
                what: "t_ms",
                value: t_ms,
                max: self.duration_ms,
            });
        }
        Ok((t_ms * u64::from(self.frame_rate_hz) / 1000) as usize)
    }

    /// Feature rows for frames `0..count`.
    pub fn frame_rows(&self, count: usize) -> Result<FeatureMatrix> {
        if count > self.total_frames() {
            return Err(Error::OutOfRange {
                what: "frame count",
                value: count as u64,
                max: self.total_frames() as u64,
            });
        }
        match &self.frames {
            FrameSource::Stored(m) => m.prefix(count),
            FrameSource::Synthetic { dim, seed } => {
                let phase = (*seed % 10_007) as f64 / 10_007.0 * std::f64::consts::TAU;
                let mut values = Vec::with_capacity(count * dim);
                for i in 0..count {
                    for c in 0..*dim {
                        let x = (i as f64 + 1.0) * 0.37 * (c as f64 + 1.0) + phase;
                        values.push(x.sin());
                    }
                }
                FeatureMatrix::new(count, *dim, values)
            }
        }
    }
}

/// Decision points for one stream, in milliseconds of source consumed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSchedule {
    decision_times_ms: Vec<u64>,
}

impl ChunkSchedule {
    pub fn decision_times_ms(&self) -> &[u64] {
        &self.decision_times_ms
    }

    pub fn len(&self) -> usize {
        self.decision_times_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decision_times_ms.is_empty()
    }

    /// The final decision time, where the whole source has been delivered.
    pub fn source_finished_at(&self) -> u64 {
        *self.decision_times_ms.last().expect("schedule is never empty")
    }

    pub fn is_finished_at(&self, t_ms: u64) -> bool {
        t_ms >= self.source_finished_at()
    }
}

/// First decision after `start_ms` (or at stream end if sooner), then every
/// `chunk_ms`, with the last decision clamped to `duration_ms`.
pub fn build_schedule(duration_ms: u64, start_ms: u64, chunk_ms: u64) -> Result<ChunkSchedule> {
    for (name, v) in [
        ("duration_ms", duration_ms),
        ("start_ms", start_ms),
        ("chunk_ms", chunk_ms),
    ] {
        if v == 0 {
            return Err(Error::InvalidConfig(format!("{name} must be > 0")));
        }
    }
    let mut times = vec![start_ms.min(duration_ms)];
    let mut t = times[0];
    while t < duration_ms {
        t = t.saturating_add(chunk_ms).min(duration_ms);
        times.push(t);
    }
    Ok(ChunkSchedule {
        decision_times_ms: times,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentAction {
    Read,
    Write(Vec<TokenId>),
}

impl AgentAction {
    /// A write action; `None` for an empty token list.
    pub fn write(tokens: Vec<TokenId>) -> Option<Self> {
        (!tokens.is_empty()).then_some(AgentAction::Write(tokens))
    }

    pub fn is_read(&self) -> bool {
        matches!(self, AgentAction::Read)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitEntry {
    pub token: TokenId,
    /// Source audio consumed when the token was emitted.
    pub delay_ms: u64,
    /// Clock time since stream start when the token was emitted.
    pub elapsed_ms: u64,
}

/// Append-only record of emitted tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitLog {
    entries: Vec<CommitEntry>,
}

impl CommitLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[CommitEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tokens(&self) -> Vec<TokenId> {
        self.entries.iter().map(|e| e.token).collect()
    }

    pub fn delays_ms(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.delay_ms).collect()
    }

    pub fn elapsed_ms(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.elapsed_ms).collect()
    }

    /// Appends `tokens`, all stamped with the same delay and clock time.
    pub fn commit(&mut self, tokens: &[TokenId], delay_ms: u64, elapsed_ms: u64) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Contract("commit with no tokens".into()));
        }
        if elapsed_ms < delay_ms {
            return Err(Error::Contract(format!(
                "elapsed {elapsed_ms} ms precedes consumed audio {delay_ms} ms"
            )));
        }
        if let Some(last) = self.entries.last() {
            if delay_ms < last.delay_ms {
                return Err(Error::Contract(format!(
                    "delay regressed from {} to {delay_ms} ms",
                    last.delay_ms
                )));
            }
            if elapsed_ms < last.elapsed_ms {
                return Err(Error::Contract(format!(
                    "elapsed regressed from {} to {elapsed_ms} ms",
                    last.elapsed_ms
                )));
            }
        }
        self.entries.extend(tokens.iter().map(|&token| CommitEntry {
            token,
            delay_ms,
            elapsed_ms,
        }));
        Ok(())
    }
}
