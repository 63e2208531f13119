//! Simultaneous speech translation on top of an offline chunk decoder.
//!
//! A stream is cut into decision points (`stream`). At each one the received
//! audio is re-encoded and shortened by a convolutional adapter (`adapter`),
//! re-decoded with the committed output forced as a prefix (`decoding`), and
//! the hold-n policy writes everything but the last `n` tokens (`policy`).
//! `metrics` scores latency and quality; `harness` runs whole manifests.

pub mod adapter;
pub mod decoding;
pub mod error;
pub mod features;
pub mod harness;
pub mod metrics;
pub mod policy;
pub mod stream;

pub type TokenId = u32;

pub use adapter::{
    adapt, conv1d_forward, mock_encode, output_length, Activation, AdapterConfig, ConvSpec, Encoder, MockEncoder,
    Projector,
};
pub use decoding::{
    beam_search, compose_template, table_model_next, EncodedSpeech, FeatureModel, Hypothesis, PromptSequence,
    ScoreModel, TableModel, Vocabulary,
};
pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use harness::{
    load_manifest, run_eval, write_outputs, EvalOptions, InstanceLog, ManifestEntry, ModelChoice, RunReport,
};
pub use metrics::{
    aggregate, average_lagging, corpus_bleu, laal, laal_ca, BleuReport, CorpusReport, DelaySeries, LatencyReport,
};
pub use policy::{run_stream, selective_output, ComputeCost, HoldNAgent, PolicyConfig, SelectiveResult, StreamSession};
pub use stream::{build_schedule, AgentAction, ChunkSchedule, CommitLog, SpeechStream};
