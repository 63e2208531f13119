mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{offline_decode, random_table_case};
use simulst::adapter::{AdapterConfig, MockEncoder, DEFAULT_ENCODER_DIM};
use simulst::decoding::{FeatureModel, TableModel};
use simulst::metrics::{average_lagging, DelaySeries};
use simulst::policy::{run_stream, HoldNAgent, PolicyConfig};
use simulst::stream::{AgentAction, SpeechStream};

fn golden_model() -> TableModel {
    TableModel::new(vec![3, 4, 5, 6], vec![50, 100, 200, 250], 7).unwrap()
}

#[test]
fn golden_run_stream() {
    let stream = SpeechStream::synthetic("golden", 6000, 50, DEFAULT_ENCODER_DIM).unwrap();
    let config = PolicyConfig {
        hold_n: 2,
        beam: 1,
        ..PolicyConfig::default()
    };
    let encoder = MockEncoder::new(DEFAULT_ENCODER_DIM);
    let log = run_stream(&stream, &encoder, &AdapterConfig::default(), &golden_model(), config).unwrap();
    assert_eq!(log.tokens(), vec![3, 4, 5, 6]);
    assert_eq!(log.delays_ms(), vec![4500, 6000, 6000, 6000]);
    assert_eq!(log.elapsed_ms(), log.delays_ms());
}

#[test]
fn single_finished_decision_is_offline_decoding() {
    let stream = SpeechStream::synthetic("off", 6000, 50, DEFAULT_ENCODER_DIM).unwrap();
    let adapter = AdapterConfig::default();
    let model = golden_model();
    let config = PolicyConfig {
        start_ms: 6000,
        chunk_ms: 6000,
        ..PolicyConfig::default()
    };
    let encoder = MockEncoder::new(DEFAULT_ENCODER_DIM);
    let log = run_stream(&stream, &encoder, &adapter, &model, config).unwrap();
    assert_eq!(log.tokens(), offline_decode(&stream, &adapter, &model, 4, 256));
    assert!(log.delays_ms().iter().all(|&d| d == 6000));
    assert_eq!(encoder.calls(), 1);
}

#[test]
fn feature_model_streams_without_revision() {
    let adapter = AdapterConfig::default();
    let model = FeatureModel::seeded(20, adapter.out_dim(), 5);
    for (i, hold_n) in [0usize, 2, 7].into_iter().enumerate() {
        let stream = SpeechStream::synthetic(format!("f{i}"), 9000, 50, DEFAULT_ENCODER_DIM).unwrap();
        let encoder = MockEncoder::new(DEFAULT_ENCODER_DIM);
        let config = PolicyConfig {
            hold_n,
            chunk_ms: 1000,
            ..PolicyConfig::default()
        };
        let session = HoldNAgent::new(&encoder, &adapter, &model, config)
            .run_session(&stream)
            .unwrap();
        let mut written = Vec::new();
        for d in session.trace() {
            assert!(d.hypothesis.tokens.starts_with(&d.committed_before));
            if let AgentAction::Write(t) = &d.action {
                written.extend_from_slice(t);
            }
        }
        assert_eq!(written, session.committed().tokens());
        assert_eq!(written, session.trace().last().unwrap().hypothesis.tokens);
    }
}

#[test]
fn hold_n_latency_is_monotone_on_table_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let adapter = AdapterConfig::default();
    for i in 0..60 {
        let case = random_table_case(&mut rng, i);
        let mut prev: Option<f64> = None;
        let mut outputs = Vec::new();
        for n in [0usize, 2, 4, 7, 10] {
            let config = PolicyConfig {
                hold_n: n,
                ..case.config
            };
            let encoder = MockEncoder::new(DEFAULT_ENCODER_DIM);
            let log = run_stream(&case.stream, &encoder, &adapter, &case.model, config).unwrap();
            outputs.push(log.tokens());
            if log.is_empty() {
                continue;
            }
            let al = average_lagging(&DelaySeries::from_log(
                &log,
                case.stream.duration_ms(),
                case.model.target().len(),
            ))
            .unwrap();
            if let Some(p) = prev {
                assert!(al >= p - 1e-9, "case {i}: AL dropped from {p} to {al} at n={n}");
            }
            prev = Some(al);
        }
        assert!(
            outputs.windows(2).all(|w| w[0] == w[1]),
            "case {i}: output changed with n"
        );
    }
}

#[test]
fn sessions_run_in_parallel() {
    let adapter = AdapterConfig::default();
    let model = golden_model();
    let config = PolicyConfig {
        hold_n: 2,
        beam: 1,
        ..PolicyConfig::default()
    };
    let streams: Vec<SpeechStream> = (0..16)
        .map(|i| SpeechStream::synthetic(format!("p{i}"), 6000, 50, DEFAULT_ENCODER_DIM).unwrap())
        .collect();
    let encoder = MockEncoder::new(DEFAULT_ENCODER_DIM);
    let logs: Vec<_> = streams
        .par_iter()
        .map(|s| run_stream(s, &encoder, &adapter, &model, config).unwrap())
        .collect();
    assert!(logs.iter().all(|l| l.delays_ms() == vec![4500, 6000, 6000, 6000]));
    assert_eq!(encoder.calls(), 16 * 3);
}
