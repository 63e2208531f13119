//! Python bindings for `simulst`.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use simulst::adapter::{self, Activation, AdapterConfig, ConvSpec, MockEncoder, DEFAULT_ENCODER_DIM};
use simulst::decoding::{Hypothesis, TableModel, Vocabulary};
use simulst::harness::{self, EvalOptions, ModelChoice};
use simulst::metrics::{self, DelaySeries};
use simulst::policy::{self, ComputeCost, HoldNAgent, SelectiveResult};
use simulst::stream::{self, AgentAction, SpeechStream};
use simulst::FeatureMatrix;

create_exception!(simulst_py, SimulstError, PyException);

fn err(e: simulst::Error) -> PyErr {
    SimulstError::new_err(e.to_string())
}

#[pyclass(name = "PolicyConfig", from_py_object)]
#[derive(Clone, Copy)]
struct PyPolicyConfig {
    #[pyo3(get, set)]
    start_ms: u64,
    #[pyo3(get, set)]
    chunk_ms: u64,
    #[pyo3(get, set)]
    hold_n: usize,
    #[pyo3(get, set)]
    beam: usize,
    #[pyo3(get, set)]
    max_len: usize,
}

#[pymethods]
impl PyPolicyConfig {
    #[new]
    #[pyo3(signature = (start_ms=2000, chunk_ms=2500, hold_n=7, beam=4, max_len=256))]
    fn new(start_ms: u64, chunk_ms: u64, hold_n: usize, beam: usize, max_len: usize) -> Self {
        Self {
            start_ms,
            chunk_ms,
            hold_n,
            beam,
            max_len,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "PolicyConfig(start_ms={}, chunk_ms={}, hold_n={}, beam={}, max_len={})",
            self.start_ms, self.chunk_ms, self.hold_n, self.beam, self.max_len
        )
    }
}

impl From<PyPolicyConfig> for policy::PolicyConfig {
    fn from(c: PyPolicyConfig) -> Self {
        Self {
            start_ms: c.start_ms,
            chunk_ms: c.chunk_ms,
            hold_n: c.hold_n,
            beam: c.beam,
            max_len: c.max_len,
        }
    }
}

/// One streaming run: emitted words with their delays and clock stamps.
#[pyclass(name = "StreamResult", skip_from_py_object)]
struct PyStreamResult {
    #[pyo3(get)]
    prediction: String,
    #[pyo3(get)]
    delays_ms: Vec<u64>,
    #[pyo3(get)]
    elapsed_ms: Vec<u64>,
    /// `(time_ms, "read" | "write", words)` per decision.
    #[pyo3(get)]
    actions: Vec<(u64, String, Vec<String>)>,
}

#[pyfunction]
fn build_schedule(duration_ms: u64, start_ms: u64, chunk_ms: u64) -> PyResult<Vec<u64>> {
    stream::build_schedule(duration_ms, start_ms, chunk_ms)
        .map(|s| s.decision_times_ms().to_vec())
        .map_err(err)
}

#[pyfunction]
fn output_length(t: usize, kernel: usize, stride: usize, padding: usize) -> PyResult<usize> {
    if kernel == 0 || stride == 0 {
        return Err(SimulstError::new_err("kernel and stride must be >= 1"));
    }
    Ok(adapter::output_length(t, kernel, stride, padding))
}

/// Convolves `rows` (T x dim) with a `filters x (kernel*dim)` weight matrix.
#[pyfunction]
#[pyo3(signature = (rows, weights, bias, kernel, stride, padding, relu=false))]
#[allow(clippy::too_many_arguments)]
fn conv1d_forward(
    rows: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    kernel: usize,
    stride: usize,
    padding: usize,
    relu: bool,
) -> PyResult<Vec<Vec<f64>>> {
    let input = FeatureMatrix::from_rows(&rows).map_err(err)?;
    let in_dim = weights.first().map_or(0, Vec::len) / kernel.max(1);
    let activation = if relu { Activation::Relu } else { Activation::None };
    let spec = ConvSpec::new(
        kernel,
        stride,
        padding,
        in_dim,
        weights.len(),
        weights.concat(),
        bias,
        activation,
    )
    .map_err(err)?;
    adapter::conv1d_forward(&input, &spec).map(|m| m.to_rows()).map_err(err)
}

/// Returns the kept prefix, or `None` for a Read.
#[pyfunction]
fn selective_output(tokens: Vec<u32>, n: usize, source_finished: bool) -> Option<Vec<u32>> {
    let hyp = Hypothesis {
        tokens,
        score: 0.0,
        finished: true,
    };
    match policy::selective_output(&hyp, n, source_finished) {
        SelectiveResult::PrunedPrefix(p) => Some(p),
        SelectiveResult::Read => None,
    }
}

fn series(delays_ms: Vec<f64>, source_duration_ms: f64, ref_len: usize, elapsed_ms: Option<Vec<f64>>) -> DelaySeries {
    let s = DelaySeries::new(delays_ms, source_duration_ms, ref_len);
    match elapsed_ms {
        Some(e) => s.with_elapsed(e),
        None => s,
    }
}

#[pyfunction]
fn average_lagging(delays_ms: Vec<f64>, source_duration_ms: f64, ref_len: usize) -> PyResult<f64> {
    metrics::average_lagging(&series(delays_ms, source_duration_ms, ref_len, None)).map_err(err)
}

#[pyfunction]
fn laal(delays_ms: Vec<f64>, source_duration_ms: f64, ref_len: usize) -> PyResult<f64> {
    metrics::laal(&series(delays_ms, source_duration_ms, ref_len, None)).map_err(err)
}

#[pyfunction]
fn laal_ca(delays_ms: Vec<f64>, elapsed_ms: Vec<f64>, source_duration_ms: f64, ref_len: usize) -> PyResult<f64> {
    metrics::laal_ca(&series(delays_ms, source_duration_ms, ref_len, Some(elapsed_ms))).map_err(err)
}

#[pyfunction]
fn corpus_bleu(hypotheses: Vec<String>, references: Vec<String>) -> PyResult<f64> {
    metrics::corpus_bleu(&hypotheses, &references)
        .map(|r| r.score)
        .map_err(err)
}

/// Streams a scripted utterance through the hold-n policy with the table
/// model: `target[i]` becomes predictable after `reveal[i]` encoder frames.
#[pyfunction]
#[pyo3(signature = (target, reveal, duration_ms, config=None, frame_rate_hz=50, compute_cost_ms=0))]
fn run_table_stream(
    target: Vec<String>,
    reveal: Vec<usize>,
    duration_ms: u64,
    config: Option<PyPolicyConfig>,
    frame_rate_hz: u32,
    compute_cost_ms: u64,
) -> PyResult<PyStreamResult> {
    let config: policy::PolicyConfig = config.map(Into::into).unwrap_or_default();
    let vocab = Vocabulary::from_words(&target);
    let ids = vocab.tokenize(&target.join(" ")).map_err(err)?;
    let model = TableModel::new(ids, reveal, vocab.len()).map_err(err)?;
    let stream = SpeechStream::synthetic("py", duration_ms, frame_rate_hz, DEFAULT_ENCODER_DIM).map_err(err)?;
    let encoder = MockEncoder::new(DEFAULT_ENCODER_DIM);
    let adapter = AdapterConfig::default();
    let session = HoldNAgent::new(&encoder, &adapter, &model, config)
        .with_compute_cost(ComputeCost::Fixed(compute_cost_ms))
        .run_session(&stream)
        .map_err(err)?;
    let words = |ids: &[u32]| -> PyResult<Vec<String>> {
        Ok(vocab
            .detokenize(ids)
            .map_err(err)?
            .split_whitespace()
            .map(str::to_string)
            .collect())
    };
    let mut actions = Vec::new();
    for d in session.trace() {
        actions.push(match &d.action {
            AgentAction::Read => (d.time_ms, "read".to_string(), Vec::new()),
            AgentAction::Write(t) => (d.time_ms, "write".to_string(), words(t)?),
        });
    }
    let log = session.committed();
    Ok(PyStreamResult {
        prediction: vocab.detokenize(&log.tokens()).map_err(err)?,
        delays_ms: log.delays_ms(),
        elapsed_ms: log.elapsed_ms(),
        actions,
    })
}

/// Evaluates a manifest and writes the output files; returns report.json's
/// content.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, config=None, model="table", compute_cost_ms=0, sweep_hold_n=Vec::new()))]
fn run_eval(
    manifest: PathBuf,
    out_dir: PathBuf,
    config: Option<PyPolicyConfig>,
    model: &str,
    compute_cost_ms: u64,
    sweep_hold_n: Vec<usize>,
) -> PyResult<String> {
    let model: ModelChoice = model.parse().map_err(SimulstError::new_err)?;
    let entries = harness::load_manifest(&manifest).map_err(err)?;
    let options = EvalOptions {
        policy: config.map(Into::into).unwrap_or_default(),
        model,
        compute_cost: ComputeCost::Fixed(compute_cost_ms),
        sweep_hold_n,
    };
    let out = harness::run_eval(&entries, &options).map_err(err)?;
    harness::write_outputs(&out.report, &out.logs, &out_dir).map_err(err)?;
    serde_json::to_string(&out.report).map_err(|e| SimulstError::new_err(e.to_string()))
}

#[pymodule]
fn simulst_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SimulstError", m.py().get_type::<SimulstError>())?;
    m.add_class::<PyPolicyConfig>()?;
    m.add_class::<PyStreamResult>()?;
    m.add_function(wrap_pyfunction!(build_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(output_length, m)?)?;
    m.add_function(wrap_pyfunction!(conv1d_forward, m)?)?;
    m.add_function(wrap_pyfunction!(selective_output, m)?)?;
    m.add_function(wrap_pyfunction!(average_lagging, m)?)?;
    m.add_function(wrap_pyfunction!(laal, m)?)?;
    m.add_function(wrap_pyfunction!(laal_ca, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(run_table_stream, m)?)?;
    m.add_function(wrap_pyfunction!(run_eval, m)?)?;
    Ok(())
}
