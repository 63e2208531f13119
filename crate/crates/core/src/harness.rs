//! Batch evaluation: manifest ingestion, per-instance streaming runs, instance
//! logs, the corpus report and latency/quality curve points.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterConfig, MockEncoder, DEFAULT_CONV_FILTERS, DEFAULT_ENCODER_DIM, DEFAULT_LLM_DIM};
use crate::decoding::{FeatureModel, ScoreModel, TableModel, Vocabulary};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::{aggregate, round_to, CorpusReport, DelaySeries, LatencyReport, UtteranceResult};
use crate::policy::{ComputeCost, HoldNAgent, PolicyConfig};
use crate::stream::SpeechStream;

const ADAPTER_SEED: u64 = 17;
const FEATURE_MODEL_SEED: u64 = 29;

fn default_frame_rate() -> u32 {
    crate::stream::DEFAULT_FRAME_RATE_HZ
}

/// Scripted source: the table model's target words and the encoder frame
/// count at which each becomes predictable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub target: Vec<String>,
    pub reveal: Vec<usize>,
    pub duration_ms: u64,
    #[serde(default = "default_frame_rate")]
    pub frame_rate_hz: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Features(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub source: Source,
    pub reference: String,
}

#[derive(Deserialize)]
struct RawEntry {
    id: String,
    reference: Option<String>,
    features_path: Option<PathBuf>,
    synthetic: Option<SyntheticSpec>,
}

/// Parses a JSONL manifest. Blank lines are skipped; relative feature paths
/// resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    parse_manifest(&text, path, base)
}

pub fn parse_manifest(text: &str, path: &Path, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let raw: RawEntry = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let reference = match raw.reference {
            Some(r) if !r.trim().is_empty() => r,
            Some(_) => return Err(err("empty `reference`".into())),
            None => return Err(err("missing `reference`".into())),
        };
        let source = match (raw.features_path, raw.synthetic) {
            (Some(p), None) => Source::Features(if p.is_absolute() { p } else { base.join(p) }),
            (None, Some(s)) => {
                if s.target.len() != s.reveal.len() {
                    return Err(err(format!(
                        "synthetic target has {} tokens but reveal has {}",
                        s.target.len(),
                        s.reveal.len()
                    )));
                }
                Source::Synthetic(s)
            }
            _ => return Err(err("exactly one of `features_path` or `synthetic` is required".into())),
        };
        entries.push(ManifestEntry {
            id: raw.id,
            source,
            reference,
        });
    }
    Ok(entries)
}

/// Reads `frame_rate_hz=<int> dim=<int>` followed by one row per frame.
pub fn read_feature_file(path: &Path) -> Result<(u32, FeatureMatrix)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_file(&text, path)
}

pub fn parse_feature_file(text: &str, path: &Path) -> Result<(u32, FeatureMatrix)> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l)
        .ok_or_else(|| err(1, "missing header".into()))?;
    let (mut rate, mut dim) = (None, None);
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("frame_rate_hz", v)) => rate = v.parse::<u32>().ok(),
            Some(("dim", v)) => dim = v.parse::<usize>().ok(),
            _ => return Err(err(1, format!("unexpected header field `{field}`"))),
        }
    }
    let (rate, dim) = match (rate, dim) {
        (Some(r), Some(d)) if r > 0 && d > 0 => (r, d),
        _ => return Err(err(1, "header needs positive frame_rate_hz and dim".into())),
    };
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| err(i + 1, format!("bad number: {e}")))?;
        if row.len() != dim {
            return Err(err(i + 1, format!("expected {dim} values, got {}", row.len())));
        }
        values.extend(row);
        rows += 1;
    }
    let m = FeatureMatrix::new(rows, dim, values).map_err(|e| err(0, e.to_string()))?;
    Ok((rate, m))
}

pub fn write_feature_file(path: &Path, frame_rate_hz: u32, features: &FeatureMatrix) -> Result<()> {
    let mut out = format!("frame_rate_hz={frame_rate_hz} dim={}\n", features.dim());
    for i in 0..features.rows() {
        let row: Vec<String> = features.row(i).iter().map(f64::to_string).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    /// Scripted table model; needs synthetic entries.
    Table,
    /// Seeded readout model over adapted features.
    File,
}

impl std::str::FromStr for ModelChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "table" => Ok(ModelChoice::Table),
            "file" => Ok(ModelChoice::File),
            other => Err(format!("unknown model `{other}` (expected table|file)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub policy: PolicyConfig,
    pub model: ModelChoice,
    pub compute_cost: ComputeCost,
    /// hold-n values for curve points; empty means one point for `policy`.
    pub sweep_hold_n: Vec<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::default(),
            model: ModelChoice::Table,
            compute_cost: ComputeCost::default(),
            sweep_hold_n: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceLog {
    pub id: String,
    pub prediction: String,
    pub delays_ms: Vec<u64>,
    pub elapsed_ms: Vec<u64>,
    pub source_duration_ms: u64,
    pub reference: String,
}

impl InstanceLog {
    pub fn ref_len(&self) -> usize {
        self.reference.split_whitespace().count()
    }

    pub fn delay_series(&self) -> DelaySeries {
        DelaySeries::new(
            self.delays_ms.iter().map(|&d| d as f64).collect(),
            self.source_duration_ms as f64,
            self.ref_len(),
        )
        .with_elapsed(self.elapsed_ms.iter().map(|&d| d as f64).collect())
    }

    /// `None` when nothing was emitted.
    pub fn latency(&self) -> Option<LatencyReport> {
        LatencyReport::compute(&self.delay_series()).ok()
    }

    fn utterance(&self) -> UtteranceResult {
        UtteranceResult {
            latency: self.latency(),
            hypothesis: self.prediction.clone(),
            reference: self.reference.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub id: String,
    pub hyp_len: usize,
    pub ref_len: usize,
    /// Missing when the instance emitted nothing.
    pub latency: Option<LatencyReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceFailure {
    pub id: String,
    pub error: String,
}

/// Corpus numbers, raw and rounded for display.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    #[serde(flatten)]
    pub report: CorpusReport,
    pub bleu_display: f64,
    pub al_s: Option<f64>,
    pub laal_s: Option<f64>,
    pub laal_ca_s: Option<f64>,
}

impl From<CorpusReport> for CorpusSummary {
    fn from(report: CorpusReport) -> Self {
        Self {
            bleu_display: report.bleu_display(),
            al_s: report.al_s(),
            laal_s: report.laal_s(),
            laal_ca_s: report.laal_ca_s(),
            report,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub label: String,
    pub hold_n: usize,
    pub bleu: Option<f64>,
    pub al_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: EvalOptions,
    pub succeeded: usize,
    pub failed: usize,
    pub instances: Vec<InstanceMetrics>,
    pub failures: Vec<InstanceFailure>,
    pub corpus: Option<CorpusSummary>,
    pub curve: Vec<CurvePoint>,
}

impl RunReport {
    pub fn all_succeeded(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: RunReport,
    pub logs: Vec<InstanceLog>,
}

/// Corpus metrics recomputed from instance logs alone.
pub fn corpus_from_logs(logs: &[InstanceLog]) -> Option<CorpusReport> {
    if logs.is_empty() {
        return None;
    }
    let utterances: Vec<UtteranceResult> = logs.iter().map(InstanceLog::utterance).collect();
    aggregate(&utterances).ok()
}

/// Vocabulary shared by every feature-model instance: sorted reference words.
fn corpus_vocabulary(entries: &[ManifestEntry]) -> Vocabulary {
    let words: BTreeSet<&str> = entries.iter().flat_map(|e| e.reference.split_whitespace()).collect();
    Vocabulary::from_words(words)
}

fn run_instance(
    entry: &ManifestEntry,
    options: &EvalOptions,
    policy: PolicyConfig,
    corpus_vocab: &Vocabulary,
) -> Result<InstanceLog> {
    let (stream, table) = match &entry.source {
        Source::Synthetic(spec) => {
            let stream = SpeechStream::synthetic(
                entry.id.clone(),
                spec.duration_ms,
                spec.frame_rate_hz,
                DEFAULT_ENCODER_DIM,
            )?;
            (stream, Some(spec))
        }
        Source::Features(path) => {
            let (rate, features) = read_feature_file(path)?;
            (SpeechStream::from_features(entry.id.clone(), rate, features)?, None)
        }
    };

    let (vocab, model): (Vocabulary, Box<dyn ScoreModel>) = match options.model {
        ModelChoice::Table => {
            let spec = table.ok_or_else(|| {
                Error::InvalidConfig(format!("`{}`: the table model needs a synthetic source", entry.id))
            })?;
            let vocab = Vocabulary::from_words(&spec.target);
            let target = vocab.tokenize(&spec.target.join(" "))?;
            let model = TableModel::new(target, spec.reveal.clone(), vocab.len())?;
            (vocab, Box::new(model))
        }
        ModelChoice::File => {
            let model = FeatureModel::seeded(corpus_vocab.len(), DEFAULT_LLM_DIM, FEATURE_MODEL_SEED);
            (corpus_vocab.clone(), Box::new(model))
        }
    };

    let encoder = MockEncoder::new(stream.feature_dim());
    let adapter = AdapterConfig::seeded(
        stream.feature_dim(),
        DEFAULT_CONV_FILTERS,
        DEFAULT_LLM_DIM,
        ADAPTER_SEED,
    );
    let log = HoldNAgent::new(&encoder, &adapter, model.as_ref(), policy)
        .with_compute_cost(options.compute_cost)
        .run_stream(&stream)?;

    Ok(InstanceLog {
        id: entry.id.clone(),
        prediction: vocab.detokenize(&log.tokens())?,
        delays_ms: log.delays_ms(),
        elapsed_ms: log.elapsed_ms(),
        source_duration_ms: stream.duration_ms(),
        reference: entry.reference.clone(),
    })
}

fn run_all(entries: &[ManifestEntry], options: &EvalOptions, policy: PolicyConfig) -> Vec<Result<InstanceLog>> {
    let vocab = corpus_vocabulary(entries);
    entries
        .par_iter()
        .map(|e| run_instance(e, options, policy, &vocab))
        .collect()
}

fn curve_point(hold_n: usize, corpus: Option<&CorpusReport>) -> CurvePoint {
    CurvePoint {
        label: format!("hold_n={hold_n}"),
        hold_n,
        bleu: corpus.map(|c| c.bleu.score),
        al_s: corpus.and_then(CorpusReport::al_s),
    }
}

/// Runs every manifest entry under `options.policy`, then any hold-n sweep.
/// Failed instances are reported and left out of the corpus numbers.
pub fn run_eval(entries: &[ManifestEntry], options: &EvalOptions) -> Result<EvalOutput> {
    options.policy.validate()?;

    let mut logs = Vec::new();
    let mut failures = Vec::new();
    for (entry, outcome) in entries.iter().zip(run_all(entries, options, options.policy)) {
        match outcome {
            Ok(log) => logs.push(log),
            Err(e) => failures.push(InstanceFailure {
                id: entry.id.clone(),
                error: e.to_string(),
            }),
        }
    }

    let instances = logs
        .iter()
        .map(|l| InstanceMetrics {
            id: l.id.clone(),
            hyp_len: l.delays_ms.len(),
            ref_len: l.ref_len(),
            latency: l.latency(),
        })
        .collect();
    let corpus = corpus_from_logs(&logs);

    let curve = if options.sweep_hold_n.is_empty() {
        vec![curve_point(options.policy.hold_n, corpus.as_ref())]
    } else {
        options
            .sweep_hold_n
            .iter()
            .map(|&n| {
                let policy = PolicyConfig {
                    hold_n: n,
                    ..options.policy
                };
                let swept: Vec<InstanceLog> = run_all(entries, options, policy)
                    .into_iter()
                    .filter_map(Result::ok)
                    .collect();
                curve_point(n, corpus_from_logs(&swept).as_ref())
            })
            .collect()
    };

    let report = RunReport {
        config: options.clone(),
        succeeded: logs.len(),
        failed: failures.len(),
        instances,
        failures,
        corpus: corpus.map(CorpusSummary::from),
        curve,
    };
    Ok(EvalOutput { report, logs })
}

pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "curve.tsv";

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.decimals$}"))
}

/// Writes `instances.jsonl`, `report.json` and `curve.tsv` into `out_dir`.
pub fn write_outputs(report: &RunReport, logs: &[InstanceLog], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut jsonl = String::new();
    for log in logs {
        jsonl.push_str(&serde_json::to_string(log).map_err(|e| Error::Input(e.to_string()))?);
        jsonl.push('\n');
    }
    let path = out_dir.join(INSTANCES_FILE);
    fs::write(&path, jsonl).map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join(REPORT_FILE);
    let mut json = serde_json::to_string_pretty(report).map_err(|e| Error::Input(e.to_string()))?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;

    let mut tsv = String::from("label\tBLEU\tAL_s\n");
    for p in &report.curve {
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}",
            p.label,
            fmt_opt(p.bleu.map(|b| round_to(b, 1)), 1),
            fmt_opt(p.al_s, 2)
        );
    }
    let path = out_dir.join(CURVE_FILE);
    fs::write(&path, tsv).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn read_instances(path: &Path) -> Result<Vec<InstanceLog>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
