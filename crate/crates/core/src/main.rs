use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use simulst::harness::{load_manifest, run_eval, write_outputs, EvalOptions, ModelChoice};
use simulst::policy::{ComputeCost, PolicyConfig};

/// Evaluate the hold-n streaming policy over a manifest.
#[derive(Debug, Parser)]
#[command(name = "simulst", version)]
struct Args {
    /// JSONL manifest of utterances.
    #[arg(long)]
    manifest: PathBuf,

    /// Output directory for instances.jsonl, report.json and curve.tsv.
    #[arg(long)]
    out: PathBuf,

    #[arg(long, default_value_t = 2000)]
    start_ms: u64,

    #[arg(long, default_value_t = 2500)]
    chunk_ms: u64,

    #[arg(long, default_value_t = 7)]
    hold_n: usize,

    #[arg(long, default_value_t = 4)]
    beam: usize,

    #[arg(long, default_value_t = 256)]
    max_len: usize,

    /// Decoder: `table` (scripted synthetic targets) or `file` (seeded
    /// readout over features).
    #[arg(long, default_value = "table")]
    model: ModelChoice,

    /// Comma-separated hold-n values to sweep for curve.tsv.
    #[arg(long, value_delimiter = ',')]
    sweep_hold_n: Vec<usize>,

    /// Simulated compute cost per decision in ms, or `wall` for measured time.
    #[arg(long, default_value = "0", value_parser = parse_cost)]
    compute_cost_ms: ComputeCost,
}

fn parse_cost(s: &str) -> std::result::Result<ComputeCost, String> {
    if s == "wall" {
        return Ok(ComputeCost::Wall);
    }
    s.parse::<u64>()
        .map(ComputeCost::Fixed)
        .map_err(|_| format!("expected milliseconds or `wall`, got `{s}`"))
}

fn run(args: Args) -> Result<bool> {
    let entries = load_manifest(&args.manifest)?;
    let options = EvalOptions {
        policy: PolicyConfig {
            start_ms: args.start_ms,
            chunk_ms: args.chunk_ms,
            hold_n: args.hold_n,
            beam: args.beam,
            max_len: args.max_len,
        },
        model: args.model,
        compute_cost: args.compute_cost_ms,
        sweep_hold_n: args.sweep_hold_n,
    };
    let out = run_eval(&entries, &options)?;
    write_outputs(&out.report, &out.logs, &args.out)
        .with_context(|| format!("writing outputs to {}", args.out.display()))?;

    let report = &out.report;
    println!("instances: {} ok, {} failed", report.succeeded, report.failed);
    for f in &report.failures {
        eprintln!("  {}: {}", f.id, f.error);
    }
    if let Some(c) = &report.corpus {
        let s = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.2}"));
        println!(
            "BLEU {:.1}  AL {} s  LAAL {} s  LAAL_CA {} s",
            c.bleu_display,
            s(c.al_s),
            s(c.laal_s),
            s(c.laal_ca_s)
        );
    }
    Ok(report.all_succeeded())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
