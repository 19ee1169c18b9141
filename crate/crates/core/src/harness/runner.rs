use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::beams::{trad_bs, vanilla_beam_search};
use crate::error::{Error, Result};
use crate::metrics::{collapse_report, CollapseReport};
use crate::sampling::sample_decode;
use crate::scorer::Scorer;
use crate::types::{Beam, Frame};

use super::config::{load_config, DecoderSpec, LoadedConfig, StrategySpec};

pub const RESULT_SCHEMA: &str = "tradbs.result/v1";

/// Rounds to 9 significant digits so result files compare byte-for-byte
/// across platforms whose libm differs in the last bits.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn sig9_opt(x: Option<f64>) -> Option<f64> {
    x.map(sig9)
}

#[derive(Debug, Clone, Serialize)]
pub struct SequenceRecord {
    pub schema: &'static str,
    pub record: &'static str,
    pub strategy: String,
    pub strategy_index: usize,
    pub decoder: &'static str,
    pub params: serde_json::Value,
    pub run: usize,
    pub beam: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub prompt_len: usize,
    pub frames: Vec<Frame>,
    pub steps: usize,
    pub finished: bool,
    pub cum_original: f64,
    pub cum_modified: f64,
    pub temporal_repetition_rate: Option<f64>,
    pub longest_constant_run: usize,
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
    pub duplicate_beam_count: usize,
    pub min_distance_to_other_beams: Option<f64>,
    pub temporal_collapse: bool,
    pub diversity_collapse: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tokens_per_second: Option<f64>,
}

/// First/mean/best of `cum_original` over the runs (sampling) or ranked
/// beams (beam decoders) of one strategy.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRecord {
    pub schema: &'static str,
    pub record: &'static str,
    pub strategy: String,
    pub strategy_index: usize,
    pub decoder: &'static str,
    pub over: &'static str,
    pub count: usize,
    pub first: f64,
    pub mean: f64,
    pub best: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's output path.
    pub out: Option<PathBuf>,
    /// Replaces the base seed of every sampling strategy.
    pub seed_override: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output: PathBuf,
    pub sequence_records: usize,
    pub summary_records: usize,
}

struct Job {
    strategy: usize,
    run: usize,
    seed: Option<u64>,
}

struct Outcome {
    beams: Vec<Beam>,
    elapsed: Duration,
}

fn run_job(scorer: &dyn Scorer, prompt: &[Frame], spec: &StrategySpec, job: &Job) -> Result<Outcome> {
    let start = Instant::now();
    let beams = match &spec.decoder {
        DecoderSpec::Sample { sampling, penalty } => {
            let params = sampling.with_seed(job.seed.unwrap_or(sampling.seed));
            vec![sample_decode(scorer, prompt, &params, penalty)?]
        }
        DecoderSpec::TradBs { penalty } => trad_bs(scorer, prompt, penalty)?.beams,
        DecoderSpec::VanillaBs { penalty, options } => vanilla_beam_search(scorer, prompt, penalty, options)?.beams,
    };
    Ok(Outcome { beams, elapsed: start.elapsed() })
}

fn sequence_records(
    cfg: &LoadedConfig,
    spec: &StrategySpec,
    job: &Job,
    outcome: &Outcome,
) -> Result<Vec<SequenceRecord>> {
    let report: CollapseReport = collapse_report(&outcome.beams, &cfg.config.thresholds);
    let params = serde_json::to_value(&spec.decoder)?;
    let secs = outcome.elapsed.as_secs_f64();
    let tokens: usize = outcome.beams.iter().map(|b| b.step_logps.iter().map(Vec::len).sum::<usize>()).sum();
    Ok(outcome
        .beams
        .iter()
        .enumerate()
        .map(|(i, beam)| {
            let m = &report.beams[i];
            let min_dist = (0..outcome.beams.len())
                .filter(|&j| j != i)
                .map(|j| report.distances[i][j])
                .min_by(f64::total_cmp);
            SequenceRecord {
                schema: RESULT_SCHEMA,
                record: "sequence",
                strategy: spec.name.clone(),
                strategy_index: job.strategy,
                decoder: spec.decoder.kind(),
                params: params.clone(),
                run: job.run,
                beam: i,
                seed: job.seed,
                prompt_len: beam.prompt_len,
                frames: beam.frames.clone(),
                steps: beam.len(),
                finished: beam.finished,
                cum_original: sig9(beam.cum_original),
                cum_modified: sig9(beam.cum_modified),
                temporal_repetition_rate: sig9_opt(m.temporal_repetition_rate),
                longest_constant_run: m.longest_constant_run,
                distinct_1: sig9_opt(m.distinct_1),
                distinct_2: sig9_opt(m.distinct_2),
                duplicate_beam_count: report.duplicate_beam_count,
                min_distance_to_other_beams: sig9_opt(min_dist),
                temporal_collapse: m.longest_constant_run >= cfg.config.thresholds.longest_run,
                diversity_collapse: report.diversity_collapse,
                duration_ms: cfg.config.record_timing.then_some(secs * 1e3),
                tokens_per_second: cfg.config.record_timing.then(|| if secs > 0.0 { tokens as f64 / secs } else { 0.0 }),
            }
        })
        .collect())
}

/// Summary over already-rounded per-record values. `mean` is the rounded
/// arithmetic mean of those values.
pub fn summarize(strategy: &StrategySpec, index: usize, over: &'static str, values: &[f64]) -> SummaryRecord {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    SummaryRecord {
        schema: RESULT_SCHEMA,
        record: "summary",
        strategy: strategy.name.clone(),
        strategy_index: index,
        decoder: strategy.decoder.kind(),
        over,
        count: values.len(),
        first: values[0],
        mean: sig9(mean),
        best: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Runs every strategy of a config and writes the JSONL result file.
///
/// Records are ordered by strategy, run, then beam, followed by one summary
/// per strategy. On a decode failure the records of the successful jobs are
/// still written before the error is returned.
pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<RunReport> {
    let cfg = load_config(config_path)?;
    run_loaded(&cfg, opts)
}

pub fn run_loaded(cfg: &LoadedConfig, opts: &RunOptions) -> Result<RunReport> {
    let output = match (&opts.out, &cfg.config.output) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => cfg.resolve(p),
        (None, None) => default_output_dir().join("results.jsonl"),
    };
    let scorer = cfg.build_scorer()?;
    let prompt = cfg.prompt(scorer.vocab())?;

    let mut jobs = Vec::new();
    for (s, spec) in cfg.config.strategies.iter().enumerate() {
        match &spec.decoder {
            DecoderSpec::Sample { sampling, .. } => {
                let base = opts.seed_override.unwrap_or(sampling.seed);
                for run in 0..cfg.config.repeats {
                    jobs.push(Job { strategy: s, run, seed: Some(base.wrapping_add(run as u64)) });
                }
            }
            _ => jobs.push(Job { strategy: s, run: 0, seed: None }),
        }
    }

    let scorer_ref: &dyn Scorer = scorer.as_ref();
    let outcomes: Vec<Result<Outcome>> = jobs
        .par_iter()
        .map(|job| run_job(scorer_ref, &prompt, &cfg.config.strategies[job.strategy], job))
        .collect();

    let mut lines = Vec::new();
    let mut n_seq = 0;
    let mut n_sum = 0;
    let mut first_error = None;
    let mut per_strategy: Vec<Option<Vec<f64>>> = vec![Some(Vec::new()); cfg.config.strategies.len()];
    for (job, outcome) in jobs.iter().zip(outcomes) {
        let spec = &cfg.config.strategies[job.strategy];
        match outcome {
            Ok(outcome) => {
                for rec in sequence_records(cfg, spec, job, &outcome)? {
                    if let Some(v) = per_strategy[job.strategy].as_mut() {
                        if matches!(spec.decoder, DecoderSpec::Sample { .. }) || job.run == 0 {
                            v.push(rec.cum_original);
                        }
                    }
                    lines.push(serde_json::to_string(&rec)?);
                    n_seq += 1;
                }
            }
            Err(e) => {
                log::error!("strategy {:?} run {} failed: {e}", spec.name, job.run);
                per_strategy[job.strategy] = None;
                first_error.get_or_insert(e);
            }
        }
    }
    for (s, values) in per_strategy.iter().enumerate() {
        if let Some(values) = values.as_ref().filter(|v| !v.is_empty()) {
            let spec = &cfg.config.strategies[s];
            let over = if matches!(spec.decoder, DecoderSpec::Sample { .. }) { "runs" } else { "beams" };
            lines.push(serde_json::to_string(&summarize(spec, s, over, values))?);
            n_sum += 1;
        }
    }

    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut body = lines.join("\n");
    body.push('\n');
    fs::File::create(&output)
        .and_then(|mut f| f.write_all(body.as_bytes()))
        .map_err(|e| Error::io(&output, e))?;

    match first_error {
        Some(e) => Err(e),
        None => Ok(RunReport { output, sequence_records: n_seq, summary_records: n_sum }),
    }
}

/// `TRADBS_OUT_DIR` if set, else the working directory. Only used when
/// neither the CLI nor the config names an output path.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os("TRADBS_OUT_DIR").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}
