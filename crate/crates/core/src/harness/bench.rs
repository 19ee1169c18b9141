//! Decode-loop throughput with scorer time separated from decoder time.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::beams::{trad_bs, vanilla_beam_search};
use crate::error::{Error, Result};
use crate::sampling::sample_decode;
use crate::scorer::{Scorer, ScorerContext};
use crate::types::{Beam, Frame, LogProbVector, Vocabulary};

use super::config::DecoderSpec;

struct Call {
    step: usize,
    start: Instant,
    took: Duration,
}

/// Wraps a scorer and records the start and duration of every call.
struct TimedScorer<'a> {
    inner: &'a dyn Scorer,
    calls: Mutex<Vec<Call>>,
}

impl Scorer for TimedScorer<'_> {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn score(&self, ctx: &ScorerContext<'_>) -> Result<Vec<LogProbVector>> {
        let start = Instant::now();
        let out = self.inner.score(ctx);
        let took = start.elapsed();
        self.calls.lock().expect("bench mutex").push(Call { step: ctx.step(), start, took });
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatencyPercentiles {
    pub p50_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub decoder: &'static str,
    pub steps_requested: usize,
    /// Decode steps actually run (fewer than requested if every beam hit EOS).
    pub steps: usize,
    pub tokens: usize,
    pub scorer_calls: usize,
    pub total_secs: f64,
    pub scorer_secs: f64,
    pub decoder_secs: f64,
    pub tokens_per_second: f64,
    pub step_latency: LatencyPercentiles,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Runs `decoder` for `steps` steps (its `max_steps` is overridden).
pub fn bench(scorer: &dyn Scorer, prompt: &[Frame], decoder: &DecoderSpec, steps: usize) -> Result<BenchReport> {
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be >= 1".into()));
    }
    let mut decoder = decoder.clone();
    decoder.penalty_mut().max_steps = steps;
    decoder.validate()?;
    let timed = TimedScorer { inner: scorer, calls: Mutex::new(Vec::new()) };

    let start = Instant::now();
    let beams: Vec<Beam> = match &decoder {
        DecoderSpec::Sample { sampling, penalty } => vec![sample_decode(&timed, prompt, sampling, penalty)?],
        DecoderSpec::TradBs { penalty } => trad_bs(&timed, prompt, penalty)?.beams,
        DecoderSpec::VanillaBs { penalty, options } => vanilla_beam_search(&timed, prompt, penalty, options)?.beams,
    };
    let end = Instant::now();
    let total = end - start;

    let calls = timed.calls.into_inner().expect("bench mutex");
    let scorer_time: Duration = calls.iter().map(|c| c.took).sum();
    let mut step_starts: Vec<Option<Instant>> = vec![None; steps];
    for c in &calls {
        if let Some(slot) = step_starts.get_mut(c.step) {
            if slot.is_none_or(|s| c.start < s) {
                *slot = Some(c.start);
            }
        }
    }
    let starts: Vec<Instant> = step_starts.into_iter().map_while(|s| s).collect();
    let mut latencies: Vec<f64> = starts
        .iter()
        .enumerate()
        .map(|(i, s)| (starts.get(i + 1).copied().unwrap_or(end) - *s).as_secs_f64() * 1e6)
        .collect();
    latencies.sort_by(f64::total_cmp);

    let tokens: usize = beams.iter().map(|b| b.step_logps.iter().map(Vec::len).sum::<usize>()).sum();
    let secs = total.as_secs_f64();
    Ok(BenchReport {
        decoder: decoder.kind(),
        steps_requested: steps,
        steps: starts.len(),
        tokens,
        scorer_calls: calls.len(),
        total_secs: secs,
        scorer_secs: scorer_time.as_secs_f64(),
        decoder_secs: (total.saturating_sub(scorer_time)).as_secs_f64(),
        tokens_per_second: if secs > 0.0 { tokens as f64 / secs } else { f64::INFINITY },
        step_latency: LatencyPercentiles {
            p50_us: percentile(&latencies, 0.5),
            p90_us: percentile(&latencies, 0.9),
            p99_us: percentile(&latencies, 0.99),
            max_us: latencies.last().copied().unwrap_or(0.0),
        },
    })
}
