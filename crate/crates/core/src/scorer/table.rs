use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{normalize_logits, Codebook, LogProbVector, TokenId, Vocabulary};

use super::{Scorer, ScorerContext};

/// Raw per-step, per-codebook logits, e.g. captured from an external model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrace {
    pub steps: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplayLine {
    step: usize,
    logits: Vec<Vec<f64>>,
}

impl ReplayTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Codebook sizes taken from step 0.
    pub fn sizes(&self) -> Vec<usize> {
        self.steps.first().map(|s| s.iter().map(Vec::len).collect()).unwrap_or_default()
    }

    fn check_shape(&self) -> std::result::Result<(), (usize, String)> {
        let sizes = self.sizes();
        if sizes.is_empty() || sizes.contains(&0) {
            return Err((0, "step 0 needs at least one non-empty codebook".into()));
        }
        for (t, step) in self.steps.iter().enumerate() {
            let got: Vec<usize> = step.iter().map(Vec::len).collect();
            if got != sizes {
                return Err((t, format!("vocabulary sizes {got:?} differ from step 0 {sizes:?}")));
            }
        }
        Ok(())
    }

    /// Writes the trace in the JSONL replay format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (step, logits) in self.steps.iter().enumerate() {
            serde_json::to_writer(&mut out, &ReplayLine { step, logits: logits.clone() })?;
            out.push(b'\n');
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(path, e))
    }
}

/// Reads a JSONL replay file: line `t` is `{"step": t, "logits": [[...], ...]}`.
pub fn replay_load(path: &Path) -> Result<ReplayTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReplayLine = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, lineno, format!("malformed replay record: {e}")))?;
        if rec.step != steps.len() {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected step {}, found {}", steps.len(), rec.step),
            ));
        }
        if let Some(first) = steps.first() {
            let first: &Vec<Vec<f64>> = first;
            let want: Vec<usize> = first.iter().map(Vec::len).collect();
            let got: Vec<usize> = rec.logits.iter().map(Vec::len).collect();
            if want != got {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("inconsistent vocabulary sizes: {got:?}, step 0 has {want:?}"),
                ));
            }
        }
        if rec.logits.is_empty() || rec.logits.iter().any(Vec::is_empty) {
            return Err(Error::parse(path, lineno, "empty logits"));
        }
        if rec.logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, lineno, "non-finite logits"));
        }
        steps.push(rec.logits);
    }
    if steps.is_empty() {
        return Err(Error::parse(path, 1, "replay file has no steps"));
    }
    Ok(ReplayTrace { steps })
}

/// Position-indexed scorer: step `t` always gets row `t`, whatever the
/// generated content. Faithful for real-model traces only when every beam
/// shares the context the trace was captured under.
#[derive(Debug, Clone)]
pub struct TableScorer {
    rows: Vec<Vec<LogProbVector>>,
    vocab: Vocabulary,
}

impl TableScorer {
    /// `eos[c]` is the optional EOS token of codebook `c`; missing entries
    /// mean no EOS.
    pub fn new(trace: &ReplayTrace, eos: &[Option<u32>]) -> Result<Self> {
        trace.check_shape().map_err(|(t, msg)| Error::InvalidConfig(format!("step {t}: {msg}")))?;
        let vocab = Vocabulary::new(
            trace
                .sizes()
                .into_iter()
                .enumerate()
                .map(|(c, size)| Codebook {
                    size: size as u32,
                    eos: eos.get(c).copied().flatten().map(TokenId),
                })
                .collect(),
        )?;
        let rows = trace
            .steps
            .iter()
            .map(|step| step.iter().map(|l| normalize_logits(l)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(TableScorer { rows, vocab })
    }

    /// Single-codebook table from raw logits rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let trace = ReplayTrace { steps: rows.into_iter().map(|r| vec![r]).collect() };
        Self::new(&trace, &[])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl Scorer for TableScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn score(&self, ctx: &ScorerContext<'_>) -> Result<Vec<LogProbVector>> {
        ctx.check_codebooks(self.vocab.num_codebooks())?;
        let step = ctx.step();
        self.rows
            .get(step)
            .cloned()
            .ok_or(Error::TraceExhausted { step, len: self.rows.len() })
    }
}
